"""Label-conditioned Huber regression of difficulty on age and trend-affinity weights."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from agedecor.difficulty import DifficultyRecords

HUBER_T = 1.345
MAD_TO_SD = 1.4826
MAD_FLOOR = 1e-9


class DegenerateDesign(ValueError):
    pass


@dataclass(frozen=True)
class HuberResult:
    alpha: float
    beta: float
    n_iter: int
    converged: bool
    weights: np.ndarray  # IRLS weights at the final iterate


def _wls_line(z, g, u):
    sw = u.sum()
    mz, mg = (u @ z) / sw, (u @ g) / sw
    dz = z - mz
    beta = (u * dz) @ (g - mg) / ((u * dz) @ dz)
    return mg - beta * mz, beta


def _huber_weights(r, c):
    a = np.abs(r)
    return np.where(a <= c, 1.0, c / np.maximum(a, 1e-300))


def huber_fit(z, g, max_iter: int = 100, tol: float = 1e-8) -> HuberResult:
    """Huber M-estimate of ``g ~ alpha + beta * z`` by IRLS.

    The tuning constant is ``1.345 * 1.4826 * MAD`` of the current residuals,
    re-estimated every iteration.
    """
    z = np.asarray(z, dtype=float)
    g = np.asarray(g, dtype=float)
    if len(z) < 10:
        raise ValueError("huber_fit needs at least 10 records")
    if np.ptp(z) == 0.0:
        raise DegenerateDesign("z has zero variance")
    u = np.ones_like(z)
    alpha, beta = _wls_line(z, g, u)
    for it in range(1, max_iter + 1):
        r = g - (alpha + beta * z)
        scale = MAD_TO_SD * np.median(np.abs(r - np.median(r)))
        c = max(HUBER_T * scale, 1e-12)
        u = _huber_weights(r, c)
        a_new, b_new = _wls_line(z, g, u)
        step = max(abs(a_new - alpha), abs(b_new - beta))
        alpha, beta = a_new, b_new
        if step < tol:
            return HuberResult(float(alpha), float(beta), it, True, u)
    return HuberResult(float(alpha), float(beta), max_iter, False, u)


def ols_line(z, g) -> tuple[float, float]:
    z = np.asarray(z, dtype=float)
    g = np.asarray(g, dtype=float)
    return tuple(float(v) for v in _wls_line(z, g, np.ones_like(z)))


def residuals(g, z, alpha: float, beta: float) -> np.ndarray:
    return np.asarray(g, dtype=float) - (alpha + beta * np.asarray(z, dtype=float))


def mad_scale(r) -> tuple[float, bool]:
    """Raw (unscaled) median absolute deviation, floored at 1e-9.

    Returns ``(delta, floored)``.
    """
    r = np.asarray(r, dtype=float)
    if len(r) < 2:
        raise ValueError("mad_scale needs at least 2 residuals")
    delta = float(np.median(np.abs(r - np.median(r))))
    if delta < MAD_FLOOR:
        return MAD_FLOOR, True
    return delta, False


def affinity_from_residuals(r, delta: float) -> np.ndarray:
    """1 inside the ``|r| <= delta`` band, ``delta / |r|`` outside."""
    if not delta > 0:
        raise ValueError("delta must be > 0")
    a = np.abs(np.asarray(r, dtype=float))
    return np.where(a <= delta, 1.0, delta / np.maximum(a, 1e-300))


@dataclass(frozen=True)
class LabelFit:
    alpha: float
    beta: float
    delta: float
    mad_floored: bool
    converged: bool
    n: int


@dataclass(frozen=True)
class TrendFit:
    fits: dict  # label -> LabelFit

    def to_dict(self) -> dict:
        return {str(y): vars(f).copy() for y, f in sorted(self.fits.items())}


class AffinityWeights:
    """Frozen per-sample weights keyed by sample id."""

    def __init__(self, ids, weights):
        ids = np.array(ids, dtype=np.int64)
        w = np.array(weights, dtype=float)
        if not ((w > 0) & (w <= 1)).all():
            raise ValueError("affinity weights must lie in (0, 1]")
        order = np.argsort(ids, kind="stable")
        self._ids, self._w = ids[order], w[order]
        self._ids.flags.writeable = False
        self._w.flags.writeable = False

    frozen = True

    @property
    def ids(self) -> np.ndarray:
        return self._ids

    @property
    def values(self) -> np.ndarray:
        return self._w

    def __len__(self) -> int:
        return len(self._ids)

    def lookup(self, ids) -> np.ndarray:
        ids = np.asarray(ids, dtype=np.int64)
        pos = np.searchsorted(self._ids, ids)
        if (pos >= len(self._ids)).any() or (self._ids[np.minimum(pos, len(self._ids) - 1)] != ids).any():
            raise KeyError("sample id without an affinity weight")
        return self._w[pos]

    def histogram(self, n_bins: int = 10) -> dict:
        counts, edges = np.histogram(self._w, bins=n_bins, range=(0.0, 1.0))
        return {"edges": [float(e) for e in edges], "counts": [int(c) for c in counts]}

    @classmethod
    def uniform(cls, ids) -> "AffinityWeights":
        return cls(ids, np.ones(len(ids)))


def fit_trends(records: DifficultyRecords) -> tuple[TrendFit, AffinityWeights]:
    """Huber fit per label, raw-MAD band, frozen affinity weights."""
    fits = {}
    w = np.empty(len(records))
    for y in (0, 1):
        m = records.y == y
        hr = huber_fit(records.z[m], records.g[m])
        r = residuals(records.g[m], records.z[m], hr.alpha, hr.beta)
        delta, floored = mad_scale(r)
        w[m] = affinity_from_residuals(r, delta)
        fits[y] = LabelFit(hr.alpha, hr.beta, delta, floored, hr.converged, int(m.sum()))
    return TrendFit(fits), AffinityWeights(records.ids, w)
