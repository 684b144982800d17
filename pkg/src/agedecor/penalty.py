"""Coverage-modulated, affinity-weighted slope penalty on age vs. difficulty.

For each label ``y`` present in a mini-batch the weighted least-squares slope
of difficulty on normalized age is

    beta_y = sum w (z - mu_z)(g - mu_g) / sum w (z - mu_z)^2

and the objective is ``mean BCE + lam * sum_y C_y * beta_y**2`` with
``C_y = Var(z | y) / 0.25``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from agedecor.difficulty import sample_difficulty
from agedecor.model import ClassifierParams, backward, bce_grad_logits, bce_loss, forward

VAR_MAX = 0.25

# incremented by every penalty evaluation; lets tests check that baselines never touch it
CALL_COUNTER = {"penalty_terms": 0}


class EmptySubset(ValueError):
    pass


@dataclass(frozen=True)
class PenaltyConfig:
    lam: float = 1.2
    denom_epsilon: float = 1e-8
    use_affinity: bool = True
    use_coverage: bool = True

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if not self.denom_epsilon > 0:
            raise ValueError("denom_epsilon must be > 0")


@dataclass(frozen=True)
class SlopeStats:
    beta: float
    mu_z: float
    mu_g: float
    denom: float
    degenerate: bool


@dataclass(frozen=True)
class LabelBatchStats:
    slope: SlopeStats
    coverage: float
    n: int
    active: bool


@dataclass
class Batch:
    features: np.ndarray
    y: np.ndarray
    z: np.ndarray
    weights: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.weights is None:
            self.weights = np.ones(len(self.y))


def wols_slope(z, g, w, eps: float = 1e-8) -> SlopeStats:
    z = np.asarray(z, dtype=float)
    g = np.asarray(g, dtype=float)
    w = np.asarray(w, dtype=float)
    if len(z) == 0:
        raise EmptySubset("wols_slope on an empty subset")
    sw = w.sum()
    if not sw > 0:
        raise EmptySubset("weights sum to zero")
    mu_z = float(w @ z / sw)
    mu_g = float(w @ g / sw)
    dz = z - mu_z
    denom = float((w * dz) @ dz)
    if denom <= eps:
        return SlopeStats(0.0, mu_z, mu_g, denom, True)
    return SlopeStats(float((w * dz) @ (g - mu_g) / denom), mu_z, mu_g, denom, False)


def coverage_score(z) -> float:
    z = np.asarray(z, dtype=float)
    if np.ptp(z) == 0.0:
        return 0.0  # np.var of a constant array can round to ~1e-32
    return float(np.clip(np.var(z) / VAR_MAX, 0.0, 1.0))


def slope_penalty(beta: float) -> float:
    return beta * beta


def penalty_terms(p, y, z, w, cfg: PenaltyConfig) -> tuple[float, np.ndarray, dict[int, LabelBatchStats]]:
    """Penalty value, its gradient w.r.t. each logit, and per-label stats.

    ``C_y``, ``mu_z``, ``D`` and ``w`` depend only on ages and frozen weights and
    are constants under differentiation.
    """
    CALL_COUNTER["penalty_terms"] += 1
    p = np.asarray(p, dtype=float)
    y = np.asarray(y)
    z = np.asarray(z, dtype=float)
    w = np.asarray(w, dtype=float) if cfg.use_affinity else np.ones_like(z)
    g = sample_difficulty(p, y)
    value = 0.0
    grad = np.zeros_like(p)
    stats = {}
    for label in (0, 1):
        m = y == label
        n = int(m.sum())
        if n < 2:
            continue
        s = wols_slope(z[m], g[m], w[m], cfg.denom_epsilon)
        c = coverage_score(z[m]) if cfg.use_coverage else 1.0
        active = not s.degenerate
        stats[label] = LabelBatchStats(s, c, n, active)
        if not active:
            continue
        value += cfg.lam * c * slope_penalty(s.beta)
        dg_dp = 1.0 if label == 0 else -1.0
        pm = p[m]
        grad[m] = (2.0 * cfg.lam * c * s.beta) * w[m] * (z[m] - s.mu_z) / s.denom * dg_dp * pm * (1.0 - pm)
    return value, grad, stats


def total_loss(batch: Batch, params: ClassifierParams, cfg: PenaltyConfig) -> tuple[float, dict]:
    p = forward(params, batch.features)
    bce = bce_loss(p, batch.y)
    pen, _, stats = penalty_terms(p, batch.y, batch.z, batch.weights, cfg)
    breakdown = {"bce": bce, "penalty": pen}
    for label in (0, 1):
        st = stats.get(label)
        breakdown[f"slope_y{label}"] = st.slope.beta if st else 0.0
        breakdown[f"coverage_y{label}"] = st.coverage if st else 0.0
    return bce + pen, breakdown


def penalty_grad_logits(batch: Batch, params: ClassifierParams, cfg: PenaltyConfig) -> np.ndarray:
    p = forward(params, batch.features)
    return penalty_terms(p, batch.y, batch.z, batch.weights, cfg)[1]


def total_grad(batch: Batch, params: ClassifierParams, cfg: PenaltyConfig | None):
    """Loss, parameter gradients and breakdown; ``cfg=None`` means plain BCE."""
    p = forward(params, batch.features)
    bce = bce_loss(p, batch.y)
    dlog = bce_grad_logits(p, batch.y)
    breakdown = {"bce": bce, "penalty": 0.0, "slope_y0": 0.0, "slope_y1": 0.0,
                 "coverage_y0": 0.0, "coverage_y1": 0.0}
    loss = bce
    if cfg is not None:
        pen, pgrad, stats = penalty_terms(p, batch.y, batch.z, batch.weights, cfg)
        dlog = dlog + pgrad
        loss = bce + pen
        breakdown["penalty"] = pen
        for label, st in stats.items():
            breakdown[f"slope_y{label}"] = st.slope.beta
            breakdown[f"coverage_y{label}"] = st.coverage
    return loss, backward(params, batch.features, dlog), breakdown
