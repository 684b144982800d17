"""Operating-point selection and age-separation fairness metrics."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import rankdata

from agedecor.core import Dataset, SplitBundle
from agedecor.model import ClassifierParams, forward

DECADE_YEARS = 10.0
SEP_CLAMP = 0.5  # per year


class SingleClass(ValueError):
    pass


def _both_labels(y) -> np.ndarray:
    y = np.asarray(y)
    if not ((y == 1).any() and (y == 0).any()):
        raise SingleClass("both labels must be present")
    return y


def auc(scores, y) -> float:
    """Mann-Whitney AUC with midranks for ties."""
    y = _both_labels(y)
    s = np.asarray(scores, dtype=float)
    ranks = rankdata(s)
    n1 = int((y == 1).sum())
    n0 = len(y) - n1
    u = ranks[y == 1].sum() - n1 * (n1 + 1) / 2.0
    return float(u / (n1 * n0))


def youden_threshold(scores, y) -> tuple[float, float, bool]:
    """Threshold maximising TPR - FPR for decisions ``score >= tau``.

    Candidates are the distinct scores and midpoints between neighbours; ties go
    to the smaller threshold. Returns ``(tau, J, degenerate)``.
    """
    y = _both_labels(y)
    s = np.asarray(scores, dtype=float)
    u = np.unique(s)
    cands = np.sort(np.concatenate([u, 0.5 * (u[:-1] + u[1:])]))
    pos, neg = np.sort(s[y == 1]), np.sort(s[y == 0])
    n1, n0 = len(pos), len(neg)
    tp = n1 - np.searchsorted(pos, cands, side="left")
    fp = n0 - np.searchsorted(neg, cands, side="left")
    # integer numerator of J * n1 * n0, so equal J values compare exactly
    num = tp * n0 - fp * n1
    best = int(np.argmax(num))  # first maximum = smallest tau
    return float(cands[best]), float(num[best] / (n1 * n0)), bool(len(u) == 1)


@dataclass
class LogitFit:
    intercept: float
    slope: float
    n_iter: int
    converged: bool


def logistic_irls(x, d, max_iter: int = 100, tol: float = 1e-10) -> LogitFit:
    """Univariate logistic regression ``P(d=1) = sigmoid(a + s x)`` by Newton steps.

    ``x`` is centred internally; the intercept is mapped back afterwards.
    """
    x = np.asarray(x, dtype=float)
    d = np.asarray(d, dtype=float)
    xm = x.mean()
    X = np.column_stack([np.ones_like(x), x - xm])
    beta = np.zeros(2)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        mu = 1.0 / (1.0 + np.exp(-(X @ beta)))
        grad = X.T @ (d - mu)
        if np.linalg.norm(grad) < tol:
            converged = True
            break
        H = (X * (mu * (1.0 - mu))[:, None]).T @ X
        beta = beta + np.linalg.solve(H, grad)
    return LogitFit(float(beta[0] - beta[1] * xm), float(beta[1]), it, converged)


def _separated(age, d) -> bool:
    a1, a0 = age[d == 1], age[d == 0]
    return a1.min() >= a0.max() or a1.max() <= a0.min()


def age_slope(age_years, decisions) -> tuple[float, str | None]:
    """Per-year logistic slope of binary decisions on age, clamped on separation."""
    age = np.asarray(age_years, dtype=float)
    d = np.asarray(decisions, dtype=float)
    if len(d) == 0 or d.min() == d.max():
        return 0.0, "constant_decisions"
    if _separated(age, d):
        a1, a0 = age[d == 1].mean(), age[d == 0].mean()
        return math.copysign(SEP_CLAMP, a1 - a0), "separated"
    fit = logistic_irls(age, d)
    if not fit.converged or abs(fit.slope) > SEP_CLAMP:
        return float(np.clip(fit.slope, -SEP_CLAMP, SEP_CLAMP)), "quasi_separation"
    return fit.slope, None


def separation_coeffs(scores, y, age_years, tau: float) -> tuple[float, float, list[str]]:
    """``(s_plus, s_minus, flags)``: age slopes of ``score >= tau`` on positives and negatives."""
    s = np.asarray(scores, dtype=float)
    y = np.asarray(y)
    age = np.asarray(age_years, dtype=float)
    dec = (s >= tau).astype(float)
    flags = []
    out = []
    for label, name in ((1, "s_plus"), (0, "s_minus")):
        m = y == label
        coef, flag = age_slope(age[m], dec[m])
        if flag:
            flags.append(f"{name}:{flag}")
        out.append(coef)
    return out[0], out[1], flags


def delta_sep10(s_plus: float, s_minus: float) -> tuple[float, float]:
    """``(Sep, dSep10 in percent)`` with Sep the mean absolute slope per year."""
    sep = 0.5 * (abs(s_plus) + abs(s_minus))
    return sep, 100.0 * math.expm1(sep * DECADE_YEARS)


@dataclass
class EvalReport:
    auc: float
    threshold: float
    youden_j: float
    s_plus: float
    s_minus: float
    sep: float
    delta_sep10: float
    flags: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        return cls(**json.loads(text))


def evaluate_scores(val_scores, val_y, test_scores, test_y, test_age, meta=None) -> EvalReport:
    tau, j, degenerate = youden_threshold(val_scores, val_y)
    flags = ["threshold:degenerate"] if degenerate else []
    sp, sm, sflags = separation_coeffs(test_scores, test_y, test_age, tau)
    sep, dsep = delta_sep10(sp, sm)
    return EvalReport(auc(test_scores, test_y), tau, j, sp, sm, sep, dsep, flags + sflags, dict(meta or {}))


def evaluate(params: ClassifierParams, split: SplitBundle, meta=None) -> EvalReport:
    """Threshold from validation, every metric on test."""
    val, test = split.validation, split.test
    return evaluate_scores(forward(params, val.features), val.y, forward(params, test.features), test.y,
                           test.age_years, meta)


def evaluate_dataset(params: ClassifierParams, validation: Dataset, test: Dataset, meta=None) -> EvalReport:
    return evaluate_scores(forward(params, validation.features), validation.y, forward(params, test.features),
                           test.y, test.age_years, meta)
