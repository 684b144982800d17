import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize

from agedecor.core import Dataset, SplitBundle, normalize_ages
from agedecor.evaluation import (SEP_CLAMP, EvalReport, SingleClass, age_slope, auc, delta_sep10, evaluate,
                                 logistic_irls, separation_coeffs, youden_threshold)
from agedecor.model import ClassifierParams


def pair_count_auc(s, y):
    pos, neg = s[y == 1], s[y == 0]
    wins = 0.0
    for a in pos:
        for b in neg:
            wins += 1.0 if a > b else 0.5 if a == b else 0.0
    return wins / (len(pos) * len(neg))


def sweep_youden(s, y):
    # every distinct score, every midpoint, plus one threshold above all scores
    u = np.unique(s)
    cands = np.sort(np.r_[u, (u[:-1] + u[1:]) / 2, u[-1] + 1.0])
    n1, n0 = int((y == 1).sum()), int((y == 0).sum())
    best_tau, best = None, None
    for t in cands:
        d = s >= t
        # J scaled by n1 * n0 is an integer, so ties are exact
        num = int(d[y == 1].sum()) * n0 - int(d[y == 0].sum()) * n1
        if best is None or num > best:
            best_tau, best = t, num
    return best_tau, best / (n1 * n0)


def scipy_logit(x, d):
    # scaled coordinates for conditioning, then mapped back to per-year units
    xs = (x - 55.0) / 10.0

    def nll(b):
        t = b[0] + b[1] * xs
        return np.sum(np.logaddexp(0.0, t) - d * t)

    def grad(b):
        mu = 1 / (1 + np.exp(-(b[0] + b[1] * xs)))
        return np.array([np.sum(mu - d), np.sum((mu - d) * xs)])

    res = minimize(nll, np.zeros(2), jac=grad, method="BFGS", options={"gtol": 1e-11, "maxiter": 1000})
    return res.x[1] / 10.0


def test_auc_perfect_and_reversed():
    y = np.array([0, 0, 1, 1])
    assert auc([0.1, 0.2, 0.8, 0.9], y) == 1.0
    assert auc([0.9, 0.8, 0.2, 0.1], y) == 0.0
    assert auc([0.5, 0.5, 0.5, 0.5], y) == 0.5


def test_auc_chance(rng):
    y = rng.integers(0, 2, 5000)
    assert abs(auc(rng.uniform(size=5000), y) - 0.5) < 0.02


def test_auc_pair_count_exact(rng):
    for _ in range(50):
        n = int(rng.integers(4, 40))
        y = rng.integers(0, 2, n)
        y[:2] = [0, 1]
        s = rng.integers(0, 6, n) / 5.0  # plenty of ties
        assert auc(s, y) == pair_count_auc(s, y)


@given(st.integers(0, 10_000))
@settings(max_examples=25, deadline=None)
def test_auc_invariant_to_monotone_transform(seed):
    r = np.random.default_rng(seed)
    y = r.integers(0, 2, 30)
    y[:2] = [0, 1]
    s = r.normal(size=30)
    assert auc(s, y) == auc(np.exp(3 * s) + 1, y)


def test_auc_single_class():
    with pytest.raises(SingleClass):
        auc([0.1, 0.2], [1, 1])


def test_youden_midpoint_convention():
    tau, j, degenerate = youden_threshold([0.1, 0.4, 0.6, 0.9], [0, 0, 1, 1])
    assert j == 1.0 and not degenerate
    # every tau in (0.4, 0.6] separates perfectly; the smallest candidate is the midpoint
    assert tau == pytest.approx(0.5)


def test_youden_constant_scores():
    tau, j, degenerate = youden_threshold([0.3] * 6, [0, 1, 0, 1, 0, 1])
    assert degenerate and j == 0.0


def test_youden_matches_sweep(rng):
    for _ in range(50):
        n = int(rng.integers(4, 60))
        y = rng.integers(0, 2, n)
        y[:2] = [0, 1]
        s = np.round(rng.uniform(size=n), 2)
        tau, j, _ = youden_threshold(s, y)
        t_ref, j_ref = sweep_youden(s, y)
        assert (tau, j) == (t_ref, j_ref)


def test_irls_matches_scipy(rng):
    worst = 0.0
    for _ in range(20):
        age = rng.uniform(20, 90, 400)
        d = (rng.uniform(size=400) < 1 / (1 + np.exp(-(rng.normal() + rng.normal(0, 0.05) * (age - 55))))).astype(float)
        fit = logistic_irls(age, d)
        assert fit.converged
        worst = max(worst, abs(fit.slope - scipy_logit(age, d)))
    assert worst < 1e-6


def test_slope_recovery():
    r = np.random.default_rng(11)
    age = r.uniform(20, 90, 10000)
    d = (r.uniform(size=10000) < 1 / (1 + np.exp(-(-2 + 0.03 * age)))).astype(float)
    coef, flag = age_slope(age, d)
    assert flag is None
    assert coef == pytest.approx(0.03, abs=0.003)


def test_slope_null_within_three_se():
    r = np.random.default_rng(5)
    age = r.uniform(20, 90, 4000)
    d = (r.uniform(size=4000) < 0.3).astype(float)
    coef, _ = age_slope(age, d)
    p = d.mean()
    se = 1 / math.sqrt(p * (1 - p) * np.sum((age - age.mean()) ** 2))
    assert abs(coef) < 3 * se


def test_slope_edge_cases():
    age = np.array([20.0, 30.0, 40.0, 50.0])
    assert age_slope(age, [1, 1, 1, 1]) == (0.0, "constant_decisions")
    assert age_slope(age, [0, 0, 1, 1]) == (SEP_CLAMP, "separated")
    assert age_slope(age, [1, 1, 0, 0]) == (-SEP_CLAMP, "separated")


def test_separation_coeffs_split_by_label():
    age = np.array([20.0, 40.0, 60.0, 80.0] * 2)
    y = np.array([1] * 4 + [0] * 4)
    scores = np.array([0.9] * 4 + [0.1] * 4)
    sp, sm, flags = separation_coeffs(scores, y, age, 0.5)
    assert sp == 0.0 and sm == 0.0
    assert flags == ["s_plus:constant_decisions", "s_minus:constant_decisions"]


@pytest.mark.parametrize("sp,sm,expect,tol", [(1.35e-2, 1.89e-2, 17.59, 0.01), (0.56e-2, 0.89e-2, 7.52, 0.02)])
def test_delta_sep10_examples(sp, sm, expect, tol):
    assert abs(delta_sep10(sp, sm)[1] - expect) < tol


def test_delta_sep10_properties():
    assert delta_sep10(0.0, 0.0) == (0.0, 0.0)
    assert delta_sep10(-0.01, 0.02) == delta_sep10(0.01, -0.02)
    vals = [delta_sep10(s, s)[1] for s in np.linspace(0, 0.1, 20)]
    assert np.all(np.diff(vals) > 0)
    sep, pct = delta_sep10(0.012, 0.03)
    # per-decade identity: ten yearly steps compound to the decade change
    assert 1 + pct / 100 == pytest.approx(math.exp(sep) ** 10, rel=1e-12)
    assert sep == pytest.approx(0.021)


def _dataset(rng, n):
    age = rng.uniform(20, 90, n)
    y = rng.integers(0, 2, n)
    feats = np.column_stack([y + rng.normal(0, 0.3, n), age / 100])
    ds = Dataset(np.arange(n), feats, age, np.zeros(n), y, 20.0, 90.0)
    return normalize_ages(ds)


def _split(rng):
    pool = _dataset(rng, 3000)
    return SplitBundle(pool.subset(np.arange(1000)), pool.subset(np.arange(1000, 1500)),
                       pool.subset(np.arange(1500, 3000)), 0.0, 0)


def test_evaluate_oracle_model(rng):
    split = _split(rng)
    p = ClassifierParams.zeros(2)
    p.arrays["w"] = np.array([8.0, 0.0])
    p.arrays["b"] = np.asarray(-4.0)
    rep = evaluate(p, split, {"method": "oracle"})
    assert rep.auc > 0.95
    assert rep.delta_sep10 < 15.0
    assert rep.meta == {"method": "oracle"}


def test_evaluate_constant_model(rng):
    split = _split(rng)
    rep = evaluate(ClassifierParams.zeros(2), split)
    assert rep.auc == 0.5
    assert "threshold:degenerate" in rep.flags
    assert rep.s_plus == 0.0 and rep.s_minus == 0.0 and rep.delta_sep10 == 0.0


def test_evaluate_age_model_is_unfair(rng):
    split = _split(rng)
    p = ClassifierParams.zeros(2)
    p.arrays["w"] = np.array([2.0, 10.0])
    p.arrays["b"] = np.asarray(-6.0)
    rep = evaluate(p, split)
    assert rep.delta_sep10 > 50.0


def test_report_json_round_trip(rng):
    split = _split(rng)
    p = ClassifierParams.zeros(2)
    p.arrays["w"] = np.array([3.0, 1.0])
    rep = evaluate(p, split, {"gamma": 4.0, "seed": 2})
    back = EvalReport.from_json(rep.to_json())
    assert back == rep
