import math

import numpy as np
import pytest

from agedecor.core import ShapeMismatch
from agedecor.model import (P_CLAMP, AdamState, ClassifierParams, adam_step, backward, bce_grad_logits, bce_loss,
                            forward, load_params, logits, params_from_dict, params_to_dict, save_params)


def central_diff(f, x, h):
    g = np.zeros_like(x)
    for k in range(len(x)):
        e = np.zeros_like(x)
        e[k] = h
        g[k] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def random_params(rng, d=5, arch="linear"):
    p = ClassifierParams.zeros(d, arch, hidden=4)
    return p.with_flat(rng.normal(0, 0.5, p.flat().size))


def test_zero_params_give_half():
    p = ClassifierParams.zeros(3)
    assert forward(p, np.ones((4, 3))).tolist() == [0.5] * 4


def test_clamp_at_extreme_bias():
    p = ClassifierParams.zeros(2)
    p.arrays["b"] = np.asarray(1e6)
    assert forward(p, np.zeros((1, 2)))[0] == 1.0 - P_CLAMP
    p.arrays["b"] = np.asarray(-1e6)
    assert forward(p, np.zeros((1, 2)))[0] == P_CLAMP


def test_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        forward(ClassifierParams.zeros(3), np.ones((2, 4)))


@pytest.mark.parametrize("arch", ["linear", "mlp"])
def test_dp_dparams_finite_difference(rng, arch):
    p0 = random_params(rng, arch=arch)
    x = rng.normal(size=(1, 5))
    pr = forward(p0, x)
    grads = backward(p0, x, pr * (1 - pr))
    analytic = np.concatenate([np.ravel(grads[k]) for k in p0.names()])
    numeric = central_diff(lambda v: forward(p0.with_flat(v), x)[0], p0.flat(), 1e-5)
    rel = np.abs(analytic - numeric) / np.maximum(np.abs(numeric), 1e-8)
    assert rel.max() < 1e-5


def test_bce_values():
    assert bce_loss([0.5], [1]) == pytest.approx(math.log(2), abs=1e-15)
    assert bce_loss([1 - 1e-7], [1]) == pytest.approx(1e-7, rel=1e-6)
    assert bce_loss([0.2, 0.9], [0, 1]) >= 0


def test_bce_logit_gradient_is_p_minus_y(rng):
    for _ in range(10):
        t, y = rng.normal(), int(rng.integers(0, 2))
        f = lambda v: bce_loss(1 / (1 + np.exp(-v[0])), [y])
        num = central_diff(f, np.array([t]), 1e-6)[0]
        p = 1 / (1 + np.exp(-t))
        assert abs((p - y) - num) / abs(num) < 1e-6
        assert bce_grad_logits([p], [y])[0] == p - y


@pytest.mark.parametrize("arch", ["linear", "mlp"])
def test_whole_model_gradient(rng, arch):
    for _ in range(10):
        p0 = random_params(rng, arch=arch)
        p0.input_shift = rng.normal(size=5)
        X = rng.normal(size=(12, 5))
        y = rng.integers(0, 2, 12)

        def loss(v):
            return bce_loss(forward(p0.with_flat(v), X), y)

        g = backward(p0, X, bce_grad_logits(forward(p0, X), y))
        analytic = np.concatenate([np.ravel(g[k]) for k in p0.names()])
        numeric = central_diff(loss, p0.flat(), 1e-5)
        rel = np.abs(analytic - numeric) / np.maximum(np.abs(numeric), 1e-6)
        assert rel.max() < 1e-5


def test_forward_is_pure(rng):
    p = random_params(rng)
    X = rng.normal(size=(8, 5))
    np.testing.assert_array_equal(forward(p, X), forward(p, X))


def test_adam_zero_gradient_is_fixed_point(rng):
    p = random_params(rng)
    new, st = adam_step(p, {k: np.zeros_like(v) for k, v in p.arrays.items()}, AdamState())
    assert new.equals(p) and st.t == 1


def test_adam_first_step(rng):
    p = random_params(rng)
    g = {k: rng.normal(size=v.shape) for k, v in p.arrays.items()}
    new, _ = adam_step(p, g, AdamState(lr=0.001))
    for k in p.names():
        step = new.arrays[k] - p.arrays[k]
        np.testing.assert_allclose(np.abs(step), 0.001, rtol=1e-4)
        assert (np.sign(step) == -np.sign(g[k])).all()


def test_adam_quadratic_bowl():
    p = ClassifierParams.zeros(3)
    target = {"w": np.array([0.4, -0.2, 0.7]), "b": np.asarray(0.3)}
    state = AdamState(lr=0.01)
    for step in range(5000):
        grads = {k: 2 * (p.arrays[k] - target[k]) for k in p.names()}
        p, state = adam_step(p, grads, state)
        if all(np.abs(p.arrays[k] - target[k]).max() < 1e-3 for k in p.names()):
            break
    assert step < 5000
    assert np.abs(p.arrays["w"] - target["w"]).max() < 1e-3


def test_adam_shape_mismatch():
    p = ClassifierParams.zeros(3)
    with pytest.raises(ShapeMismatch):
        adam_step(p, {"w": np.zeros(4), "b": np.zeros(())}, AdamState())
    with pytest.raises(ShapeMismatch):
        adam_step(p, {"w": np.zeros(3)}, AdamState())


@pytest.mark.parametrize("arch", ["linear", "mlp"])
def test_checkpoint_round_trip(tmp_path, rng, arch):
    p = random_params(rng, arch=arch)
    p.input_shift = rng.normal(size=5)
    save_params(p, tmp_path / "ck.json")
    back = load_params(tmp_path / "ck.json")
    assert back.equals(p)
    X = rng.normal(size=(4, 5))
    np.testing.assert_array_equal(logits(back, X), logits(p, X))
    blob = params_to_dict(p)
    assert blob["header"]["architecture"] == arch
    assert params_from_dict(blob).equals(p)
