"""Small differentiable binary classifiers with analytic gradients, plus Adam."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from agedecor.core import ShapeMismatch

P_CLAMP = 1e-7


@dataclass
class ClassifierParams:
    """Parameters keyed by name.

    linear: ``w`` (d,), ``b`` ().  mlp: ``W1`` (h, d), ``b1`` (h,), ``w2`` (h,),
    ``b2`` (); tanh hidden layer.
    """

    architecture: str
    feature_dim: int
    arrays: dict[str, np.ndarray]
    hidden: int = 0
    # fixed, non-trainable vector subtracted from inputs (training-set mean)
    input_shift: np.ndarray | None = None

    @classmethod
    def zeros(cls, feature_dim: int, architecture: str = "linear", hidden: int = 8) -> "ClassifierParams":
        if architecture == "linear":
            return cls("linear", feature_dim, {"w": np.zeros(feature_dim), "b": np.zeros(())})
        if architecture == "mlp":
            arrays = {
                "W1": np.zeros((hidden, feature_dim)),
                "b1": np.zeros(hidden),
                "w2": np.zeros(hidden),
                "b2": np.zeros(()),
            }
            return cls("mlp", feature_dim, arrays, hidden)
        raise ValueError(f"unknown architecture {architecture!r}")

    @classmethod
    def init(cls, feature_dim: int, rng: np.random.Generator, architecture: str = "linear",
             hidden: int = 8, scale: float = 0.01) -> "ClassifierParams":
        p = cls.zeros(feature_dim, architecture, hidden)
        if architecture == "linear":
            p.arrays["w"] = rng.normal(0.0, scale, feature_dim)
        else:
            p.arrays["W1"] = rng.normal(0.0, 1.0 / np.sqrt(feature_dim), (hidden, feature_dim))
            p.arrays["w2"] = rng.normal(0.0, scale, hidden)
        return p

    def names(self) -> list[str]:
        return sorted(self.arrays)

    def copy(self) -> "ClassifierParams":
        shift = None if self.input_shift is None else self.input_shift.copy()
        return ClassifierParams(self.architecture, self.feature_dim,
                                {k: v.copy() for k, v in self.arrays.items()}, self.hidden, shift)

    def flat(self) -> np.ndarray:
        return np.concatenate([np.ravel(self.arrays[k]) for k in self.names()])

    def with_flat(self, vec: np.ndarray) -> "ClassifierParams":
        out, k0 = self.copy(), 0
        for k in self.names():
            a = out.arrays[k]
            out.arrays[k] = np.asarray(vec[k0 : k0 + a.size], dtype=float).reshape(a.shape)
            k0 += a.size
        return out

    def equals(self, other: "ClassifierParams") -> bool:
        return (self.architecture == other.architecture and self.names() == other.names()
                and np.array_equal(self.shift(), other.shift())
                and all(np.array_equal(self.arrays[k], other.arrays[k]) for k in self.names()))

    def shift(self) -> np.ndarray:
        return np.zeros(self.feature_dim) if self.input_shift is None else self.input_shift


def _check(params: ClassifierParams, X: np.ndarray) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != params.feature_dim:
        raise ShapeMismatch(f"feature dim {X.shape[1]} != model dim {params.feature_dim}")
    if params.input_shift is not None:
        X = X - params.input_shift
    return X


def logits(params: ClassifierParams, X: np.ndarray) -> np.ndarray:
    X = _check(params, X)
    a = params.arrays
    if params.architecture == "linear":
        return X @ a["w"] + a["b"]
    return np.tanh(X @ a["W1"].T + a["b1"]) @ a["w2"] + a["b2"]


def sigmoid(x):
    # split form avoids overflow warnings for large |x|
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def forward(params: ClassifierParams, X: np.ndarray) -> np.ndarray:
    """Clamped probabilities in ``[1e-7, 1 - 1e-7]``."""
    return np.clip(sigmoid(logits(params, X)), P_CLAMP, 1.0 - P_CLAMP)


def bce_loss(p, y) -> float:
    """Mean binary cross-entropy."""
    p = np.asarray(p, dtype=float)
    y = np.asarray(y, dtype=float)
    return float(np.mean(-(y * np.log(p) + (1.0 - y) * np.log1p(-p))))


def bce_grad_logits(p, y) -> np.ndarray:
    """Gradient of the mean BCE with respect to each logit."""
    p = np.asarray(p, dtype=float)
    return (p - np.asarray(y, dtype=float)) / p.size


def backward(params: ClassifierParams, X: np.ndarray, dlogits: np.ndarray) -> dict[str, np.ndarray]:
    """Pull a logit-space gradient back to parameter gradients."""
    X = _check(params, X)
    a = params.arrays
    if params.architecture == "linear":
        return {"w": X.T @ dlogits, "b": np.asarray(dlogits.sum())}
    h = np.tanh(X @ a["W1"].T + a["b1"])
    dh = np.outer(dlogits, a["w2"]) * (1.0 - h * h)
    return {"W1": dh.T @ X, "b1": dh.sum(axis=0), "w2": h.T @ dlogits, "b2": np.asarray(dlogits.sum())}


@dataclass
class AdamState:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: ClassifierParams, grads: dict[str, np.ndarray], state: AdamState):
    """One bias-corrected Adam update; returns new ``(params, state)``."""
    if sorted(grads) != params.names():
        raise ShapeMismatch(f"gradient keys {sorted(grads)} != parameter keys {params.names()}")
    t = state.t + 1
    new = params.copy()
    m, v = {}, {}
    for k in params.names():
        g = np.asarray(grads[k], dtype=float)
        if g.shape != params.arrays[k].shape:
            raise ShapeMismatch(f"{k}: gradient {g.shape} vs parameter {params.arrays[k].shape}")
        m[k] = state.beta1 * state.m.get(k, np.zeros_like(g)) + (1.0 - state.beta1) * g
        v[k] = state.beta2 * state.v.get(k, np.zeros_like(g)) + (1.0 - state.beta2) * g * g
        m_hat = m[k] / (1.0 - state.beta1**t)
        v_hat = v[k] / (1.0 - state.beta2**t)
        new.arrays[k] = params.arrays[k] - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return new, AdamState(state.lr, state.beta1, state.beta2, state.eps, t, m, v)


def params_to_dict(params: ClassifierParams) -> dict:
    header = {
        "architecture": params.architecture,
        "feature_dim": params.feature_dim,
        "hidden": params.hidden,
        "layout": [[k, list(params.arrays[k].shape)] for k in params.names()],
        "input_shift": None if params.input_shift is None else [float(x) for x in params.input_shift],
    }
    return {"header": header, "values": [float(x) for x in params.flat()]}


def params_from_dict(blob: dict) -> ClassifierParams:
    h = blob["header"]
    p = ClassifierParams.zeros(h["feature_dim"], h["architecture"], h["hidden"] or 8)
    p.hidden = h["hidden"]
    if h.get("input_shift") is not None:
        p.input_shift = np.array(h["input_shift"], dtype=float)
    for k, shape in h["layout"]:
        if list(p.arrays[k].shape) != shape:
            raise ShapeMismatch(f"checkpoint layout {k}: {shape}")
    return p.with_flat(np.array(blob["values"], dtype=float))


def save_params(params: ClassifierParams, path: str | Path) -> None:
    Path(path).write_text(json.dumps(params_to_dict(params)), encoding="utf-8")


def load_params(path: str | Path) -> ClassifierParams:
    return params_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
