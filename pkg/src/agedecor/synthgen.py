"""Synthetic age-confounded population and exponential age-shift splits.

Age pushes both the features (along a fixed "morphology" direction) and the
label (through a logistic prevalence curve), so a classifier can lower its
training loss by reading age off the features.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from agedecor.core import Dataset, SplitBundle, normalize_ages, rng_stream


class InvalidConfig(ValueError):
    pass


class InsufficientPool(ValueError):
    pass


@dataclass(frozen=True)
class GeneratorConfig:
    n_pool: int = 20000
    feature_dim: int = 16
    prevalence_slope: float = 4.0
    prevalence_midpoint: float = 0.5
    # large feature scale keeps the Bayes weights O(0.1), reachable by Adam at lr=1e-3 in 30 epochs
    disease_signal: float = 8.0
    age_morphology_strength: float = 24.0
    noise_sd: float = 4.0
    age_low_years: float = 20.0
    age_high_years: float = 90.0

    def validate(self) -> None:
        if self.n_pool < 100:
            raise InvalidConfig("n_pool must be >= 100")
        if not self.noise_sd > 0:
            raise InvalidConfig("noise_sd must be > 0")
        if self.feature_dim < 2:
            raise InvalidConfig("feature_dim must be >= 2")
        if not self.age_high_years > self.age_low_years:
            raise InvalidConfig("age_high_years must exceed age_low_years")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class ShiftConfig:
    gamma: float = 0.0
    b_tr: float = 0.25
    b_te: float = 0.75
    n_train: int = 4000
    n_test: int = 2000
    val_fraction: float = 0.10

    def validate(self) -> None:
        if self.gamma < 0:
            raise InvalidConfig("gamma must be >= 0")
        if not 0.0 <= self.b_tr <= self.b_te <= 1.0:
            raise InvalidConfig("pivots must satisfy 0 <= b_tr <= b_te <= 1")
        if not 0.0 < self.val_fraction < 1.0:
            raise InvalidConfig("val_fraction must be in (0, 1)")

    @classmethod
    def from_pool(cls, pool: Dataset, gamma: float, **kw) -> "ShiftConfig":
        """Pivots at the 25th / 75th percentile of the pool's normalized ages."""
        b_tr, b_te = pool_pivots(pool)
        return cls(gamma=gamma, b_tr=b_tr, b_te=b_te, **kw)

    def to_dict(self) -> dict:
        return asdict(self)


def pool_pivots(pool: Dataset) -> tuple[float, float]:
    b_tr, b_te = np.percentile(pool.z, [25.0, 75.0])
    return float(b_tr), float(b_te)


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def generate_population(cfg: GeneratorConfig, seed: int) -> Dataset:
    cfg.validate()
    rng = rng_stream(seed, "population")
    n, d = cfg.n_pool, cfg.feature_dim
    ages = rng.uniform(cfg.age_low_years, cfg.age_high_years, size=n)
    z = (ages - ages.min()) / (ages.max() - ages.min())
    y = (rng.random(n) < _sigmoid(cfg.prevalence_slope * (z - cfg.prevalence_midpoint))).astype(np.int64)
    # u = e0 carries disease, v = e1 carries age morphology
    feats = rng.normal(0.0, cfg.noise_sd, size=(n, d))
    feats[:, 0] += y * cfg.disease_signal
    feats[:, 1] += cfg.age_morphology_strength * z
    pool = Dataset(np.arange(n, dtype=np.int64), feats, ages, z, y, float(ages.min()), float(ages.max()))
    return normalize_ages(pool)


def shift_weights(z: np.ndarray, gamma: float, pivot: float, favour_old: bool) -> np.ndarray:
    """Unnormalized exponential sampling weights; exactly 1 at the pivot.

    The training draw favours young ages (``favour_old=False``), the test draw
    old ages.
    """
    sign = 1.0 if favour_old else -1.0
    return np.exp(sign * gamma * (np.asarray(z, dtype=float) - pivot))


def weighted_sample_without_replacement(weights: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Efraimidis-Spirakis exponential keys: take the k smallest E_i / w_i."""
    weights = np.asarray(weights, dtype=float)
    if k > len(weights):
        raise InsufficientPool(f"cannot draw {k} from {len(weights)}")
    keys = rng.exponential(size=len(weights)) / weights
    return np.argsort(keys, kind="stable")[:k]


def holdout_validation(train: Dataset, fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Uniformly move ``round(fraction * n)`` samples out of ``train``.

    Returns ``(remaining_train, validation)``.
    """
    if not 0.0 < fraction < 1.0:
        raise InvalidConfig("fraction must be in (0, 1)")
    rng = rng_stream(seed, "holdout")
    n_val = int(round(fraction * len(train)))
    perm = rng.permutation(len(train))
    val_idx = np.sort(perm[:n_val])
    keep_idx = np.sort(perm[n_val:])
    return train.subset(keep_idx), train.subset(val_idx)


def shift_split(pool: Dataset, shift: ShiftConfig, seed: int) -> SplitBundle:
    shift.validate()
    if shift.n_train + shift.n_test > len(pool):
        raise InsufficientPool(f"n_train + n_test = {shift.n_train + shift.n_test} > pool size {len(pool)}")
    rng = rng_stream(seed, "shift")
    w_te = shift_weights(pool.z, shift.gamma, shift.b_te, favour_old=True)
    test_idx = weighted_sample_without_replacement(w_te, shift.n_test, rng)
    remaining = np.setdiff1d(np.arange(len(pool)), test_idx)
    w_tr = shift_weights(pool.z[remaining], shift.gamma, shift.b_tr, favour_old=False)
    train_idx = remaining[weighted_sample_without_replacement(w_tr, shift.n_train, rng)]
    train_all = pool.subset(np.sort(train_idx))
    test = pool.subset(np.sort(test_idx))
    train, val = holdout_validation(train_all, shift.val_fraction, seed)
    return SplitBundle(train, val, test, shift.gamma, seed, (shift.b_tr, shift.b_te))
