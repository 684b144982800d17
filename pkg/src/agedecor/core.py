"""Domain types, dataset containers, age normalization and seeded RNG streams."""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np


class DegenerateAges(ValueError):
    """All ages in a pool are identical, so min-max normalization is undefined."""


class ShapeMismatch(ValueError):
    pass


@dataclass(frozen=True)
class Sample:
    id: int
    features: np.ndarray
    age_years: float
    z: float
    y: int


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    """Column-oriented, immutable collection of samples.

    ``age_min``/``age_max`` are the normalization anchors. Every split carved
    from a pool carries the pool's anchors, never its own.
    """

    ids: np.ndarray
    features: np.ndarray
    age_years: np.ndarray
    z: np.ndarray
    y: np.ndarray
    age_min: float
    age_max: float

    def __post_init__(self):
        n = len(self.ids)
        feats = np.asarray(self.features, dtype=float)
        if feats.ndim != 2 or feats.shape[0] != n:
            raise ShapeMismatch(f"features must be (n, d) with n={n}, got {feats.shape}")
        for name in ("age_years", "z", "y"):
            if len(getattr(self, name)) != n:
                raise ShapeMismatch(f"{name} has length {len(getattr(self, name))}, expected {n}")
        object.__setattr__(self, "ids", _readonly(np.asarray(self.ids, dtype=np.int64)))
        object.__setattr__(self, "features", _readonly(feats))
        object.__setattr__(self, "age_years", _readonly(np.asarray(self.age_years, dtype=float)))
        object.__setattr__(self, "z", _readonly(np.asarray(self.z, dtype=float)))
        object.__setattr__(self, "y", _readonly(np.asarray(self.y, dtype=np.int64)))
        if not np.isin(self.y, (0, 1)).all():
            raise ValueError("labels must be 0 or 1")

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    @property
    def samples(self) -> Iterator[Sample]:
        for i in range(len(self)):
            yield Sample(
                int(self.ids[i]), self.features[i], float(self.age_years[i]), float(self.z[i]), int(self.y[i])
            )

    def subset(self, index) -> "Dataset":
        """Rows selected by integer index or boolean mask; anchors are kept."""
        return Dataset(
            self.ids[index],
            self.features[index],
            self.age_years[index],
            self.z[index],
            self.y[index],
            self.age_min,
            self.age_max,
        )

    def select_ids(self, ids) -> "Dataset":
        pos = {int(i): k for k, i in enumerate(self.ids)}
        return self.subset(np.array([pos[int(i)] for i in ids], dtype=np.int64))

    def ages_from_z(self) -> np.ndarray:
        return self.age_min + self.z * (self.age_max - self.age_min)

    def equals(self, other: "Dataset") -> bool:
        return (
            self.age_min == other.age_min
            and self.age_max == other.age_max
            and all(
                np.array_equal(getattr(self, k), getattr(other, k))
                for k in ("ids", "features", "age_years", "z", "y")
            )
        )


@dataclass(frozen=True, eq=False)
class SplitBundle:
    train: Dataset
    validation: Dataset
    test: Dataset
    gamma: float
    seed: int
    pivots: tuple[float, float] = field(default=(0.0, 1.0))

    def __post_init__(self):
        tr, va, te = (set(map(int, d.ids)) for d in (self.train, self.validation, self.test))
        if tr & va or tr & te or va & te:
            raise ValueError("train/validation/test ids must be pairwise disjoint")


def normalize_ages(pool: Dataset) -> Dataset:
    """Min-max normalize ``age_years`` to ``z`` using the pool's own range."""
    ages = pool.age_years
    lo, hi = float(ages.min()), float(ages.max())
    if not hi > lo:
        raise DegenerateAges(f"all ages equal ({lo})")
    z = (ages - lo) / (hi - lo)
    return Dataset(pool.ids, pool.features, ages, np.clip(z, 0.0, 1.0), pool.y, lo, hi)


def rng_stream(seed: int, stream_tag: str) -> np.random.Generator:
    """Deterministic generator keyed on ``(seed, stream_tag)``.

    The tag is hashed with SHA-256 (not ``hash()``, which is salted per process),
    and PCG64 output is platform independent.
    """
    digest = hashlib.sha256(stream_tag.encode("utf-8")).digest()
    tag_words = [int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4)]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), *tag_words])))


def write_dataset_csv(ds: Dataset, path: str | Path) -> None:
    path = Path(path)
    d = ds.feature_dim
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "age_years", "z", "y"] + [f"f{j}" for j in range(d)])
        for i in range(len(ds)):
            w.writerow(
                [int(ds.ids[i]), repr(float(ds.age_years[i])), repr(float(ds.z[i])), int(ds.y[i])]
                + [repr(float(v)) for v in ds.features[i]]
            )


def read_dataset_csv(path: str | Path, age_min: float | None = None, age_max: float | None = None) -> Dataset:
    """Load a dataset CSV. Anchors default to the file's age range."""
    with Path(path).open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    if header[:4] != ["id", "age_years", "z", "y"]:
        raise ValueError(f"unexpected header in {path}: {header[:4]}")
    d = len(header) - 4
    arr = np.array([[float(x) for x in r] for r in body], dtype=float).reshape(len(body), 4 + d)
    ages = arr[:, 1]
    lo = float(ages.min()) if age_min is None else age_min
    hi = float(ages.max()) if age_max is None else age_max
    return Dataset(arr[:, 0].astype(np.int64), arr[:, 4:], ages, arr[:, 2], arr[:, 3].astype(np.int64), lo, hi)
