"""Per-sample difficulty ``g = |p - y|`` and binned age/difficulty diagnostics."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from agedecor.core import Dataset
from agedecor.model import ClassifierParams, forward


class EmptyLabelSubset(ValueError):
    pass


def sample_difficulty(p, y):
    return np.abs(np.asarray(p, dtype=float) - np.asarray(y, dtype=float))


@dataclass(frozen=True, eq=False)
class DifficultyRecords:
    """One row per sample, columnar. Produced by a single frozen snapshot."""

    ids: np.ndarray
    g: np.ndarray
    z: np.ndarray
    y: np.ndarray

    def __len__(self) -> int:
        return len(self.ids)

    def label(self, y: int) -> "DifficultyRecords":
        m = self.y == y
        return DifficultyRecords(self.ids[m], self.g[m], self.z[m], self.y[m])


def collect_difficulties(params: ClassifierParams, dataset: Dataset) -> DifficultyRecords:
    p = forward(params, dataset.features)
    return DifficultyRecords(dataset.ids.copy(), sample_difficulty(p, dataset.y), dataset.z.copy(),
                             dataset.y.copy())


def pearson_r(x, y) -> tuple[float, bool]:
    """Pearson correlation; ``(0.0, True)`` when either side has zero variance."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    dx, dy = x - x.mean(), y - y.mean()
    sxx, syy = float(dx @ dx), float(dy @ dy)
    if len(x) < 2 or sxx <= 1e-300 or syy <= 1e-300:
        return 0.0, True
    return float(np.clip((dx @ dy) / np.sqrt(sxx * syy), -1.0, 1.0)), False


@dataclass
class LabelTrend:
    centers: np.ndarray
    mean_g: np.ndarray
    sem: np.ndarray
    counts: np.ndarray
    r: float
    degenerate: bool
    slope: float
    intercept: float


@dataclass
class TrendReport:
    n_bins: int
    labels: dict[int, LabelTrend]

    def rows(self) -> list[dict]:
        out = []
        for y in sorted(self.labels):
            t = self.labels[y]
            for c, m, s, n in zip(t.centers, t.mean_g, t.sem, t.counts):
                out.append({"bin": float(c), "label": y, "mean_g": float(m), "sem": float(s), "count": int(n)})
        return out


def trend_report(records: DifficultyRecords, n_bins: int = 10) -> TrendReport:
    """Equal-width z-bins per label; empty bins are dropped from the fit."""
    if n_bins < 3:
        raise ValueError("n_bins must be >= 3")
    edges = np.linspace(0.0, 1.0, n_bins + 1)
    all_centers = 0.5 * (edges[:-1] + edges[1:])
    labels = {}
    for y in (0, 1):
        sub = records.label(y)
        if len(sub) == 0:
            raise EmptyLabelSubset(f"no records with label {y}")
        idx = np.clip(np.searchsorted(edges, sub.z, side="right") - 1, 0, n_bins - 1)
        counts = np.bincount(idx, minlength=n_bins)
        keep = counts > 0
        sums = np.bincount(idx, weights=sub.g, minlength=n_bins)
        means = np.divide(sums, counts, out=np.zeros(n_bins), where=keep)
        sq = np.bincount(idx, weights=(sub.g - means[idx]) ** 2, minlength=n_bins)
        sd = np.sqrt(np.divide(sq, counts - 1, out=np.zeros(n_bins), where=counts > 1))
        sem = np.divide(sd, np.sqrt(np.maximum(counts, 1)))
        c, m = all_centers[keep], means[keep]
        r, degenerate = pearson_r(c, m)
        if len(c) >= 2:
            slope, intercept = np.polyfit(c, m, 1)
        else:
            slope, intercept = 0.0, float(m[0])
        labels[y] = LabelTrend(c, m, sem[keep], counts[keep], r, degenerate, float(slope), float(intercept))
    return TrendReport(n_bins, labels)


def write_trend_csv(report: TrendReport, path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, ["bin", "label", "mean_g", "sem", "count"], lineterminator="\n")
        w.writeheader()
        w.writerows(report.rows())
