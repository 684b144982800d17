"""Training loop: BCE warm-up, frozen trend affinity, penalized epochs; baselines."""

from __future__ import annotations

import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from agedecor.core import Dataset, SplitBundle, rng_stream
from agedecor.difficulty import TrendReport, collect_difficulties, trend_report
from agedecor.evaluation import EvalReport, evaluate
from agedecor.model import AdamState, ClassifierParams, adam_step, params_to_dict
from agedecor.penalty import Batch, PenaltyConfig, total_grad
from agedecor.synthgen import ShiftConfig, shift_split
from agedecor.trendfit import AffinityWeights, TrendFit, fit_trends

log = logging.getLogger(__name__)

METHODS = ("ours", "erm", "resampled")
LOG_FIELDS = ("epoch", "phase", "loss", "bce", "penalty", "slope_y0", "slope_y1", "coverage_y0", "coverage_y1")


class NoAgeSpread(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    warmup_epochs: int = 1
    batch_size: int = 64
    lr: float = 0.001
    method: str = "ours"
    penalty: PenaltyConfig = field(default_factory=PenaltyConfig)
    seed: int = 0
    age_bin_years: int = 10
    architecture: str = "linear"
    hidden: int = 8

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}")
        if not self.warmup_epochs < self.epochs:
            raise ValueError("warmup_epochs must be < epochs")
        if self.batch_size < 4:
            raise ValueError("batch_size must be >= 4")

    def to_dict(self) -> dict:
        return asdict(self)


# named cells of an experiment matrix; ablations are "ours" with a switch off
VARIANTS = {
    "ours": dict(method="ours"),
    "erm": dict(method="erm"),
    "resampled": dict(method="resampled"),
    "ours-no-affinity": dict(method="ours", use_affinity=False),
    "ours-no-coverage": dict(method="ours", use_coverage=False),
}


def variant_config(base: TrainConfig, variant: str, seed: int) -> TrainConfig:
    switches = dict(VARIANTS[variant])
    method = switches.pop("method")
    return replace(base, method=method, seed=seed, penalty=replace(base.penalty, **switches))


@dataclass
class RunArtifact:
    params: ClassifierParams
    warmup_params: ClassifierParams
    trend_fit: TrendFit
    affinity: AffinityWeights
    warmup_trend: TrendReport
    log_rows: list
    elapsed: float
    config: TrainConfig
    final_weights_used: np.ndarray | None = None

    def to_dict(self) -> dict:
        return {
            "config": _jsonable(self.config.to_dict()),
            "params": params_to_dict(self.params),
            "warmup_params": params_to_dict(self.warmup_params),
            "trend_fit": self.trend_fit.to_dict(),
            "weight_histogram": self.affinity.histogram(),
            "warmup_trend_r": {str(y): t.r for y, t in self.warmup_trend.labels.items()},
            "warmup_trend": self.warmup_trend.rows(),
            "log": self.log_rows,
            "elapsed_seconds": self.elapsed,
        }


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


def age_bins(age_years: np.ndarray, bin_years: int) -> np.ndarray:
    return np.floor(np.asarray(age_years) / bin_years).astype(np.int64)


def resampled_batches(train: Dataset, cfg: TrainConfig, rng: np.random.Generator):
    """One epoch of batches with a uniform draw over non-empty age bins.

    Each batch takes ``batch_size // k`` samples from every one of the ``k``
    non-empty bins, the remainder going to randomly chosen bins, sampled with
    replacement inside each bin.
    """
    bins = age_bins(train.age_years, cfg.age_bin_years)
    members = [np.flatnonzero(bins == b) for b in np.unique(bins)]
    k = len(members)
    if k < 2:
        raise NoAgeSpread("all training samples fall into one age bin")
    base, rem = divmod(cfg.batch_size, k)
    for _ in range(math.ceil(len(train) / cfg.batch_size)):
        counts = np.full(k, base)
        if rem:
            counts[rng.choice(k, rem, replace=False)] += 1
        yield np.concatenate([m[rng.integers(0, len(m), c)] for m, c in zip(members, counts)])


def shuffled_batches(n: int, batch_size: int, rng: np.random.Generator):
    perm = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield perm[start : start + batch_size]


def train(split: SplitBundle, cfg: TrainConfig) -> RunArtifact:
    t0 = time.perf_counter()
    data = split.train
    X, y, z = data.features, data.y, data.z
    params = ClassifierParams.init(data.feature_dim, rng_stream(cfg.seed, "init"), cfg.architecture, cfg.hidden)
    params.input_shift = X.mean(axis=0)
    prev = float(np.clip(y.mean(), 1e-3, 1 - 1e-3))
    params.arrays["b" if cfg.architecture == "linear" else "b2"] = np.asarray(np.log(prev / (1 - prev)))
    state = AdamState(lr=cfg.lr)
    shuffle_rng = rng_stream(cfg.seed, "shuffle")
    resample_rng = rng_stream(cfg.seed, "resample")
    ones = np.ones(len(data))
    weights = ones
    warmup_params = trend = affinity = report = None
    rows = []
    for epoch in range(1, cfg.epochs + 1):
        if epoch == cfg.warmup_epochs + 1:
            # frozen snapshot, taken before any penalized step
            warmup_params = params.copy()
            records = collect_difficulties(warmup_params, data)
            report = trend_report(records)
            trend, affinity = fit_trends(records)
            weights = affinity.lookup(data.ids)
        penalized = cfg.method == "ours" and epoch > cfg.warmup_epochs
        pcfg = cfg.penalty if penalized else None
        if cfg.method == "resampled":
            batches = resampled_batches(data, cfg, resample_rng)
        else:
            batches = shuffled_batches(len(data), cfg.batch_size, shuffle_rng)
        acc = {k: 0.0 for k in LOG_FIELDS[2:]}
        nb = 0
        for idx in batches:
            batch = Batch(X[idx], y[idx], z[idx], weights[idx] if penalized else ones[idx])
            loss, grads, br = total_grad(batch, params, pcfg)
            params, state = adam_step(params, grads, state)
            acc["loss"] += loss
            for k in LOG_FIELDS[3:]:
                acc[k] += br[k]
            nb += 1
        row = {"epoch": epoch, "phase": "warmup" if epoch <= cfg.warmup_epochs else "main"}
        row.update({k: v / nb for k, v in acc.items()})
        rows.append(row)
    return RunArtifact(params, warmup_params, trend, affinity, report, rows, time.perf_counter() - t0, cfg,
                       weights if cfg.method == "ours" else None)


@dataclass
class CellResult:
    variant: str
    gamma: float
    seed: int
    status: str
    report: EvalReport | None = None
    artifact: RunArtifact | None = None


def make_splits(pool: Dataset, gammas, split_seed: int, **shift_kw) -> dict[float, SplitBundle]:
    return {g: shift_split(pool, ShiftConfig.from_pool(pool, g, **shift_kw), split_seed) for g in gammas}


def run_cell(split: SplitBundle, variant: str, seed: int, base: TrainConfig, keep_artifact: bool = False):
    try:
        cfg = variant_config(base, variant, seed)
        art = train(split, cfg)
        rep = evaluate(art.params, split, meta={"variant": variant, "gamma": split.gamma, "seed": seed})
        return CellResult(variant, split.gamma, seed, "ok", rep, art if keep_artifact else None)
    except Exception as exc:  # one failed cell must not sink the matrix
        log.exception("cell %s gamma=%s seed=%s failed", variant, split.gamma, seed)
        return CellResult(variant, split.gamma, seed, f"failed: {type(exc).__name__}: {exc}")


def _run_cell_star(args):
    return run_cell(*args)


def run_matrix(splits: dict[float, SplitBundle], seeds, variants, base: TrainConfig | None = None,
               workers: int | None = None, keep_artifacts: bool = False) -> list[CellResult]:
    """Every (variant, gamma, seed) cell; results in a fixed order."""
    base = base or TrainConfig()
    jobs = [(splits[g], v, s, base, keep_artifacts) for v in variants for g in splits for s in seeds]
    workers = workers or os.cpu_count() or 1
    if workers <= 1 or len(jobs) <= 1:
        return [_run_cell_star(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(_run_cell_star, jobs))


def mean_se(values) -> tuple[float, float]:
    v = np.asarray(values, dtype=float)
    if len(v) == 0:
        return float("nan"), float("nan")
    if len(v) == 1:
        return float(v[0]), 0.0
    return float(v.mean()), float(v.std(ddof=1) / np.sqrt(len(v)))


AGG_FIELDS = ("method", "gamma", "n", "auc_mean", "auc_se", "s_plus", "s_minus", "dsep10_mean", "dsep10_se",
              "delta_auc_mean", "delta_auc_se", "failed")


def aggregate(results: list[CellResult]) -> list[dict]:
    """Mean and standard error across seeds per (variant, gamma).

    dSep10 is computed per seed and then averaged. AUC deltas pair each cell
    with the ERM cell of the same (gamma, seed).
    """
    erm_auc = {(r.gamma, r.seed): r.report.auc for r in results if r.variant == "erm" and r.report}
    keys = []
    for r in results:
        if (r.variant, r.gamma) not in keys:
            keys.append((r.variant, r.gamma))
    rows = []
    for variant, gamma in keys:
        cells = [r for r in results if r.variant == variant and r.gamma == gamma]
        ok = [r for r in cells if r.report is not None]
        auc_m, auc_se = mean_se([r.report.auc for r in ok])
        ds_m, ds_se = mean_se([r.report.delta_sep10 for r in ok])
        deltas = [100.0 * (r.report.auc - erm_auc[(gamma, r.seed)]) for r in ok if (gamma, r.seed) in erm_auc]
        da_m, da_se = mean_se(deltas)
        rows.append({
            "method": variant, "gamma": gamma, "n": len(ok),
            "auc_mean": auc_m, "auc_se": auc_se,
            "s_plus": float(np.mean([abs(r.report.s_plus) for r in ok])) if ok else float("nan"),
            "s_minus": float(np.mean([abs(r.report.s_minus) for r in ok])) if ok else float("nan"),
            "dsep10_mean": ds_m, "dsep10_se": ds_se,
            "delta_auc_mean": da_m, "delta_auc_se": da_se,
            "failed": len(cells) - len(ok),
        })
    return rows
