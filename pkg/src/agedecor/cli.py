"""Command line entry point: generate, train, run, evaluate, trend, plotdata.

Exit codes: 0 success, 1 at least one matrix cell failed, 2 configuration error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from agedecor.core import Dataset, SplitBundle, read_dataset_csv, write_dataset_csv
from agedecor.difficulty import collect_difficulties, trend_report, write_trend_csv
from agedecor.evaluation import EvalReport, evaluate
from agedecor.model import params_from_dict
from agedecor.penalty import PenaltyConfig
from agedecor.synthgen import GeneratorConfig, ShiftConfig, generate_population, pool_pivots, shift_split
from agedecor.trainer import (AGG_FIELDS, LOG_FIELDS, VARIANTS, CellResult, TrainConfig, aggregate, mean_se,
                              train, variant_config)

log = logging.getLogger("agedecor")

SCHEMA_VERSION = 1
EXIT_OK, EXIT_PARTIAL, EXIT_CONFIG = 0, 1, 2


class ConfigError(ValueError):
    pass


class MissingResults(FileNotFoundError):
    pass


# ---------------------------------------------------------------- manifest

_GEN_KEYS = {f.name for f in fields(GeneratorConfig)}
_TRAIN_KEYS = {"epochs", "warmup_epochs", "batch_size", "lr", "age_bin_years", "architecture", "hidden"}
_SHIFT_KEYS = {"n_train", "n_test", "val_fraction"}


@dataclass
class ExperimentManifest:
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    gammas: tuple = (0.0, 4.0, 8.0)
    seeds: tuple = (0, 1, 2, 3, 4)
    methods: tuple = ("ours", "erm", "resampled")
    train: TrainConfig = field(default_factory=TrainConfig)
    shift: dict = field(default_factory=dict)
    data_seed: int = 0
    output_dir: str = "experiment"
    workers: int = 0
    schema_version: int = SCHEMA_VERSION


def parse_kv(text: str) -> dict[str, str]:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected key = value, got {raw!r}")
        k, v = (s.strip() for s in line.split("=", 1))
        if k in out:
            raise ConfigError(f"line {n}: duplicate key {k!r}")
        out[k] = v
    return out


def _num(v: str, kind, key: str):
    try:
        return kind(v)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {v!r} as {kind.__name__}") from None


def _bool(v: str, key: str) -> bool:
    if v.lower() in ("1", "true", "yes", "on"):
        return True
    if v.lower() in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"{key}: expected a boolean, got {v!r}")


def _typed(cls, key: str, v: str):
    t = {f.name: f.type for f in fields(cls)}[key]
    t = t if isinstance(t, str) else t.__name__
    if t == "int":
        return _num(v, int, key)
    if t == "float":
        return _num(v, float, key)
    return v


def manifest_from_kv(kv: dict[str, str], require_schema: bool = True) -> ExperimentManifest:
    kv = dict(kv)
    if "schema_version" in kv:
        version = _num(kv.pop("schema_version"), int, "schema_version")
        if version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema_version {version}")
    elif require_schema:
        raise ConfigError("manifest is missing schema_version")
    gen = {k: _typed(GeneratorConfig, k, kv.pop(k)) for k in list(kv) if k in _GEN_KEYS}
    tr = {k: _typed(TrainConfig, k, kv.pop(k)) for k in list(kv) if k in _TRAIN_KEYS}
    sh = {k: _typed(ShiftConfig, k, kv.pop(k)) for k in list(kv) if k in _SHIFT_KEYS}
    pen = {}
    if "lambda" in kv:
        pen["lam"] = _num(kv.pop("lambda"), float, "lambda")
    for k in ("use_affinity", "use_coverage"):
        if k in kv:
            pen[k] = _bool(kv.pop(k), k)
    m = ExperimentManifest()
    if "gammas" in kv:
        m.gammas = tuple(_num(x, float, "gammas") for x in kv.pop("gammas").split(","))
    if "seeds" in kv:
        m.seeds = tuple(_num(x, int, "seeds") for x in kv.pop("seeds").split(","))
    if "methods" in kv:
        m.methods = tuple(x.strip() for x in kv.pop("methods").split(","))
        unknown = [x for x in m.methods if x not in VARIANTS]
        if unknown:
            raise ConfigError(f"unknown methods {unknown}; choose from {sorted(VARIANTS)}")
    for k, kind in (("data_seed", int), ("workers", int)):
        if k in kv:
            setattr(m, k, _num(kv.pop(k), kind, k))
    if "output_dir" in kv:
        m.output_dir = kv.pop("output_dir")
    if "method" in kv:
        tr["method"] = kv.pop("method")
    if "seed" in kv:
        tr["seed"] = _num(kv.pop("seed"), int, "seed")
    if kv:
        raise ConfigError(f"unknown keys: {sorted(kv)}")
    try:
        m.generator = GeneratorConfig(**gen)
        m.generator.validate()
        m.train = TrainConfig(penalty=PenaltyConfig(**pen), **tr)
        ShiftConfig(**sh).validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    m.shift = sh
    if m.train.batch_size > sh.get("n_train", 4000):
        raise ConfigError("batch_size exceeds n_train")
    return m


def load_manifest(path: str | Path, require_schema: bool = True) -> ExperimentManifest:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    return manifest_from_kv(parse_kv(text), require_schema)


# ---------------------------------------------------------------- data files

def gamma_tag(g: float) -> str:
    return f"{g:g}"


def write_split(split: SplitBundle, directory: Path) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    for name in ("train", "validation", "test"):
        write_dataset_csv(getattr(split, name), directory / f"{name}.csv")
    meta = {
        "gamma": split.gamma, "seed": split.seed, "b_tr": split.pivots[0], "b_te": split.pivots[1],
        "age_min": split.train.age_min, "age_max": split.train.age_max,
        "sizes": {n: len(getattr(split, n)) for n in ("train", "validation", "test")},
    }
    (directory / "split.json").write_text(json.dumps(meta, indent=1, sort_keys=True), encoding="utf-8")


def read_split(directory: str | Path) -> SplitBundle:
    directory = Path(directory)
    meta = json.loads((directory / "split.json").read_text(encoding="utf-8"))
    parts = [read_dataset_csv(directory / f"{n}.csv", meta["age_min"], meta["age_max"])
             for n in ("train", "validation", "test")]
    return SplitBundle(*parts, meta["gamma"], meta["seed"], (meta["b_tr"], meta["b_te"]))


def cmd_generate(m: ExperimentManifest, out: Path | None = None) -> dict[float, SplitBundle]:
    root = Path(out or m.output_dir) / "data"
    if not root.exists():
        log.info("creating %s", root)
    root.mkdir(parents=True, exist_ok=True)
    pool = generate_population(m.generator, m.data_seed)
    write_dataset_csv(pool, root / "population.csv")
    b_tr, b_te = pool_pivots(pool)
    side = {"generator": m.generator.to_dict(), "seed": m.data_seed, "b_tr": b_tr, "b_te": b_te,
            "age_min": pool.age_min, "age_max": pool.age_max, "schema_version": SCHEMA_VERSION}
    (root / "population.json").write_text(json.dumps(side, indent=1, sort_keys=True), encoding="utf-8")
    splits = {}
    for g in m.gammas:
        split = shift_split(pool, ShiftConfig(gamma=g, b_tr=b_tr, b_te=b_te, **m.shift), m.data_seed)
        write_split(split, root / "splits" / f"gamma_{gamma_tag(g)}")
        splits[g] = split
    return splits


# ---------------------------------------------------------------- cells

def _write_log(rows: list[dict], path: Path) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, LOG_FIELDS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})


def train_and_write(split: SplitBundle, cfg: TrainConfig, out: Path, variant: str) -> EvalReport:
    out.mkdir(parents=True, exist_ok=True)
    art = train(split, cfg)
    (out / "run.json").write_text(json.dumps(art.to_dict(), indent=1), encoding="utf-8")
    _write_log(art.log_rows, out / "log.csv")
    rep = evaluate(art.params, split, meta={"variant": variant, "gamma": split.gamma, "seed": cfg.seed})
    (out / "eval.json").write_text(rep.to_json(), encoding="utf-8")
    return rep


def _cell_job(args) -> CellResult:
    split_dir, variant, seed, base, out = args
    out = Path(out)
    try:
        split = read_split(split_dir)
        rep = train_and_write(split, variant_config(base, variant, seed), out, variant)
        return CellResult(variant, split.gamma, seed, "ok", rep)
    except Exception as exc:
        logging.getLogger("agedecor").exception("cell %s failed", out)
        return CellResult(variant, float("nan"), seed, f"failed: {type(exc).__name__}: {exc}")


def cell_dir(root: Path, variant: str, gamma: float, seed: int) -> Path:
    return root / "results" / variant / gamma_tag(gamma) / str(seed)


def cmd_run(m: ExperimentManifest, out: Path | None = None) -> int:
    root = Path(out or m.output_dir)
    data = root / "data" / "splits"
    if not all((data / f"gamma_{gamma_tag(g)}" / "split.json").exists() for g in m.gammas):
        cmd_generate(m, root)
    jobs, results = [], {}
    for v in m.methods:
        for g in m.gammas:
            for s in m.seeds:
                d = cell_dir(root, v, g, s)
                if (d / "eval.json").exists():
                    rep = EvalReport.from_json((d / "eval.json").read_text(encoding="utf-8"))
                    results[(v, g, s)] = CellResult(v, g, s, "ok", rep)
                else:
                    jobs.append((v, g, s, (str(data / f"gamma_{gamma_tag(g)}"), v, s, m.train, str(d))))
    workers = m.workers or os.cpu_count() or 1
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            done = list(ex.map(_cell_job, [j[3] for j in jobs]))
    else:
        done = [_cell_job(j[3]) for j in jobs]
    for (v, g, s, _), res in zip(jobs, done):
        res.gamma = g
        results[(v, g, s)] = res
    ordered = [results[(v, g, s)] for v in m.methods for g in m.gammas for s in m.seeds]
    write_summary(ordered, root)
    return EXIT_PARTIAL if any(r.report is None for r in ordered) else EXIT_OK


def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else v


def write_summary(results: list[CellResult], root: Path) -> None:
    rows = aggregate(results)
    with (root / "summary.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, list(AGG_FIELDS) + ["status"], lineterminator="\n")
        w.writeheader()
        for r in rows:
            r = {k: _fmt(v) for k, v in r.items()}
            r["status"] = "ok" if r["failed"] == 0 else f"partial: {r['failed']} failed"
            w.writerow(r)
    with (root / "cells.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "gamma", "seed", "status", "auc", "delta_sep10"])
        for c in results:
            rep = c.report
            w.writerow([c.variant, _fmt(c.gamma), c.seed, c.status, _fmt(rep.auc) if rep else "",
                        _fmt(rep.delta_sep10) if rep else ""])


# ---------------------------------------------------------------- plot data

def cmd_plotdata(root: Path, out: Path | None = None, n_bins: int = 10) -> dict[str, Path]:
    root = Path(root)
    out = Path(out or root / "plots")
    evals = sorted((root / "results").glob("*/*/*/eval.json")) if (root / "results").exists() else []
    if not evals:
        raise MissingResults(f"no eval.json under {root / 'results'}")
    out.mkdir(parents=True, exist_ok=True)
    cells = []
    for p in evals:
        rep = EvalReport.from_json(p.read_text(encoding="utf-8"))
        cells.append((rep.meta["variant"], float(rep.meta["gamma"]), int(rep.meta["seed"]), rep, p.parent))

    # trade-off: one row per (method, gamma)
    keys = sorted({(c[0], c[1]) for c in cells})
    with (out / "fig3_tradeoff.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "gamma", "auc", "auc_se", "dsep10", "dsep10_se"])
        for v, g in keys:
            reps = [c[3] for c in cells if c[0] == v and c[1] == g]
            a, a_se = mean_se([100.0 * r.auc for r in reps])
            d, d_se = mean_se([r.delta_sep10 for r in reps])
            w.writerow([v, _fmt(g), _fmt(a), _fmt(a_se), _fmt(d), _fmt(d_se)])

    # warm-up trend at the smallest gamma, averaged over the available seeds
    g0 = min(c[1] for c in cells)
    per_bin: dict[tuple, list] = {}
    for v, g, s, _, d in cells:
        if g != g0 or not (d / "run.json").exists():
            continue
        for row in json.loads((d / "run.json").read_text(encoding="utf-8")).get("warmup_trend", []):
            per_bin.setdefault((row["label"], row["bin"]), {}).setdefault(s, row)
    with (out / "fig1_trend.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bin", "label", "mean_g", "sem"])
        for (label, b), by_seed in sorted(per_bin.items(), key=lambda kv: (kv[0][0], kv[0][1])):
            rows = list(by_seed.values())
            m, se = mean_se([r["mean_g"] for r in rows])
            if len(rows) == 1:
                se = rows[0]["sem"]
            w.writerow([_fmt(b), label, _fmt(m), _fmt(se)])

    # train/test age densities per gamma
    splits_root = root / "data" / "splits"
    with (out / "fig2_densities.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["gamma", "split", "bin", "density", "prevalence"])
        for d in sorted(splits_root.glob("gamma_*")) if splits_root.exists() else []:
            split = read_split(d)
            for name in ("train", "test"):
                for b, dens, prev in age_density(getattr(split, name), n_bins):
                    w.writerow([_fmt(split.gamma), name, _fmt(b), _fmt(dens), "" if prev is None else _fmt(prev)])
    return {k: out / f"{k}.csv" for k in ("fig1_trend", "fig2_densities", "fig3_tradeoff")}


def age_density(ds: Dataset, n_bins: int = 10):
    """``(bin centre in years, density per year, prevalence or None)`` per bin."""
    edges = np.linspace(ds.age_min, ds.age_max, n_bins + 1)
    idx = np.clip(np.searchsorted(edges, ds.age_years, side="right") - 1, 0, n_bins - 1)
    counts = np.bincount(idx, minlength=n_bins)
    pos = np.bincount(idx, weights=ds.y, minlength=n_bins)
    width = edges[1] - edges[0]
    for k in range(n_bins):
        prev = float(pos[k] / counts[k]) if counts[k] else None
        yield 0.5 * (edges[k] + edges[k + 1]), counts[k] / (len(ds) * width), prev


# ---------------------------------------------------------------- argparse

def _train_config_from_args(args, base: ExperimentManifest) -> TrainConfig:
    cfg = base.train
    pen = cfg.penalty
    if args.lam is not None:
        pen = replace(pen, lam=args.lam)
    if args.no_affinity:
        pen = replace(pen, use_affinity=False)
    if args.no_coverage:
        pen = replace(pen, use_coverage=False)
    kw = {"penalty": pen}
    if args.method:
        kw["method"] = args.method
    if args.seed is not None:
        kw["seed"] = args.seed
    return replace(cfg, **kw)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="agedecor", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write population and per-gamma splits")
    g.add_argument("--manifest", required=True)
    g.add_argument("--out")

    t = sub.add_parser("train", help="train one cell")
    t.add_argument("--gamma", type=float, default=0.0)
    t.add_argument("--seed", type=int)
    t.add_argument("--method", choices=("ours", "erm", "resampled"))
    t.add_argument("--lambda", dest="lam", type=float)
    t.add_argument("--no-affinity", action="store_true")
    t.add_argument("--no-coverage", action="store_true")
    t.add_argument("--config", help="key=value config file")
    t.add_argument("--data", help="split directory (default: generate from config)")
    t.add_argument("--out", required=True)

    r = sub.add_parser("run", help="run the full method x gamma x seed matrix")
    r.add_argument("--manifest", required=True)
    r.add_argument("--out")
    r.add_argument("--workers", type=int)

    e = sub.add_parser("evaluate", help="evaluate a trained run on a split")
    e.add_argument("--run", required=True, help="run.json")
    e.add_argument("--data", required=True, help="split directory")
    e.add_argument("--out")

    tr = sub.add_parser("trend", help="binned age/difficulty trend CSV")
    tr.add_argument("--run", required=True, help="run.json")
    tr.add_argument("--data", required=True, help="split directory")
    tr.add_argument("--snapshot", choices=("warmup", "final"), default="warmup")
    tr.add_argument("--bins", type=int, default=10)
    tr.add_argument("--out", required=True)

    p = sub.add_parser("plotdata", help="CSV inputs for the trend, density and trade-off plots")
    p.add_argument("--root", required=True, help="experiment output directory")
    p.add_argument("--out")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(message)s")
    try:
        if args.command == "generate":
            m = load_manifest(args.manifest)
            cmd_generate(m, Path(args.out) if args.out else None)
            return EXIT_OK
        if args.command == "run":
            m = load_manifest(args.manifest)
            if args.workers is not None:
                m.workers = args.workers
            return cmd_run(m, Path(args.out) if args.out else None)
        if args.command == "train":
            m = load_manifest(args.config, require_schema=False) if args.config else ExperimentManifest()
            cfg = _train_config_from_args(args, m)
            if args.data:
                split = read_split(args.data)
            else:
                pool = generate_population(m.generator, m.data_seed)
                split = shift_split(pool, ShiftConfig.from_pool(pool, args.gamma, **m.shift), m.data_seed)
            variant = cfg.method
            rep = train_and_write(split, cfg, Path(args.out), variant)
            print(rep.to_json())
            return EXIT_OK
        if args.command == "evaluate":
            blob = json.loads(Path(args.run).read_text(encoding="utf-8"))
            split = read_split(args.data)
            cfg = blob["config"]
            rep = evaluate(params_from_dict(blob["params"]), split,
                           meta={"variant": cfg["method"], "gamma": split.gamma, "seed": cfg["seed"]})
            if args.out:
                Path(args.out).write_text(rep.to_json(), encoding="utf-8")
            print(rep.to_json())
            return EXIT_OK
        if args.command == "trend":
            blob = json.loads(Path(args.run).read_text(encoding="utf-8"))
            params = params_from_dict(blob["warmup_params" if args.snapshot == "warmup" else "params"])
            split = read_split(args.data)
            write_trend_csv(trend_report(collect_difficulties(params, split.train), args.bins), args.out)
            return EXIT_OK
        if args.command == "plotdata":
            cmd_plotdata(Path(args.root), Path(args.out) if args.out else None)
            return EXIT_OK
    except ConfigError as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except (OSError, MissingResults) as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
