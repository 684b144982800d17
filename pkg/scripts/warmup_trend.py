"""Binned difficulty vs. age right after the BCE warm-up, per label."""

import argparse

from agedecor.difficulty import write_trend_csv
from agedecor.synthgen import GeneratorConfig, generate_population
from agedecor.trainer import TrainConfig, make_splits, train


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--gamma", type=float, default=0.0)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--csv", help="optional output path for the binned table")
    args = ap.parse_args()

    pool = generate_population(GeneratorConfig(), 0)
    split = make_splits(pool, (args.gamma,), 0)[args.gamma]
    art = train(split, TrainConfig(seed=args.seed, epochs=2))
    for label, t in sorted(art.warmup_trend.labels.items()):
        print(f"y={label}  r={t.r:+.3f}  slope={t.slope:+.4f}")
        for c, g, n in zip(t.centers, t.mean_g, t.counts):
            print(f"   z={c:.2f}  E[g]={g:.4f}  n={n}")
    for label, f in sorted(art.trend_fit.fits.items()):
        print(f"huber y={label}: alpha={f.alpha:.4f} beta={f.beta:+.4f} delta={f.delta:.4f}")
    print("affinity histogram:", art.affinity.histogram()["counts"])
    if args.csv:
        write_trend_csv(art.warmup_trend, args.csv)


if __name__ == "__main__":
    main()
