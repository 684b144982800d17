import argparse

from agedecor.synthgen import GeneratorConfig, generate_population
from agedecor.trainer import TrainConfig, make_splits


def parser(doc):
    ap = argparse.ArgumentParser(description=doc)
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--gammas", default="0,4,8")
    ap.add_argument("--epochs", type=int, default=30)
    ap.add_argument("--workers", type=int, default=1)
    return ap


def setup(args):
    gammas = tuple(float(g) for g in args.gammas.split(","))
    pool = generate_population(GeneratorConfig(), 0)
    return make_splits(pool, gammas, 0), tuple(range(args.seeds)), TrainConfig(epochs=args.epochs)


def print_rows(rows):
    print(f"{'method':<18}{'gamma':>6}{'AUC':>16}{'|s+|':>9}{'|s-|':>9}{'dSep10 %':>16}{'dAUC pt':>14}")
    for r in rows:
        print(f"{r['method']:<18}{r['gamma']:>6g}{r['auc_mean']:>9.4f}+/-{r['auc_se']:.4f}"
              f"{r['s_plus']:>9.4f}{r['s_minus']:>9.4f}{r['dsep10_mean']:>10.2f}+/-{r['dsep10_se']:<4.2f}"
              f"{r['delta_auc_mean']:>+9.2f}" + (f"  ({r['failed']} failed)" if r["failed"] else ""))
