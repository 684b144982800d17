"""Full penalty vs. uniform affinity weights vs. no coverage gating."""

from _common import parser, print_rows, setup

from agedecor.trainer import aggregate, mean_se, run_matrix

VARIANTS = ("ours", "ours-no-affinity", "ours-no-coverage")


def main():
    args = parser(__doc__).parse_args()
    splits, seeds, base = setup(args)
    res = run_matrix(splits, seeds, VARIANTS, base, workers=args.workers)
    print_rows(aggregate(res))
    print("\naveraged over gamma and seeds")
    for v in VARIANTS:
        m, se = mean_se([r.report.delta_sep10 for r in res if r.variant == v and r.report])
        print(f"  {v:<18} dSep10 {m:6.2f} +/- {se:.2f}")


if __name__ == "__main__":
    main()
