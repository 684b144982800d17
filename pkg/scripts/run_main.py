"""ERM, resampled batches and the decorrelation penalty across shift strengths."""

import time

from _common import parser, print_rows, setup

from agedecor.trainer import aggregate, run_matrix


def main():
    args = parser(__doc__).parse_args()
    splits, seeds, base = setup(args)
    t0 = time.perf_counter()
    res = run_matrix(splits, seeds, ("erm", "resampled", "ours"), base, workers=args.workers)
    print_rows(aggregate(res))
    print(f"\n{len(res)} cells in {time.perf_counter() - t0:.1f}s")


if __name__ == "__main__":
    main()
