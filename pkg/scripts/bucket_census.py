"""Admission bucket frequencies (both / gfb-only / bcl-only / neither) of
generated task sets, per task count, at U = 2.5 on m = 4.

    python scripts/bucket_census.py --samples 10000 --n 5 6 7 8 12
"""

import argparse
from collections import Counter

from mgrub.workload import GenSpec, iter_tagged

BUCKETS = ("both", "gfb-only", "bcl-only", "neither")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--samples", type=int, default=10_000)
    ap.add_argument("--n", type=int, nargs="+", default=[5, 6, 7, 8, 12])
    ap.add_argument("--total-u", type=float, default=2.5)
    ap.add_argument("--m", type=int, default=4)
    args = ap.parse_args()
    print(f"{'n':>3} " + " ".join(f"{b:>10}" for b in BUCKETS))
    for n in args.n:
        counts = Counter(b for b, _ in iter_tagged(GenSpec(n_tasks=n, total_U=args.total_u),
                                                   args.samples, args.m))
        print(f"{n:>3} " + " ".join(f"{counts[b]:>10}" for b in BUCKETS))


if __name__ == "__main__":
    main()
