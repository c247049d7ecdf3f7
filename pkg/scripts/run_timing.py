"""Per-step hypergradient timing across problem sizes.

Medians of one full UL-gradient computation (inner solves included) per
(m, n, method); one warm-up repetition is excluded and cells run serially.

Usage: python scripts/run_timing.py [--sizes 1:1 1:100 1:1000] [--out timing.csv]
"""

import argparse

from bvfsm.cli import time_step


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--sizes", nargs="+", default=["1:1", "1:100", "1:1000"])
    ap.add_argument("--methods", nargs="+",
                    default=["bvfsm", "rhg", "bda:0.5", "cg:20", "neumann:20"])
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--out", default="runs/timing.csv")
    args = ap.parse_args()
    sizes = []
    for s in args.sizes:
        m, _, n = s.partition(":")
        sizes.append((int(m), int(n)))
    rows = time_step(sizes, args.methods, args.repeats,
                     cfg={"baseline": {"T": 100, "I": 100, "Q": 20}},
                     out_path=args.out)
    for r in rows:
        print(f"m={r['m']:<5d} n={r['n']:<6d} {r['method']:<12s} "
              f"median {r['median_s']*1e3:9.2f} ms {r['note']}")
    print(f"table written to {args.out}")


if __name__ == "__main__":
    main()
