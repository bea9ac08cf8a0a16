#!/usr/bin/env python3
"""Full benchmark protocol over the (budget, patients) grid.

Runs 100 seeds per cell over the standard 12-cell grid and writes the
aggregate CSVs and plots. That is hours of compute at full scale; pass
--smoke for a 3-seed, single-cell version that finishes in about a
minute and produces the same artifact set.

    python3 scripts/run_experiment.py --out results/full
    python3 scripts/run_experiment.py --smoke --out results/smoke
"""

import argparse

from vitalloc import cli


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--seed", type=int, default=0, help="master seed")
    parser.add_argument("--seeds", type=int, help="seeds per cell (default 100)")
    parser.add_argument("--workers", type=int, help="process pool size")
    parser.add_argument("--overwrite", action="store_true")
    parser.add_argument(
        "--smoke", action="store_true",
        help="3 seeds on the single B=3, N=20 cell instead of the full grid",
    )
    args = parser.parse_args()

    argv = ["experiment", "--out", args.out, "--seed", str(args.seed)]
    if args.smoke:
        argv += ["--budget", "3", "--patients", "20", "--seeds", str(args.seeds or 3)]
    elif args.seeds is not None:
        argv += ["--seeds", str(args.seeds)]
    if args.workers is not None:
        argv += ["--workers", str(args.workers)]
    if args.overwrite:
        argv += ["--overwrite"]
    return cli.main(argv)


if __name__ == "__main__":
    raise SystemExit(main())
