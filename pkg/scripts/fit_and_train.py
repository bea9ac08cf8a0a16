#!/usr/bin/env python3
"""Data pipeline walkthrough: corpus -> mixture fit -> policy -> scores.

Generates a synthetic raw vitals corpus, resamples it to hourly medians
and fits the transition mixture by EM, then trains and evaluates a
policy against that fitted model (rather than the built-in world).
Everything lands under --out.

    python3 scripts/fit_and_train.py --out results/pipeline
"""

import argparse
from pathlib import Path

from vitalloc import cli, harness


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--seed", type=int, default=0, help="master seed")
    parser.add_argument("--overwrite", action="store_true")
    args = parser.parse_args()

    out = harness.prepare_out_dir(args.out, args.overwrite)
    corpus = out / "corpus.csv"
    fit_dir = out / "fit"
    train_dir = out / "train"
    eval_dir = out / "eval"
    seed = ["--seed", str(args.seed)]

    code = cli.main(["synth", *seed, "--out", str(corpus)])
    if code:
        return code
    code = cli.main(["fit", str(corpus), *seed, "--out", str(fit_dir)])
    if code:
        return code

    # point training and evaluation at the fitted mixture and the
    # corpus-derived normalization ranges
    config = out / "config.txt"
    config.write_text(
        harness.config_to_text(
            harness.ExperimentConfig(
                mixture_path=str(fit_dir / "mixture.txt"),
                specs_path=str(fit_dir / "specs.txt"),
            )
        ),
        encoding="utf-8",
    )
    base = ["--config", str(config), *seed]
    code = cli.main(["train", *base, "--out", str(train_dir)])
    if code:
        return code
    return cli.main([
        "evaluate", str(train_dir / "policy.txt"), *base, "--out", str(eval_dir),
    ])


if __name__ == "__main__":
    raise SystemExit(main())
