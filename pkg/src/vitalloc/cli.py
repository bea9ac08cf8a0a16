"""Command-line entry points.

    vitalloc synth       generate a synthetic raw corpus CSV
    vitalloc fit         ingest a corpus and fit the transition mixture
    vitalloc train       train one policy, write a checkpoint
    vitalloc evaluate    run a checkpoint against the baselines
    vitalloc experiment  the full multi-seed protocol over (B, N) settings
    vitalloc analyze     activation/removal analyses of exported traces
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import env, gmm, harness, ingest, policy, vitals
from .errors import VitallocError
from .streams import child_seed, rng_for

log = logging.getLogger(__name__)


def _add_common(p: argparse.ArgumentParser, out_required: bool = True) -> None:
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--seed", type=int, default=0, help="master seed")
    p.add_argument("--out", required=out_required, help="output path")
    p.add_argument("--overwrite", action="store_true", help="allow writing into a non-empty directory")
    p.add_argument("--preset", choices=sorted(vitals.PRESETS), help="vital-sign preset")


def _load_cfg(args) -> harness.ExperimentConfig:
    cfg = harness.load_config(args.config) if args.config else harness.ExperimentConfig()
    overrides = {}
    if args.preset:
        overrides["preset"] = args.preset
    if getattr(args, "seeds", None) is not None:
        overrides["seeds"] = args.seeds
    if getattr(args, "budget", None) is not None:
        overrides["budget"] = args.budget
    if getattr(args, "patients", None) is not None:
        overrides["patients"] = args.patients
    return dataclasses.replace(cfg, **overrides) if overrides else cfg


def _mixture_for(cfg: harness.ExperimentConfig, specs) -> gmm.Mixture:
    if cfg.mixture_path:
        mixture = gmm.load_mixture(cfg.mixture_path)
    else:
        mixture = ingest.synthetic_world(specs)
    if mixture.dim != 2 * len(specs):
        raise VitallocError(
            f"mixture dimension {mixture.dim} does not fit {len(specs)} vital signs"
        )
    return mixture


def _print_rows(rows: list[harness.ResultRow]) -> None:
    print(f"{'method':>22} {'B':>3} {'N':>4} {'normalized':>12} {'SE':>10} {'seeds':>6}")
    for r in rows:
        print(f"{r.method:>22} {r.budget:>3} {r.n_patients:>4} {r.mean:>12.4f} {r.se:>10.4f} {r.n_seeds:>6}")


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_synth(args) -> int:
    cfg = _load_cfg(args)
    specs = cfg.specs()
    n_patients = args.patients if args.patients is not None else cfg.synth_patients
    corpus = ingest.generate_synthetic_corpus(
        n_patients,
        cfg.synth_steps,
        child_seed(args.seed, "synth"),
        specs,
        mixture=_mixture_for(cfg, specs),
        samples_per_hour=cfg.synth_samples_per_hour,
        observation_sd=cfg.synth_observation_sd,
    )
    ingest.save_corpus(corpus, specs, args.out)
    n_rows = sum(len(t.times) for t in corpus)
    print(f"wrote {n_patients} patients / {n_rows} readings to {args.out}")
    return 0


def cmd_fit(args) -> int:
    cfg = _load_cfg(args)
    specs = cfg.specs()
    raw = ingest.load_trajectories(args.corpus, specs)
    tuples, fitted_specs = ingest.prepare_training_set(raw, specs)
    mixture = gmm.fit(tuples, k=cfg.components, seed=child_seed(args.seed, "em"))
    out = harness.prepare_out_dir(args.out, args.overwrite)
    gmm.save_mixture(mixture, out / "mixture.txt")
    vitals.save_specs(fitted_specs, out / "specs.txt")
    with open(out / "em_trace.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "log_likelihood"])
        for i, ll in enumerate(mixture.em_log_likelihood):
            writer.writerow([i, repr(ll)])
    print(
        f"fit {cfg.components} components to {len(tuples)} tuples from "
        f"{len(raw)} patients; final log-likelihood "
        f"{mixture.em_log_likelihood[-1]:.3f}; wrote {out}/mixture.txt"
    )
    return 0


def cmd_train(args) -> int:
    cfg = _load_cfg(args)
    specs = cfg.specs()
    mixture = _mixture_for(cfg, specs)
    out = harness.prepare_out_dir(args.out, args.overwrite)
    seed = child_seed(args.seed, "seed", 0)
    trained = policy.train_ppo(
        mixture, specs, cfg.instance_config(), seed=child_seed(seed, "train"),
        config=cfg.ppo_config(),
    )
    policy.save_policy(trained, out / "policy.txt")
    (out / "config.txt").write_text(harness.config_to_text(cfg), encoding="utf-8")
    with open(out / "training_curves.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["epoch", "rollout_reward", "rollout_return", "actor_loss",
             "critic_loss", "entropy_coeff"]
        )
        for h in trained.history:
            writer.writerow(
                [h["epoch"], repr(h["rollout_reward"]), repr(h["rollout_return"]),
                 repr(h["actor_loss"]), repr(h["critic_loss"]), repr(h["entropy_coeff"])]
            )
    print(
        f"trained {cfg.epochs} epochs (B={cfg.budget}, N={cfg.patients}); "
        f"final rollout return {trained.history[-1]['rollout_return']:.2f}; "
        f"wrote {out}/policy.txt"
    )
    return 0


def cmd_evaluate(args) -> int:
    cfg = _load_cfg(args)
    specs = cfg.specs()
    mixture = _mixture_for(cfg, specs)
    trained = policy.load_policy(args.checkpoint)
    out = harness.prepare_out_dir(args.out, args.overwrite)
    icfg = cfg.instance_config()
    seed = child_seed(args.seed, "seed", 0)
    ev = harness.evaluate_methods(
        trained.actor, mixture, specs, icfg, child_seed(seed, "eval"), cfg.eval_instances
    )
    with open(out / "per_instance.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "instance", "discounted_return", "normalized_reward"])
        for m in harness.METHODS:
            for j in range(cfg.eval_instances):
                norm = (ev.per_instance[m][j] - ev.per_instance["no_action"][j]) / icfg.n_patients
                writer.writerow([m, j, repr(float(ev.per_instance[m][j])), repr(float(norm))])
    # one full trace of the trained policy, for `analyze`
    inst_seed = int(rng_for(child_seed(seed, "eval"), "eval-instance", 0).integers(2 ** 62))
    inst = env.spawn_instance(icfg, mixture, specs, inst_seed)
    trace = env.run_episode(inst, policy.policy_select_fn(trained.actor))
    env.write_trace_csv(trace, inst, out / "trace_ppo_instance0.csv")
    rows = [
        harness.ResultRow(m, icfg.budget, icfg.n_patients, ev.scores[m], 0.0, 1)
        for m in harness.METHODS
    ]
    _print_rows(rows)
    print(f"wrote {out}/per_instance.csv and {out}/trace_ppo_instance0.csv")
    return 0


def cmd_experiment(args) -> int:
    cfg = _load_cfg(args)
    specs = cfg.specs()
    mixture = _mixture_for(cfg, specs)
    if args.budget is None and args.patients is None:
        grid = harness.DEFAULT_GRID
    else:
        grid = ((cfg.budget, cfg.patients),)
    out = harness.prepare_out_dir(args.out, args.overwrite)
    workers = args.workers if args.workers else min(cfg.seeds, os.cpu_count() or 1)
    result = harness.run_experiment(cfg, mixture, specs, args.seed, grid=grid, workers=workers)
    (out / "config.txt").write_text(harness.config_to_text(cfg), encoding="utf-8")
    paths = harness.emit_outputs(result, specs, out)
    _print_rows(harness.result_rows(result))
    for cell in result.cells:
        counts = harness.pooled_activation_counts(cell)
        states, forced = harness.pooled_removals(cell)
        print(
            f"B={cell.budget} N={cell.n_patients}: "
            f"{100 * harness.fraction_below_max(counts, cfg.t_max):.1f}% of arms "
            f"active < t_max; {len(states)} voluntary / {forced} forced removals"
        )
    print(f"wrote {len(paths)} files to {out}")
    return 0


def cmd_analyze(args) -> int:
    cfg = _load_cfg(args)
    specs = cfg.specs()
    out = harness.prepare_out_dir(args.out, args.overwrite)
    counts_parts, state_parts, forced = [], [], 0
    for path in args.traces:
        counts, states, nf = harness.trace_analyses(path, specs, cfg.t_max)
        counts_parts.append(counts)
        state_parts.append(states)
        forced += nf
    counts = np.concatenate(counts_parts)
    states = np.concatenate(state_parts)
    cdf = harness.activation_cdf(counts, cfg.t_max)
    names = harness.state_dimension_names(specs)
    hist, edges = harness.removal_histogram(states, len(names))
    with open(out / harness.CDF_CSV, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["budget", "patients", "active_steps", "cdf"])
        for k, v in enumerate(cdf):
            writer.writerow([cfg.budget, cfg.patients, k, repr(float(v))])
    with open(out / harness.REMOVAL_CSV, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["budget", "patients", "dimension", "bin_left", "bin_right", "count",
             "voluntary_total", "forced_total"]
        )
        for i, name in enumerate(names):
            for b in range(harness.HIST_BINS):
                writer.writerow(
                    [cfg.budget, cfg.patients, name, repr(float(edges[b])),
                     repr(float(edges[b + 1])), int(hist[i, b]), len(states), forced]
                )
    print(
        f"{len(counts)} arms over {len(args.traces)} trace(s): "
        f"{100 * harness.fraction_below_max(counts, cfg.t_max):.1f}% active < t_max "
        f"({cfg.t_max}); {len(states)} voluntary / {forced} forced removals"
    )
    print(f"wrote {out}/{harness.CDF_CSV} and {out}/{harness.REMOVAL_CSV}")
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vitalloc",
        description="Train and evaluate vital-sign monitor allocation policies.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic raw corpus CSV")
    _add_common(p)
    p.add_argument("--patients", type=int, help="number of synthetic patients")
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("fit", help="ingest a corpus and fit the transition mixture")
    p.add_argument("corpus", help="raw corpus CSV")
    _add_common(p)
    p.set_defaults(fn=cmd_fit)

    p = sub.add_parser("train", help="train one policy and write a checkpoint")
    _add_common(p)
    p.add_argument("--budget", type=int, help="devices available")
    p.add_argument("--patients", type=int, help="population size N")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("evaluate", help="run a checkpoint against the baselines")
    p.add_argument("checkpoint", help="policy checkpoint file")
    _add_common(p)
    p.add_argument("--budget", type=int, help="devices available")
    p.add_argument("--patients", type=int, help="population size N")
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("experiment", help="full multi-seed protocol")
    _add_common(p)
    p.add_argument("--seeds", type=int, help="number of seeds")
    p.add_argument("--budget", type=int, help="single-setting budget (omit for the full grid)")
    p.add_argument("--patients", type=int, help="single-setting population (omit for the full grid)")
    p.add_argument("--workers", type=int, help="process pool size (default: one per CPU)")
    p.set_defaults(fn=cmd_experiment)

    p = sub.add_parser("analyze", help="activation/removal analyses of exported traces")
    p.add_argument("traces", nargs="+", help="episode trace CSVs")
    _add_common(p)
    p.set_defaults(fn=cmd_analyze)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except VitallocError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
