"""Static vector plots for experiment outputs.

SVG with a fixed hash salt and no embedded date, so identical runs
produce byte-identical files.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
matplotlib.rcParams["svg.hashsalt"] = "vitalloc"

import matplotlib.pyplot as plt
import numpy as np

from . import harness

_SAVE_KW = {"format": "svg", "metadata": {"Date": None}, "bbox_inches": "tight"}

_LABELS = {
    "ppo": "PPO",
    "no_action": "No Action",
    "random": "Random",
    "extreme_values": "Extreme Values",
    "highest_variability": "Highest Variability",
}


def _save(fig, path: Path) -> None:
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)


def plot_normalized_rewards(result: harness.ExperimentResult, path: Path) -> None:
    """Grouped bars, one cluster per (budget, patients) setting, with
    standard-error bars."""
    rows = harness.result_rows(result)
    settings = [(c.budget, c.n_patients) for c in result.cells]
    methods = [m for m in harness.METHODS if m != "no_action"]
    x = np.arange(len(settings))
    width = 0.8 / len(methods)
    fig, ax = plt.subplots(figsize=(1.8 + 1.4 * len(settings), 3.6))
    for i, m in enumerate(methods):
        mrows = [r for r in rows if r.method == m]
        means = [r.mean for r in mrows]
        errs = [r.se for r in mrows]
        ax.bar(x + (i - (len(methods) - 1) / 2) * width, means, width,
               yerr=errs, capsize=2, label=_LABELS.get(m, m))
    ax.set_xticks(x)
    ax.set_xticklabels([f"B={b}\nN={n}" for b, n in settings])
    ax.set_ylabel("normalized discounted return")
    ax.axhline(0.0, color="black", linewidth=0.6)
    ax.legend(fontsize=8)
    _save(fig, path)


def plot_learning_curves(result: harness.ExperimentResult, path: Path) -> None:
    """Per-setting mean rollout return across seeds, by epoch."""
    fig, ax = plt.subplots(figsize=(5.0, 3.4))
    for cell in result.cells:
        epochs = [h["epoch"] for h in cell.seeds[0].history]
        curves = np.array(
            [[h["rollout_return"] for h in s.history] for s in cell.seeds]
        )
        ax.plot(epochs, curves.mean(axis=0), label=f"B={cell.budget}, N={cell.n_patients}")
    ax.set_xlabel("epoch")
    ax.set_ylabel("rollout discounted return")
    ax.legend(fontsize=7)
    _save(fig, path)


def plot_activation_cdf(result: harness.ExperimentResult, path: Path) -> None:
    t_max = result.config.t_max
    fig, ax = plt.subplots(figsize=(4.6, 3.4))
    for cell in result.cells:
        cdf = harness.activation_cdf(harness.pooled_activation_counts(cell), t_max)
        ax.step(np.arange(t_max + 1), cdf, where="post",
                label=f"B={cell.budget}, N={cell.n_patients}")
    ax.axvline(result.config.t_min, color="gray", linestyle=":", linewidth=0.8)
    ax.axvline(t_max, color="gray", linestyle=":", linewidth=0.8)
    ax.set_xlabel("active steps per arm")
    ax.set_ylabel("fraction of arms")
    ax.set_ylim(0.0, 1.02)
    ax.legend(fontsize=7)
    _save(fig, path)


def plot_removal_hist(result: harness.ExperimentResult, specs, path: Path) -> None:
    """Histograms of the observation at the last monitored step before a
    voluntary removal, one panel per state dimension (values, then
    trailing variances); forced removals are reported in the title."""
    names = harness.state_dimension_names(specs)
    states = np.concatenate([harness.pooled_removals(c)[0] for c in result.cells])
    forced = sum(harness.pooled_removals(c)[1] for c in result.cells)
    ncols = len(specs)
    fig, axes = plt.subplots(2, ncols, figsize=(2.6 * ncols, 4.6), squeeze=False)
    hist, edges = harness.removal_histogram(states, len(names))
    centers = (edges[:-1] + edges[1:]) / 2
    for i, name in enumerate(names):
        ax = axes[i // ncols][i % ncols]
        ax.bar(centers, hist[i], width=edges[1] - edges[0], align="center")
        ax.set_title(name, fontsize=8)
        ax.set_xlim(0.0, 1.0)
    fig.suptitle(
        f"states before voluntary removal (n={len(states)}; forced={forced})",
        fontsize=9,
    )
    fig.tight_layout()
    _save(fig, path)


def emit_all(result: harness.ExperimentResult, specs, out_dir) -> dict[str, Path]:
    out = Path(out_dir)
    paths = {
        "rewards.svg": out / "rewards.svg",
        "learning_curves.svg": out / "learning_curves.svg",
        "activation_cdf.svg": out / "activation_cdf.svg",
        "removal_hist.svg": out / "removal_hist.svg",
    }
    plot_normalized_rewards(result, paths["rewards.svg"])
    plot_learning_curves(result, paths["learning_curves.svg"])
    plot_activation_cdf(result, paths["activation_cdf.svg"])
    plot_removal_hist(result, specs, paths["removal_hist.svg"])
    return paths
