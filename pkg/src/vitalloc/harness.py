"""Experiment orchestration.

A seed trains one policy on fresh instances (one per epoch), then every
method — the trained policy plus the heuristic baselines — replays the
same evaluation instances; scores are no_action-normalized discounted
returns divided by the population size N. Seeds are independent and run
in parallel; aggregation and all emitted files are deterministic in
(config, master seed) regardless of worker count.
"""

from __future__ import annotations

import csv
import dataclasses
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import baselines, env, policy, vitals
from .errors import InvalidInputError, ParseError, SchemaError
from .streams import child_seed, rng_for

log = logging.getLogger(__name__)

METHODS = ("ppo",) + baselines.BASELINE_NAMES

# (budget, patients) settings reported by default
DEFAULT_GRID = (
    (3, 20), (4, 20), (5, 20),
    (4, 30), (5, 30), (6, 30),
    (5, 40), (6, 40), (7, 40),
    (6, 50), (7, 50), (8, 50),
)

HIST_BINS = 20

RESULTS_CSV = "results.csv"
PER_SEED_CSV = "per_seed.csv"
CURVES_CSV = "training_curves.csv"
CDF_CSV = "activation_cdf.csv"
REMOVAL_CSV = "removal_hist.csv"


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExperimentConfig:
    """Everything an experiment run depends on apart from the master
    seed. Training keys use the hyperparameter-table names."""

    # population / environment
    budget: int = 3
    patients: int = 20
    horizon: int = 100
    t_min: int = 3
    t_max: int = 25
    stay: int = 50
    arrival_period: int = 5
    arrival_batch: int | None = None
    response_prob: float = 0.7
    blend_max: float = 0.15
    preset: str = "mimic4"
    mixture_path: str = ""
    specs_path: str = ""
    components: int = 5

    # training
    epochs: int = 50
    trains_per_epoch: int = 20
    hidden_layers: int = 2
    neurons_per_layer: int = 16
    clip_ratio: float = 2.0
    start_entropy_coeff: float = 0.5
    end_entropy_coeff: float = 0.0
    actor_learning_rate: float = 2e-3
    critic_learning_rate: float = 2e-3
    discount_factor: float = 0.9
    momentum: float = 0.0
    normalize_advantages: bool = True
    stochastic_ranking: bool = False

    # protocol
    eval_instances: int = 50
    seeds: int = 100

    # synthetic corpus generation
    synth_patients: int = 100
    synth_steps: int = 48
    synth_samples_per_hour: int = 2
    synth_observation_sd: float = 0.02

    def __post_init__(self):
        positive = (
            "budget", "patients", "horizon", "t_min", "t_max", "stay",
            "arrival_period", "components", "epochs", "trains_per_epoch",
            "hidden_layers", "neurons_per_layer", "eval_instances", "seeds",
            "synth_patients", "synth_steps", "synth_samples_per_hour",
        )
        for name in positive:
            if getattr(self, name) < 1:
                raise InvalidInputError(f"{name} must be >= 1")
        if self.preset not in vitals.PRESETS:
            raise InvalidInputError(
                f"unknown preset {self.preset!r}; choose from {sorted(vitals.PRESETS)}"
            )

    def specs(self) -> tuple[vitals.VitalSignSpec, ...]:
        """Sign definitions: the preset's, unless a fitted spec file
        (with corpus-derived normalization ranges) is configured."""
        if self.specs_path:
            return tuple(vitals.load_specs(self.specs_path))
        return tuple(vitals.preset_specs(self.preset))

    def instance_config(
        self, budget: int | None = None, patients: int | None = None
    ) -> env.InstanceConfig:
        return env.InstanceConfig(
            budget=self.budget if budget is None else budget,
            n_patients=self.patients if patients is None else patients,
            horizon=self.horizon,
            t_min=self.t_min,
            t_max=self.t_max,
            stay=self.stay,
            arrival_period=self.arrival_period,
            arrival_batch=self.arrival_batch,
            gamma=self.discount_factor,
            alert_response_prob=self.response_prob,
            blend_max=self.blend_max,
        )

    def ppo_config(self) -> policy.PpoConfig:
        return policy.PpoConfig(
            n_epochs=self.epochs,
            trains_per_epoch=self.trains_per_epoch,
            clip=self.clip_ratio,
            entropy_start=self.start_entropy_coeff,
            entropy_end=self.end_entropy_coeff,
            actor_lr=self.actor_learning_rate,
            critic_lr=self.critic_learning_rate,
            gamma=self.discount_factor,
            hidden=(self.neurons_per_layer,) * self.hidden_layers,
            momentum=self.momentum,
            normalize_advantages=self.normalize_advantages,
            stochastic_ranking=self.stochastic_ranking,
        )


def _convert(field: dataclasses.Field, raw: str):
    raw = raw.strip()
    if field.name == "arrival_batch":
        return None if raw.lower() in ("", "none") else int(raw)
    if field.type == "int":
        return int(raw)
    if field.type == "float":
        return float(raw)
    if field.type == "bool":
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    return raw


def parse_config_text(text: str) -> ExperimentConfig:
    """Flat `key = value` lines; `#` starts a comment."""
    by_name = {f.name: f for f in dataclasses.fields(ExperimentConfig)}
    values = {}
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"expected `key = value`, got {line!r}", line_number=lineno)
        key, _, val = line.partition("=")
        key = key.strip()
        if key not in by_name:
            raise SchemaError(f"unknown config key {key!r} (line {lineno})")
        try:
            values[key] = _convert(by_name[key], val)
        except ValueError as exc:
            raise ParseError(f"bad value for {key}: {exc}", line_number=lineno) from None
    return ExperimentConfig(**values)


def load_config(path) -> ExperimentConfig:
    return parse_config_text(Path(path).read_text(encoding="utf-8"))


def config_to_text(cfg: ExperimentConfig) -> str:
    lines = []
    for f in dataclasses.fields(ExperimentConfig):
        val = getattr(cfg, f.name)
        if val is None:
            val = "none"
        elif isinstance(val, bool):
            val = "true" if val else "false"
        elif isinstance(val, float):
            val = repr(val)
        lines.append(f"{f.name} = {val}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Evaluation protocol
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class EvalResult:
    scores: dict[str, float]              # mean normalized return per method
    per_instance: dict[str, np.ndarray]   # raw discounted returns per method
    activation_counts: np.ndarray         # trained policy, pooled over instances
    removal_states: np.ndarray            # (n_voluntary, 2d) last-active-step states
    forced_removals: int


def evaluate_methods(
    actor: policy.Mlp,
    mixture,
    specs,
    icfg: env.InstanceConfig,
    seed: int,
    n_instances: int,
) -> EvalResult:
    """Run every method over the same n_instances evaluation instances.
    Instances share per-arm environment streams, so two methods differ
    only through their decisions; the random baseline draws from its own
    stream. Scores are (return - no_action return) / N."""
    blist = {name: baselines.make_baseline(name, specs, seed) for name in baselines.BASELINE_NAMES}
    returns = {m: np.zeros(n_instances) for m in METHODS}
    counts: list[int] = []
    removal_parts: list[np.ndarray] = []
    forced = 0
    for j in range(n_instances):
        inst_seed = int(rng_for(seed, "eval-instance", j).integers(2 ** 62))
        inst = env.spawn_instance(icfg, mixture, specs, inst_seed)
        ppo_res = env.run_episode(inst, policy.policy_select_fn(actor))
        returns["ppo"][j] = ppo_res.discounted_return
        for name, b in blist.items():
            returns[name][j] = baselines.run_baseline(inst, b).discounted_return
        counts.extend(int(c) for c in ppo_res.activation_counts)
        states, nf = removal_events(ppo_res, inst)
        removal_parts.append(states)
        forced += nf
    n = icfg.n_patients
    scores = {
        m: float(np.mean((returns[m] - returns["no_action"]) / n)) for m in METHODS
    }
    return EvalResult(
        scores,
        returns,
        np.array(counts, dtype=int),
        np.concatenate(removal_parts) if removal_parts else np.zeros((0, 2 * len(specs))),
        forced,
    )


@dataclass(eq=False)
class SeedResult:
    seed_index: int
    scores: dict[str, float]
    per_instance: dict[str, np.ndarray]
    history: list[dict]
    activation_counts: np.ndarray
    removal_states: np.ndarray
    forced_removals: int


def run_seed(
    cfg: ExperimentConfig,
    mixture,
    specs,
    master_seed: int,
    seed_index: int,
    budget: int | None = None,
    patients: int | None = None,
) -> SeedResult:
    """One protocol repetition: train on epochs fresh instances, then
    evaluate all methods on eval_instances shared instances. Training
    and evaluation use disjoint derived streams."""
    seed = child_seed(master_seed, "seed", seed_index)
    icfg = cfg.instance_config(budget, patients)
    trained = policy.train_ppo(
        mixture, specs, icfg, seed=child_seed(seed, "train"), config=cfg.ppo_config()
    )
    ev = evaluate_methods(
        trained.actor, mixture, specs, icfg, child_seed(seed, "eval"), cfg.eval_instances
    )
    return SeedResult(
        seed_index, ev.scores, ev.per_instance, trained.history,
        ev.activation_counts, ev.removal_states, ev.forced_removals,
    )


def _seed_task(args):
    return run_seed(*args)


def run_many(
    cfg: ExperimentConfig,
    mixture,
    specs,
    master_seed: int,
    budget: int | None = None,
    patients: int | None = None,
    workers: int = 1,
) -> list[SeedResult]:
    """cfg.seeds independent repetitions, optionally on a process pool.
    Results come back in seed order either way."""
    tasks = [
        (cfg, mixture, specs, master_seed, i, budget, patients) for i in range(cfg.seeds)
    ]
    if workers <= 1:
        return [_seed_task(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_seed_task, tasks))


@dataclass(eq=False)
class CellResult:
    budget: int
    n_patients: int
    seeds: list[SeedResult]


@dataclass(eq=False)
class ExperimentResult:
    config: ExperimentConfig
    master_seed: int
    cells: list[CellResult]


def run_experiment(
    cfg: ExperimentConfig,
    mixture,
    specs,
    master_seed: int,
    grid=None,
    workers: int = 1,
) -> ExperimentResult:
    cells = []
    for budget, patients in (DEFAULT_GRID if grid is None else tuple(grid)):
        log.info("running cell budget=%d patients=%d", budget, patients)
        seeds = run_many(
            cfg, mixture, specs, child_seed(master_seed, "cell", budget, patients),
            budget=budget, patients=patients, workers=workers,
        )
        cells.append(CellResult(budget, patients, seeds))
    return ExperimentResult(cfg, master_seed, cells)


# ---------------------------------------------------------------------------
# Aggregation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ResultRow:
    method: str
    budget: int
    n_patients: int
    mean: float
    se: float
    n_seeds: int


def mean_se(values) -> tuple[float, float]:
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise InvalidInputError("nothing to aggregate")
    se = float(values.std(ddof=1) / np.sqrt(values.size)) if values.size > 1 else 0.0
    return float(values.mean()), se


def aggregate(cell: CellResult) -> list[ResultRow]:
    rows = []
    for m in METHODS:
        mean, se = mean_se([s.scores[m] for s in cell.seeds])
        rows.append(ResultRow(m, cell.budget, cell.n_patients, mean, se, len(cell.seeds)))
    return rows


def result_rows(result: ExperimentResult) -> list[ResultRow]:
    return [row for cell in result.cells for row in aggregate(cell)]


# ---------------------------------------------------------------------------
# Trace analyses
# ---------------------------------------------------------------------------

def removal_events(
    result: env.EpisodeResult, instance: env.Instance
) -> tuple[np.ndarray, int]:
    """States at the last active step before each voluntary device
    removal, plus the count of forced removals (t_max reached, or the
    device carried to departure/horizon)."""
    cfg = instance.config
    voluntary: list[np.ndarray] = []
    forced = 0
    for arm in instance.arms:
        rows = result.rows_for_arm(arm.arm_id)
        active = [i for i, r in enumerate(rows) if r.action]
        if not active:
            continue
        last = active[-1]
        if len(active) >= cfg.t_max or last == len(rows) - 1:
            forced += 1
        else:
            voluntary.append(rows[last].state)
    dim = 2 * len(instance.specs)
    states = np.array(voluntary) if voluntary else np.zeros((0, dim))
    return states, forced


def activation_cdf(counts, t_max: int) -> np.ndarray:
    """cdf[k] = fraction of arms with at most k active steps, k = 0..t_max."""
    counts = np.asarray(counts)
    if counts.size == 0:
        raise InvalidInputError("no arms to analyze")
    return np.array([(counts <= k).mean() for k in range(t_max + 1)])


def fraction_below_max(counts, t_max: int) -> float:
    counts = np.asarray(counts)
    if counts.size == 0:
        raise InvalidInputError("no arms to analyze")
    return float((counts < t_max).mean())


def removal_histogram(states: np.ndarray, n_dims: int) -> tuple[np.ndarray, np.ndarray]:
    """Fixed 20-bin histograms over [0,1] per state dimension; values
    outside the range land in the end bins so totals stay exact."""
    edges = np.linspace(0.0, 1.0, HIST_BINS + 1)
    states = np.asarray(states, dtype=float).reshape(-1, n_dims) if np.size(states) else np.zeros((0, n_dims))
    clipped = np.clip(states, 0.0, 1.0)
    hist = np.stack(
        [np.histogram(clipped[:, i], bins=edges)[0] for i in range(n_dims)]
    ) if len(states) else np.zeros((n_dims, HIST_BINS), dtype=int)
    return hist, edges


def state_dimension_names(specs) -> list[str]:
    return [s.name for s in specs] + [f"{s.name}_var" for s in specs]


# Trace files written by env.write_trace_csv carry raw-unit vitals; the
# analyses need the normalized observation vector, so it is rebuilt here
# (trailing five-step variance included).

def read_trace_csv(path, specs) -> dict[int, tuple[list[int], np.ndarray, np.ndarray]]:
    expected = ["step", "arm_id", "action", "intervened"] + [s.name for s in specs] + ["reward"]
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != expected:
            raise SchemaError(f"{path}: header {header!r} does not match {expected!r}")
        by_arm: dict[int, list[tuple[int, int, list[float]]]] = {}
        for row in reader:
            if not row:
                continue
            arm = int(row[1])
            by_arm.setdefault(arm, []).append(
                (int(row[0]), int(row[2]), [float(v) for v in row[4:4 + len(specs)]])
            )
    out = {}
    for arm, entries in by_arm.items():
        entries.sort(key=lambda e: e[0])
        steps = [e[0] for e in entries]
        actions = np.array([e[1] for e in entries], dtype=int)
        values = np.array([e[2] for e in entries])
        out[arm] = (steps, actions, values)
    return out


def trace_analyses(path, specs, t_max: int) -> tuple[np.ndarray, np.ndarray, int]:
    """(activation counts, voluntary-removal states, forced count) from
    one exported episode trace."""
    traces = read_trace_csv(path, specs)
    counts, voluntary, forced = [], [], 0
    for _, (steps, actions, values) in sorted(traces.items()):
        norm = vitals.normalize(values, specs)
        k = int(actions.sum())
        counts.append(k)
        active = np.flatnonzero(actions)
        if active.size == 0:
            continue
        last = int(active[-1])
        if k >= t_max or last == len(steps) - 1:
            forced += 1
        else:
            lo = max(0, last - env.WINDOW + 1)
            window = norm[lo:last + 1]
            voluntary.append(np.concatenate([norm[last], window.var(axis=0)]))
    states = np.array(voluntary) if voluntary else np.zeros((0, 2 * len(specs)))
    return np.array(counts, dtype=int), states, forced


# ---------------------------------------------------------------------------
# Artifact files
# ---------------------------------------------------------------------------

def prepare_out_dir(path, overwrite: bool = False) -> Path:
    p = Path(path)
    if p.exists() and any(p.iterdir()) and not overwrite:
        raise InvalidInputError(f"{p} already has contents; pass --overwrite to reuse it")
    p.mkdir(parents=True, exist_ok=True)
    return p


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def _write_csv(path, header, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def write_results_csv(result: ExperimentResult, path) -> None:
    _write_csv(
        path,
        ["method", "budget", "patients", "mean_normalized_reward", "standard_error", "seeds"],
        [
            (r.method, r.budget, r.n_patients, r.mean, r.se, r.n_seeds)
            for r in result_rows(result)
        ],
    )


def write_per_seed_csv(result: ExperimentResult, path) -> None:
    rows = []
    for cell in result.cells:
        for m in METHODS:
            for s in cell.seeds:
                rows.append((m, cell.budget, cell.n_patients, s.seed_index, s.scores[m]))
    _write_csv(path, ["method", "budget", "patients", "seed", "normalized_reward"], rows)


def write_training_curves_csv(result: ExperimentResult, path) -> None:
    rows = []
    for cell in result.cells:
        for s in cell.seeds:
            for h in s.history:
                rows.append(
                    (
                        cell.budget, cell.n_patients, s.seed_index, h["epoch"],
                        h["rollout_reward"], h["rollout_return"],
                        h["actor_loss"], h["critic_loss"], h["entropy_coeff"],
                    )
                )
    _write_csv(
        path,
        ["budget", "patients", "seed", "epoch", "rollout_reward", "rollout_return",
         "actor_loss", "critic_loss", "entropy_coeff"],
        rows,
    )


def pooled_activation_counts(cell: CellResult) -> np.ndarray:
    return np.concatenate([s.activation_counts for s in cell.seeds])


def pooled_removals(cell: CellResult) -> tuple[np.ndarray, int]:
    states = np.concatenate([s.removal_states for s in cell.seeds])
    forced = sum(s.forced_removals for s in cell.seeds)
    return states, forced


def write_activation_cdf_csv(result: ExperimentResult, path) -> None:
    t_max = result.config.t_max
    rows = []
    for cell in result.cells:
        cdf = activation_cdf(pooled_activation_counts(cell), t_max)
        for k, v in enumerate(cdf):
            rows.append((cell.budget, cell.n_patients, k, v))
    _write_csv(path, ["budget", "patients", "active_steps", "cdf"], rows)


def write_removal_hist_csv(result: ExperimentResult, specs, path) -> None:
    names = state_dimension_names(specs)
    rows = []
    for cell in result.cells:
        states, forced = pooled_removals(cell)
        hist, edges = removal_histogram(states, len(names))
        for i, name in enumerate(names):
            for b in range(HIST_BINS):
                rows.append(
                    (cell.budget, cell.n_patients, name, edges[b], edges[b + 1],
                     int(hist[i, b]), len(states), forced)
                )
    _write_csv(
        path,
        ["budget", "patients", "dimension", "bin_left", "bin_right", "count",
         "voluntary_total", "forced_total"],
        rows,
    )


def emit_outputs(result: ExperimentResult, specs, out_dir) -> dict[str, Path]:
    """All CSV artifacts plus the vector plots; returns name -> path."""
    from . import plotting  # matplotlib import deferred to artifact time

    out = Path(out_dir)
    paths = {
        RESULTS_CSV: out / RESULTS_CSV,
        PER_SEED_CSV: out / PER_SEED_CSV,
        CURVES_CSV: out / CURVES_CSV,
        CDF_CSV: out / CDF_CSV,
        REMOVAL_CSV: out / REMOVAL_CSV,
    }
    write_results_csv(result, paths[RESULTS_CSV])
    write_per_seed_csv(result, paths[PER_SEED_CSV])
    write_training_curves_csv(result, paths[CURVES_CSV])
    write_activation_cdf_csv(result, paths[CDF_CSV])
    write_removal_hist_csv(result, specs, paths[REMOVAL_CSV])
    paths.update(plotting.emit_all(result, specs, out))
    return paths


def read_per_seed_csv(path) -> list[dict]:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        rows = []
        for row in reader:
            rows.append(
                {
                    "method": row["method"],
                    "budget": int(row["budget"]),
                    "patients": int(row["patients"]),
                    "seed": int(row["seed"]),
                    "normalized_reward": float(row["normalized_reward"]),
                }
            )
    return rows


def read_results_csv(path) -> list[ResultRow]:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        return [
            ResultRow(
                row["method"], int(row["budget"]), int(row["patients"]),
                float(row["mean_normalized_reward"]), float(row["standard_error"]),
                int(row["seeds"]),
            )
            for row in reader
        ]
