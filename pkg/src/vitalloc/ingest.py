"""Corpus handling: raw vital-sign trajectories to training tuples.

Raw trajectories are irregular minute-stamped readings per patient.
Preprocessing takes per-hour medians, min-max normalizes with ranges
computed over the whole corpus, drops patients with fewer than 10 hourly
points, and cuts each surviving trajectory into (current, next) tuples.
Hours with no readings are compacted away (consecutive surviving hours
become consecutive steps) rather than interpolated; compactions are
logged per patient.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass

import numpy as np

from . import gmm, vitals
from .errors import InsufficientDataError, InvalidInputError, ParseError, SchemaError
from .streams import rng_for

log = logging.getLogger(__name__)

MINUTES_PER_HOUR = 60.0
MIN_HOURLY_POINTS = 10


@dataclass(eq=False)
class RawTrajectory:
    """Irregularly sampled readings for one patient: times in minutes,
    values (n_samples, n_signs) on the raw scale."""

    patient_id: str
    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.times.ndim != 1 or self.values.ndim != 2:
            raise InvalidInputError("times must be 1-D and values 2-D")
        if self.times.size != self.values.shape[0]:
            raise InvalidInputError("one row of values per timestamp required")
        if not (np.all(np.isfinite(self.times)) and np.all(np.isfinite(self.values))):
            raise InvalidInputError(f"non-finite readings for patient {self.patient_id}")
        order = np.argsort(self.times, kind="stable")
        self.times = self.times[order]
        self.values = self.values[order]


@dataclass(eq=False)
class HourlyTrajectory:
    """Normalized hourly-median steps for one surviving patient."""

    patient_id: str
    steps: np.ndarray   # (n_hours, n_signs), normalized
    hours: np.ndarray   # original hour indices (may have gaps)

    def __post_init__(self):
        self.steps = np.asarray(self.steps, dtype=float)
        self.hours = np.asarray(self.hours, dtype=int)
        if len(self.steps) < MIN_HOURLY_POINTS:
            raise InvalidInputError(
                f"trajectory {self.patient_id} has {len(self.steps)} hourly points, "
                f"need {MIN_HOURLY_POINTS}"
            )
        if not np.all(np.isfinite(self.steps)):
            raise InvalidInputError(f"non-finite normalized steps for {self.patient_id}")

    def __len__(self) -> int:
        return len(self.steps)


@dataclass(eq=False)
class TransitionTuple:
    """One normalized (current, next) pair of consecutive steps."""

    current: np.ndarray
    next: np.ndarray


def _hourly_raw(traj: RawTrajectory) -> tuple[np.ndarray, np.ndarray]:
    """Per-hour raw medians; hour k covers minutes [60k, 60(k+1))."""
    hours = np.floor(traj.times / MINUTES_PER_HOUR).astype(int)
    uniq = np.unique(hours)
    medians = np.array([np.median(traj.values[hours == h], axis=0) for h in uniq])
    return uniq, medians


def hourly_median(
    traj: RawTrajectory, specs: tuple[vitals.VitalSignSpec, ...]
) -> HourlyTrajectory | None:
    """Hourly medians, normalized with the signs' data ranges; None when
    fewer than MIN_HOURLY_POINTS hourly points survive (the patient is
    excluded). Gaps are compacted and logged."""
    if traj.values.shape[1] != len(specs):
        raise InvalidInputError(
            f"trajectory {traj.patient_id} has {traj.values.shape[1]} signs, "
            f"expected {len(specs)}"
        )
    hours, medians = _hourly_raw(traj)
    if len(hours) < MIN_HOURLY_POINTS:
        log.info("excluding %s: %d hourly points", traj.patient_id, len(hours))
        return None
    gaps = int(hours[-1] - hours[0] + 1 - len(hours))
    if gaps:
        log.info("compacted %d missing hours for %s", gaps, traj.patient_id)
    return HourlyTrajectory(traj.patient_id, vitals.normalize(medians, specs), hours)


def corpus_ranges(raw: list[RawTrajectory]) -> tuple[np.ndarray, np.ndarray]:
    """Per-sign min and max over every hourly median in the corpus,
    computed before the short-trajectory exclusion."""
    if not raw:
        raise InsufficientDataError("empty corpus")
    stacked = np.vstack([_hourly_raw(t)[1] for t in raw])
    return stacked.min(axis=0), stacked.max(axis=0)


def extract_tuples(trajs: list[HourlyTrajectory]) -> list[TransitionTuple]:
    """L-1 consecutive-step pairs per trajectory; never across patients."""
    out: list[TransitionTuple] = []
    for traj in trajs:
        for i in range(len(traj) - 1):
            out.append(TransitionTuple(traj.steps[i].copy(), traj.steps[i + 1].copy()))
    return out


def prepare_training_set(
    raw: list[RawTrajectory], specs: tuple[vitals.VitalSignSpec, ...]
) -> tuple[list[TransitionTuple], tuple[vitals.VitalSignSpec, ...]]:
    """Full ingest pipeline: corpus-derived normalization ranges written
    back into the specs, hourly medians with the exclusion rule, then
    transition tuples."""
    lo, hi = corpus_ranges(raw)
    fitted = tuple(
        vitals.with_range(spec, float(lo[i]), float(hi[i])) for i, spec in enumerate(specs)
    )
    hourly = [h for h in (hourly_median(t, fitted) for t in raw) if h is not None]
    tuples = extract_tuples(hourly)
    if not tuples:
        raise InsufficientDataError("corpus has no usable transition pairs")
    return tuples, fitted


# ---------------------------------------------------------------------------
# CSV formats
# ---------------------------------------------------------------------------

def save_corpus(
    raw: list[RawTrajectory], specs: tuple[vitals.VitalSignSpec, ...], path
) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["patient_id", "timestamp_min"] + [s.name for s in specs])
        for traj in raw:
            for t, row in zip(traj.times, traj.values):
                writer.writerow([traj.patient_id, repr(float(t))] + [repr(float(v)) for v in row])


def load_trajectories(
    path, specs: tuple[vitals.VitalSignSpec, ...]
) -> list[RawTrajectory]:
    """Read a corpus CSV, grouping rows by patient in first-appearance
    order. Rows with a missing or non-finite reading are dropped."""
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty corpus file") from None
        expected = ["patient_id", "timestamp_min"] + [s.name for s in specs]
        if header != expected:
            raise SchemaError(f"{path}: header {header!r} does not match {expected!r}")
        times: dict[str, list[float]] = {}
        values: dict[str, list[list[float]]] = {}
        dropped = 0
        for line_number, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(expected):
                raise ParseError(
                    f"expected {len(expected)} fields, got {len(row)}",
                    line_number=line_number,
                )
            if any(cell.strip() == "" for cell in row):
                dropped += 1
                continue
            try:
                t = float(row[1])
                vals = [float(v) for v in row[2:]]
            except ValueError as exc:
                raise ParseError(str(exc), line_number=line_number) from None
            if not (math.isfinite(t) and all(math.isfinite(v) for v in vals)):
                dropped += 1
                continue
            pid = row[0]
            times.setdefault(pid, []).append(t)
            values.setdefault(pid, []).append(vals)
    if dropped:
        log.info("dropped %d rows with missing readings from %s", dropped, path)
    if not times:
        raise InsufficientDataError(f"{path}: no data rows")
    return [
        RawTrajectory(pid, np.array(times[pid]), np.array(values[pid])) for pid in times
    ]


def save_tuples_csv(
    tuples: list[TransitionTuple], specs: tuple[vitals.VitalSignSpec, ...], path
) -> None:
    """Inspection export: one row per tuple, current then next columns."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            [f"cur_{s.name}" for s in specs] + [f"next_{s.name}" for s in specs]
        )
        for tup in tuples:
            writer.writerow(
                [repr(float(v)) for v in tup.current] + [repr(float(v)) for v in tup.next]
            )


# ---------------------------------------------------------------------------
# Synthetic corpora: planted mixtures with known structure
# ---------------------------------------------------------------------------

def linear_gaussian(
    mean_cur: np.ndarray,
    coef: float,
    sd_cur: np.ndarray,
    noise_sd: np.ndarray,
    drift: np.ndarray | float = 0.0,
) -> gmm.Gaussian:
    """Joint (current, next) Gaussian for the linear dynamics
    next = mean + drift + coef * (current - mean) + noise."""
    mean_cur = np.asarray(mean_cur, dtype=float)
    d = mean_cur.size
    s11 = np.diag(np.asarray(sd_cur, dtype=float) ** 2)
    s21 = coef * s11
    s22 = coef ** 2 * s11 + np.diag(np.broadcast_to(np.asarray(noise_sd, float) ** 2, (d,)))
    mean = np.concatenate([mean_cur, mean_cur + np.broadcast_to(drift, (d,))])
    cov = np.block([[s11, s21.T], [s21, s22]])
    return gmm.Gaussian(mean, cov)


def stationary_pair(d: int = 3, seed_means=(0.25, 0.7)) -> gmm.Mixture:
    """Two well-separated mean-reverting components with stationary
    marginals, used to check that fitting recovers planted structure."""
    comps = []
    ar, sd = 0.7, 0.08
    noise = sd * np.sqrt(1.0 - ar ** 2)
    for m in seed_means:
        comps.append(linear_gaussian(np.full(d, m), ar, np.full(d, sd), noise))
    return gmm.Mixture(comps, np.array([0.6, 0.4]))


def synthetic_world(specs: tuple[vitals.VitalSignSpec, ...]) -> gmm.Mixture:
    """Planted two-regime world for end-to-end runs: most patients are
    stable and mean-reverting near healthy values; a minority follow a
    random walk that drifts across the abnormality threshold partway
    through a typical stay, so monitoring (and intervening on) them is
    what pays."""
    d = len(specs)
    healthy = np.empty(d)
    near_threshold = np.empty(d)
    drift = np.empty(d)
    for i, s in enumerate(specs):
        span = s.data_max - s.data_min
        thr = (s.threshold - s.data_min) / span
        sign = 1.0 if s.direction == "above" else -1.0
        margin = 0.35 * abs(thr - (0.0 if sign > 0 else 1.0))
        healthy[i] = thr - sign * margin
        near_threshold[i] = thr - sign * 0.07
        drift[i] = sign * s.penalty_scale / 15.0 / span
    stable = linear_gaussian(healthy, 0.8, np.full(d, 0.10), 0.04)
    walker = linear_gaussian(near_threshold, 1.0, np.full(d, 0.05), 0.02, drift=drift)
    return gmm.Mixture([stable, walker], np.array([0.8, 0.2]))


def generate_synthetic_corpus(
    n_patients: int,
    steps: int,
    seed: int,
    specs: tuple[vitals.VitalSignSpec, ...],
    mixture: gmm.Mixture | None = None,
    samples_per_hour: int = 1,
    observation_sd: float = 0.0,
) -> list[RawTrajectory]:
    """Simulate raw trajectories from a planted mixture (default: the
    two-regime world). Each patient's normalized hourly path comes from
    one sampled patient model; each hour yields samples_per_hour raw
    readings, optionally with observation noise (fraction of the sign's
    span) so the hourly-median step has real work to do."""
    if n_patients < 1 or steps < 1:
        raise InvalidInputError("need n_patients >= 1 and steps >= 1")
    if mixture is None:
        mixture = synthetic_world(specs)
    if mixture.dim != 2 * len(specs):
        raise InvalidInputError("mixture dimension does not match the sign count")
    spans = np.array([s.data_max - s.data_min for s in specs])
    out = []
    for p in range(n_patients):
        model_rng = rng_for(seed, "corpus-model", p)
        obs_rng = rng_for(seed, "corpus-obs", p)
        model = gmm.sample_patient(mixture, model_rng)
        state = gmm.initial_state(model, model_rng)
        times, rows = [], []
        for h in range(steps):
            raw = vitals.denormalize(state, specs)
            for _ in range(samples_per_hour):
                times.append(MINUTES_PER_HOUR * h + obs_rng.uniform(0.0, MINUTES_PER_HOUR))
                noise = obs_rng.normal(0.0, observation_sd * spans) if observation_sd else 0.0
                rows.append(raw + noise)
            state = gmm.conditional_next(model, state, model_rng)
        out.append(RawTrajectory(f"p{p:04d}", np.array(times), np.array(rows)))
    return out
