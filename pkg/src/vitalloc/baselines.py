"""Heuristic allocation baselines.

Devices stay where they are until new arrivals (or the wear limits)
displace them, so in effect a baseline only decides which current holder
gives up its device when newcomers must be served. Each kind scores the
present arms with a keep-priority and the shared allocator keeps the top
scorers:

  random              uniform-random keep-priority each step
  extreme_values      keeps the most abnormal arms: summed normalized
                      values with below-is-abnormal signs inverted, so
                      the device is removed from the least abnormal arm
  highest_variability removes the device from the least stable arm
                      (highest summed trailing variance), i.e. the
                      keep-priority is the negated variance sum
  no_action           never allocates anything; the normalization
                      reference, exempt from the minimum-monitoring rule
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import env, vitals
from .errors import InvalidInputError
from .streams import rng_for

BASELINE_NAMES = ("no_action", "random", "extreme_values", "highest_variability")


def abnormality_sum(states: np.ndarray, specs: tuple[vitals.VitalSignSpec, ...]) -> np.ndarray:
    """Summed normalized current values with below-is-abnormal signs
    inverted (1 - v), so higher means more abnormal."""
    states = np.atleast_2d(states)
    d = len(specs)
    vals = states[:, :d].copy()
    for j, s in enumerate(specs):
        if s.direction == "below":
            vals[:, j] = 1.0 - vals[:, j]
    return vals.sum(axis=1)


def variability_sum(states: np.ndarray) -> np.ndarray:
    """Summed trailing-window variance components of the observation."""
    states = np.atleast_2d(states)
    d = states.shape[1] // 2
    return states[:, d:].sum(axis=1)


def score(kind: str, states: np.ndarray, specs, rng=None) -> np.ndarray:
    """Keep-priority per arm; the device is removed from the lowest."""
    states = np.atleast_2d(states)
    if kind == "extreme_values":
        return abnormality_sum(states, specs)
    if kind == "highest_variability":
        return -variability_sum(states)
    if kind == "random":
        if rng is None:
            raise InvalidInputError("random scoring needs an rng")
        return rng.uniform(size=states.shape[0])
    raise InvalidInputError(f"no keep-priority for kind {kind!r}")


@dataclass(eq=False)
class Baseline:
    name: str
    select_fn: object
    enforce_forced_active: bool = True


def make_baseline(
    name: str, specs: tuple[vitals.VitalSignSpec, ...], seed: int
) -> Baseline:
    if name == "no_action":
        return Baseline(
            name,
            lambda t, obs, mask: np.zeros(mask.n_present, dtype=bool),
            enforce_forced_active=False,
        )
    if name == "random":
        rng = rng_for(seed, "baseline-random")
        return Baseline(
            name,
            lambda t, obs, mask: env.allocate_by_priority(score(name, obs, specs, rng), mask),
        )
    if name in ("extreme_values", "highest_variability"):
        return Baseline(
            name,
            lambda t, obs, mask: env.allocate_by_priority(score(name, obs, specs), mask),
        )
    raise InvalidInputError(f"unknown baseline {name!r}; choose from {BASELINE_NAMES}")


def baseline_select(
    kind: str,
    mask: env.AllocationMask,
    states: np.ndarray,
    rng: np.random.Generator | None = None,
    specs: tuple[vitals.VitalSignSpec, ...] | None = None,
) -> np.ndarray:
    """One-step selection under the shared constraint machinery."""
    if kind == "no_action":
        return np.zeros(mask.n_present, dtype=bool)
    return env.allocate_by_priority(score(kind, states, specs, rng), mask)


def run_baseline(instance: env.Instance, baseline: Baseline) -> env.EpisodeResult:
    return env.run_episode(
        instance, baseline.select_fn, enforce_forced_active=baseline.enforce_forced_active
    )
