"""Streaming restless-bandit environment for monitor allocation.

Patients (arms) arrive over time, stay for a fixed window, and follow
their own joint-Gaussian transition model. At each step a policy picks
which present patients hold one of the B monitors, subject to:

  1. at most B monitors in use,
  2. a newly arrived patient is monitored for at least t_min steps,
  3. nobody is monitored beyond t_max steps or past departure,
  4. once a monitor is removed from a patient it never comes back,

so each patient's action pattern is 1^k 0^* with t_min <= k <= t_max.
The per-step reward is the summed abnormality penalty of every present
patient's current vitals, charged before the transition; a monitored
patient with an abnormal sign triggers an intervention with probability
alert_response_prob, which shifts the vitals the next state is
conditioned on (the device itself never changes the current reward).
"""

from __future__ import annotations

import csv
from collections import deque
from dataclasses import dataclass

import numpy as np

from . import gmm, vitals
from .errors import ContractViolationError, InfeasibleInstanceError, InvalidInputError
from .streams import rng_for

WINDOW = 5


@dataclass(frozen=True)
class InstanceConfig:
    budget: int
    n_patients: int
    horizon: int = 100
    t_min: int = 3
    t_max: int = 25
    stay: int = 50
    arrival_period: int = 5
    arrival_batch: int | None = None  # None: n_patients // 10
    gamma: float = 0.9
    alert_response_prob: float = 0.7
    blend_max: float = gmm.BLEND_MAX

    def __post_init__(self):
        if self.arrival_batch is None:
            object.__setattr__(self, "arrival_batch", self.n_patients // 10)
        if self.budget < 1 or self.n_patients < self.budget:
            raise InvalidInputError("need 1 <= budget <= n_patients")
        if not (1 <= self.t_min <= self.t_max):
            raise InvalidInputError("need 1 <= t_min <= t_max")
        if self.stay < self.t_min:
            raise InvalidInputError("stay must cover the minimum monitoring window")
        if self.horizon < 1 or self.arrival_period < 1:
            raise InvalidInputError("horizon and arrival_period must be >= 1")
        if self.arrival_batch < 0 or self.arrival_batch > self.budget:
            raise InvalidInputError(
                "need 0 <= arrival_batch <= budget so new arrivals can be served"
            )
        if not 0.0 < self.gamma <= 1.0:
            raise InvalidInputError("gamma must be in (0, 1]")
        if not 0.0 <= self.alert_response_prob <= 1.0:
            raise InvalidInputError("alert_response_prob must be in [0, 1]")

    @classmethod
    def for_population(cls, budget: int, n_patients: int, **kwargs) -> "InstanceConfig":
        return cls(budget=budget, n_patients=n_patients, **kwargs)


@dataclass(eq=False)
class Arm:
    arm_id: int
    arrival: int
    departure: int
    model: gmm.PatientModel
    initial_vitals: np.ndarray


@dataclass(eq=False)
class Instance:
    config: InstanceConfig
    specs: tuple[vitals.VitalSignSpec, ...]
    arms: list[Arm]
    seed: int

    @property
    def n_arms(self) -> int:
        return len(self.arms)


def arrival_schedule(config: InstanceConfig) -> list[int]:
    """Arrival step per arm: budget-many at step 1, then arrival_batch
    every arrival_period steps until the population is placed. Arrivals
    whose minimum monitoring window cannot finish by the horizon are not
    admitted."""
    arrivals = [1] * config.budget
    t = 1
    while len(arrivals) < config.n_patients and config.arrival_batch > 0:
        t += config.arrival_period
        if t + config.t_min - 1 > config.horizon:
            break
        take = min(config.arrival_batch, config.n_patients - len(arrivals))
        arrivals.extend([t] * take)
    return arrivals


def spawn_instance(
    config: InstanceConfig,
    mixture: gmm.Mixture,
    specs: tuple[vitals.VitalSignSpec, ...],
    seed: int,
) -> Instance:
    """Draw per-arm patient models, initial states and arrival times, then
    check that the forced-monitoring load never exceeds the budget."""
    if mixture.dim != 2 * len(specs):
        raise InvalidInputError("mixture dimension does not match the sign count")
    arrivals = arrival_schedule(config)
    arms = []
    for i, alpha in enumerate(arrivals):
        model = gmm.sample_patient(
            mixture, rng_for(seed, "arm-model", i), blend_max=config.blend_max
        )
        initial = gmm.initial_state(model, rng_for(seed, "arm-init", i))
        arms.append(Arm(i, alpha, alpha + config.stay - 1, model, initial))
    for t in range(1, config.horizon + 1):
        forced = sum(
            1 for a in arms if a.arrival <= t <= a.departure and t - a.arrival < config.t_min
        )
        if forced > config.budget:
            raise InfeasibleInstanceError(
                f"{forced} arms are inside their minimum-monitoring window at "
                f"step {t}, budget is {config.budget}"
            )
    return Instance(config, specs, arms, seed)


# ---------------------------------------------------------------------------
# Per-step machinery
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class AllocationMask:
    """Action constraints at one step, restricted to the present arms."""

    arm_ids: np.ndarray
    forced_active: np.ndarray
    forced_passive: np.ndarray
    budget: int

    @property
    def eligible(self) -> np.ndarray:
        return ~self.forced_active & ~self.forced_passive

    @property
    def n_present(self) -> int:
        return self.arm_ids.size


@dataclass(eq=False)
class EpisodeState:
    """Mutable per-episode bookkeeping, kept off the shared Instance so
    the same instance can be replayed by several methods."""

    vitals: dict[int, np.ndarray]
    windows: dict[int, deque]
    ever_passive: np.ndarray
    active_steps: np.ndarray

    @classmethod
    def fresh(cls, n_arms: int) -> "EpisodeState":
        return cls({}, {}, np.zeros(n_arms, dtype=bool), np.zeros(n_arms, dtype=int))


def arm_state(current: np.ndarray, window) -> np.ndarray:
    """Network/heuristic observation: the current normalized vitals plus
    the per-sign variance over the trailing WINDOW observations (0 with a
    single observation)."""
    return np.concatenate([current, np.var(np.array(window), axis=0)])


def build_mask(instance: Instance, t: int, ever_passive: np.ndarray) -> AllocationMask:
    present = [a for a in instance.arms if a.arrival <= t <= a.departure]
    ids = np.array([a.arm_id for a in present], dtype=int)
    tenure = np.array([t - a.arrival for a in present], dtype=int)
    was_dropped = ever_passive[ids] if ids.size else np.zeros(0, dtype=bool)
    forced_passive = was_dropped | (tenure >= instance.config.t_max)
    forced_active = (tenure < instance.config.t_min) & ~forced_passive
    if int(forced_active.sum()) > instance.config.budget:
        raise InfeasibleInstanceError(
            f"{int(forced_active.sum())} forced-active arms exceed budget "
            f"{instance.config.budget} at step {t}"
        )
    return AllocationMask(ids, forced_active, forced_passive, instance.config.budget)


def validate_actions(
    actions: np.ndarray, mask: AllocationMask, enforce_forced_active: bool = True
) -> None:
    actions = np.asarray(actions)
    if actions.shape != mask.arm_ids.shape:
        raise ContractViolationError(
            f"actions shape {actions.shape} does not match {mask.n_present} present arms"
        )
    if actions.sum() > mask.budget:
        raise ContractViolationError(
            f"{int(actions.sum())} monitors allocated, budget is {mask.budget}"
        )
    if np.any(actions.astype(bool) & mask.forced_passive):
        bad = mask.arm_ids[actions.astype(bool) & mask.forced_passive]
        raise ContractViolationError(f"arms {bad.tolist()} monitored while forced passive")
    if enforce_forced_active and np.any(~actions.astype(bool) & mask.forced_active):
        bad = mask.arm_ids[~actions.astype(bool) & mask.forced_active]
        raise ContractViolationError(f"arms {bad.tolist()} unmonitored inside t_min window")


def allocate_by_priority(scores: np.ndarray, mask: AllocationMask) -> np.ndarray:
    """Fill forced-active slots first, then hand remaining monitors to the
    highest-scoring eligible arms; score ties go to the lower arm id."""
    actions = mask.forced_active.copy()
    remaining = mask.budget - int(actions.sum())
    if remaining > 0:
        idx = np.nonzero(mask.eligible)[0]
        if idx.size:
            # stable sort on negated scores: ties go to the lower arm id
            order = idx[np.argsort(-scores[idx], kind="stable")]
            actions[order[:remaining]] = True
    return actions


@dataclass(eq=False)
class StepRow:
    """One present arm at one step: the observation the action was chosen
    on, the arm's own pre-transition reward, and whether the alert branch
    fired."""

    t: int
    arm_id: int
    state: np.ndarray
    action: bool
    reward: float
    intervened: bool


def apply_actions(
    instance: Instance,
    sim: EpisodeState,
    t: int,
    mask: AllocationMask,
    actions: np.ndarray,
    trans_rngs,
    ivn_rngs,
    enforce_forced_active: bool = True,
) -> tuple[float, list[StepRow]]:
    """Charge rewards on the current states, then transition: passive arms
    (and monitored arms with all-normal vitals) follow the plain
    conditional; a monitored abnormal arm is first intervention-adjusted
    with probability alert_response_prob and the next state is conditioned
    on the adjusted vitals. Departing arms are dropped after this step."""
    actions = np.asarray(actions, dtype=bool)
    validate_actions(actions, mask, enforce_forced_active)
    cfg = instance.config
    specs = instance.specs
    departures = {a.arm_id: a.departure for a in instance.arms}
    models = {a.arm_id: a.model for a in instance.arms}
    step_reward = 0.0
    rows: list[StepRow] = []
    for k, arm_id in enumerate(mask.arm_ids):
        arm_id = int(arm_id)
        current = sim.vitals[arm_id]
        obs = arm_state(current, sim.windows[arm_id])
        reward = vitals.reward(vitals.denormalize(current, specs), specs)
        step_reward += reward

        cond_input = current
        intervened = False
        if actions[k]:
            sim.active_steps[arm_id] += 1
            raw = vitals.denormalize(current, specs)
            if any(s.is_abnormal(raw[j]) for j, s in enumerate(specs)):
                rng = ivn_rngs[arm_id]
                if rng.uniform() < cfg.alert_response_prob:
                    adjusted = vitals.apply_intervention(raw, specs, rng)
                    cond_input = vitals.normalize(adjusted, specs)
                    intervened = True
        else:
            sim.ever_passive[arm_id] = True
        rows.append(StepRow(t, arm_id, obs, bool(actions[k]), reward, intervened))

        if t < departures[arm_id]:
            nxt = gmm.conditional_next(models[arm_id], cond_input, trans_rngs[arm_id])
            sim.vitals[arm_id] = nxt
            sim.windows[arm_id].append(nxt)
        else:
            del sim.vitals[arm_id]
            del sim.windows[arm_id]
    return step_reward, rows


@dataclass(eq=False)
class EpisodeResult:
    rows: list[StepRow]
    step_rewards: np.ndarray
    total_reward: float
    discounted_return: float
    activation_counts: np.ndarray  # active steps per arm, length n_arms

    def rows_for_arm(self, arm_id: int) -> list[StepRow]:
        return [r for r in self.rows if r.arm_id == arm_id]


def run_episode(
    instance: Instance,
    select_fn,
    enforce_forced_active: bool = True,
) -> EpisodeResult:
    """Roll one episode. select_fn(t, states, mask) gets the present arms'
    observations (n_present, 2d) and the step's AllocationMask and returns
    a boolean action vector over those arms.

    Each arm owns its transition and intervention random streams, so
    environment noise is identical across methods replaying the same
    instance; only the decisions differ.
    """
    cfg = instance.config
    trans_rngs = {a.arm_id: rng_for(instance.seed, "transition", a.arm_id) for a in instance.arms}
    ivn_rngs = {a.arm_id: rng_for(instance.seed, "intervention", a.arm_id) for a in instance.arms}
    sim = EpisodeState.fresh(instance.n_arms)
    rows: list[StepRow] = []
    step_rewards = np.zeros(cfg.horizon)

    for t in range(1, cfg.horizon + 1):
        for arm in instance.arms:
            if arm.arrival == t:
                sim.vitals[arm.arm_id] = arm.initial_vitals.copy()
                sim.windows[arm.arm_id] = deque([arm.initial_vitals.copy()], maxlen=WINDOW)
        mask = build_mask(instance, t, sim.ever_passive)
        if mask.n_present == 0:
            continue
        obs = np.array([arm_state(sim.vitals[i], sim.windows[i]) for i in mask.arm_ids])
        actions = select_fn(t, obs, mask)
        step_rewards[t - 1], step_rows = apply_actions(
            instance, sim, t, mask, actions, trans_rngs, ivn_rngs, enforce_forced_active
        )
        rows.extend(step_rows)
    total = float(step_rewards.sum())
    return EpisodeResult(
        rows,
        step_rewards,
        total,
        episode_return(step_rewards, cfg.gamma),
        sim.active_steps.copy(),
    )


def episode_return(step_rewards: np.ndarray, gamma: float) -> float:
    """Accumulated discounted reward, step 1 undiscounted."""
    step_rewards = np.asarray(step_rewards, dtype=float)
    return float(step_rewards @ gamma ** np.arange(step_rewards.size))


def no_action_result(instance: Instance) -> EpisodeResult:
    """Episode where nobody is ever monitored (the normalization
    reference; exempt from the minimum-monitoring constraint)."""
    return run_episode(
        instance,
        lambda t, obs, mask: np.zeros(mask.n_present, dtype=bool),
        enforce_forced_active=False,
    )


def write_trace_csv(result: EpisodeResult, instance: Instance, path) -> None:
    """Per-arm-step trace: step, arm, action, raw-unit vitals, reward."""
    specs = instance.specs
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["step", "arm_id", "action", "intervened"]
            + [s.name for s in specs]
            + ["reward"]
        )
        for row in result.rows:
            raw = vitals.denormalize(row.state[: len(specs)], specs)
            writer.writerow(
                [row.t, row.arm_id, int(row.action), int(row.intervened)]
                + [repr(float(v)) for v in raw]
                + [repr(row.reward)]
            )
