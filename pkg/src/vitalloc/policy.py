"""Actor-critic allocation policy trained with clipped PPO.

Both networks are small dense nets written directly in numpy (two tanh
hidden layers of 16 units on a 2d input) with hand-derived gradients;
the test suite checks every gradient against finite differences. The
actor maps one arm's observation (current normalized vitals plus
trailing-window variances) to passive/active logits. Monitors go to the
arms with the highest activation probability, both during training
rollouts and at evaluation; exploration comes from the entropy bonus,
not from action sampling (a config flag enables stochastic ranking).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import log_softmax, softmax

from . import env
from .errors import InvalidInputError, NumericFailureError
from .streams import rng_for

HIDDEN = (16, 16)


@dataclass(eq=False)
class Mlp:
    """Dense tanh network; the last layer is linear."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @classmethod
    def create(cls, sizes: tuple[int, ...], rng: np.random.Generator) -> "Mlp":
        if len(sizes) < 2:
            raise InvalidInputError("need at least input and output sizes")
        weights = [
            rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(fan_in, fan_out))
            for fan_in, fan_out in zip(sizes[:-1], sizes[1:])
        ]
        biases = [np.zeros(fan_out) for fan_out in sizes[1:]]
        return cls(weights, biases)

    @property
    def sizes(self) -> tuple[int, ...]:
        return (self.weights[0].shape[0],) + tuple(w.shape[1] for w in self.weights)

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
        """Return output and the per-layer activations needed by backward."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        acts = [x]
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w + b
            h = z if i == last else np.tanh(z)
            acts.append(h)
        return h, acts

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)[0]

    def backward(
        self, acts: list[np.ndarray], dout: np.ndarray
    ) -> list[tuple[np.ndarray, np.ndarray]]:
        """Gradients of a scalar loss wrt every weight and bias, given the
        loss gradient at the (linear) output."""
        grads: list[tuple[np.ndarray, np.ndarray]] = [None] * len(self.weights)
        dz = dout
        for i in range(len(self.weights) - 1, -1, -1):
            grads[i] = (acts[i].T @ dz, dz.sum(axis=0))
            if i > 0:
                dh = dz @ self.weights[i].T
                dz = dh * (1.0 - acts[i] ** 2)  # acts[i] is tanh output of layer i-1
        return grads

    def sgd_step(self, grads, lr: float, momentum: float = 0.0) -> None:
        if momentum > 0.0 and not hasattr(self, "_velocity"):
            self._velocity = [
                (np.zeros_like(w), np.zeros_like(b))
                for w, b in zip(self.weights, self.biases)
            ]
        for i, ((dw, db), w, b) in enumerate(zip(grads, self.weights, self.biases)):
            if momentum > 0.0:
                vw, vb = self._velocity[i]
                vw *= momentum
                vw += dw
                vb *= momentum
                vb += db
                dw, db = vw, vb
            w -= lr * dw
            b -= lr * db

    def copy(self) -> "Mlp":
        return Mlp([w.copy() for w in self.weights], [b.copy() for b in self.biases])


def flat_params(net: Mlp) -> np.ndarray:
    return np.concatenate([a.ravel() for pair in zip(net.weights, net.biases) for a in pair])


def set_flat_params(net: Mlp, vec: np.ndarray) -> None:
    expected = sum(a.size for pair in zip(net.weights, net.biases) for a in pair)
    if vec.size != expected:
        raise InvalidInputError(f"parameter vector has {vec.size} entries, expected {expected}")
    pos = 0
    for arr in (a for pair in zip(net.weights, net.biases) for a in pair):
        arr[...] = vec[pos : pos + arr.size].reshape(arr.shape)
        pos += arr.size


def flatten_grads(grads) -> np.ndarray:
    return np.concatenate([a.ravel() for pair in grads for a in pair])


# ---------------------------------------------------------------------------
# Action selection
# ---------------------------------------------------------------------------

def actor_forward(actor: Mlp, states: np.ndarray) -> np.ndarray:
    """Per-state (passive, active) probabilities: softmax of the logits."""
    logits = actor(np.atleast_2d(states))
    if not np.all(np.isfinite(logits)):
        raise NumericFailureError("actor produced non-finite logits")
    return softmax(logits, axis=1)


def select_actions(
    actor: Mlp,
    obs: np.ndarray,
    mask: env.AllocationMask,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Give the remaining monitors to the eligible arms with the highest
    active-action probability (ties to the lower arm id). With an rng,
    Gumbel noise perturbs the log-probabilities, which samples monitor
    sets proportionally to the activation probabilities."""
    logits = actor(obs)
    if not np.all(np.isfinite(logits)):
        raise NumericFailureError("actor produced non-finite logits")
    scores = log_softmax(logits, axis=1)[:, 1]
    if rng is not None:
        scores = scores + rng.gumbel(0.0, 1.0, size=scores.shape)
    return env.allocate_by_priority(scores, mask)


def policy_select_fn(actor: Mlp, rng: np.random.Generator | None = None):
    """Selector for run_episode; deterministic unless an rng is given."""
    return lambda t, obs, mask: select_actions(actor, obs, mask, rng)


# ---------------------------------------------------------------------------
# Rollout buffer
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class EpisodeBuffer:
    """Flat per-arm-step records from one epoch's rollout, with the
    collection-time action probabilities for the PPO ratio."""

    states: np.ndarray       # (m, 2d)
    actions: np.ndarray      # (m,) 0/1
    rewards: np.ndarray      # (m,) the arm's own reward at that step
    next_states: np.ndarray  # (m, 2d); terminal rows repeat their state
    arm_ids: np.ndarray      # (m,)
    steps: np.ndarray        # (m,)
    returns: np.ndarray      # (m,) discounted return-to-go within the arm
    old_logp: np.ndarray     # (m,) log prob of the taken action at collection

    @property
    def size(self) -> int:
        return self.states.shape[0]


def returns_to_go(rewards: np.ndarray, gamma: float) -> np.ndarray:
    out = np.empty_like(rewards, dtype=float)
    acc = 0.0
    for i in range(rewards.size - 1, -1, -1):
        acc = rewards[i] + gamma * acc
        out[i] = acc
    return out


def build_buffer(
    results: list[env.EpisodeResult], gamma: float, actor: Mlp
) -> EpisodeBuffer:
    """Flatten episodes into training rows. Each arm's own reward stream
    gives its return-to-go; the tail after the last recorded step is 0."""
    per_arm: list[list[env.StepRow]] = []
    for result in results:
        by_arm: dict[int, list[env.StepRow]] = {}
        for row in result.rows:
            by_arm.setdefault(row.arm_id, []).append(row)
        per_arm.extend(by_arm[k] for k in sorted(by_arm))
    states, actions, rewards, next_states, arm_ids, steps, returns = ([] for _ in range(7))
    for rows in per_arm:
        rtg = returns_to_go(np.array([r.reward for r in rows]), gamma)
        for i, row in enumerate(rows):
            states.append(row.state)
            actions.append(int(row.action))
            rewards.append(row.reward)
            next_states.append(rows[i + 1].state if i + 1 < len(rows) else row.state)
            arm_ids.append(row.arm_id)
            steps.append(row.t)
            returns.append(rtg[i])
    states = np.array(states)
    actions = np.array(actions, dtype=int)
    logp = log_softmax(actor(states), axis=1)[np.arange(len(actions)), actions]
    return EpisodeBuffer(
        states,
        actions,
        np.array(rewards),
        np.array(next_states),
        np.array(arm_ids, dtype=int),
        np.array(steps, dtype=int),
        np.array(returns),
        logp,
    )


def compute_advantages(
    buffer: EpisodeBuffer, critic: Mlp, normalize: bool = True
) -> np.ndarray:
    """Monte Carlo advantage: return-to-go minus the critic's value,
    normalized to zero mean and unit variance by default."""
    adv = buffer.returns - critic(buffer.states)[:, 0]
    if normalize:
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    return adv


# ---------------------------------------------------------------------------
# PPO losses with hand-derived gradients
# ---------------------------------------------------------------------------

def actor_loss(
    actor: Mlp,
    states: np.ndarray,
    actions: np.ndarray,
    old_logp: np.ndarray,
    advantages: np.ndarray,
    clip: float,
    entropy_coeff: float,
) -> tuple[float, list]:
    """Clipped surrogate with an entropy bonus:
    -mean(min(r A, clip(r, 1-eps, 1+eps) A)) - c * mean(H)."""
    logits, acts = actor.forward(states)
    logp = log_softmax(logits, axis=1)
    p = np.exp(logp)
    m = states.shape[0]
    rows = np.arange(m)
    ratio = np.exp(logp[rows, actions] - old_logp)
    clipped = np.clip(ratio, 1.0 - clip, 1.0 + clip)
    surrogate = np.minimum(ratio * advantages, clipped * advantages)
    entropy = -(p * logp).sum(axis=1)
    loss = -surrogate.mean() - entropy_coeff * entropy.mean()

    # d surrogate / d ratio: the unclipped branch when min() selects it
    # (ties included), zero where the clip is saturated and binding.
    unclipped = ratio * advantages <= clipped * advantages
    ds_dr = np.where(unclipped, advantages, 0.0)
    onehot = np.zeros_like(p)
    onehot[rows, actions] = 1.0
    # d ratio / d logits = ratio * (onehot - p); d entropy / d logits =
    # -p * (logp + H).
    dlogits = -(ds_dr * ratio)[:, None] * (onehot - p) / m
    dlogits -= entropy_coeff * (-p * (logp + entropy[:, None])) / m
    return float(loss), actor.backward(acts, dlogits)


def critic_loss(
    critic: Mlp, states: np.ndarray, returns: np.ndarray
) -> tuple[float, list]:
    """Mean squared error against the Monte Carlo returns."""
    values, acts = critic.forward(states)
    values = values[:, 0]
    err = values - returns
    loss = float((err ** 2).mean())
    dvalues = (2.0 * err / err.size)[:, None]
    return loss, critic.backward(acts, dvalues)


def entropy_coefficient(
    epoch: int, n_epochs: int, start: float = 0.5, end: float = 0.0
) -> float:
    """Linear decay from start at the first epoch to end at the last."""
    if n_epochs <= 1:
        return start
    frac = epoch / (n_epochs - 1)
    return start + (end - start) * frac


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PpoConfig:
    n_epochs: int = 50
    trains_per_epoch: int = 20
    clip: float = 2.0
    entropy_start: float = 0.5
    entropy_end: float = 0.0
    actor_lr: float = 2e-3
    critic_lr: float = 2e-3
    gamma: float = 0.9
    hidden: tuple[int, ...] = HIDDEN
    momentum: float = 0.0
    normalize_advantages: bool = True
    stochastic_ranking: bool = False


def ppo_update(
    actor: Mlp,
    critic: Mlp,
    buffer: EpisodeBuffer,
    advantages: np.ndarray,
    config: PpoConfig,
    epoch: int,
) -> tuple[float, float]:
    """Run trains_per_epoch full-batch gradient steps on both networks;
    returns the final (actor, critic) losses."""
    if buffer.size == 0:
        raise InvalidInputError("empty buffer")
    coeff = entropy_coefficient(epoch, config.n_epochs, config.entropy_start, config.entropy_end)
    a_loss = c_loss = float("nan")
    for _ in range(config.trains_per_epoch):
        a_loss, a_grads = actor_loss(
            actor, buffer.states, buffer.actions, buffer.old_logp, advantages,
            config.clip, coeff,
        )
        c_loss, c_grads = critic_loss(critic, buffer.states, buffer.returns)
        if not (np.isfinite(a_loss) and np.isfinite(c_loss)):
            raise NumericFailureError(
                f"non-finite loss at epoch {epoch}: actor {a_loss}, critic {c_loss}, "
                f"|adv| max {np.abs(advantages).max():.3g}, "
                f"|returns| max {np.abs(buffer.returns).max():.3g}"
            )
        actor.sgd_step(a_grads, config.actor_lr, config.momentum)
        critic.sgd_step(c_grads, config.critic_lr, config.momentum)
    return a_loss, c_loss


@dataclass(eq=False)
class TrainResult:
    actor: Mlp
    critic: Mlp
    history: list[dict] = field(default_factory=list)


def train_ppo(
    mixture,
    specs,
    instance_config: env.InstanceConfig,
    seed: int,
    config: PpoConfig = PpoConfig(),
) -> TrainResult:
    """Full training run: each epoch spawns a fresh instance, rolls the
    current policy on it (deterministic ranking unless configured
    otherwise), then applies the PPO updates."""
    obs_dim = 2 * len(specs)
    actor = Mlp.create((obs_dim, *config.hidden, 2), rng_for(seed, "actor-init"))
    critic = Mlp.create((obs_dim, *config.hidden, 1), rng_for(seed, "critic-init"))
    result = TrainResult(actor, critic)

    for epoch in range(config.n_epochs):
        instance = env.spawn_instance(
            instance_config, mixture, specs,
            seed=int(rng_for(seed, "train-instance", epoch).integers(2 ** 62)),
        )
        explore_rng = rng_for(seed, "explore", epoch) if config.stochastic_ranking else None
        rollout = env.run_episode(instance, policy_select_fn(actor, explore_rng))
        buffer = build_buffer([rollout], config.gamma, actor)
        advantages = compute_advantages(buffer, critic, config.normalize_advantages)
        a_loss, c_loss = ppo_update(actor, critic, buffer, advantages, config, epoch)
        result.history.append(
            {
                "epoch": epoch,
                "rollout_reward": rollout.total_reward,
                "rollout_return": rollout.discounted_return,
                "actor_loss": a_loss,
                "critic_loss": c_loss,
                "entropy_coeff": entropy_coefficient(
                    epoch, config.n_epochs, config.entropy_start, config.entropy_end
                ),
            }
        )
    return result


# ---------------------------------------------------------------------------
# Checkpoints: versioned text, bit-exact round trip
# ---------------------------------------------------------------------------

_FORMAT_TAG = "vitalloc-policy-v1"


def _net_lines(name: str, net: Mlp) -> list[str]:
    lines = [f"{name}-sizes " + " ".join(str(s) for s in net.sizes)]
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        for r, row in enumerate(w):
            lines.append(f"{name} W{i} {r} " + " ".join(repr(float(v)) for v in row))
        lines.append(f"{name} b{i} " + " ".join(repr(float(v)) for v in b))
    return lines


def _net_from_lines(name: str, lines: list[str]) -> Mlp:
    sizes = None
    for ln in lines:
        if ln.startswith(f"{name}-sizes "):
            sizes = tuple(int(v) for v in ln.split()[1:])
    if sizes is None:
        raise InvalidInputError(f"checkpoint is missing {name} sizes")
    weights = [np.zeros((a, b)) for a, b in zip(sizes[:-1], sizes[1:])]
    biases = [np.zeros(b) for b in sizes[1:]]
    for ln in lines:
        parts = ln.split()
        if parts[0] != name or len(parts) < 3:
            continue
        if parts[1].startswith("W"):
            i, r = int(parts[1][1:]), int(parts[2])
            weights[i][r] = [float(v) for v in parts[3:]]
        elif parts[1].startswith("b"):
            i = int(parts[1][1:])
            biases[i][:] = [float(v) for v in parts[2:]]
    return Mlp(weights, biases)


def save_policy(result: TrainResult, path) -> None:
    lines = [_FORMAT_TAG]
    lines += _net_lines("actor", result.actor)
    lines += _net_lines("critic", result.critic)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_policy(path) -> TrainResult:
    with open(path, encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh.read().splitlines() if ln.strip()]
    if not lines or lines[0] != _FORMAT_TAG:
        raise InvalidInputError(f"not a {_FORMAT_TAG} file")
    return TrainResult(_net_from_lines("actor", lines), _net_from_lines("critic", lines))
