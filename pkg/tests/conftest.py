import numpy as np
import pytest

from vitalloc import env, gmm, ingest, vitals


@pytest.fixture(scope="session")
def specs_m4():
    return tuple(vitals.preset_specs("mimic4"))


@pytest.fixture(scope="session")
def specs_m3():
    return tuple(vitals.preset_specs("mimic3"))


@pytest.fixture(scope="session")
def world(specs_m4):
    return ingest.synthetic_world(specs_m4)


# A population small enough for sub-second episodes; arrival_batch is set
# explicitly because n_patients // 10 would be 0.
@pytest.fixture(scope="session")
def tiny_config():
    return env.InstanceConfig(
        budget=2, n_patients=8, horizon=20, t_min=2, t_max=6, stay=10,
        arrival_period=4, arrival_batch=1,
    )


@pytest.fixture()
def tiny_instance(tiny_config, world, specs_m4):
    return env.spawn_instance(tiny_config, world, specs_m4, seed=42)


@pytest.fixture(scope="session")
def single_sign_spec():
    return (
        vitals.VitalSignSpec(
            name="pulse", threshold=120.0, direction="above", penalty_scale=17.0,
            intervention_mean=15.0, intervention_sd=5.0, data_min=20.0, data_max=220.0,
        ),
    )


def ar_model(d: int = 1, mean: float = 0.5, coef: float = 0.6, sd: float = 0.1,
             noise: float = 0.05) -> gmm.PatientModel:
    joint = ingest.linear_gaussian(np.full(d, mean), coef, np.full(d, sd), noise)
    return gmm.PatientModel(joint)


def sample_tuples(mixture: gmm.Mixture, n: int, rng) -> np.ndarray:
    comps = rng.choice(len(mixture.components), size=n, p=mixture.weights)
    out = np.empty((n, mixture.dim))
    for j, g in enumerate(mixture.components):
        idx = np.nonzero(comps == j)[0]
        if idx.size:
            chol = np.linalg.cholesky(g.cov)
            out[idx] = g.mean + rng.standard_normal((idx.size, g.dim)) @ chol.T
    return out


def finite_diff(net, loss_fn, h=1e-5):
    """Central differences of loss_fn() wrt every parameter of net."""
    from vitalloc import policy

    theta = policy.flat_params(net)
    grad = np.empty_like(theta)
    for i in range(theta.size):
        bump = theta.copy()
        bump[i] = theta[i] + h
        policy.set_flat_params(net, bump)
        up = loss_fn()
        bump[i] = theta[i] - h
        policy.set_flat_params(net, bump)
        down = loss_fn()
        grad[i] = (up - down) / (2 * h)
    policy.set_flat_params(net, theta)
    return grad


def episode_patterns(result, instance):
    """(arm_id, action list in time order) for each arm that appeared."""
    out = {}
    for arm in instance.arms:
        rows = result.rows_for_arm(arm.arm_id)
        if rows:
            out[arm.arm_id] = [int(r.action) for r in rows]
    return out


def assert_valid_patterns(result, instance):
    cfg = instance.config
    by_step = {}
    for r in result.rows:
        by_step.setdefault(r.t, []).append(r)
    for t, rows in by_step.items():
        assert sum(r.action for r in rows) <= cfg.budget, f"budget breached at step {t}"
    for arm_id, actions in episode_patterns(result, instance).items():
        k = sum(actions)
        assert actions == [1] * k + [0] * (len(actions) - k), f"arm {arm_id} re-monitored"
        assert cfg.t_min <= k <= cfg.t_max, f"arm {arm_id} held the device {k} steps"
