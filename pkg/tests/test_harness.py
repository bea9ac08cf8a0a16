import dataclasses

import numpy as np
import pytest

from vitalloc import env, harness, policy, vitals
from vitalloc.errors import InvalidInputError, ParseError, SchemaError

from conftest import ar_model


def small_experiment_config(**over):
    base = dict(
        budget=2, patients=8, horizon=20, t_min=2, t_max=6, stay=10,
        arrival_period=4, arrival_batch=1, epochs=2, trains_per_epoch=2,
        hidden_layers=1, neurons_per_layer=8, eval_instances=2, seeds=2,
    )
    base.update(over)
    return harness.ExperimentConfig(**base)


def fake_seed_result(seed_index, base, n_dims=6):
    scores = {m: base + 0.1 * i for i, m in enumerate(harness.METHODS)}
    scores["no_action"] = 0.0
    history = [
        {
            "epoch": e, "rollout_reward": -5.0 + e, "rollout_return": -3.0 + e,
            "actor_loss": 0.2, "critic_loss": 1.0, "entropy_coeff": 0.5 - 0.5 * e,
        }
        for e in range(2)
    ]
    rng = np.random.default_rng(seed_index)
    return harness.SeedResult(
        seed_index=seed_index,
        scores=scores,
        per_instance={m: np.full(3, scores[m]) for m in harness.METHODS},
        history=history,
        activation_counts=np.array([0, 2, 3, 6]),
        removal_states=rng.uniform(0, 1, size=(4, n_dims)),
        forced_removals=2,
    )


def fake_experiment(n_dims=6):
    cfg = harness.ExperimentConfig(t_max=6)
    cells = [
        harness.CellResult(2, 8, [fake_seed_result(0, 1.0, n_dims),
                                  fake_seed_result(1, 2.0, n_dims)]),
        harness.CellResult(3, 10, [fake_seed_result(0, 3.0, n_dims)]),
    ]
    return harness.ExperimentResult(cfg, master_seed=99, cells=cells)


class TestConfig:
    def test_text_round_trip(self):
        cfg = small_experiment_config(stochastic_ranking=True, response_prob=0.65)
        assert harness.parse_config_text(harness.config_to_text(cfg)) == cfg

    def test_defaults_round_trip(self):
        cfg = harness.ExperimentConfig()
        again = harness.parse_config_text(harness.config_to_text(cfg))
        assert again == cfg
        assert again.arrival_batch is None

    def test_comments_and_blanks_ignored(self):
        cfg = harness.parse_config_text(
            "# experiment\n\nbudget = 4   # devices\npatients = 30\n"
        )
        assert (cfg.budget, cfg.patients) == (4, 30)

    def test_unknown_key_rejected(self):
        with pytest.raises(SchemaError, match="budgett"):
            harness.parse_config_text("budgett = 4\n")

    def test_bad_value_reports_line(self):
        with pytest.raises(ParseError, match="line 2"):
            harness.parse_config_text("budget = 4\nepochs = many\n")

    def test_missing_equals_rejected(self):
        with pytest.raises(ParseError):
            harness.parse_config_text("budget 4\n")

    def test_arrival_batch_none(self):
        assert harness.parse_config_text("arrival_batch = none\n").arrival_batch is None
        assert harness.parse_config_text("arrival_batch = 3\n").arrival_batch == 3

    def test_bool_parsing(self):
        assert harness.parse_config_text("stochastic_ranking = true\n").stochastic_ranking
        assert not harness.parse_config_text("normalize_advantages = false\n").normalize_advantages
        with pytest.raises(ParseError):
            harness.parse_config_text("stochastic_ranking = maybe\n")

    def test_validation(self):
        with pytest.raises(InvalidInputError):
            harness.ExperimentConfig(epochs=0)
        with pytest.raises(InvalidInputError):
            harness.ExperimentConfig(preset="mimic5")

    def test_instance_config_mapping(self):
        cfg = small_experiment_config()
        icfg = cfg.instance_config()
        assert (icfg.budget, icfg.n_patients, icfg.horizon) == (2, 8, 20)
        assert (icfg.t_min, icfg.t_max, icfg.stay) == (2, 6, 10)
        assert icfg.gamma == cfg.discount_factor
        assert icfg.alert_response_prob == cfg.response_prob
        over = cfg.instance_config(budget=5, patients=40)
        assert (over.budget, over.n_patients) == (5, 40)

    def test_ppo_config_mapping(self):
        pcfg = harness.ExperimentConfig().ppo_config()
        assert pcfg.hidden == (16, 16)
        assert pcfg.n_epochs == 50
        assert pcfg.trains_per_epoch == 20
        assert pcfg.clip == 2.0
        assert (pcfg.entropy_start, pcfg.entropy_end) == (0.5, 0.0)
        assert pcfg.gamma == 0.9

    def test_load_save(self, tmp_path):
        cfg = small_experiment_config(seeds=7)
        p = tmp_path / "config.txt"
        p.write_text(harness.config_to_text(cfg), encoding="utf-8")
        assert harness.load_config(p) == cfg


class TestAggregation:
    def test_mean_se_oracle(self):
        mean, se = harness.mean_se([1.0, 3.0])
        assert (mean, se) == (2.0, 1.0)

    def test_single_value_has_zero_se(self):
        assert harness.mean_se([5.0]) == (5.0, 0.0)

    def test_empty_rejected(self):
        with pytest.raises(InvalidInputError):
            harness.mean_se([])

    def test_result_rows_cover_methods_and_cells(self):
        rows = harness.result_rows(fake_experiment())
        assert len(rows) == len(harness.METHODS) * 2
        first_cell = [r for r in rows if (r.budget, r.n_patients) == (2, 8)]
        by_method = {r.method: r for r in first_cell}
        assert by_method["no_action"].mean == 0.0
        assert by_method["ppo"].mean == pytest.approx(1.5)  # (1.0 + 2.0) / 2
        assert by_method["ppo"].se == pytest.approx(0.5)
        assert by_method["ppo"].n_seeds == 2
        single = [r for r in rows if r.budget == 3]
        assert all(r.se == 0.0 and r.n_seeds == 1 for r in single)


class ScheduledPolicy:
    """Activates each arm exactly on its scheduled steps."""

    def __init__(self, schedule):
        self.schedule = schedule

    def __call__(self, t, obs, mask):
        return np.array([t in self.schedule[a] for a in mask.arm_ids])


def scheduled_instance(specs):
    cfg = env.InstanceConfig(
        budget=2, n_patients=3, horizon=12, t_min=2, t_max=5, stay=12,
        arrival_period=5, arrival_batch=0,
    )
    model = ar_model(d=len(specs), mean=0.5, coef=0.6, sd=0.08, noise=0.04)
    arms = [
        env.Arm(0, 1, 12, model, np.full(len(specs), 0.5)),
        env.Arm(1, 1, 12, model, np.full(len(specs), 0.55)),
        env.Arm(2, 10, 18, model, np.full(len(specs), 0.45)),
    ]
    return env.Instance(cfg, specs, arms, seed=5)


class TestRemovalEvents:
    def test_classification(self, specs_m4):
        instance = scheduled_instance(specs_m4)
        schedule = {
            0: {1, 2, 3},              # voluntary stop at step 3
            1: {1, 2, 3, 4, 5},        # runs out the t_max allowance
            2: {10, 11, 12},           # carried out at the horizon
        }
        result = env.run_episode(instance, ScheduledPolicy(schedule))
        states, forced = harness.removal_events(result, instance)
        assert forced == 2
        assert states.shape == (1, 2 * len(specs_m4))
        last_active_row = result.rows_for_arm(0)[2]
        assert last_active_row.action and last_active_row.t == 3
        np.testing.assert_array_equal(states[0], last_active_row.state)

    def test_never_active_arms_contribute_nothing(self, tiny_instance):
        result = env.no_action_result(tiny_instance)
        states, forced = harness.removal_events(result, tiny_instance)
        assert forced == 0
        assert states.shape[0] == 0


class TestTraceStatistics:
    def test_activation_cdf_oracle(self):
        cdf = harness.activation_cdf([0, 2, 3, 3, 5], t_max=5)
        np.testing.assert_allclose(cdf, [0.2, 0.2, 0.4, 0.8, 0.8, 1.0])
        assert harness.fraction_below_max([0, 2, 3, 3, 5], t_max=5) == 0.8

    def test_cdf_requires_data(self):
        with pytest.raises(InvalidInputError):
            harness.activation_cdf([], t_max=5)

    def test_removal_histogram_counts_everything(self):
        states = np.array([[0.04, 0.5], [0.5, 0.98], [-0.2, 1.7]])
        hist, edges = harness.removal_histogram(states, n_dims=2)
        assert hist.shape == (2, harness.HIST_BINS)
        assert edges.shape == (harness.HIST_BINS + 1,)
        np.testing.assert_array_equal(hist.sum(axis=1), [3, 3])
        assert hist[0, 0] == 2   # 0.04 and the clipped -0.2
        assert hist[1, -1] == 2  # 0.98 and the clipped 1.7

    def test_empty_histogram(self):
        hist, _ = harness.removal_histogram(np.zeros((0, 4)), n_dims=4)
        assert hist.sum() == 0

    def test_state_dimension_names(self, specs_m4):
        names = harness.state_dimension_names(specs_m4)
        assert len(names) == 6
        assert names[0] == "heart_rate" and names[3] == "heart_rate_var"

    def test_trace_round_trip_matches_in_memory_analysis(
        self, tmp_path, tiny_instance, specs_m4
    ):
        actor = policy.Mlp.create((6, 8, 2), np.random.default_rng(0))
        result = env.run_episode(tiny_instance, policy.policy_select_fn(actor))
        path = tmp_path / "trace.csv"
        env.write_trace_csv(result, tiny_instance, path)

        counts, states, forced = harness.trace_analyses(
            path, specs_m4, tiny_instance.config.t_max
        )
        mem_states, mem_forced = harness.removal_events(result, tiny_instance)
        assert forced == mem_forced
        assert sorted(counts) == sorted(int(c) for c in result.activation_counts)
        assert states.shape == mem_states.shape
        if len(states):
            np.testing.assert_allclose(
                np.sort(states, axis=0), np.sort(mem_states, axis=0), atol=1e-9
            )

    def test_trace_schema_checked(self, tmp_path, specs_m4):
        p = tmp_path / "bad.csv"
        p.write_text("step,arm\n1,0\n", encoding="utf-8")
        with pytest.raises(SchemaError):
            harness.read_trace_csv(p, specs_m4)


class TestArtifacts:
    def test_prepare_out_dir(self, tmp_path):
        target = tmp_path / "out"
        assert harness.prepare_out_dir(target) == target
        (target / "results.csv").write_text("x", encoding="utf-8")
        with pytest.raises(InvalidInputError):
            harness.prepare_out_dir(target)
        assert harness.prepare_out_dir(target, overwrite=True) == target

    def test_results_csv_round_trip(self, tmp_path):
        result = fake_experiment()
        path = tmp_path / harness.RESULTS_CSV
        harness.write_results_csv(result, path)
        assert harness.read_results_csv(path) == harness.result_rows(result)

    def test_per_seed_csv_round_trip(self, tmp_path):
        result = fake_experiment()
        path = tmp_path / harness.PER_SEED_CSV
        harness.write_per_seed_csv(result, path)
        rows = harness.read_per_seed_csv(path)
        assert len(rows) == len(harness.METHODS) * 3  # 2 + 1 seeds over cells
        assert all(r["normalized_reward"] == 0.0
                   for r in rows if r["method"] == "no_action")

    def test_training_curves_rows(self, tmp_path):
        result = fake_experiment()
        path = tmp_path / harness.CURVES_CSV
        harness.write_training_curves_csv(result, path)
        lines = path.read_text(encoding="utf-8").strip().splitlines()
        assert lines[0] == ("budget,patients,seed,epoch,rollout_reward,"
                            "rollout_return,actor_loss,critic_loss,entropy_coeff")
        assert len(lines) == 1 + 3 * 2  # 3 seed results x 2 epochs

    def test_activation_cdf_csv(self, tmp_path):
        result = fake_experiment()
        path = tmp_path / harness.CDF_CSV
        harness.write_activation_cdf_csv(result, path)
        lines = path.read_text(encoding="utf-8").strip().splitlines()
        assert lines[0] == "budget,patients,active_steps,cdf"
        assert len(lines) == 1 + 2 * (result.config.t_max + 1)
        assert lines[-1].endswith(",1.0")  # every count <= t_max

    def test_removal_hist_csv(self, tmp_path, specs_m4):
        result = fake_experiment()
        path = tmp_path / harness.REMOVAL_CSV
        harness.write_removal_hist_csv(result, specs_m4, path)
        lines = path.read_text(encoding="utf-8").strip().splitlines()
        assert len(lines) == 1 + 2 * 6 * harness.HIST_BINS
        # per-dimension counts add up to the voluntary total
        import csv as csv_mod
        with open(path, encoding="utf-8", newline="") as fh:
            rows = list(csv_mod.DictReader(fh))
        cell = [r for r in rows
                if r["budget"] == "2" and r["dimension"] == "heart_rate"]
        assert sum(int(r["count"]) for r in cell) == 8  # 2 seeds x 4 states
        assert all(r["voluntary_total"] == "8" and r["forced_total"] == "4" for r in cell)


class TestProtocol:
    def test_evaluate_methods_shares_instances(self, world, specs_m4):
        cfg = small_experiment_config()
        actor = policy.Mlp.create((6, 8, 2), np.random.default_rng(1))
        ev = harness.evaluate_methods(
            actor, world, specs_m4, cfg.instance_config(), seed=4, n_instances=2
        )
        assert set(ev.scores) == set(harness.METHODS)
        assert ev.scores["no_action"] == 0.0
        np.testing.assert_array_equal(ev.per_instance["no_action"],
                                      ev.per_instance["no_action"])
        for m in harness.METHODS:
            assert ev.per_instance[m].shape == (2,)
        assert ev.activation_counts.size > 0

    def test_run_seed_deterministic(self, world, specs_m4):
        cfg = small_experiment_config()
        a = harness.run_seed(cfg, world, specs_m4, master_seed=10, seed_index=0)
        b = harness.run_seed(cfg, world, specs_m4, master_seed=10, seed_index=0)
        assert a.scores == b.scores
        assert a.history == b.history
        np.testing.assert_array_equal(a.activation_counts, b.activation_counts)
        c = harness.run_seed(cfg, world, specs_m4, master_seed=10, seed_index=1)
        assert a.scores != c.scores

    def test_run_many_parallel_equals_serial(self, world, specs_m4):
        cfg = small_experiment_config()
        serial = harness.run_many(cfg, world, specs_m4, master_seed=3, workers=1)
        parallel = harness.run_many(cfg, world, specs_m4, master_seed=3, workers=2)
        assert len(serial) == len(parallel) == cfg.seeds
        for s, p in zip(serial, parallel):
            assert s.seed_index == p.seed_index
            assert s.scores == p.scores
            assert s.history == p.history
            np.testing.assert_array_equal(s.removal_states, p.removal_states)

    def test_run_experiment_grid(self, world, specs_m4):
        cfg = small_experiment_config(seeds=1)
        result = harness.run_experiment(
            cfg, world, specs_m4, master_seed=8, grid=((2, 8), (2, 10))
        )
        assert [(c.budget, c.n_patients) for c in result.cells] == [(2, 8), (2, 10)]
        rows = harness.result_rows(result)
        assert len(rows) == len(harness.METHODS) * 2
        # cells use independent derived seeds, so scores differ
        assert result.cells[0].seeds[0].scores != result.cells[1].seeds[0].scores

    def test_emit_outputs_writes_everything(self, tmp_path, world, specs_m4):
        result = fake_experiment()
        paths = harness.emit_outputs(result, specs_m4, tmp_path)
        for path in paths.values():
            assert path.exists() and path.stat().st_size > 0
        assert {harness.RESULTS_CSV, harness.PER_SEED_CSV, harness.CURVES_CSV,
                harness.CDF_CSV, harness.REMOVAL_CSV} <= set(paths)
        assert any(str(p).endswith(".svg") for p in paths.values())
