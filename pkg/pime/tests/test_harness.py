from __future__ import annotations

import dataclasses
import math
import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from pime.config import EvalSettings, ExperimentConfig, NetworkSizes, default_config
from pime.envsim import PlantKind, SetpointSpec, sample_model
from pime.exceptions import StructuralError
from pime.harness import (
    EVAL_STREAM,
    FIXED_MODEL_STREAM,
    Agent,
    EpisodeTrace,
    EvalReport,
    action_sensitivity,
    collect_iteration,
    compare,
    eval_model,
    evaluate,
    map_ordered,
    overshoot,
    run_episode,
    segment_metrics,
    settling_steps,
    substream,
    train,
    training_episode,
)
from pime.ppo_core import PpoHyper


def tiny_config(plant: str = PlantKind.TANKS, **changes: object) -> ExperimentConfig:
    base = default_config(plant)
    levels = (3.0, 8.0) if plant == PlantKind.TANKS else (5.0, 9.0)
    options: dict[str, object] = {
        "horizon": 10,
        "episodes_per_iteration": 2,
        "total_steps": 40,
        "networks": NetworkSizes(main=(4,), z=(2,), trunk=(4,), value=(4,)),
        "ppo": PpoHyper(gamma=base.ppo.gamma, epochs=1, minibatch=8),
        "setpoints": dataclasses.replace(base.setpoints, eval_levels=levels, segment_len=20),
        "evaluation": EvalSettings(models=2),
    }
    options.update(changes)
    return dataclasses.replace(base, **options)


class OracleAgent(Agent):
    """Applies the exact equilibrium input of a known tank model."""

    def __init__(self: "OracleAgent", config: ExperimentConfig, p2: float, p3: float) -> None:
        super().__init__(config, policy=None)
        self.gain = p2 * math.sqrt(2.0 * 981.0) / p3

    def mean_actions(
        self: "OracleAgent",
        x: np.ndarray,
        z: np.ndarray,
        y_ref: np.ndarray,
        eps: np.ndarray,
    ) -> tuple[np.ndarray, np.ndarray]:
        u = self.gain * np.sqrt(np.reshape(np.asarray(y_ref, dtype=float), (-1, 1)))
        return u, np.zeros_like(u)


class AgentTests(SimpleTestCase):
    def test_fresh_agent_matches_prior(self) -> None:
        config = tiny_config()
        agent = Agent.create(config)
        x = np.array([[2.0, 3.0], [10.0, 1.5], [0.0, 25.0]])
        z = np.array([0.0, -4.0, 12.0])
        y_ref = np.array([6.0, 2.0, 11.0])
        mean, prior = agent.mean_actions(x, z, y_ref, y_ref - x[:, 1])
        np.testing.assert_allclose(mean, prior, atol=1e-9)
        np.testing.assert_allclose(prior[:, 0], 0.5 * (y_ref - x[:, 1]))

    def test_fresh_agent_tracks_like_the_prior(self) -> None:
        config = tiny_config()
        model = config.ensemble.nominal()
        refs = config.setpoints.trace()
        x0 = np.zeros(2)
        learned = run_episode(
            model, Agent.create(config), refs, config, np.random.default_rng(0), x0, True
        )
        prior = run_episode(
            model, Agent.prior_only(config), refs, config, np.random.default_rng(0), x0, True
        )
        np.testing.assert_allclose(learned.u, prior.u, atol=1e-9)
        np.testing.assert_allclose(learned.y, prior.y, atol=1e-9)

    def test_disabled_prior_with_zero_network(self) -> None:
        config = tiny_config(disable_prior=True)
        agent = Agent.create(config)
        mean, prior = agent.mean_action(np.array([1.0, 2.0]), 3.0, 9.0, 7.0)
        np.testing.assert_array_equal(mean, [0.0])
        np.testing.assert_array_equal(prior, [0.0])

    def test_pi_prior_uses_integrator(self) -> None:
        config = tiny_config(PlantKind.PH)
        _, prior = Agent.prior_only(config).mean_action(np.array([0.01]), 10.0, 7.0, 1.0)
        self.assertAlmostEqual(prior[0], -0.001 * 1.0 - 0.00005 * 10.0, places=15)

    def test_labels(self) -> None:
        self.assertEqual(Agent.prior_only(tiny_config()).label, "prior")
        self.assertEqual(Agent.create(tiny_config()).label, "pime")
        self.assertEqual(Agent.create(tiny_config(disable_prior=True)).label, "ime")
        self.assertEqual(Agent.create(tiny_config(fix_single_model=True)).label, "single")

    def test_same_seed_same_initial_weights(self) -> None:
        first = Agent.create(tiny_config(seed=5)).policy.get_flat()
        np.testing.assert_array_equal(first, Agent.create(tiny_config(seed=5)).policy.get_flat())
        other = Agent.create(tiny_config(seed=6)).policy.get_flat()
        self.assertFalse(np.array_equal(first, other))


class EpisodeTests(SimpleTestCase):
    def test_scalar_reference_is_held_for_the_horizon(self) -> None:
        config = tiny_config()
        trace = run_episode(
            config.ensemble.nominal(), Agent.create(config), 6.0, config, np.random.default_rng(1)
        )
        self.assertEqual(len(trace), config.horizon)
        self.assertEqual(set(trace.y_ref), {6.0})
        self.assertEqual([rec.done for rec in trace.records], [False] * 9 + [True])
        self.assertEqual(trace.z[0], 0.0)

    def test_rewards_follow_next_output(self) -> None:
        config = tiny_config()
        trace = run_episode(
            config.ensemble.nominal(), Agent.create(config), 6.0, config, np.random.default_rng(1)
        )
        for t in range(len(trace) - 1):
            self.assertEqual(trace.rewards[t], -((trace.y[t + 1] - 6.0) ** 2))

    def test_applied_inputs_are_saturated(self) -> None:
        config = tiny_config()
        trace = run_episode(
            config.ensemble.nominal(),
            Agent.create(config),
            12.0,
            config,
            np.random.default_rng(2),
            x0=np.zeros(2),
        )
        self.assertTrue(all(0.0 <= u <= 10.0 for u in trace.u))

    def test_empty_reference(self) -> None:
        config = tiny_config()
        agent = Agent.create(config)
        with self.assertRaises(StructuralError):
            run_episode(config.ensemble.nominal(), agent, [], config, np.random.default_rng(0))

    def test_training_episodes_are_reproducible(self) -> None:
        config = tiny_config()
        agent = Agent.create(config)
        first = training_episode(agent, config, iteration=3, index=1)
        again = training_episode(agent, config, iteration=3, index=1)
        self.assertEqual(first.rewards, again.rewards)
        self.assertEqual(first.model_id, 3 * config.episodes_per_iteration + 1)
        other = training_episode(agent, config, iteration=3, index=0)
        self.assertNotEqual(first.y_ref[0], other.y_ref[0])

    def test_episodes_do_not_depend_on_worker_count(self) -> None:
        config = tiny_config()
        agent = Agent.create(config)
        serial = collect_iteration(agent, config, 0, workers=1)
        threaded = collect_iteration(agent, config, 0, workers=2)
        self.assertEqual([t.rewards for t in serial], [t.rewards for t in threaded])
        self.assertEqual([t.model_id for t in serial], [0, 1])

    def test_fixed_single_model(self) -> None:
        config = tiny_config(fix_single_model=True)
        fixed = sample_model(config.ensemble, substream(config.seed, FIXED_MODEL_STREAM))
        agent = Agent.create(config)
        for iteration in range(2):
            traces = collect_iteration(agent, config, iteration, fixed_model=fixed)
            self.assertEqual({t.model_id for t in traces}, {fixed.model_id})

    def test_map_ordered_keeps_input_order(self) -> None:
        self.assertEqual(map_ordered(lambda v: v * v, range(6), workers=3), [0, 1, 4, 9, 16, 25])


class MetricTests(SimpleTestCase):
    def test_overshoot_from_below(self) -> None:
        self.assertEqual(overshoot([0.0, 5.0, 11.0, 10.0], 10.0), 1.0)

    def test_overshoot_from_above(self) -> None:
        self.assertEqual(overshoot([15.0, 12.0, 9.0, 10.0], 10.0), 1.0)

    def test_no_overshoot_when_never_reached(self) -> None:
        self.assertEqual(overshoot([0.0, 5.0, 8.0], 10.0), 0.0)

    def test_settling_steps(self) -> None:
        self.assertEqual(settling_steps([0.0, 5.0, 9.9, 10.1, 10.0], 10.0, 0.2), 2)
        self.assertEqual(settling_steps([10.0, 10.0], 10.0, 0.2), 0)
        self.assertEqual(settling_steps([0.0, 0.0, 0.0], 10.0, 0.2), 3)

    def test_perfect_tracking_scores_zero(self) -> None:
        trace = EpisodeTrace(model_id=4)
        trace.y = [3.0] * 8 + [8.0] * 8
        trace.y_ref = list(trace.y)
        trace.rewards = [0.0] * 16
        metrics = segment_metrics(trace, 8, 0.25, 0.2)
        self.assertEqual(len(metrics), 2)
        self.assertEqual([m.y_ref for m in metrics], [3.0, 8.0])
        for m in metrics:
            self.assertEqual((m.steady_state_error, m.overshoot, m.settling_steps), (0.0, 0.0, 0))
            self.assertEqual(m.model_id, 4)

    def test_trace_must_split_into_segments(self) -> None:
        trace = EpisodeTrace(model_id=0, y=[1.0] * 5, y_ref=[1.0] * 5, rewards=[0.0] * 5)
        with self.assertRaises(StructuralError):
            segment_metrics(trace, 2, 0.25, 0.2)

    def test_oracle_input_has_no_steady_state_error(self) -> None:
        config = tiny_config(
            setpoints=SetpointSpec(1.0, 12.0, (6.0,), 40), horizon=20, total_steps=40
        )
        model = config.ensemble.nominal()
        params = model.params
        oracle = OracleAgent(config, params.p2, params.p3)
        level = 6.0
        x0 = np.array([(params.p2 / params.p1) ** 2 * level, level])
        trace = run_episode(
            model, oracle, config.setpoints.trace(), config, np.random.default_rng(0), x0, True
        )
        metrics = segment_metrics(trace, 40, 0.25, 0.2)
        self.assertLess(metrics[0].steady_state_error, 1e-9)
        self.assertEqual(metrics[0].settling_steps, 0)

    def test_sensitivity_of_p_prior_is_zero(self) -> None:
        config = tiny_config()
        agent = Agent.prior_only(config)
        trace = run_episode(
            config.ensemble.nominal(), agent, 6.0, config, np.random.default_rng(0)
        )
        self.assertEqual(action_sensitivity(agent, trace, 1.0), 0.0)

    def test_sensitivity_of_pi_prior_is_its_integral_gain(self) -> None:
        config = tiny_config(PlantKind.PH)
        agent = Agent.prior_only(config)
        trace = run_episode(
            config.ensemble.nominal(), agent, 7.0, config, np.random.default_rng(0)
        )
        self.assertAlmostEqual(action_sensitivity(agent, trace, 1.0), 0.00005, places=12)


class EvaluateTests(SimpleTestCase):
    def test_p_prior_leaves_steady_state_error(self) -> None:
        config = tiny_config()
        report = evaluate(Agent.prior_only(config), config, workers=1)
        self.assertEqual(report.models, 2)
        self.assertEqual(len(report.rows), 4)
        self.assertGreater(report.summary()["mean_steady_state_error"], 0.1)

    def test_single_model_report_matches_segment_metrics(self) -> None:
        config = tiny_config()
        agent = Agent.prior_only(config)
        report = evaluate(agent, config, n_models=1)
        model = eval_model(config, 0)
        rng = substream(config.seed, EVAL_STREAM, 0)
        trace = run_episode(model, agent, config.setpoints.trace(), config, rng, np.zeros(2), True)
        expected = segment_metrics(
            trace, 20, 0.25, 0.2, sensitivity=action_sensitivity(agent, trace, 1.0)
        )
        self.assertEqual(report.rows, expected)
        self.assertAlmostEqual(report.summary()["mean_return"], trace.episodic_return)

    def test_untrained_agent_scores_like_the_prior(self) -> None:
        config = tiny_config()
        prior = evaluate(Agent.prior_only(config), config).summary()
        learned = evaluate(Agent.create(config), config).summary()
        self.assertAlmostEqual(learned["mean_return"], prior["mean_return"], delta=1e-6)
        self.assertAlmostEqual(
            learned["mean_steady_state_error"], prior["mean_steady_state_error"], delta=1e-9
        )

    def test_same_seed_same_report(self) -> None:
        config = tiny_config()
        first = evaluate(Agent.prior_only(config), config, workers=1)
        second = evaluate(Agent.prior_only(config), config, workers=2)
        self.assertEqual(first.rows, second.rows)

    def test_trajectories_are_written(self) -> None:
        config = tiny_config()
        with tempfile.TemporaryDirectory() as tmp:
            evaluate(Agent.prior_only(config), config, output_dir=tmp)
            files = sorted(p.name for p in (Path(tmp) / "trajectories").iterdir())
            header = (Path(tmp) / "trajectories" / files[0]).read_text().splitlines()[0]
        self.assertEqual(files, ["prior_model_000.csv", "prior_model_001.csv"])
        self.assertEqual(header, "t,y,y_ref,u,z,reward,model_id,seed")

    def test_leak_only_changes_tank_models(self) -> None:
        config = tiny_config(evaluation=EvalSettings(models=2, leak=0.001))
        self.assertEqual(eval_model(config, 0).params.leak, 0.001)
        ph = tiny_config(PlantKind.PH, evaluation=EvalSettings(models=2, leak=0.001))
        with self.assertLogs("pime.harness", "WARNING"):
            eval_model(ph, 0)

    def test_report_csv_keeps_rows(self) -> None:
        config = tiny_config()
        report = evaluate(Agent.prior_only(config), config)
        with tempfile.TemporaryDirectory() as tmp:
            path = report.write_csv(Path(tmp) / "report.csv")
            loaded = EvalReport.from_csv(path)
        self.assertEqual(loaded.label, "prior")
        self.assertEqual(loaded.levels, (3.0, 8.0))
        self.assertEqual(loaded.segment_len, 20)
        self.assertEqual(loaded.models, 2)
        np.testing.assert_allclose(loaded.model_returns(), report.model_returns(), rtol=1e-8)


class CompareTests(SimpleTestCase):
    def setUp(self: "CompareTests") -> None:
        self.config = tiny_config()
        self.prior = evaluate(Agent.prior_only(self.config), self.config)

    def test_identical_reports_have_zero_deltas(self) -> None:
        other = dataclasses.replace(self.prior, label="copy")
        table = compare([self.prior, other])
        self.assertEqual(len(table), 4)
        for entry in table:
            self.assertEqual(entry["delta_return"], 0.0)
            self.assertEqual(entry["delta_steady_state_error"], 0.0)
            self.assertEqual(entry["reports"], 1)
            self.assertIn("overshoot_std", entry)

    def test_reports_with_the_same_label_are_grouped(self) -> None:
        table = compare([self.prior, self.prior])
        self.assertEqual([entry["reports"] for entry in table], [2, 2])

    def test_single_report_has_no_spread(self) -> None:
        for entry in compare([self.prior]):
            self.assertEqual(entry["episodic_return_std"], 0.0)
            self.assertEqual(entry["steady_state_error_std"], 0.0)

    def test_std_is_taken_across_reports(self) -> None:
        shifted = dataclasses.replace(
            self.prior,
            rows=[
                dataclasses.replace(row, episodic_return=row.episodic_return + 10.0)
                for row in self.prior.rows
            ],
        )
        for entry in compare([self.prior, shifted]):
            self.assertEqual(entry["reports"], 2)
            self.assertAlmostEqual(entry["episodic_return_std"], 5.0, places=6)
            self.assertEqual(entry["overshoot_std"], 0.0)

    def test_deltas_are_against_the_first_label(self) -> None:
        learned = evaluate(Agent.create(tiny_config(disable_prior=True)), self.config)
        table = compare([self.prior, learned])
        base = {e["segment"]: e for e in table if e["label"] == "prior"}
        for entry in table:
            if entry["label"] == "prior":
                continue
            reference = base[entry["segment"]]["episodic_return_mean"]
            expected = entry["episodic_return_mean"] - reference
            self.assertAlmostEqual(entry["delta_return"], expected)

    def test_mismatched_traces(self) -> None:
        other = dataclasses.replace(self.prior, label="other", levels=(3.0, 9.0))
        with self.assertRaises(StructuralError):
            compare([self.prior, other])

    def test_mismatched_segment_length(self) -> None:
        other = dataclasses.replace(self.prior, label="other", segment_len=40)
        with self.assertRaisesMessage(StructuralError, "40-step segments"):
            compare([self.prior, other])

    def test_nothing_to_compare(self) -> None:
        with self.assertRaises(StructuralError):
            compare([])


class TrainTests(SimpleTestCase):
    def test_tiny_run_writes_outputs(self) -> None:
        config = tiny_config()
        seen = []
        with tempfile.TemporaryDirectory() as tmp:
            result = train(config, tmp, workers=1, on_iteration=seen.append)
            out = Path(tmp)
            self.assertTrue((out / "config.txt").exists())
            self.assertTrue((out / "policy_final.txt").exists())
            self.assertTrue((out / "value_final.txt").exists())
            self.assertTrue((out / "checkpoints" / "policy_iter_0002.txt").exists())
            lines = (out / "diagnostics.csv").read_text().splitlines()
            loaded = Agent.load(config, result.checkpoint)
        self.assertEqual([row["env_steps"] for row in result.diagnostics], [20, 40])
        self.assertEqual(len(seen), 2)
        self.assertEqual(len(lines), 3)
        self.assertTrue(lines[0].startswith("iteration,env_steps,mean_return"))
        np.testing.assert_array_equal(loaded.policy.get_flat(), result.agent.policy.get_flat())

    def test_same_seed_same_diagnostics(self) -> None:
        config = tiny_config()
        texts = []
        for workers in (1, 2):
            with tempfile.TemporaryDirectory() as tmp:
                train(config, tmp, workers=workers)
                texts.append((Path(tmp) / "diagnostics.csv").read_text())
        self.assertEqual(texts[0], texts[1])

    def test_training_moves_the_policy(self) -> None:
        config = tiny_config()
        with tempfile.TemporaryDirectory() as tmp:
            result = train(config, tmp, workers=1)
        initial = Agent.create(config).policy.get_flat()
        self.assertFalse(np.array_equal(initial, result.agent.policy.get_flat()))

    def test_checkpoints_follow_the_interval(self) -> None:
        config = tiny_config(total_steps=60, checkpoint_every=2)
        with tempfile.TemporaryDirectory() as tmp:
            train(config, tmp, workers=1)
            names = sorted(p.name for p in (Path(tmp) / "checkpoints").glob("policy_*"))
        self.assertEqual(names, ["policy_iter_0002.txt", "policy_iter_0003.txt"])
