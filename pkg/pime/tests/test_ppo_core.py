from __future__ import annotations

import math

import numpy as np
from django.test import SimpleTestCase

from pime.control import extend
from pime.exceptions import NumericError
from pime.neuralnet import GaussianPolicy, ModularNet, ObservationScaler, ValueNet
from pime.ppo_core import (
    OptimizerStates,
    PpoHyper,
    RolloutBatch,
    TransitionRecord,
    build_batch,
    clipped_surrogate,
    compute_gae,
    discounted_return,
    evaluate_loss,
    normalize_advantages,
    ppo_loss,
    update,
)


def tiny_agent(seed: int = 0) -> tuple[GaussianPolicy, ValueNet]:
    rng = np.random.default_rng(seed)
    net = ModularNet(3, main_sizes=(4,), z_sizes=(2,), trunk_sizes=(4,), rng=rng)
    net.params = rng.normal(0.0, 0.3, size=net.size)
    policy = GaussianPolicy(net, log_std_init=math.log(0.5))
    return policy, ValueNet(4, sizes=(5,), rng=rng)


def tiny_batch(policy: GaussianPolicy, n: int = 8, seed: int = 1) -> RolloutBatch:
    rng = np.random.default_rng(seed)
    main_in = rng.uniform(-1.0, 1.0, size=(n, 3))
    z_in = rng.uniform(-1.0, 1.0, size=(n, 1))
    prior = rng.normal(size=(n, 1))
    mean = prior + policy.mean_net.forward(main_in, z_in)
    u = mean + policy.sigma * rng.standard_normal((n, 1))
    return RolloutBatch(
        main_in=main_in,
        z_in=z_in,
        value_in=np.hstack([main_in, z_in]),
        prior=prior,
        u=u,
        log_prob_old=policy.log_prob(mean, u),
        rewards=rng.normal(size=n),
        values=rng.normal(size=n),
        advantages=normalize_advantages(rng.normal(size=n)),
        returns=rng.normal(size=n),
    )


class GaeTests(SimpleTestCase):
    def test_single_step(self) -> None:
        advantages, returns = compute_gae([1.0], [0.5], bootstrap=2.0, gamma=0.9, lam=0.95)
        self.assertAlmostEqual(advantages[0], 1.0 + 0.9 * 2.0 - 0.5, places=12)
        self.assertAlmostEqual(returns[0], 1.0 + 0.9 * 2.0, places=12)

    def test_lambda_zero_is_one_step_td(self) -> None:
        rewards = [1.0, -2.0, 0.5]
        values = [0.3, 0.1, -0.4]
        advantages, _ = compute_gae(rewards, values, bootstrap=0.7, gamma=0.95, lam=0.0)
        expected = [
            1.0 + 0.95 * 0.1 - 0.3,
            -2.0 + 0.95 * -0.4 - 0.1,
            0.5 + 0.95 * 0.7 + 0.4,
        ]
        np.testing.assert_allclose(advantages, expected, atol=1e-12)

    def test_lambda_one_is_discounted_return_minus_value(self) -> None:
        rng = np.random.default_rng(0)
        rewards = rng.normal(size=20)
        values = rng.normal(size=20)
        gamma, bootstrap = 0.97, 1.5
        advantages, returns = compute_gae(rewards, values, bootstrap, gamma, lam=1.0)
        for t in range(20):
            tail = discounted_return(rewards[t:], gamma) + gamma ** (20 - t) * bootstrap
            self.assertAlmostEqual(advantages[t], tail - values[t], delta=1e-12)
            self.assertAlmostEqual(returns[t], tail, delta=1e-12)

    def test_terminal_bootstrap_zero(self) -> None:
        advantages, _ = compute_gae([1.0, 1.0], [0.0, 0.0], bootstrap=0.0, gamma=1.0, lam=1.0)
        np.testing.assert_allclose(advantages, [2.0, 1.0])

    def test_length_mismatch(self) -> None:
        with self.assertRaises(ValueError):
            compute_gae([1.0, 2.0], [0.0], bootstrap=0.0, gamma=0.9, lam=0.9)


class AdvantageTests(SimpleTestCase):
    def test_normalized_moments(self) -> None:
        normalized = normalize_advantages(np.array([1.0, 2.0, 3.0, 10.0]))
        self.assertAlmostEqual(normalized.mean(), 0.0, places=12)
        self.assertAlmostEqual(normalized.std(), 1.0, places=12)

    def test_constant_advantages_only_center(self) -> None:
        np.testing.assert_array_equal(normalize_advantages(np.full(4, 3.0)), np.zeros(4))


class SurrogateTests(SimpleTestCase):
    def test_positive_advantage_is_clipped_above(self) -> None:
        value = clipped_surrogate(np.array([1.5]), np.array([1.0]), 0.2)
        self.assertAlmostEqual(value[0], 1.2, places=12)

    def test_negative_advantage_keeps_the_pessimistic_side(self) -> None:
        value = clipped_surrogate(np.array([1.5]), np.array([-1.0]), 0.2)
        self.assertAlmostEqual(value[0], -1.5, places=12)
        value = clipped_surrogate(np.array([0.5]), np.array([-1.0]), 0.2)
        self.assertAlmostEqual(value[0], -0.8, places=12)

    def test_fresh_batch_has_unit_ratio(self) -> None:
        policy, value_net = tiny_agent()
        batch = tiny_batch(policy)
        _, diagnostics = ppo_loss(batch, policy, value_net, PpoHyper())
        self.assertAlmostEqual(diagnostics.policy_loss, -batch.advantages.mean(), places=12)
        self.assertEqual(diagnostics.clip_frac, 0.0)
        self.assertAlmostEqual(diagnostics.approx_kl, 0.0, places=12)

    def test_loss_combines_terms(self) -> None:
        policy, value_net = tiny_agent()
        hyper = PpoHyper(c1=0.5, c2=0.1)
        loss, d = ppo_loss(tiny_batch(policy), policy, value_net, hyper)
        self.assertAlmostEqual(loss, d.policy_loss + 0.5 * d.value_loss - 0.1 * d.entropy)

    def test_non_finite_term_is_named(self) -> None:
        policy, value_net = tiny_agent()
        batch = tiny_batch(policy)
        batch.returns[2] = np.inf
        with self.assertRaises(NumericError) as ctx:
            ppo_loss(batch, policy, value_net, PpoHyper())
        self.assertEqual(ctx.exception.term, "value_loss")


class LossGradientTests(SimpleTestCase):
    def test_policy_gradient_matches_finite_differences(self) -> None:
        policy, value_net = tiny_agent()
        batch = tiny_batch(policy)
        # move away from ratio 1 while staying inside the clip range
        batch.log_prob_old = batch.log_prob_old + 0.05
        hyper = PpoHyper(c2=0.03)
        evaluation = evaluate_loss(batch, policy, value_net, hyper, with_grad=True)
        base = policy.get_flat().copy()
        h = 1e-6
        rng = np.random.default_rng(3)
        for _ in range(16):
            direction = rng.normal(size=base.size)
            direction /= np.linalg.norm(direction)
            losses = []
            for sign in (1.0, -1.0):
                policy.set_flat(base + sign * h * direction)
                losses.append(ppo_loss(batch, policy, value_net, hyper)[0])
            policy.set_flat(base)
            numeric = (losses[0] - losses[1]) / (2 * h)
            analytic = evaluation.policy_grad @ direction
            self.assertLess(abs(numeric - analytic), 1e-4 * max(1.0, abs(numeric)))


class BuildBatchTests(SimpleTestCase):
    def record(self, reward: float, value: float, error: float = 0.0) -> TransitionRecord:
        return TransitionRecord(
            x_ext=extend([5.0, 5.0], 0.0),
            y_ref=6.0,
            u=np.array([1.0]),
            log_prob_old=-1.0,
            reward=reward,
            value_pred=value,
            done=False,
            prior=np.array([0.5]),
            error=error,
        )

    def test_gae_stays_inside_each_episode(self) -> None:
        hyper = PpoHyper(gamma=1.0, lam=1.0)
        scaler = ObservationScaler(np.zeros(3), np.array([25.0, 25.0, 12.0]), 25.0)
        episodes = [
            [self.record(1.0, 0.0), self.record(1.0, 0.0)],
            [self.record(-1.0, 0.0)],
        ]
        batch = build_batch(episodes, [0.0, 0.0], scaler, hyper)
        np.testing.assert_allclose(batch.returns, [2.0, 1.0, -1.0])
        self.assertEqual(batch.episode_lengths, [2, 1])
        self.assertEqual(batch.value_in.shape, (3, 4))
        self.assertAlmostEqual(batch.advantages.mean(), 0.0, places=12)

    def test_control_error_reaches_the_main_inputs(self) -> None:
        scaler = ObservationScaler(np.zeros(3), np.array([25.0, 25.0, 12.0]), 25.0, 5.0)
        records = [self.record(1.0, 0.0, error=1.0), self.record(1.0, 0.0, error=-2.5)]
        batch = build_batch([records], [0.0], scaler, PpoHyper())
        self.assertEqual(batch.main_in.shape, (2, 4))
        np.testing.assert_allclose(batch.main_in[:, -1], [0.2, -0.5])
        self.assertEqual(batch.value_in.shape, (2, 5))

    def test_bootstrap_count_must_match(self) -> None:
        scaler = ObservationScaler(np.zeros(3), np.ones(3), 25.0)
        with self.assertRaises(ValueError):
            build_batch([[self.record(1.0, 0.0)]], [], scaler, PpoHyper())


class UpdateTests(SimpleTestCase):
    def hyper(self, n: int) -> PpoHyper:
        return PpoHyper(epochs=1, minibatch=n, stepsize=1e-5)

    def test_zero_advantage_and_exact_values_leave_mean_net(self) -> None:
        policy, value_net = tiny_agent()
        batch = tiny_batch(policy)
        batch.advantages = np.zeros(len(batch))
        batch.returns = value_net.forward(batch.value_in)
        before = policy.mean_net.params.copy()
        values_before = value_net.params.copy()
        hyper = PpoHyper(epochs=2, minibatch=4, c2=0.0)
        optimizers = OptimizerStates.fresh(policy, value_net, 1e-3)
        update(policy, value_net, batch, hyper, optimizers, np.random.default_rng(0))
        np.testing.assert_allclose(policy.mean_net.params, before, atol=1e-12)
        np.testing.assert_allclose(value_net.params, values_before, atol=1e-12)

    def test_small_step_reduces_loss(self) -> None:
        policy, value_net = tiny_agent()
        batch = tiny_batch(policy)
        hyper = self.hyper(len(batch))
        before, _ = ppo_loss(batch, policy, value_net, hyper)
        optimizers = OptimizerStates.fresh(policy, value_net, hyper.stepsize)
        _, diagnostics = update(
            policy, value_net, batch, hyper, optimizers, np.random.default_rng(0)
        )
        after, _ = ppo_loss(batch, policy, value_net, hyper)
        self.assertLess(after, before)
        self.assertEqual(diagnostics.minibatches, 1)

    def test_same_seed_same_parameters(self) -> None:
        results = []
        for _ in range(2):
            policy, value_net = tiny_agent()
            batch = tiny_batch(policy, n=12)
            hyper = PpoHyper(epochs=3, minibatch=5)
            optimizers = OptimizerStates.fresh(policy, value_net, hyper.stepsize)
            update(policy, value_net, batch, hyper, optimizers, np.random.default_rng(42))
            results.append(np.concatenate([policy.get_flat(), value_net.params]))
        np.testing.assert_array_equal(results[0], results[1])

    def test_minibatch_count(self) -> None:
        policy, value_net = tiny_agent()
        batch = tiny_batch(policy, n=10)
        hyper = PpoHyper(epochs=2, minibatch=4)
        optimizers = OptimizerStates.fresh(policy, value_net, hyper.stepsize)
        _, diagnostics = update(
            policy, value_net, batch, hyper, optimizers, np.random.default_rng(0)
        )
        self.assertEqual(diagnostics.minibatches, 6)

    def test_numeric_failure_restores_parameters(self) -> None:
        policy, value_net = tiny_agent()
        batch = tiny_batch(policy)
        bad = int(np.random.default_rng(7).permutation(len(batch))[-1])
        batch.log_prob_old[bad] = -np.inf
        policy_before = policy.get_flat().copy()
        values_before = value_net.params.copy()
        hyper = PpoHyper(epochs=1, minibatch=1)
        optimizers = OptimizerStates.fresh(policy, value_net, hyper.stepsize)
        with self.assertRaises(NumericError):
            update(policy, value_net, batch, hyper, optimizers, np.random.default_rng(7))
        np.testing.assert_array_equal(policy.get_flat(), policy_before)
        np.testing.assert_array_equal(value_net.params, values_before)


class HyperTests(SimpleTestCase):
    def test_plant_defaults(self) -> None:
        self.assertEqual(PpoHyper.for_plant("tanks").gamma, 0.995)
        ph = PpoHyper.for_plant("ph")
        self.assertEqual((ph.gamma, ph.epochs, ph.minibatch), (0.98, 40, 128))

    def test_rejects_bad_clip(self) -> None:
        with self.assertRaises(ValueError):
            PpoHyper(clip=1.5)
