"""
PPO on top of the numpy networks: GAE, the clipped surrogate loss with value
and entropy terms, and the epoch/minibatch update driver.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .control import ExtendedState
from .envsim import PlantKind
from .exceptions import NumericError, PimeError, StructuralError
from .neuralnet import (
    AdamState,
    GaussianPolicy,
    ObservationScaler,
    ValueNet,
    adam_step,
    gaussian_log_prob,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PpoHyper:
    clip: float = 0.2
    gamma: float = 0.995
    lam: float = 0.97
    c1: float = 1.0
    c2: float = 0.02
    epochs: int = 10
    minibatch: int = 256
    stepsize: float = 3e-4

    def __post_init__(self: "PpoHyper") -> None:
        if not 0 < self.clip < 1:
            raise ValueError(f"clip must be in (0, 1), got {self.clip}")
        for name in ("gamma", "lam"):
            value = getattr(self, name)
            if not 0 <= value <= 1:
                raise ValueError(f"{name} must be in [0, 1], got {value}")
        if self.epochs < 1 or self.minibatch < 1:
            raise ValueError("epochs and minibatch must be >= 1")
        if not self.stepsize > 0:
            raise ValueError(f"stepsize must be positive, got {self.stepsize}")

    @classmethod
    def for_plant(cls: type["PpoHyper"], kind: str) -> "PpoHyper":
        if kind == PlantKind.PH:
            return cls(gamma=0.98, epochs=40, minibatch=128)
        return cls()


@dataclass(frozen=True)
class TransitionRecord:
    x_ext: ExtendedState
    y_ref: float
    u: np.ndarray
    log_prob_old: float
    reward: float
    value_pred: float
    done: bool
    prior: np.ndarray
    next_x_ext: ExtendedState | None = None
    error: float = 0.0


@dataclass
class RolloutBatch:
    main_in: np.ndarray
    z_in: np.ndarray
    value_in: np.ndarray
    prior: np.ndarray
    u: np.ndarray
    log_prob_old: np.ndarray
    rewards: np.ndarray
    values: np.ndarray
    advantages: np.ndarray
    returns: np.ndarray
    episode_lengths: list[int] = field(default_factory=list)

    def __len__(self: "RolloutBatch") -> int:
        return self.u.shape[0]

    def subset(self: "RolloutBatch", index: np.ndarray) -> "RolloutBatch":
        return RolloutBatch(
            main_in=self.main_in[index],
            z_in=self.z_in[index],
            value_in=self.value_in[index],
            prior=self.prior[index],
            u=self.u[index],
            log_prob_old=self.log_prob_old[index],
            rewards=self.rewards[index],
            values=self.values[index],
            advantages=self.advantages[index],
            returns=self.returns[index],
        )


def compute_gae(
    rewards: Sequence[float],
    values: Sequence[float],
    bootstrap: float,
    gamma: float,
    lam: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Advantages and return targets (A + V) for one episode."""
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    if rewards.shape != values.shape or rewards.ndim != 1:
        raise StructuralError(
            f"rewards {rewards.shape} and values {values.shape} must be equal-length vectors"
        )
    next_values = np.append(values[1:], bootstrap)
    deltas = rewards + gamma * next_values - values
    advantages = np.empty_like(deltas)
    running = 0.0
    for t in reversed(range(deltas.size)):
        running = deltas[t] + gamma * lam * running
        advantages[t] = running
    return advantages, advantages + values


def discounted_return(rewards: Sequence[float], gamma: float) -> float:
    total = 0.0
    for r in reversed(list(rewards)):
        total = float(r) + gamma * total
    return total


def normalize_advantages(advantages: np.ndarray) -> np.ndarray:
    centered = advantages - advantages.mean()
    if advantages.size < 2:
        return centered
    std = centered.std()
    return centered / std if std > 1e-12 else centered


def build_batch(
    episodes: Sequence[Sequence[TransitionRecord]],
    bootstraps: Sequence[float],
    scaler: ObservationScaler,
    hyper: PpoHyper,
) -> RolloutBatch:
    """Concatenate episodes in index order; GAE runs per episode before any shuffling."""
    if len(episodes) != len(bootstraps):
        raise StructuralError(
            f"{len(episodes)} episodes but {len(bootstraps)} bootstrap values"
        )
    records = [rec for episode in episodes for rec in episode]
    if not records:
        raise StructuralError("cannot build a batch from zero transitions")
    advantages, returns = [], []
    for episode, bootstrap in zip(episodes, bootstraps):
        adv, ret = compute_gae(
            [rec.reward for rec in episode],
            [rec.value_pred for rec in episode],
            bootstrap,
            hyper.gamma,
            hyper.lam,
        )
        advantages.append(adv)
        returns.append(ret)
    x = np.array([rec.x_ext.x for rec in records])
    z = np.array([rec.x_ext.z for rec in records])
    y_ref = np.array([rec.y_ref for rec in records])
    main_in = scaler.main(x, y_ref, np.array([rec.error for rec in records]))
    z_in = scaler.z(z)
    return RolloutBatch(
        main_in=main_in,
        z_in=z_in,
        value_in=np.hstack([main_in, z_in]),
        prior=np.array([rec.prior for rec in records]),
        u=np.array([rec.u for rec in records]),
        log_prob_old=np.array([rec.log_prob_old for rec in records]),
        rewards=np.array([rec.reward for rec in records]),
        values=np.array([rec.value_pred for rec in records]),
        advantages=normalize_advantages(np.concatenate(advantages)),
        returns=np.concatenate(returns),
        episode_lengths=[len(episode) for episode in episodes],
    )


def clipped_surrogate(ratio: np.ndarray, advantages: np.ndarray, clip: float) -> np.ndarray:
    """Per-sample min(rho * A, clip(rho, 1 - eps, 1 + eps) * A)."""
    return np.minimum(
        ratio * advantages, np.clip(ratio, 1.0 - clip, 1.0 + clip) * advantages
    )


@dataclass(frozen=True)
class LossDiagnostics:
    policy_loss: float
    value_loss: float
    entropy: float
    clip_frac: float
    approx_kl: float


@dataclass(frozen=True)
class LossEvaluation:
    loss: float
    diagnostics: LossDiagnostics
    policy_grad: np.ndarray | None = None
    value_grad: np.ndarray | None = None


def _check_term(name: str, value: float) -> None:
    if not np.isfinite(value):
        raise NumericError(f"non-finite {name} in PPO loss: {value}", term=name)


def evaluate_loss(
    batch: RolloutBatch,
    policy: GaussianPolicy,
    value_net: ValueNet,
    hyper: PpoHyper,
    with_grad: bool = False,
) -> LossEvaluation:
    n = len(batch)
    if n == 0:
        raise StructuralError("empty minibatch")
    g, mean_cache = policy.mean_net.forward_cached(batch.main_in, batch.z_in)
    mean = batch.prior + g
    log_prob = gaussian_log_prob(mean, policy.log_std, batch.u)
    log_ratio = log_prob - batch.log_prob_old
    ratio = np.exp(log_ratio)
    surrogate = clipped_surrogate(ratio, batch.advantages, hyper.clip)
    policy_loss = -float(np.mean(surrogate))

    values, value_cache = value_net.forward_cached(batch.value_in)
    value_error = values - batch.returns
    value_loss = float(np.mean(value_error * value_error))
    entropy = policy.entropy()

    _check_term("surrogate", policy_loss)
    _check_term("value_loss", value_loss)
    _check_term("entropy", entropy)
    loss = policy_loss + hyper.c1 * value_loss - hyper.c2 * entropy
    _check_term("loss", loss)

    diagnostics = LossDiagnostics(
        policy_loss=policy_loss,
        value_loss=value_loss,
        entropy=entropy,
        clip_frac=float(np.mean(np.abs(ratio - 1.0) > hyper.clip)),
        approx_kl=float(np.mean((ratio - 1.0) - log_ratio)),
    )
    if not with_grad:
        return LossEvaluation(loss, diagnostics)

    in_range = np.abs(ratio - 1.0) <= hyper.clip
    unclipped = ratio * batch.advantages <= np.clip(
        ratio, 1.0 - hyper.clip, 1.0 + hyper.clip
    ) * batch.advantages
    d_surrogate = np.where(unclipped | in_range, batch.advantages, 0.0)
    d_log_prob = -d_surrogate * ratio / n

    variance = np.exp(2.0 * policy.log_std)
    diff = batch.u - mean
    d_mean = d_log_prob[:, None] * diff / variance
    net_grad = policy.mean_net.backward(mean_cache, d_mean)
    log_std_grad = (
        np.sum(d_log_prob[:, None] * (diff * diff / variance - 1.0), axis=0) - hyper.c2
    )
    value_grad = value_net.backward(value_cache, hyper.c1 * 2.0 * value_error / n)
    return LossEvaluation(
        loss,
        diagnostics,
        policy_grad=np.concatenate([net_grad, log_std_grad]),
        value_grad=value_grad,
    )


def ppo_loss(
    batch: RolloutBatch,
    policy: GaussianPolicy,
    value_net: ValueNet,
    hyper: PpoHyper,
) -> tuple[float, LossDiagnostics]:
    evaluation = evaluate_loss(batch, policy, value_net, hyper)
    return evaluation.loss, evaluation.diagnostics


@dataclass(frozen=True)
class OptimizerStates:
    policy: AdamState
    value: AdamState

    @classmethod
    def fresh(
        cls: type["OptimizerStates"],
        policy: GaussianPolicy,
        value_net: ValueNet,
        stepsize: float,
    ) -> "OptimizerStates":
        return cls(
            policy=AdamState.fresh(policy.size, stepsize),
            value=AdamState.fresh(value_net.size, stepsize),
        )


@dataclass(frozen=True)
class UpdateDiagnostics:
    policy_loss: float
    value_loss: float
    entropy: float
    clip_frac: float
    approx_kl: float
    sigma: float
    minibatches: int


def update(
    policy: GaussianPolicy,
    value_net: ValueNet,
    batch: RolloutBatch,
    hyper: PpoHyper,
    optimizers: OptimizerStates,
    rng: np.random.Generator,
) -> tuple[OptimizerStates, UpdateDiagnostics]:
    """
    Run `epochs` passes of shuffled minibatches with one Adam step each.

    On a numeric failure the policy and value parameters are restored to
    their values before the call and the error is re-raised.
    """
    policy_before = policy.get_flat().copy()
    value_before = value_net.params.copy()
    policy_state, value_state = optimizers.policy, optimizers.value
    totals = np.zeros(5)
    count = 0
    try:
        for _ in range(hyper.epochs):
            order = rng.permutation(len(batch))
            for start in range(0, len(batch), hyper.minibatch):
                minibatch = batch.subset(order[start : start + hyper.minibatch])
                evaluation = evaluate_loss(minibatch, policy, value_net, hyper, with_grad=True)
                new_policy, policy_state = adam_step(
                    policy_state, policy.get_flat(), evaluation.policy_grad
                )
                policy.set_flat(new_policy)
                value_net.params, value_state = adam_step(
                    value_state, value_net.params, evaluation.value_grad
                )
                d = evaluation.diagnostics
                totals += (d.policy_loss, d.value_loss, d.entropy, d.clip_frac, d.approx_kl)
                count += 1
    except PimeError:
        policy.set_flat(policy_before)
        value_net.params = value_before
        logger.error("PPO update aborted, parameters restored", exc_info=True)
        raise
    means = totals / max(count, 1)
    return OptimizerStates(policy_state, value_state), UpdateDiagnostics(
        policy_loss=float(means[0]),
        value_loss=float(means[1]),
        entropy=float(means[2]),
        clip_frac=float(means[3]),
        approx_kl=float(means[4]),
        sigma=float(np.mean(policy.sigma)),
        minibatches=count,
    )
