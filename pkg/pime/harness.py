"""
Experiment orchestration: the composed controller, episodes, the ensemble
training loop, evaluation metrics and report comparison.

Random streams are keyed on (seed, stream, ...) so every episode and every
evaluation model is reproducible on its own, whatever order workers finish in.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence, TypeVar

import numpy as np
from django.conf import settings

from .config import ExperimentConfig, config_to_text
from .control import IntegratorState, extend, prior_action, saturate, update_integrator
from .envsim import (
    PlantKind,
    PlantModel,
    reward,
    sample_initial_state,
    sample_model,
    sample_setpoint,
)
from .exceptions import NumericError, SimulationFault, StructuralError
from .exports import (
    METRICS,
    REPORT_HEADER,
    TRAJECTORY_HEADER,
    DiagnosticsWriter,
    read_rows,
    read_weights,
    write_rows,
    write_weights,
)
from .neuralnet import GaussianPolicy, ModularNet, ObservationScaler, ValueNet
from .ppo_core import OptimizerStates, TransitionRecord, build_batch, update

logger = logging.getLogger(__name__)

INIT_STREAM = 0
ROLLOUT_STREAM = 1
SHUFFLE_STREAM = 2
FIXED_MODEL_STREAM = 3
EVAL_STREAM = 4

T = TypeVar("T")
R = TypeVar("R")


def substream(seed: int, *tags: int) -> np.random.Generator:
    return np.random.default_rng([seed, *tags])


def map_ordered(fn: Callable[[T], R], items: Iterable[T], workers: int | None = None) -> list[R]:
    """Map over items, optionally on a thread pool; results keep input order."""
    workers = workers if workers is not None else getattr(settings, "PIME_ROLLOUT_WORKERS", 1)
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def build_scaler(config: ExperimentConfig) -> ObservationScaler:
    norm = config.normalization
    low, high = config.integrator_bounds
    return ObservationScaler(
        low=np.array([*norm.state_low, norm.setpoint_low], dtype=float),
        high=np.array([*norm.state_high, norm.setpoint_high], dtype=float),
        z_bound=max(abs(low), abs(high)),
        error_scale=norm.error_scale,
    )


class Agent:
    """
    Composed controller: prior law plus the learned residual, and the value
    network used for training. Either network may be absent; without a
    policy the agent is the prior controller alone.
    """

    def __init__(
        self: "Agent",
        config: ExperimentConfig,
        policy: GaussianPolicy | None,
        value_net: ValueNet | None = None,
        disable_prior: bool | None = None,
    ) -> None:
        self.config = config
        self.policy = policy
        self.value_net = value_net
        self.scaler = build_scaler(config)
        self.disable_prior = config.disable_prior if disable_prior is None else disable_prior

    @classmethod
    def create(cls: type["Agent"], config: ExperimentConfig) -> "Agent":
        rng = substream(config.seed, INIT_STREAM)
        u_low, u_high = config.ensemble.fixed["u_range"]
        n_main = build_scaler(config).width
        sizes = config.networks
        mean_net = ModularNet(
            n_main,
            n_out=1,
            main_sizes=sizes.main,
            z_sizes=sizes.z,
            trunk_sizes=sizes.trunk,
            output_scale=0.5 * (u_high - u_low),
            rng=rng,
        )
        policy = GaussianPolicy(mean_net, config.log_std_init, config.log_std_bounds)
        value_net = ValueNet(n_main + 1, sizes.value, config.value_scale, rng=rng)
        return cls(config, policy, value_net)

    @classmethod
    def prior_only(cls: type["Agent"], config: ExperimentConfig) -> "Agent":
        return cls(config, policy=None, disable_prior=False)

    @classmethod
    def load(cls: type["Agent"], config: ExperimentConfig, weights: str | Path) -> "Agent":
        agent = cls.create(config)
        params, log_std = read_weights(weights, agent.policy.mean_net.layout)
        if log_std is None:
            log_std = agent.policy.log_std
        agent.policy.set_flat(np.concatenate([params, log_std]))
        return agent

    @property
    def label(self: "Agent") -> str:
        if self.policy is None:
            return "prior"
        if self.disable_prior:
            return "ime"
        if self.config.fix_single_model:
            return "single"
        return "pime"

    def mean_actions(
        self: "Agent",
        x: np.ndarray,
        z: np.ndarray,
        y_ref: np.ndarray,
        eps: np.ndarray,
    ) -> tuple[np.ndarray, np.ndarray]:
        """Deterministic composed mean and the prior term, one row per state."""
        x = np.atleast_2d(x)
        z = np.reshape(np.asarray(z, dtype=float), -1)
        eps = np.reshape(np.asarray(eps, dtype=float), -1)
        if self.disable_prior:
            prior = np.zeros((x.shape[0], 1))
        else:
            prior = np.reshape(prior_action(self.config.prior, eps, z), (-1, 1))
        if self.policy is None:
            return prior, prior
        main_in = self.scaler.main(x, y_ref, eps)
        residual = self.policy.mean_net.forward(main_in, self.scaler.z(z))
        return prior + residual, prior

    def mean_action(
        self: "Agent", x: np.ndarray, z: float, y_ref: float, eps: float
    ) -> tuple[np.ndarray, np.ndarray]:
        mean, prior = self.mean_actions(x, [z], [y_ref], [eps])
        return mean[0], prior[0]

    def values(
        self: "Agent", x: np.ndarray, z: np.ndarray, y_ref: np.ndarray, eps: np.ndarray
    ) -> np.ndarray:
        if self.value_net is None:
            return np.zeros(np.atleast_2d(x).shape[0])
        main_in = self.scaler.main(x, y_ref, eps)
        return self.value_net.forward(np.hstack([main_in, self.scaler.z(z)]))

    def save(self: "Agent", directory: str | Path, name: str) -> Path:
        directory = Path(directory)
        net = self.policy.mean_net
        path = write_weights(
            directory / f"policy_{name}.txt", net.layout, net.params, self.policy.log_std
        )
        write_weights(
            directory / f"value_{name}.txt", self.value_net.layout, self.value_net.params
        )
        return path


@dataclass
class EpisodeTrace:
    model_id: int
    states: list[np.ndarray] = field(default_factory=list)
    y: list[float] = field(default_factory=list)
    y_ref: list[float] = field(default_factory=list)
    u: list[float] = field(default_factory=list)
    z: list[float] = field(default_factory=list)
    rewards: list[float] = field(default_factory=list)
    records: list[TransitionRecord] = field(default_factory=list)
    bootstrap: float = 0.0

    def __len__(self: "EpisodeTrace") -> int:
        return len(self.rewards)

    @property
    def episodic_return(self: "EpisodeTrace") -> float:
        return float(np.sum(self.rewards))

    def rows(self: "EpisodeTrace", seed: int) -> list[dict[str, object]]:
        return [
            {
                "t": t,
                "y": self.y[t],
                "y_ref": self.y_ref[t],
                "u": self.u[t],
                "z": self.z[t],
                "reward": self.rewards[t],
                "model_id": self.model_id,
                "seed": seed,
            }
            for t in range(len(self))
        ]


def run_episode(
    model: PlantModel,
    agent: Agent,
    reference: float | Sequence[float],
    config: ExperimentConfig,
    rng: np.random.Generator,
    x0: np.ndarray | None = None,
    deterministic: bool = False,
) -> EpisodeTrace:
    """
    Roll the composed controller on one plant model.

    A scalar `reference` is held for `config.horizon` steps; a sequence gives
    one set-point per step. Without `x0` the initial state is drawn from the
    reset distribution. Actions are sampled around the composed mean unless
    `deterministic` is set or the agent has no policy.
    """
    refs = (
        np.full(config.horizon, float(reference))
        if np.ndim(reference) == 0
        else np.asarray(reference, dtype=float)
    )
    if refs.size == 0:
        raise StructuralError("episode reference is empty")
    x = sample_initial_state(config.reset, model, rng) if x0 is None else np.array(x0, float)
    integrator = IntegratorState(0.0, config.integrator_bounds)
    trace = EpisodeTrace(model_id=model.model_id)
    means, priors, samples, log_probs = [], [], [], []
    y = model.output(x)
    for t, y_ref in enumerate(refs):
        mean, prior = agent.mean_action(x, integrator.z, y_ref, y_ref - y)
        if deterministic or agent.policy is None:
            u_raw, log_prob = mean, 0.0
        else:
            u_raw, log_prob = agent.policy.sample_action(mean, rng)
        u = saturate(float(u_raw[0]), model.u_range)
        try:
            x_next = model.step(x, u, model.draw_noise(rng))
            y_next = model.output(x_next)
        except SimulationFault as fault:
            raise fault.at_step(t) from fault
        except NumericError:
            logger.error("Output map failed", extra={"step": t, "model_id": model.model_id})
            raise
        trace.states.append(x)
        trace.y.append(y)
        trace.y_ref.append(float(y_ref))
        trace.u.append(u)
        trace.z.append(integrator.z)
        trace.rewards.append(reward(y_next, y_ref))
        means.append(mean)
        priors.append(prior)
        samples.append(np.array(u_raw, dtype=float))
        log_probs.append(log_prob)
        integrator = update_integrator(integrator, y_ref - y_next)
        x, y = x_next, y_next

    states = np.vstack([*trace.states, x])
    zs = np.array([*trace.z, integrator.z])
    refs_next = np.append(refs, refs[-1])
    values = agent.values(states, zs, refs_next, refs_next - np.array([*trace.y, y]))
    trace.bootstrap = float(values[-1])
    horizon = len(refs)
    for t in range(horizon):
        trace.records.append(
            TransitionRecord(
                x_ext=extend(trace.states[t], trace.z[t]),
                y_ref=trace.y_ref[t],
                u=samples[t],
                log_prob_old=log_probs[t],
                reward=trace.rewards[t],
                value_pred=float(values[t]),
                done=t == horizon - 1,
                prior=priors[t],
                next_x_ext=extend(states[t + 1], zs[t + 1]),
                error=trace.y_ref[t] - trace.y[t],
            )
        )
    return trace


def training_episode(
    agent: Agent,
    config: ExperimentConfig,
    iteration: int,
    index: int,
    fixed_model: PlantModel | None = None,
) -> EpisodeTrace:
    """
    Episode `index` of `iteration`. The model, set-point, initial state and
    noise are drawn in that order from the episode's own stream, so runs that
    differ only in the controller see matched episodes.
    """
    rng = substream(config.seed, ROLLOUT_STREAM, iteration, index)
    model_id = iteration * config.episodes_per_iteration + index
    model = sample_model(config.ensemble, rng, model_id=model_id)
    if fixed_model is not None:
        model = fixed_model
    y_ref = sample_setpoint(config.setpoints, rng)
    x0 = sample_initial_state(config.reset, model, rng)
    return run_episode(model, agent, y_ref, config, rng, x0=x0)


def collect_iteration(
    agent: Agent,
    config: ExperimentConfig,
    iteration: int,
    fixed_model: PlantModel | None = None,
    workers: int | None = None,
) -> list[EpisodeTrace]:
    return map_ordered(
        lambda index: training_episode(agent, config, iteration, index, fixed_model),
        range(config.episodes_per_iteration),
        workers,
    )


@dataclass
class TrainingResult:
    agent: Agent
    diagnostics: list[dict[str, float]]
    checkpoint: Path | None
    output_dir: Path


def train(
    config: ExperimentConfig,
    output_dir: str | Path | None = None,
    workers: int | None = None,
    on_iteration: Callable[[dict[str, float]], None] | None = None,
) -> TrainingResult:
    """
    Run the ensemble training loop.

    Each iteration collects `episodes_per_iteration` episodes, each on its
    own sampled model and set-point, and runs one PPO update on the batch.
    Diagnostics are appended after every iteration; weights are saved every
    `checkpoint_every` iterations and after the last one.

    Args:
        config: Validated experiment.
        output_dir: Run directory; falls back to `config.output_dir`.
        workers: Rollout threads; defaults to `PIME_ROLLOUT_WORKERS`.
        on_iteration: Called with each diagnostics row.

    Returns:
        The trained agent, the diagnostics rows and the final checkpoint.
    """
    out = Path(output_dir or config.output_dir or settings.PIME_OUTPUT_DIR)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(config_to_text(config), encoding="utf-8")
    agent = Agent.create(config)
    optimizers = OptimizerStates.fresh(agent.policy, agent.value_net, config.ppo.stepsize)
    fixed_model = None
    if config.fix_single_model:
        fixed_model = sample_model(config.ensemble, substream(config.seed, FIXED_MODEL_STREAM))
    checkpoint_dir = out / "checkpoints"
    checkpoint = None
    rows: list[dict[str, float]] = []
    logger.info(
        "Training started",
        extra={
            "plant": config.plant,
            "seed": config.seed,
            "iterations": config.iterations,
            "path": str(out),
        },
    )
    with DiagnosticsWriter(out / "diagnostics.csv") as writer:
        for iteration in range(config.iterations):
            episodes = collect_iteration(agent, config, iteration, fixed_model, workers)
            batch = build_batch(
                [episode.records for episode in episodes],
                [episode.bootstrap for episode in episodes],
                agent.scaler,
                config.ppo,
            )
            try:
                optimizers, diag = update(
                    agent.policy,
                    agent.value_net,
                    batch,
                    config.ppo,
                    optimizers,
                    substream(config.seed, SHUFFLE_STREAM, iteration),
                )
            except NumericError:
                logger.error(
                    "Training aborted",
                    extra={"iteration": iteration, "checkpoint": str(checkpoint)},
                )
                raise
            returns = np.array([episode.episodic_return for episode in episodes])
            row = {
                "iteration": iteration,
                "env_steps": (iteration + 1) * config.steps_per_iteration,
                "mean_return": float(returns.mean()),
                "std_return": float(returns.std()),
                "policy_loss": diag.policy_loss,
                "value_loss": diag.value_loss,
                "entropy": diag.entropy,
                "clip_frac": diag.clip_frac,
                "approx_kl": diag.approx_kl,
                "sigma": diag.sigma,
            }
            writer.write(row)
            rows.append(row)
            logger.info(
                "Iteration finished",
                extra={
                    "iteration": iteration,
                    "env_steps": row["env_steps"],
                    "mean_return": row["mean_return"],
                },
            )
            done = iteration + 1
            if done % config.checkpoint_every == 0 or done == config.iterations:
                checkpoint = agent.save(checkpoint_dir, f"iter_{done:04d}")
                agent.save(out, "final" if done == config.iterations else "latest")
            if on_iteration is not None:
                on_iteration(row)
    final = out / "policy_final.txt"
    return TrainingResult(agent, rows, final if final.exists() else checkpoint, out)


@dataclass(frozen=True)
class SegmentMetrics:
    model_index: int
    model_id: int
    segment: int
    y_ref: float
    episodic_return: float
    steady_state_error: float
    overshoot: float
    settling_steps: int
    sensitivity: float = 0.0


def overshoot(y: np.ndarray, y_ref: float) -> float:
    """Largest excursion past the set-point after the output first reaches it."""
    err = y_ref - np.asarray(y, dtype=float)
    moving = np.nonzero(err)[0]
    if moving.size == 0:
        return 0.0
    past = -np.sign(err[moving[0]]) * err
    crossed = np.nonzero(past >= 0)[0]
    if crossed.size == 0:
        return 0.0
    return float(max(0.0, past[crossed[0] :].max()))


def settling_steps(y: np.ndarray, y_ref: float, tol: float) -> int:
    """First index after which |y_ref - y| stays within tol; len(y) if never."""
    outside = np.nonzero(np.abs(y_ref - np.asarray(y, dtype=float)) > tol)[0]
    return 0 if outside.size == 0 else int(outside[-1]) + 1


def segment_metrics(
    trace: EpisodeTrace,
    segment_len: int,
    steady_fraction: float,
    settle_tol: float,
    model_index: int = 0,
    sensitivity: float = 0.0,
) -> list[SegmentMetrics]:
    y = np.asarray(trace.y)
    rewards = np.asarray(trace.rewards)
    if y.size % segment_len:
        raise StructuralError(f"trace of {y.size} steps is not made of {segment_len}-step segments")
    window = max(1, int(round(segment_len * steady_fraction)))
    metrics = []
    for segment in range(y.size // segment_len):
        part = slice(segment * segment_len, (segment + 1) * segment_len)
        level = trace.y_ref[part.start]
        ys = y[part]
        metrics.append(
            SegmentMetrics(
                model_index=model_index,
                model_id=trace.model_id,
                segment=segment,
                y_ref=level,
                episodic_return=float(rewards[part].sum()),
                steady_state_error=float(np.mean(np.abs(level - ys[-window:]))),
                overshoot=overshoot(ys, level),
                settling_steps=settling_steps(ys, level, settle_tol),
                sensitivity=sensitivity,
            )
        )
    return metrics


def action_sensitivity(agent: Agent, trace: EpisodeTrace, step: float) -> float:
    """Mean |d mean_action / dz| over the visited states, by central difference."""
    if not step > 0:
        raise ValueError(f"sensitivity step must be positive, got {step}")
    x = np.vstack(trace.states)
    z = np.asarray(trace.z)
    y_ref = np.asarray(trace.y_ref)
    eps = y_ref - np.asarray(trace.y)
    up, _ = agent.mean_actions(x, z + step, y_ref, eps)
    down, _ = agent.mean_actions(x, z - step, y_ref, eps)
    return float(np.mean(np.abs(up - down) / (2.0 * step)))


@dataclass
class EvalReport:
    label: str
    levels: tuple[float, ...]
    segment_len: int
    rows: list[SegmentMetrics]

    @property
    def models(self: "EvalReport") -> int:
        return len({row.model_index for row in self.rows})

    def model_returns(self: "EvalReport") -> np.ndarray:
        totals: dict[int, float] = {}
        for row in self.rows:
            totals[row.model_index] = totals.get(row.model_index, 0.0) + row.episodic_return
        return np.array([totals[key] for key in sorted(totals)])

    def summary(self: "EvalReport") -> dict[str, float]:
        returns = self.model_returns()
        return {
            "models": self.models,
            "mean_return": float(returns.mean()),
            "std_return": float(returns.std()),
            "mean_steady_state_error": float(np.mean([r.steady_state_error for r in self.rows])),
            "mean_overshoot": float(np.mean([r.overshoot for r in self.rows])),
            "mean_settling_steps": float(np.mean([r.settling_steps for r in self.rows])),
            "mean_sensitivity": float(np.mean([r.sensitivity for r in self.rows])),
        }

    def as_rows(self: "EvalReport") -> list[dict[str, object]]:
        return [
            {"label": self.label, "segment_len": self.segment_len, **vars(row)}
            for row in self.rows
        ]

    @classmethod
    def from_csv(cls: type["EvalReport"], path: str | Path) -> "EvalReport":
        raw = read_rows(path, REPORT_HEADER)
        if not raw:
            raise StructuralError(f"report {path} has no rows")
        labels = {row["label"] for row in raw}
        if len(labels) != 1:
            raise StructuralError(f"report {path} mixes labels {sorted(labels)}")
        lengths = {row["segment_len"] for row in raw}
        if len(lengths) != 1:
            raise StructuralError(f"report {path} mixes segment lengths {sorted(lengths)}")
        rows = [
            SegmentMetrics(
                model_index=int(row["model_index"]),
                model_id=int(row["model_id"]),
                segment=int(row["segment"]),
                y_ref=float(row["y_ref"]),
                episodic_return=float(row["episodic_return"]),
                steady_state_error=float(row["steady_state_error"]),
                overshoot=float(row["overshoot"]),
                settling_steps=int(row["settling_steps"]),
                sensitivity=float(row["sensitivity"]),
            )
            for row in raw
        ]
        first = rows[0].model_index
        levels = tuple(row.y_ref for row in rows if row.model_index == first)
        return cls(
            label=labels.pop(), levels=levels, segment_len=int(lengths.pop()), rows=rows
        )

    def write_csv(self: "EvalReport", path: str | Path) -> Path:
        return write_rows(path, REPORT_HEADER, self.as_rows())


def eval_model(config: ExperimentConfig, index: int) -> PlantModel:
    model = sample_model(config.ensemble, substream(config.seed, EVAL_STREAM, index), index)
    leak = config.evaluation.leak
    if leak:
        if config.plant != PlantKind.TANKS:
            logger.warning("eval.leak only applies to the tank plant", extra={"leak": leak})
        else:
            model = model.with_params(leak=leak)
    return model


def evaluate(
    agent: Agent,
    config: ExperimentConfig,
    n_models: int | None = None,
    label: str | None = None,
    output_dir: str | Path | None = None,
    workers: int | None = None,
) -> EvalReport:
    """
    Track the piecewise-constant evaluation trace on `n_models` ensemble draws
    with the deterministic composed action, starting each run from the lower
    reset bound. Trajectory CSVs go to `output_dir/trajectories` when given.
    """
    n_models = n_models or config.evaluation.models
    if n_models < 1:
        raise ValueError(f"n_models must be >= 1, got {n_models}")
    refs = config.setpoints.trace()
    if refs.size == 0:
        raise StructuralError("evaluation trace has no set-point levels")
    label = label or agent.label
    evaluation = config.evaluation

    def run(index: int) -> tuple[EpisodeTrace, list[SegmentMetrics]]:
        model = eval_model(config, index)
        box_low, box_high = model.state_box
        x0 = np.clip(np.full(model.state_dim, config.reset.low), box_low, box_high)
        trace = run_episode(
            model, agent, refs, config, substream(config.seed, EVAL_STREAM, index), x0, True
        )
        sensitivity = action_sensitivity(agent, trace, evaluation.sensitivity_step)
        metrics = segment_metrics(
            trace,
            config.setpoints.segment_len,
            evaluation.steady_fraction,
            evaluation.settle_tol,
            model_index=index,
            sensitivity=sensitivity,
        )
        return trace, metrics

    results = map_ordered(run, range(n_models), workers)
    if output_dir is not None:
        directory = Path(output_dir) / "trajectories"
        for index, (trace, _) in enumerate(results):
            write_rows(
                directory / f"{label}_model_{index:03d}.csv",
                TRAJECTORY_HEADER,
                trace.rows(config.seed),
            )
    report = EvalReport(
        label=label,
        levels=tuple(float(level) for level in config.setpoints.eval_levels),
        segment_len=config.setpoints.segment_len,
        rows=[row for _, metrics in results for row in metrics],
    )
    logger.info("Evaluation finished", extra={"label": label, **report.summary()})
    return report


def compare(reports: Sequence[EvalReport]) -> list[dict[str, object]]:
    """
    Per-segment mean and std of every metric across the reports sharing a
    label, with return and steady-state deltas against the first label.

    Each report is first reduced to its per-segment mean over models, so the
    std is the spread between runs (e.g. seeds) and not between models.
    """
    if not reports:
        raise StructuralError("nothing to compare")
    first = reports[0]
    levels = first.levels
    for report in reports[1:]:
        if len(report.levels) != len(levels) or not np.allclose(
            report.levels, levels, rtol=1e-8, atol=1e-12
        ):
            raise StructuralError(
                f"report {report.label!r} tracks {report.levels}, expected {levels}"
            )
        if report.segment_len != first.segment_len:
            raise StructuralError(
                f"report {report.label!r} uses {report.segment_len}-step segments, "
                f"expected {first.segment_len}"
            )
    grouped: dict[str, list[np.ndarray]] = {}
    for report in reports:
        grouped.setdefault(report.label, []).append(_segment_means(report, len(levels)))
    table = []
    baseline: dict[int, dict[str, object]] = {}
    for label, means in grouped.items():
        stacked = np.stack(means)
        for segment, level in enumerate(levels):
            entry: dict[str, object] = {
                "label": label,
                "segment": segment,
                "y_ref": level,
                "reports": len(means),
            }
            for column, metric in enumerate(METRICS):
                values = stacked[:, segment, column]
                entry[f"{metric}_mean"] = float(values.mean())
                entry[f"{metric}_std"] = float(values.std())
            base = baseline.setdefault(segment, entry)
            entry["delta_return"] = entry["episodic_return_mean"] - base["episodic_return_mean"]
            entry["delta_steady_state_error"] = (
                entry["steady_state_error_mean"] - base["steady_state_error_mean"]
            )
            table.append(entry)
    return table


def _segment_means(report: EvalReport, segments: int) -> np.ndarray:
    """(segments, metrics) array of model-averaged metrics."""
    means = np.empty((segments, len(METRICS)))
    for segment in range(segments):
        picked = [row for row in report.rows if row.segment == segment]
        if not picked:
            raise StructuralError(f"report {report.label!r} has no rows for segment {segment}")
        means[segment] = [np.mean([getattr(row, metric) for row in picked]) for metric in METRICS]
    return means
