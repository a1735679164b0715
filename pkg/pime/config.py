from __future__ import annotations

import math
from dataclasses import dataclass, field

from django.conf import settings

from .control import DEFAULT_INTEGRATOR_BOUNDS, PriorController, PriorKind
from .envsim import (
    BOX_PARAMETERS,
    DEFAULT_DT,
    DEFAULT_FIXED,
    DEFAULT_RANGES,
    DYNAMICS_PARAMETERS,
    EnsembleSpec,
    PlantKind,
    ResetSpec,
    SetpointSpec,
    default_levels,
)
from .neuralnet import DEFAULT_LOG_STD_BOUNDS
from .ppo_core import PpoHyper


@dataclass(frozen=True)
class NetworkSizes:
    main: tuple[int, ...] = (64, 64)
    z: tuple[int, ...] = (16, 16)
    trunk: tuple[int, ...] = (64, 64)
    value: tuple[int, ...] = (64, 64)


@dataclass(frozen=True)
class NormalizationRanges:
    state_low: tuple[float, ...]
    state_high: tuple[float, ...]
    setpoint_low: float
    setpoint_high: float
    # Control error is fed to the networks divided by this.
    error_scale: float = 1.0

    def __post_init__(self: "NormalizationRanges") -> None:
        if not self.error_scale > 0:
            raise ValueError(f"error scale must be positive, got {self.error_scale}")


@dataclass(frozen=True)
class EvalSettings:
    models: int = 50
    steady_fraction: float = 0.25
    settle_tol: float = 0.2
    sensitivity_step: float = 1.0
    leak: float = 0.0

    def __post_init__(self: "EvalSettings") -> None:
        if not 0 < self.steady_fraction <= 1:
            raise ValueError(f"steady_fraction must be in (0, 1], got {self.steady_fraction}")
        if self.models < 1:
            raise ValueError(f"eval models must be >= 1, got {self.models}")
        if not self.sensitivity_step > 0:
            raise ValueError(f"sensitivity step must be positive, got {self.sensitivity_step}")


@dataclass(frozen=True)
class ExperimentConfig:
    plant: str
    ensemble: EnsembleSpec
    setpoints: SetpointSpec
    reset: ResetSpec
    prior: PriorController
    ppo: PpoHyper
    normalization: NormalizationRanges
    horizon: int
    episodes_per_iteration: int = 5
    total_steps: int = 400_000
    seed: int = 0
    integrator_bounds: tuple[float, float] = DEFAULT_INTEGRATOR_BOUNDS
    output_dir: str = ""
    disable_prior: bool = False
    fix_single_model: bool = False
    checkpoint_every: int = 10
    log_std_init: float = 0.0
    log_std_bounds: tuple[float, float] = DEFAULT_LOG_STD_BOUNDS
    networks: NetworkSizes = field(default_factory=NetworkSizes)
    value_scale: float = 1.0
    evaluation: EvalSettings = field(default_factory=EvalSettings)

    def __post_init__(self: "ExperimentConfig") -> None:
        if self.plant != self.ensemble.kind:
            raise ValueError(f"ensemble is for {self.ensemble.kind}, config for {self.plant}")
        if self.horizon < 1 or self.episodes_per_iteration < 1:
            raise ValueError("horizon and episodes_per_iteration must be >= 1")
        if self.total_steps % self.steps_per_iteration:
            raise ValueError(
                f"total_steps={self.total_steps} is not divisible by "
                f"M*T={self.steps_per_iteration}"
            )
        if self.checkpoint_every < 1:
            raise ValueError("checkpoint_every must be >= 1")
        low, high = self.integrator_bounds
        if not low < 0 < high:
            raise ValueError(f"integrator bounds must bracket 0, got {self.integrator_bounds}")
        if not self.value_scale > 0:
            raise ValueError(f"value scale must be positive, got {self.value_scale}")

    @property
    def steps_per_iteration(self: "ExperimentConfig") -> int:
        return self.horizon * self.episodes_per_iteration

    @property
    def iterations(self: "ExperimentConfig") -> int:
        return self.total_steps // self.steps_per_iteration

    @property
    def state_dim(self: "ExperimentConfig") -> int:
        return len(self.normalization.state_low)


def default_config(plant: str = PlantKind.TANKS) -> ExperimentConfig:
    """Defaults for one plant, with the published hyperparameters."""
    if plant not in DYNAMICS_PARAMETERS:
        raise ValueError(f"unknown plant {plant!r}")
    fixed = dict(DEFAULT_FIXED[plant])
    u_low, u_high = fixed["u_range"]
    ensemble = EnsembleSpec(
        kind=plant, ranges=DEFAULT_RANGES[plant], fixed=fixed, dt=DEFAULT_DT[plant]
    )
    checkpoint_every = getattr(settings, "PIME_CHECKPOINT_EVERY", 10)
    if plant == PlantKind.TANKS:
        l_max = fixed["l_max"]
        return ExperimentConfig(
            plant=plant,
            ensemble=ensemble,
            setpoints=SetpointSpec(1.0, 12.0, default_levels(1.0, 12.0), 100),
            reset=ResetSpec(0.0, 15.0),
            prior=PriorController(kp=0.5, ki=0.0, kind=PriorKind.P),
            ppo=PpoHyper.for_plant(plant),
            normalization=NormalizationRanges((0.0, 0.0), (l_max, l_max), 1.0, 12.0, 5.5),
            horizon=200,
            checkpoint_every=checkpoint_every,
            log_std_init=math.log(0.02 * (u_high - u_low)),
            value_scale=1000.0,
            evaluation=EvalSettings(settle_tol=0.2),
        )
    return ExperimentConfig(
        plant=plant,
        ensemble=ensemble,
        setpoints=SetpointSpec(4.0, 10.0, default_levels(4.0, 10.0), 50),
        reset=ResetSpec(0.0, 0.04),
        prior=PriorController(kp=-0.001, ki=-0.00005, kind=PriorKind.PI),
        ppo=PpoHyper.for_plant(plant),
        normalization=NormalizationRanges((0.0,), (fixed["hcl_max"],), 4.0, 10.0, 3.0),
        horizon=50,
        checkpoint_every=checkpoint_every,
        log_std_init=math.log(0.02 * (u_high - u_low)),
        value_scale=100.0,
        evaluation=EvalSettings(settle_tol=0.2),
    )


def _fmt(value: object) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (tuple, list)):
        return ", ".join(_fmt(v) for v in value)
    return str(value)


def config_to_mapping(config: ExperimentConfig) -> dict[str, str]:
    """Flat `key -> value` strings in the experiment-file format, in file order."""
    ens = config.ensemble
    kind = config.plant
    state_max = ens.fixed["l_max"] if kind == PlantKind.TANKS else ens.fixed["hcl_max"]
    u_low, u_high = ens.fixed["u_range"]
    ranges = {name: (low, high) for name, low, high in ens.ranges}
    mapping: dict[str, object] = {
        "plant": str(kind),
        "seed": config.seed,
        "horizon": config.horizon,
        "episodes_per_iteration": config.episodes_per_iteration,
        "total_steps": config.total_steps,
        "checkpoint_every": config.checkpoint_every,
        "output_dir": config.output_dir,
        "plant.dt": float(ens.sampling_period),
        "plant.substeps": ens.substeps,
        "plant.noise_std": tuple(float(v) for v in ens.noise_std) or 0.0,
        "plant.u_min": float(u_low),
        "plant.u_max": float(u_high),
        "plant.state_max": float(state_max),
    }
    for name in DYNAMICS_PARAMETERS[kind]:
        if name in ranges:
            mapping[f"ensemble.{name}"] = tuple(float(v) for v in ranges[name])
        else:
            mapping[f"ensemble.{name}"] = float(ens.fixed[name])
    sp = config.setpoints
    norm = config.normalization
    mapping.update(
        {
            "setpoint.low": float(sp.low),
            "setpoint.high": float(sp.high),
            "setpoint.levels": tuple(float(v) for v in sp.eval_levels),
            "setpoint.segment_len": sp.segment_len,
            "reset.low": float(config.reset.low),
            "reset.high": float(config.reset.high),
            "prior.kind": str(config.prior.kind),
            "prior.kp": float(config.prior.kp),
            "prior.ki": float(config.prior.ki),
            "integrator.low": float(config.integrator_bounds[0]),
            "integrator.high": float(config.integrator_bounds[1]),
            "ppo.gamma": float(config.ppo.gamma),
            "ppo.lam": float(config.ppo.lam),
            "ppo.clip": float(config.ppo.clip),
            "ppo.c1": float(config.ppo.c1),
            "ppo.c2": float(config.ppo.c2),
            "ppo.epochs": config.ppo.epochs,
            "ppo.minibatch": config.ppo.minibatch,
            "ppo.stepsize": float(config.ppo.stepsize),
            "policy.log_std_init": float(config.log_std_init),
            "policy.log_std_min": float(config.log_std_bounds[0]),
            "policy.log_std_max": float(config.log_std_bounds[1]),
            "net.main": config.networks.main,
            "net.z": config.networks.z,
            "net.trunk": config.networks.trunk,
            "net.value": config.networks.value,
            "value.scale": float(config.value_scale),
            "norm.state_low": tuple(float(v) for v in norm.state_low),
            "norm.state_high": tuple(float(v) for v in norm.state_high),
            "norm.setpoint_low": float(norm.setpoint_low),
            "norm.setpoint_high": float(norm.setpoint_high),
            "norm.error_scale": float(norm.error_scale),
            "ablation.disable_prior": config.disable_prior,
            "ablation.fix_single_model": config.fix_single_model,
            "eval.models": config.evaluation.models,
            "eval.steady_fraction": float(config.evaluation.steady_fraction),
            "eval.settle_tol": float(config.evaluation.settle_tol),
            "eval.sensitivity_step": float(config.evaluation.sensitivity_step),
            "eval.leak": float(config.evaluation.leak),
        }
    )
    return {key: _fmt(value) for key, value in mapping.items()}


def config_to_text(config: ExperimentConfig) -> str:
    lines = [f"# {PlantKind(config.plant).label} experiment"]
    lines += [f"{key} = {value}" for key, value in config_to_mapping(config).items()]
    return "\n".join(lines) + "\n"


def box_fixed(plant: str, state_max: float, u_min: float, u_max: float) -> dict[str, object]:
    """Fixed box and actuator entries of an ensemble spec."""
    names = BOX_PARAMETERS[plant]
    return {names[0]: state_max, names[1]: (u_min, u_max)}
