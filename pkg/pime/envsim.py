"""
Plant simulators for the cascaded tank process and the pH neutralization
process, plus the ensemble and set-point samplers used for training.

Both plants are forward-Euler discretized with one step per sampling period
unless `substeps` says otherwise. States are clamped to their boxes after
every (sub)step.

The pH equilibrium is the charge balance
    [H+] + [Na+] + [NH4+] = [OH-] + [Cl-]
with [NH4+] = [NH3]tot * H / (H + K) and [OH-] = Kw / H, which multiplied by
H * (H + K) gives

    H^3 + (nh3 + naoh - hcl + K) H^2 + (K naoh - K hcl - Kw) H - K Kw = 0.

This cubic always has exactly one positive root. The form without a
first-degree term (`printed_cubic_coefficients`) is kept for comparison; it
has no positive root when NaOH exceeds HCl.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from django.db import models
from scipy.optimize import brentq

from .exceptions import NumericError, SimulationFault

logger = logging.getLogger(__name__)

HPLUS_BRACKET = (1e-16, 1.0)
_ROOT_RTOL = 4 * np.finfo(float).eps
_ROOT_MAXITER = 200


class PlantKind(models.TextChoices):
    TANKS = "tanks", "Cascaded tanks"
    PH = "ph", "pH neutralization"


@dataclass(frozen=True)
class TankParams:
    p1: float
    p2: float
    p3: float
    g: float = 981.0
    l_max: float = 25.0
    u_range: tuple[float, float] = (0.0, 10.0)
    # Extra outflow ratio of the upper tank (unmodelled disturbance), 0 in training.
    leak: float = 0.0

    def __post_init__(self: "TankParams") -> None:
        if not self.g > 0:
            raise ValueError(f"g must be positive, got {self.g}")
        if not self.l_max > 0:
            raise ValueError(f"l_max must be positive, got {self.l_max}")
        low, high = self.u_range
        if low < 0 or not low < high:
            raise ValueError(f"invalid actuator range {self.u_range}")
        if self.leak < 0:
            raise ValueError(f"leak must be non-negative, got {self.leak}")


@dataclass(frozen=True)
class PhParams:
    p1: float
    p2: float
    nh3: float = 0.01
    naoh: float = 0.01
    k_eq: float = 5.62e-10
    kw: float = 1e-14
    u_range: tuple[float, float] = (0.0, 0.01)
    hcl_max: float = 0.05

    def __post_init__(self: "PhParams") -> None:
        if not (self.k_eq > 0 and self.kw > 0):
            raise ValueError(
                f"equilibrium constants must be positive, got K={self.k_eq}, Kw={self.kw}"
            )
        if self.nh3 < 0 or self.naoh < 0:
            raise ValueError(
                f"concentrations must be non-negative, got nh3={self.nh3}, naoh={self.naoh}"
            )
        low, high = self.u_range
        if low < 0 or not low < high:
            raise ValueError(f"invalid actuator range {self.u_range}")
        if not self.hcl_max > 0:
            raise ValueError(f"hcl_max must be positive, got {self.hcl_max}")


PARAMS_CLASS: dict[str, type[TankParams] | type[PhParams]] = {
    PlantKind.TANKS: TankParams,
    PlantKind.PH: PhParams,
}

# Parameters that enter the dynamics and must be either randomized or fixed.
DYNAMICS_PARAMETERS: dict[str, tuple[str, ...]] = {
    PlantKind.TANKS: ("p1", "p2", "p3", "g", "leak"),
    PlantKind.PH: ("p1", "p2", "nh3", "naoh", "k_eq", "kw"),
}

# Box and actuator parameters; always fixed.
BOX_PARAMETERS: dict[str, tuple[str, ...]] = {
    PlantKind.TANKS: ("l_max", "u_range"),
    PlantKind.PH: ("hcl_max", "u_range"),
}

DEFAULT_DT = {PlantKind.TANKS: 2.0, PlantKind.PH: 20.0}

DEFAULT_RANGES: dict[str, tuple[tuple[str, float, float], ...]] = {
    PlantKind.TANKS: (
        ("p1", 0.0015, 0.0024),
        ("p2", 0.0015, 0.0024),
        ("p3", 0.07, 0.17),
    ),
    PlantKind.PH: (
        ("p1", 0.005, 0.015),
        ("p2", 0.0015, 0.0025),
    ),
}

DEFAULT_FIXED: dict[str, dict[str, object]] = {
    PlantKind.TANKS: {"g": 981.0, "leak": 0.0, "l_max": 25.0, "u_range": (0.0, 10.0)},
    PlantKind.PH: {
        "nh3": 0.01,
        "naoh": 0.01,
        "k_eq": 5.62e-10,
        "kw": 1e-14,
        "hcl_max": 0.05,
        "u_range": (0.0, 0.01),
    },
}

# Nominal (mid-range) model used for single-model evaluation.
NOMINAL_PARAMETERS: dict[str, dict[str, float]] = {
    PlantKind.TANKS: {"p1": 0.002, "p2": 0.002, "p3": 0.12},
    PlantKind.PH: {"p1": 0.01, "p2": 0.002},
}


@dataclass(frozen=True)
class PlantModel:
    kind: str
    params: TankParams | PhParams
    dt: float
    noise_std: tuple[float, ...] = ()
    substeps: int = 1
    model_id: int = 0

    def __post_init__(self: "PlantModel") -> None:
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.substeps < 1:
            raise ValueError(f"substeps must be >= 1, got {self.substeps}")
        if any(std < 0 for std in self.noise_std):
            raise ValueError(f"noise_std must be non-negative, got {self.noise_std}")
        if self.noise_std and len(self.noise_std) != self.state_dim:
            raise ValueError(
                f"noise_std has {len(self.noise_std)} entries for a "
                f"{self.state_dim}-dimensional state"
            )

    @property
    def state_dim(self: "PlantModel") -> int:
        return 2 if self.kind == PlantKind.TANKS else 1

    @property
    def u_range(self: "PlantModel") -> tuple[float, float]:
        return self.params.u_range

    @property
    def state_box(self: "PlantModel") -> tuple[np.ndarray, np.ndarray]:
        if self.kind == PlantKind.TANKS:
            high = self.params.l_max
        else:
            high = self.params.hcl_max
        return np.zeros(self.state_dim), np.full(self.state_dim, high)

    def output(self: "PlantModel", x: np.ndarray) -> float:
        """Measured output: lower tank level (cm) or pH."""
        if self.kind == PlantKind.TANKS:
            return float(x[1])
        return ph_output(float(x[0]), self.params)

    def draw_noise(self: "PlantModel", rng: np.random.Generator) -> np.ndarray | None:
        if not self.noise_std or not any(self.noise_std):
            return None
        return rng.standard_normal(self.state_dim) * np.asarray(self.noise_std)

    def step(
        self: "PlantModel", x: np.ndarray, u: float, noise: np.ndarray | None = None
    ) -> np.ndarray:
        if self.kind == PlantKind.TANKS:
            return step_tank(x, u, self, noise)
        return np.array([step_ph(float(x[0]), u, self, noise)])

    def with_params(self: "PlantModel", **changes: object) -> "PlantModel":
        return dataclasses.replace(
            self, params=dataclasses.replace(self.params, **changes)
        )


@dataclass(frozen=True)
class EnsembleSpec:
    kind: str
    ranges: tuple[tuple[str, float, float], ...]
    fixed: Mapping[str, object] = field(default_factory=dict)
    dt: float | None = None
    noise_std: tuple[float, ...] = ()
    substeps: int = 1

    def __post_init__(self: "EnsembleSpec") -> None:
        if self.kind not in DYNAMICS_PARAMETERS:
            raise ValueError(f"unknown plant kind {self.kind!r}")
        ranged = [name for name, _, _ in self.ranges]
        for name, low, high in self.ranges:
            if not low < high:
                raise ValueError(f"range for {name} must satisfy lower < upper")
        duplicated = sorted(set(ranged) & set(self.fixed))
        if duplicated or len(set(ranged)) != len(ranged):
            raise ValueError(f"parameters both ranged and fixed: {duplicated}")
        known = set(DYNAMICS_PARAMETERS[self.kind]) | set(BOX_PARAMETERS[self.kind])
        unknown = sorted((set(ranged) | set(self.fixed)) - known)
        if unknown:
            raise ValueError(f"unknown {self.kind} parameters: {unknown}")
        missing = sorted(
            set(DYNAMICS_PARAMETERS[self.kind]) - set(ranged) - set(self.fixed)
        )
        if missing:
            raise ValueError(f"dynamics parameters neither ranged nor fixed: {missing}")

    @property
    def sampling_period(self: "EnsembleSpec") -> float:
        return self.dt if self.dt is not None else DEFAULT_DT[self.kind]

    def build(self: "EnsembleSpec", values: Mapping[str, float], model_id: int = 0) -> PlantModel:
        """Create the model for explicit values of the ranged parameters."""
        params = PARAMS_CLASS[self.kind](**{**self.fixed, **values})
        return PlantModel(
            kind=self.kind,
            params=params,
            dt=self.sampling_period,
            noise_std=tuple(self.noise_std),
            substeps=self.substeps,
            model_id=model_id,
        )

    def nominal(self: "EnsembleSpec", model_id: int = 0) -> PlantModel:
        """Model with every ranged parameter at its interval midpoint."""
        return self.build(
            {name: 0.5 * (low + high) for name, low, high in self.ranges}, model_id
        )


@dataclass(frozen=True)
class SetpointSpec:
    low: float
    high: float
    eval_levels: tuple[float, ...] = ()
    segment_len: int = 100

    def __post_init__(self: "SetpointSpec") -> None:
        if self.low > self.high:
            raise ValueError(f"set-point interval [{self.low}, {self.high}] is empty")
        if self.segment_len < 1:
            raise ValueError(f"segment_len must be >= 1, got {self.segment_len}")
        outside = [lvl for lvl in self.eval_levels if not self.low <= lvl <= self.high]
        if outside:
            raise ValueError(f"evaluation levels outside [{self.low}, {self.high}]: {outside}")

    def trace(self: "SetpointSpec") -> np.ndarray:
        """Piecewise-constant evaluation reference, one entry per step."""
        return np.repeat(np.asarray(self.eval_levels, dtype=float), self.segment_len)


@dataclass(frozen=True)
class ResetSpec:
    low: float
    high: float

    def __post_init__(self: "ResetSpec") -> None:
        if self.low > self.high:
            raise ValueError(f"reset interval [{self.low}, {self.high}] is empty")


def default_levels(low: float, high: float, count: int = 5) -> tuple[float, ...]:
    """Centers of `count` equal bins of [low, high]."""
    width = (high - low) / count
    return tuple(round(low + (i + 0.5) * width, 10) for i in range(count))


def tank_derivative(l1: float, l2: float, u: float, p: TankParams) -> tuple[float, float]:
    if l1 < 0 or l2 < 0:
        raise ValueError(f"tank levels must be non-negative, got l1={l1}, l2={l2}")
    flow_1 = math.sqrt(2.0 * p.g * l1)
    flow_2 = math.sqrt(2.0 * p.g * l2)
    dl1 = -(p.p1 + p.leak) * flow_1 + p.p3 * u
    dl2 = p.p1 * flow_1 - p.p2 * flow_2
    return dl1, dl2


def _check_finite(values: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(values)):
        raise SimulationFault(f"non-finite {what}", values=[float(v) for v in values])


def step_tank(
    state: Sequence[float],
    u: float,
    model: PlantModel,
    noise: np.ndarray | None = None,
) -> np.ndarray:
    p = model.params
    levels = np.asarray(state, dtype=float)
    _check_finite(np.append(levels, u), "tank state or input")
    h = model.dt / model.substeps
    l1, l2 = float(levels[0]), float(levels[1])
    for _ in range(model.substeps):
        dl1, dl2 = tank_derivative(l1, l2, u, p)
        l1 = min(max(l1 + h * dl1, 0.0), p.l_max)
        l2 = min(max(l2 + h * dl2, 0.0), p.l_max)
    nxt = np.array([l1, l2])
    if noise is not None:
        nxt = np.clip(nxt + noise, 0.0, p.l_max)
    _check_finite(nxt, "tank state")
    return nxt


def step_ph(
    hcl: float,
    u: float,
    model: PlantModel,
    noise: np.ndarray | None = None,
) -> float:
    p = model.params
    _check_finite(np.array([hcl, u]), "[HCl] or input")
    if hcl < 0:
        raise ValueError(f"[HCl] must be non-negative, got {hcl}")
    h = model.dt / model.substeps
    for _ in range(model.substeps):
        hcl = min(max(hcl + h * (-p.p2 * hcl + p.p1 * u), 0.0), p.hcl_max)
    if noise is not None:
        hcl = min(max(hcl + float(noise[0]), 0.0), p.hcl_max)
    _check_finite(np.array([hcl]), "[HCl]")
    return hcl


def charge_balance_coefficients(
    nh3: float, naoh: float, hcl: float, k_eq: float, kw: float
) -> tuple[float, float, float, float]:
    return (
        1.0,
        nh3 + naoh - hcl + k_eq,
        k_eq * naoh - k_eq * hcl - kw,
        -k_eq * kw,
    )


def printed_cubic_coefficients(
    nh3: float, naoh: float, hcl: float, k_eq: float, kw: float
) -> tuple[float, float, float, float]:
    return (
        1.0,
        nh3 - hcl + naoh + k_eq,
        0.0,
        k_eq * naoh - k_eq * hcl - k_eq * kw,
    )


CUBIC_FORMS: dict[str, Callable[..., tuple[float, float, float, float]]] = {
    "charge_balance": charge_balance_coefficients,
    "printed": printed_cubic_coefficients,
}


def cubic_value(coefficients: Sequence[float], h: float) -> float:
    a3, a2, a1, a0 = coefficients
    return ((a3 * h + a2) * h + a1) * h + a0


def positive_cubic_root(
    coefficients: Sequence[float],
    bracket: tuple[float, float] = HPLUS_BRACKET,
) -> float:
    """Root of a cubic on a bracketing interval of positive values."""
    low, high = bracket
    f_low = cubic_value(coefficients, low)
    f_high = cubic_value(coefficients, high)
    if not (math.isfinite(f_low) and math.isfinite(f_high)):
        raise NumericError("cubic is not finite on the bracket", term="hplus")
    if f_low == 0.0:
        return low
    if f_high == 0.0:
        return high
    if (f_low > 0) == (f_high > 0):
        raise NumericError(
            f"cubic {tuple(coefficients)} has no sign change on {bracket}",
            term="hplus",
        )
    try:
        root, info = brentq(
            lambda h: cubic_value(coefficients, h),
            low,
            high,
            xtol=1e-300,
            rtol=_ROOT_RTOL,
            maxiter=_ROOT_MAXITER,
            full_output=True,
            disp=False,
        )
    except (RuntimeError, ValueError) as exc:
        raise NumericError(f"[H+] solver failed: {exc}", term="hplus") from exc
    if not info.converged:
        raise NumericError(
            f"[H+] solver did not converge after {info.iterations} iterations",
            term="hplus",
        )
    return float(root)


def solve_hplus(
    nh3: float,
    naoh: float,
    hcl: float,
    k_eq: float,
    kw: float,
    form: str = "charge_balance",
) -> float:
    if min(nh3, naoh, hcl) < 0:
        raise ValueError(
            f"concentrations must be non-negative: nh3={nh3}, naoh={naoh}, hcl={hcl}"
        )
    if not (k_eq > 0 and kw > 0):
        raise ValueError(f"K and Kw must be positive, got {k_eq}, {kw}")
    coefficients = CUBIC_FORMS[form](nh3, naoh, hcl, k_eq, kw)
    return positive_cubic_root(coefficients)


def ph_of_hplus(hplus: float) -> float:
    if not hplus > 0:
        raise ValueError(f"[H+] must be positive, got {hplus}")
    return -math.log10(hplus)


def ph_output(hcl: float, params: PhParams) -> float:
    return ph_of_hplus(
        solve_hplus(params.nh3, params.naoh, hcl, params.k_eq, params.kw)
    )


def titration_curve(params: PhParams, hcl_grid: Sequence[float]) -> list[tuple[float, float]]:
    """pH over a grid of [HCl] values for fixed NH3/NaOH."""
    return [(float(hcl), ph_output(float(hcl), params)) for hcl in hcl_grid]


def reward(y: float, y_ref: float) -> float:
    return -((y - y_ref) ** 2)


def sample_model(
    spec: EnsembleSpec, rng: np.random.Generator, model_id: int = 0
) -> PlantModel:
    values = {name: float(rng.uniform(low, high)) for name, low, high in spec.ranges}
    model = spec.build(values, model_id)
    logger.debug(
        "Sampled plant model",
        extra={"model_id": model_id, "kind": spec.kind, "values": values},
    )
    return model


def sample_setpoint(spec: SetpointSpec, rng: np.random.Generator) -> float:
    return float(rng.uniform(spec.low, spec.high))


def sample_initial_state(
    spec: ResetSpec, model: PlantModel, rng: np.random.Generator
) -> np.ndarray:
    low, high = model.state_box
    x0 = rng.uniform(spec.low, spec.high, size=model.state_dim)
    return np.clip(x0, low, high)
