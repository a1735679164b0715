from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from django.db import models

DEFAULT_INTEGRATOR_BOUNDS = (-25.0, 25.0)


class PriorKind(models.TextChoices):
    P = "P", "Proportional"
    PI = "PI", "Proportional-integral"


@dataclass(frozen=True)
class IntegratorState:
    """Integrated control error z, clamped to its bounds (anti-windup)."""

    z: float = 0.0
    bounds: tuple[float, float] = DEFAULT_INTEGRATOR_BOUNDS

    def __post_init__(self: "IntegratorState") -> None:
        low, high = self.bounds
        if not low < high:
            raise ValueError(f"invalid integrator bounds {self.bounds}")
        if not low <= self.z <= high:
            raise ValueError(f"z={self.z} outside integrator bounds {self.bounds}")

    @property
    def bound(self: "IntegratorState") -> float:
        return max(abs(self.bounds[0]), abs(self.bounds[1]))


def update_integrator(state: IntegratorState, eps: float) -> IntegratorState:
    if not math.isfinite(eps):
        raise ValueError(f"control error must be finite, got {eps}")
    low, high = state.bounds
    return IntegratorState(z=min(max(state.z + eps, low), high), bounds=state.bounds)


@dataclass(frozen=True)
class ExtendedState:
    """Plant state with the integrator appended as the last component."""

    x: np.ndarray
    z: float

    @property
    def vector(self: "ExtendedState") -> np.ndarray:
        return np.append(self.x, self.z)

    @property
    def dim(self: "ExtendedState") -> int:
        return self.x.shape[0] + 1


def extend(x: np.ndarray, z: float) -> ExtendedState:
    x = np.array(x, dtype=float).reshape(-1)
    if not np.all(np.isfinite(x)):
        raise ValueError(f"plant state must be finite, got {x}")
    return ExtendedState(x=x, z=float(z))


@dataclass(frozen=True)
class PriorController:
    """
    Untuned P/PI law u = kp * eps + ki * z with eps = y_ref - y.

    The sign of kp encodes the plant direction: positive for the tanks (more
    pump voltage raises the level), negative for pH (more acid lowers pH).
    """

    kp: float
    ki: float = 0.0
    kind: str = PriorKind.P

    def __post_init__(self: "PriorController") -> None:
        if not (math.isfinite(self.kp) and math.isfinite(self.ki)):
            raise ValueError(f"gains must be finite, got kp={self.kp}, ki={self.ki}")
        if self.kind not in PriorKind.values:
            raise ValueError(f"unknown prior kind {self.kind!r}")
        if self.kind == PriorKind.P and self.ki != 0:
            raise ValueError("a P prior must have ki = 0")


def prior_action(ctrl: PriorController, eps: float, z: float) -> float:
    return ctrl.kp * eps + ctrl.ki * z


def saturate(u: float | np.ndarray, bounds: tuple[float, float]) -> float | np.ndarray:
    low, high = bounds
    if not low <= high:
        raise ValueError(f"invalid saturation range {bounds}")
    if np.ndim(u) == 0:
        return min(max(float(u), low), high)
    return np.clip(u, low, high)
