from __future__ import annotations

from typing import Sequence


class PimeError(Exception):
    """Base class for every error raised by the pime package."""


class ConfigError(PimeError):
    """Experiment configuration could not be read or validated."""

    def __init__(self: "ConfigError", message: str, keys: Sequence[str] = ()) -> None:
        super().__init__(message)
        self.keys = list(keys)


class StructuralError(PimeError, ValueError):
    """Shapes, lengths or traces do not line up."""


class NumericError(PimeError, ArithmeticError):
    """A computation produced a non-finite value or a solver gave up."""

    def __init__(
        self: "NumericError",
        message: str,
        term: str | None = None,
        index: int | None = None,
    ) -> None:
        super().__init__(message)
        self.term = term
        self.index = index


class SimulationFault(PimeError):
    """Plant state became non-finite."""

    def __init__(
        self: "SimulationFault",
        message: str,
        values: Sequence[float] = (),
        step: int | None = None,
    ) -> None:
        super().__init__(message)
        self.values = list(values)
        self.step = step

    def at_step(self: "SimulationFault", step: int) -> "SimulationFault":
        """Return a copy that knows the episode step it happened at."""
        return SimulationFault(
            f"{self.args[0]} (step {step})", values=self.values, step=step
        )
