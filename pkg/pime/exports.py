from __future__ import annotations

import csv
import logging
import os
from pathlib import Path
from typing import IO, Iterable, Mapping, Sequence

import numpy as np

from .exceptions import PimeError, StructuralError
from .neuralnet import ParameterLayout, dump_weights, load_weights

logger = logging.getLogger(__name__)

TRAJECTORY_HEADER = ("t", "y", "y_ref", "u", "z", "reward", "model_id", "seed")
DIAGNOSTICS_HEADER = (
    "iteration",
    "env_steps",
    "mean_return",
    "std_return",
    "policy_loss",
    "value_loss",
    "entropy",
    "clip_frac",
    "approx_kl",
    "sigma",
)
REPORT_HEADER = (
    "label",
    "model_index",
    "model_id",
    "segment",
    "segment_len",
    "y_ref",
    "episodic_return",
    "steady_state_error",
    "overshoot",
    "settling_steps",
    "sensitivity",
)
METRICS = ("episodic_return", "steady_state_error", "overshoot", "settling_steps", "sensitivity")
COMPARISON_HEADER = (
    "label",
    "segment",
    "y_ref",
    "reports",
    *(f"{metric}_{stat}" for metric in METRICS for stat in ("mean", "std")),
    "delta_return",
    "delta_steady_state_error",
)
TITRATION_HEADER = ("hcl", "ph")


def fmt(value: object) -> str:
    """Floats with 9 significant digits; everything else as str."""
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.9g}"
    return str(value)


def _open_csv(path: Path) -> IO[str]:
    path.parent.mkdir(parents=True, exist_ok=True)
    return path.open("w", newline="", encoding="utf-8")


def write_rows(path: str | Path, header: Sequence[str], rows: Iterable[Mapping]) -> Path:
    path = Path(path)
    with _open_csv(path) as handle:
        writer = csv.DictWriter(handle, fieldnames=list(header), lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({key: fmt(row[key]) for key in header})
    logger.debug("Wrote CSV", extra={"path": str(path)})
    return path


def read_rows(path: str | Path, header: Sequence[str]) -> list[dict[str, str]]:
    path = Path(path)
    if not path.is_file():
        raise StructuralError(f"CSV file not found: {path}")
    with path.open(newline="", encoding="utf-8") as handle:
        reader = csv.DictReader(handle)
        if tuple(reader.fieldnames or ()) != tuple(header):
            raise StructuralError(
                f"{path} has columns {reader.fieldnames}, expected {list(header)}"
            )
        return list(reader)


class DiagnosticsWriter:
    """Appends one flushed row per training iteration."""

    def __init__(self: "DiagnosticsWriter", path: str | Path) -> None:
        self.path = Path(path)
        self.handle = _open_csv(self.path)
        self.writer = csv.DictWriter(
            self.handle, fieldnames=list(DIAGNOSTICS_HEADER), lineterminator="\n"
        )
        self.writer.writeheader()
        self.handle.flush()

    def write(self: "DiagnosticsWriter", row: Mapping[str, object]) -> None:
        self.writer.writerow({key: fmt(row[key]) for key in DIAGNOSTICS_HEADER})
        self.handle.flush()

    def close(self: "DiagnosticsWriter") -> None:
        self.handle.close()

    def __enter__(self: "DiagnosticsWriter") -> "DiagnosticsWriter":
        return self

    def __exit__(self: "DiagnosticsWriter", *exc_info: object) -> None:
        self.close()


def write_weights(
    path: str | Path,
    layout: ParameterLayout,
    params: np.ndarray,
    log_std: np.ndarray | None = None,
) -> Path:
    """Write a weight file atomically; an existing file is replaced only on success."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with tmp.open("w", encoding="utf-8") as handle:
            dump_weights(handle, layout, params, log_std)
        os.replace(tmp, path)
    except OSError as exc:
        raise PimeError(f"Could not write checkpoint {path}: {exc}") from exc
    logger.info("Saved weights", extra={"path": str(path), "params": layout.size})
    return path


def read_weights(
    path: str | Path, layout: ParameterLayout
) -> tuple[np.ndarray, np.ndarray | None]:
    path = Path(path)
    if not path.is_file():
        raise StructuralError(f"Weight file not found: {path}")
    with path.open(encoding="utf-8") as handle:
        return load_weights(handle, layout)
