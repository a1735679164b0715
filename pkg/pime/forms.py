from __future__ import annotations

import math
from pathlib import Path
from typing import Mapping

from django import forms
from django.core.exceptions import NON_FIELD_ERRORS
from dotenv import dotenv_values

from .config import (
    EvalSettings,
    ExperimentConfig,
    NetworkSizes,
    NormalizationRanges,
    box_fixed,
    config_to_mapping,
    default_config,
)
from .control import PriorController, PriorKind
from .envsim import (
    DYNAMICS_PARAMETERS,
    EnsembleSpec,
    PlantKind,
    ResetSpec,
    SetpointSpec,
    default_levels,
)
from .exceptions import ConfigError
from .ppo_core import PpoHyper

STATE_DIM = {PlantKind.TANKS: 2, PlantKind.PH: 1}


def validate_positive(value: float) -> None:
    if not value > 0:
        raise forms.ValidationError("Enter a positive number.", code="min_value")


class FlagField(forms.Field):
    """Boolean written as true/false, yes/no, on/off or 1/0."""

    TRUE = frozenset({"true", "yes", "on", "1"})
    FALSE = frozenset({"false", "no", "off", "0"})

    def to_python(self: "FlagField", value: object) -> bool | None:
        if isinstance(value, bool):
            return value
        if value in self.empty_values:
            return None
        text = str(value).strip().lower()
        if text in self.TRUE:
            return True
        if text in self.FALSE:
            return False
        raise forms.ValidationError("Enter true or false.", code="invalid")


class FloatListField(forms.CharField):
    """Comma-separated finite floats."""

    def __init__(
        self: "FloatListField",
        *,
        min_count: int = 1,
        max_count: int | None = None,
        **kwargs: object,
    ) -> None:
        self.min_count = min_count
        self.max_count = max_count
        super().__init__(**kwargs)

    def parse_item(self: "FloatListField", item: str) -> float:
        value = float(item)
        if not math.isfinite(value):
            raise ValueError(item)
        return value

    def to_python(self: "FloatListField", value: object) -> tuple:
        text = super().to_python(value)
        if not text:
            return ()
        try:
            values = tuple(self.parse_item(part.strip()) for part in text.split(","))
        except ValueError:
            raise forms.ValidationError(
                "Enter a comma-separated list of numbers.", code="invalid"
            ) from None
        if len(values) < self.min_count or (
            self.max_count is not None and len(values) > self.max_count
        ):
            expected = (
                f"{self.min_count}"
                if self.max_count == self.min_count
                else f"{self.min_count} to {self.max_count or 'any'}"
            )
            raise forms.ValidationError(
                f"Expected {expected} values, got {len(values)}.", code="count"
            )
        return values


class LayerSizesField(FloatListField):
    """Comma-separated positive layer widths."""

    def parse_item(self: "LayerSizesField", item: str) -> int:
        value = int(item)
        if value < 1:
            raise ValueError(item)
        return value


def config_fields(plant: str) -> dict[str, forms.Field]:
    """Typed form field for every experiment-file key of one plant."""
    fields: dict[str, forms.Field] = {
        "plant": forms.ChoiceField(choices=PlantKind.choices),
        "seed": forms.IntegerField(min_value=0),
        "horizon": forms.IntegerField(min_value=1),
        "episodes_per_iteration": forms.IntegerField(min_value=1),
        "total_steps": forms.IntegerField(min_value=1),
        "checkpoint_every": forms.IntegerField(min_value=1),
        "output_dir": forms.CharField(required=False),
        "plant.dt": forms.FloatField(),
        "plant.substeps": forms.IntegerField(min_value=1),
        "plant.noise_std": FloatListField(required=False, max_count=STATE_DIM[plant]),
        "plant.u_min": forms.FloatField(),
        "plant.u_max": forms.FloatField(),
        "plant.state_max": forms.FloatField(),
    }
    for name in DYNAMICS_PARAMETERS[plant]:
        fields[f"ensemble.{name}"] = FloatListField(min_count=1, max_count=2)
    fields.update(
        {
            "setpoint.low": forms.FloatField(),
            "setpoint.high": forms.FloatField(),
            "setpoint.levels": FloatListField(required=False),
            "setpoint.segment_len": forms.IntegerField(min_value=1),
            "reset.low": forms.FloatField(),
            "reset.high": forms.FloatField(),
            "prior.kind": forms.ChoiceField(choices=PriorKind.choices),
            "prior.kp": forms.FloatField(),
            "prior.ki": forms.FloatField(),
            "integrator.low": forms.FloatField(),
            "integrator.high": forms.FloatField(),
            "ppo.gamma": forms.FloatField(min_value=0, max_value=1),
            "ppo.lam": forms.FloatField(min_value=0, max_value=1),
            "ppo.clip": forms.FloatField(),
            "ppo.c1": forms.FloatField(min_value=0),
            "ppo.c2": forms.FloatField(min_value=0),
            "ppo.epochs": forms.IntegerField(min_value=1),
            "ppo.minibatch": forms.IntegerField(min_value=1),
            "ppo.stepsize": forms.FloatField(),
            "policy.log_std_init": forms.FloatField(),
            "policy.log_std_min": forms.FloatField(),
            "policy.log_std_max": forms.FloatField(),
            "net.main": LayerSizesField(),
            "net.z": LayerSizesField(),
            "net.trunk": LayerSizesField(),
            "net.value": LayerSizesField(),
            "value.scale": forms.FloatField(),
            "norm.state_low": FloatListField(
                min_count=STATE_DIM[plant], max_count=STATE_DIM[plant]
            ),
            "norm.state_high": FloatListField(
                min_count=STATE_DIM[plant], max_count=STATE_DIM[plant]
            ),
            "norm.setpoint_low": forms.FloatField(),
            "norm.setpoint_high": forms.FloatField(),
            "norm.error_scale": forms.FloatField(validators=[validate_positive]),
            "ablation.disable_prior": FlagField(),
            "ablation.fix_single_model": FlagField(),
            "eval.models": forms.IntegerField(min_value=1),
            "eval.steady_fraction": forms.FloatField(),
            "eval.settle_tol": forms.FloatField(min_value=0),
            "eval.sensitivity_step": forms.FloatField(validators=[validate_positive]),
            "eval.leak": forms.FloatField(min_value=0),
        }
    )
    return fields


class ExperimentConfigForm(forms.Form):
    """
    Validates a flat experiment mapping. Plant defaults are merged underneath
    the given values, so a file only needs the keys it changes.
    """

    plant = forms.ChoiceField(choices=PlantKind.choices)

    def __init__(self: "ExperimentConfigForm", data: Mapping[str, str], **kwargs: object) -> None:
        self.given_keys = list(data)
        plant = data.get("plant") or PlantKind.TANKS
        base = plant if plant in PlantKind.values else PlantKind.TANKS
        self.defaults = config_to_mapping(default_config(base))
        super().__init__({**self.defaults, **data}, **kwargs)
        self.fields.update(config_fields(base))
        self.unknown_keys = sorted(set(self.given_keys) - set(self.fields))
        self.config: ExperimentConfig | None = None

    def clean(self: "ExperimentConfigForm") -> dict:
        cleaned = super().clean()
        if self.unknown_keys:
            raise forms.ValidationError(
                f"Unknown keys: {', '.join(self.unknown_keys)}.", code="unknown"
            )
        if self.errors:
            return cleaned
        try:
            self.config = self.build_config(cleaned)
        except ValueError as exc:
            raise forms.ValidationError(str(exc), code="inconsistent") from exc
        return cleaned

    def build_config(self: "ExperimentConfigForm", data: dict) -> ExperimentConfig:
        plant = data["plant"]
        ranges, fixed = [], {}
        for name in DYNAMICS_PARAMETERS[plant]:
            values = data[f"ensemble.{name}"]
            if len(values) == 2:
                ranges.append((name, *values))
            else:
                fixed[name] = values[0]
        fixed.update(
            box_fixed(plant, data["plant.state_max"], data["plant.u_min"], data["plant.u_max"])
        )
        noise = data["plant.noise_std"]
        if not any(noise):
            noise = ()
        elif len(noise) == 1:
            noise = noise * STATE_DIM[plant]
        ensemble = EnsembleSpec(
            kind=plant,
            ranges=tuple(ranges),
            fixed=fixed,
            dt=data["plant.dt"],
            noise_std=noise,
            substeps=data["plant.substeps"],
        )
        low, high = data["setpoint.low"], data["setpoint.high"]
        return ExperimentConfig(
            plant=plant,
            ensemble=ensemble,
            setpoints=SetpointSpec(
                low,
                high,
                data["setpoint.levels"] or default_levels(low, high),
                data["setpoint.segment_len"],
            ),
            reset=ResetSpec(data["reset.low"], data["reset.high"]),
            prior=PriorController(
                kp=data["prior.kp"], ki=data["prior.ki"], kind=data["prior.kind"]
            ),
            ppo=PpoHyper(
                clip=data["ppo.clip"],
                gamma=data["ppo.gamma"],
                lam=data["ppo.lam"],
                c1=data["ppo.c1"],
                c2=data["ppo.c2"],
                epochs=data["ppo.epochs"],
                minibatch=data["ppo.minibatch"],
                stepsize=data["ppo.stepsize"],
            ),
            normalization=NormalizationRanges(
                data["norm.state_low"],
                data["norm.state_high"],
                data["norm.setpoint_low"],
                data["norm.setpoint_high"],
                data["norm.error_scale"],
            ),
            horizon=data["horizon"],
            episodes_per_iteration=data["episodes_per_iteration"],
            total_steps=data["total_steps"],
            seed=data["seed"],
            integrator_bounds=(data["integrator.low"], data["integrator.high"]),
            output_dir=data["output_dir"],
            disable_prior=data["ablation.disable_prior"],
            fix_single_model=data["ablation.fix_single_model"],
            checkpoint_every=data["checkpoint_every"],
            log_std_init=data["policy.log_std_init"],
            log_std_bounds=(data["policy.log_std_min"], data["policy.log_std_max"]),
            networks=NetworkSizes(
                main=data["net.main"],
                z=data["net.z"],
                trunk=data["net.trunk"],
                value=data["net.value"],
            ),
            value_scale=data["value.scale"],
            evaluation=EvalSettings(
                models=data["eval.models"],
                steady_fraction=data["eval.steady_fraction"],
                settle_tol=data["eval.settle_tol"],
                sensitivity_step=data["eval.sensitivity_step"],
                leak=data["eval.leak"],
            ),
        )

    def error_summary(self: "ExperimentConfigForm") -> str:
        parts = []
        for key, errors in self.errors.items():
            text = " ".join(str(error) for error in errors)
            parts.append(text if key == NON_FIELD_ERRORS else f"{key}: {text}")
        return "; ".join(parts)


def read_config_file(path: str | Path) -> dict[str, str]:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"Config file not found: {path}")
    values = dotenv_values(path, interpolate=False)
    empty = [key for key, value in values.items() if value is None]
    if empty:
        raise ConfigError(f"Keys without a value in {path}: {', '.join(empty)}", keys=empty)
    return dict(values)


def load_config(
    path: str | Path | None = None,
    overrides: Mapping[str, object] | None = None,
) -> ExperimentConfig:
    """
    Read and validate an experiment file.

    Args:
        path: `key = value` file; plant defaults alone when None.
        overrides: Values that win over the file (command-line options).
            None entries are ignored.

    Returns:
        The validated ExperimentConfig.
    """
    data = read_config_file(path) if path is not None else {}
    data.update({key: str(value) for key, value in (overrides or {}).items() if value is not None})
    form = ExperimentConfigForm(data)
    if not form.is_valid():
        keys = form.unknown_keys + [
            key for key in form.errors if key != NON_FIELD_ERRORS
        ]
        raise ConfigError(form.error_summary(), keys=keys)
    return form.config
