"""
Small fully connected networks on a flat float64 parameter vector, with
hand-written reverse-mode gradients, a Gaussian policy head and Adam.

Layer weights are stored row-major as (fan_in, fan_out) followed by the bias,
so the parameter count of a stack is sum((fan_in + 1) * fan_out).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import IO, Sequence

import numpy as np

from .exceptions import NumericError, StructuralError

logger = logging.getLogger(__name__)

WEIGHTS_HEADER = "PIMENET v1"
HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)
DEFAULT_LOG_STD_BOUNDS = (-8.0, 1.0)


@dataclass(frozen=True)
class LayerSpec:
    name: str
    fan_in: int
    fan_out: int
    offset: int
    activation: bool

    @property
    def size(self: "LayerSpec") -> int:
        return (self.fan_in + 1) * self.fan_out


class ParameterLayout:
    def __init__(self: "ParameterLayout") -> None:
        self.layers: list[LayerSpec] = []
        self.size = 0

    def add(
        self: "ParameterLayout", name: str, fan_in: int, fan_out: int, activation: bool
    ) -> LayerSpec:
        if fan_in < 1 or fan_out < 1:
            raise StructuralError(f"layer {name} has shape ({fan_in}, {fan_out})")
        layer = LayerSpec(name, fan_in, fan_out, self.size, activation)
        self.layers.append(layer)
        self.size += layer.size
        return layer

    @staticmethod
    def views(params: np.ndarray, layer: LayerSpec) -> tuple[np.ndarray, np.ndarray]:
        w_end = layer.offset + layer.fan_in * layer.fan_out
        weights = params[layer.offset : w_end].reshape(layer.fan_in, layer.fan_out)
        bias = params[w_end : layer.offset + layer.size]
        return weights, bias

    def initialize(
        self: "ParameterLayout",
        rng: np.random.Generator,
        zero_layers: Sequence[str] = (),
    ) -> np.ndarray:
        """Gaussian weights scaled by 1/sqrt(fan_in), zero biases."""
        params = np.zeros(self.size)
        for layer in self.layers:
            weights, _ = self.views(params, layer)
            if layer.name in zero_layers:
                continue
            weights[:] = rng.standard_normal(weights.shape) / math.sqrt(layer.fan_in)
        return params


class DenseStack:
    """Chain of dense layers; tanh after every layer except possibly the last."""

    def __init__(
        self: "DenseStack",
        layout: ParameterLayout,
        prefix: str,
        sizes: Sequence[int],
        final_activation: bool,
    ) -> None:
        if len(sizes) < 2:
            raise StructuralError(f"stack {prefix} needs at least one layer, got {sizes}")
        self.n_in = sizes[0]
        self.n_out = sizes[-1]
        self.layers = [
            layout.add(
                f"{prefix}.{i}",
                sizes[i],
                sizes[i + 1],
                final_activation or i < len(sizes) - 2,
            )
            for i in range(len(sizes) - 1)
        ]

    def forward(
        self: "DenseStack", params: np.ndarray, x: np.ndarray
    ) -> tuple[np.ndarray, list[tuple[np.ndarray, np.ndarray]]]:
        if x.ndim != 2 or x.shape[1] != self.n_in:
            raise StructuralError(f"expected input of width {self.n_in}, got shape {x.shape}")
        cache = []
        h = x
        for layer in self.layers:
            weights, bias = ParameterLayout.views(params, layer)
            out = h @ weights + bias
            if layer.activation:
                out = np.tanh(out)
            cache.append((h, out))
            h = out
        return h, cache

    def backward(
        self: "DenseStack",
        params: np.ndarray,
        cache: list[tuple[np.ndarray, np.ndarray]],
        d_out: np.ndarray,
        grad: np.ndarray,
    ) -> np.ndarray:
        """Accumulate parameter gradients into `grad`; return d(loss)/d(input)."""
        delta = d_out
        for layer, (h_in, out) in zip(reversed(self.layers), reversed(cache)):
            if layer.activation:
                delta = delta * (1.0 - out * out)
            g_weights, g_bias = ParameterLayout.views(grad, layer)
            g_weights += h_in.T @ delta
            g_bias += delta.sum(axis=0)
            weights, _ = ParameterLayout.views(params, layer)
            delta = delta @ weights.T
        return delta


def check_finite_gradient(grad: np.ndarray, what: str) -> np.ndarray:
    bad = np.flatnonzero(~np.isfinite(grad))
    if bad.size:
        raise NumericError(
            f"non-finite {what} gradient at parameter {int(bad[0])}",
            term=what,
            index=int(bad[0]),
        )
    return grad


@dataclass(frozen=True)
class ObservationScaler:
    """
    Fixed affine map of (x, y_ref) ranges onto [-1, 1]; z divided by its bound.

    With `error_scale` set, the control error y_ref - y divided by it is
    appended to the main inputs.
    """

    low: np.ndarray
    high: np.ndarray
    z_bound: float
    error_scale: float | None = None

    def __post_init__(self: "ObservationScaler") -> None:
        if self.low.shape != self.high.shape or np.any(self.high <= self.low):
            raise StructuralError(f"invalid normalization ranges {self.low} .. {self.high}")
        if not self.z_bound > 0:
            raise StructuralError(f"integrator bound must be positive, got {self.z_bound}")
        if self.error_scale is not None and not self.error_scale > 0:
            raise StructuralError(f"error scale must be positive, got {self.error_scale}")

    @property
    def width(self: "ObservationScaler") -> int:
        """Number of main-branch inputs."""
        return self.low.size + (self.error_scale is not None)

    def main(
        self: "ObservationScaler",
        x: np.ndarray,
        y_ref: np.ndarray,
        error: np.ndarray | None = None,
    ) -> np.ndarray:
        """Rows of [x, y_ref] mapped to [-1, 1], followed by the scaled error if configured."""
        raw = np.column_stack([np.atleast_2d(x), np.reshape(y_ref, (-1, 1))])
        scaled = 2.0 * (raw - self.low) / (self.high - self.low) - 1.0
        if self.error_scale is None:
            return scaled
        if error is None:
            raise StructuralError("this scaler needs the control error")
        return np.column_stack([scaled, np.reshape(error, (-1, 1)) / self.error_scale])

    def z(self: "ObservationScaler", z: np.ndarray) -> np.ndarray:
        return np.reshape(z, (-1, 1)) / self.z_bound


class ModularNet:
    """
    Mean network g_theta: a branch over (x, y_ref), a separate branch over z,
    and a trunk over both branch outputs. The branches only meet in the trunk.
    The last trunk layer starts at zero so the network output starts at 0.
    """

    def __init__(
        self: "ModularNet",
        n_main: int,
        n_out: int = 1,
        main_sizes: Sequence[int] = (64, 64),
        z_sizes: Sequence[int] = (16, 16),
        trunk_sizes: Sequence[int] = (64, 64),
        output_scale: float = 1.0,
        rng: np.random.Generator | None = None,
    ) -> None:
        self.layout = ParameterLayout()
        self.branch_main = DenseStack(self.layout, "main", [n_main, *main_sizes], True)
        self.branch_z = DenseStack(self.layout, "z", [1, *z_sizes], True)
        self.trunk = DenseStack(
            self.layout,
            "trunk",
            [self.branch_main.n_out + self.branch_z.n_out, *trunk_sizes, n_out],
            False,
        )
        self.n_main = n_main
        self.n_out = n_out
        self.output_scale = output_scale
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params = self.layout.initialize(rng, zero_layers=[self.trunk.layers[-1].name])

    @property
    def size(self: "ModularNet") -> int:
        return self.layout.size

    def forward_cached(
        self: "ModularNet", main_in: np.ndarray, z_in: np.ndarray
    ) -> tuple[np.ndarray, tuple]:
        main_in = np.atleast_2d(main_in)
        z_in = np.reshape(z_in, (-1, 1))
        if main_in.shape[0] != z_in.shape[0]:
            raise StructuralError(
                f"batch sizes differ: {main_in.shape[0]} vs {z_in.shape[0]}"
            )
        h_main, cache_main = self.branch_main.forward(self.params, main_in)
        h_z, cache_z = self.branch_z.forward(self.params, z_in)
        out, cache_trunk = self.trunk.forward(self.params, np.hstack([h_main, h_z]))
        return self.output_scale * out, (cache_main, cache_z, cache_trunk)

    def forward(self: "ModularNet", main_in: np.ndarray, z_in: np.ndarray) -> np.ndarray:
        return self.forward_cached(main_in, z_in)[0]

    def backward(self: "ModularNet", cache: tuple, d_out: np.ndarray) -> np.ndarray:
        cache_main, cache_z, cache_trunk = cache
        grad = np.zeros(self.size)
        d_joint = self.trunk.backward(
            self.params, cache_trunk, self.output_scale * np.atleast_2d(d_out), grad
        )
        width = self.branch_main.n_out
        self.branch_main.backward(self.params, cache_main, d_joint[:, :width], grad)
        self.branch_z.backward(self.params, cache_z, d_joint[:, width:], grad)
        return check_finite_gradient(grad, "policy mean")


class ValueNet:
    """
    Plain tanh stack over normalized (x, z, y_ref) with a scalar output.
    The output layer starts at zero.
    """

    def __init__(
        self: "ValueNet",
        n_in: int,
        sizes: Sequence[int] = (64, 64),
        output_scale: float = 1.0,
        rng: np.random.Generator | None = None,
    ) -> None:
        self.layout = ParameterLayout()
        self.stack = DenseStack(self.layout, "value", [n_in, *sizes, 1], False)
        self.output_scale = output_scale
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params = self.layout.initialize(rng, zero_layers=[self.stack.layers[-1].name])

    @property
    def size(self: "ValueNet") -> int:
        return self.layout.size

    def forward_cached(self: "ValueNet", inputs: np.ndarray) -> tuple[np.ndarray, list]:
        out, cache = self.stack.forward(self.params, np.atleast_2d(inputs))
        return self.output_scale * out[:, 0], cache

    def forward(self: "ValueNet", inputs: np.ndarray) -> np.ndarray:
        return self.forward_cached(inputs)[0]

    def backward(self: "ValueNet", cache: list, d_out: np.ndarray) -> np.ndarray:
        grad = np.zeros(self.size)
        d_col = self.output_scale * np.reshape(d_out, (-1, 1))
        self.stack.backward(self.params, cache, d_col, grad)
        return check_finite_gradient(grad, "value")


def gaussian_log_prob(mean: np.ndarray, log_std: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Diagonal Gaussian log-density summed over the last axis."""
    scaled = (np.asarray(u) - np.asarray(mean)) / np.exp(log_std)
    return np.sum(-0.5 * scaled * scaled - log_std - HALF_LOG_2PI, axis=-1)


class GaussianPolicy:
    """u ~ N(kappa + g_theta, sigma^2) with one state-independent log_std per action."""

    def __init__(
        self: "GaussianPolicy",
        mean_net: ModularNet,
        log_std_init: float,
        log_std_bounds: tuple[float, float] = DEFAULT_LOG_STD_BOUNDS,
    ) -> None:
        low, high = log_std_bounds
        if not low < high:
            raise StructuralError(f"invalid log_std bounds {log_std_bounds}")
        self.mean_net = mean_net
        self.log_std_bounds = log_std_bounds
        self.log_std = np.clip(np.full(mean_net.n_out, float(log_std_init)), low, high)

    @property
    def sigma(self: "GaussianPolicy") -> np.ndarray:
        return np.exp(self.log_std)

    @property
    def size(self: "GaussianPolicy") -> int:
        return self.mean_net.size + self.log_std.size

    def get_flat(self: "GaussianPolicy") -> np.ndarray:
        return np.concatenate([self.mean_net.params, self.log_std])

    def set_flat(self: "GaussianPolicy", flat: np.ndarray) -> None:
        if flat.shape != (self.size,):
            raise StructuralError(f"expected {self.size} parameters, got {flat.shape}")
        n = self.mean_net.size
        self.mean_net.params = np.array(flat[:n])
        self.log_std = np.clip(flat[n:], *self.log_std_bounds)

    def log_prob(self: "GaussianPolicy", mean_total: np.ndarray, u: np.ndarray) -> np.ndarray:
        return gaussian_log_prob(mean_total, self.log_std, u)

    def sample_action(
        self: "GaussianPolicy", mean_total: np.ndarray, rng: np.random.Generator
    ) -> tuple[np.ndarray, float]:
        mean_total = np.asarray(mean_total, dtype=float)
        u = mean_total + self.sigma * rng.standard_normal(self.log_std.shape)
        return u, float(self.log_prob(mean_total, u))

    def entropy(self: "GaussianPolicy") -> float:
        return float(np.sum(0.5 + HALF_LOG_2PI + self.log_std))


@dataclass(frozen=True)
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    stepsize: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def fresh(cls: type["AdamState"], size: int, stepsize: float = 3e-4) -> "AdamState":
        return cls(m=np.zeros(size), v=np.zeros(size), stepsize=stepsize)


def adam_step(
    state: AdamState, params: np.ndarray, grads: np.ndarray
) -> tuple[np.ndarray, AdamState]:
    if not (params.shape == grads.shape == state.m.shape):
        raise StructuralError(
            f"Adam shapes differ: params {params.shape}, grads {grads.shape}, "
            f"moments {state.m.shape}"
        )
    step = state.step + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grads
    v = state.beta2 * state.v + (1.0 - state.beta2) * grads * grads
    m_hat = m / (1.0 - state.beta1**step)
    v_hat = v / (1.0 - state.beta2**step)
    new_params = params - state.stepsize * m_hat / (np.sqrt(v_hat) + state.eps)
    return new_params, AdamState(
        m=m,
        v=v,
        step=step,
        stepsize=state.stepsize,
        beta1=state.beta1,
        beta2=state.beta2,
        eps=state.eps,
    )


def dump_weights(
    stream: IO[str],
    layout: ParameterLayout,
    params: np.ndarray,
    log_std: np.ndarray | None = None,
) -> None:
    """Write the versioned plain-text weight format."""
    stream.write(f"{WEIGHTS_HEADER}\n")
    stream.write(f"params {layout.size}\n")
    for layer in layout.layers:
        weights, bias = ParameterLayout.views(params, layer)
        stream.write(f"layer {layer.name} {layer.fan_in} {layer.fan_out}\n")
        for row in weights:
            stream.write(" ".join(repr(float(v)) for v in row) + "\n")
        stream.write(" ".join(repr(float(v)) for v in bias) + "\n")
    if log_std is not None:
        stream.write(f"log_std {log_std.size}\n")
        stream.write(" ".join(repr(float(v)) for v in log_std) + "\n")


class _WeightLines:
    """Non-blank lines of a weight file with 1-based positions for error messages."""

    def __init__(self: "_WeightLines", stream: IO[str]) -> None:
        self.lines = [
            (number, line.strip())
            for number, line in enumerate(stream, start=1)
            if line.strip()
        ]
        self.cursor = 0

    @property
    def exhausted(self: "_WeightLines") -> bool:
        return self.cursor >= len(self.lines)

    def peek(self: "_WeightLines") -> str:
        return "" if self.exhausted else self.lines[self.cursor][1]

    def take(self: "_WeightLines", what: str) -> tuple[int, str]:
        if self.exhausted:
            raise StructuralError(f"weight file ends early: expected {what}")
        line = self.lines[self.cursor]
        self.cursor += 1
        return line

    def header(self: "_WeightLines", tag: str, count: int) -> list[str]:
        number, line = self.take(f"a {tag!r} line")
        fields = line.split()
        if len(fields) != count or fields[0] != tag:
            raise StructuralError(f"line {number}: expected a {tag!r} line, got {line!r}")
        return fields[1:]

    def row(self: "_WeightLines", size: int, what: str) -> np.ndarray:
        number, line = self.take(what)
        try:
            values = np.array([float(v) for v in line.split()])
        except ValueError as exc:
            raise StructuralError(f"line {number}: {exc}") from exc
        if values.size != size:
            raise StructuralError(
                f"line {number}: {what} has {values.size} values, expected {size}"
            )
        return values


def _int_field(value: str, what: str) -> int:
    try:
        return int(value)
    except ValueError as exc:
        raise StructuralError(f"{what} is not an integer: {value!r}") from exc


def load_weights(
    stream: IO[str], layout: ParameterLayout
) -> tuple[np.ndarray, np.ndarray | None]:
    """Read weights written by `dump_weights` into a layout of the same shape."""
    lines = _WeightLines(stream)
    if lines.peek() != WEIGHTS_HEADER:
        raise StructuralError(f"not a {WEIGHTS_HEADER} weight file")
    lines.take("the header")
    (declared,) = lines.header("params", 2)
    if _int_field(declared, "parameter count") != layout.size:
        raise StructuralError(
            f"weight file holds {declared} parameters, network expects {layout.size}"
        )
    params = np.zeros(layout.size)
    for layer in layout.layers:
        name, fan_in, fan_out = lines.header("layer", 4)
        shape = (name, _int_field(fan_in, "fan_in"), _int_field(fan_out, "fan_out"))
        if shape != (layer.name, layer.fan_in, layer.fan_out):
            raise StructuralError(
                f"layer mismatch: file has {' '.join(map(str, shape))}, expected "
                f"{layer.name} {layer.fan_in} {layer.fan_out}"
            )
        weights, bias = ParameterLayout.views(params, layer)
        for i in range(layer.fan_in):
            weights[i] = lines.row(layer.fan_out, f"row {i} of layer {layer.name}")
        bias[:] = lines.row(layer.fan_out, f"bias of layer {layer.name}")
    log_std = None
    if lines.peek().startswith("log_std"):
        (count,) = lines.header("log_std", 2)
        log_std = lines.row(_int_field(count, "log_std count"), "log_std")
    if not lines.exhausted:
        number, line = lines.take("trailing content")
        raise StructuralError(f"line {number}: unexpected trailing content {line!r}")
    logger.debug("Loaded weights", extra={"params": layout.size})
    return params, log_std
