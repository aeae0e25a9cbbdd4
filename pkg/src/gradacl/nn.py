"""Dense networks on flat float64 parameter vectors, with hand-written backprop.

Everything here is value-in/value-out. A :class:`ParamVector` wraps a
read-only array, so a :class:`ForwardCache` can be tied to the exact
parameters that produced it by identity.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import ConfigError, ContractError, NumericalError, ShapeError

ACTIVATIONS = ("tanh", "relu")


@dataclass(frozen=True)
class NetConfig:
    input_dim: int
    output_dim: int
    hidden_size: int = 256
    n_layers: int = 3
    activation: str = "relu"

    def __post_init__(self):
        for name in ("input_dim", "output_dim", "hidden_size", "n_layers"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or value < 1:
                raise ConfigError(f"{name} must be an integer >= 1, got {value!r}", key=name)
        if self.activation not in ACTIVATIONS:
            raise ConfigError(
                f"activation must be one of {ACTIVATIONS}, got {self.activation!r}", key="activation"
            )

    def layer_dims(self):
        """(fan_in, fan_out) for every dense layer, input to output."""
        sizes = [self.input_dim] + [self.hidden_size] * (self.n_layers - 1) + [self.output_dim]
        return list(zip(sizes[:-1], sizes[1:]))

    def n_params(self):
        return sum((fan_in + 1) * fan_out for fan_in, fan_out in self.layer_dims())


class LayerSlot(NamedTuple):
    layer: int
    fan_in: int
    fan_out: int
    offset: int  # start of W (fan_in x fan_out, row-major); b follows immediately

    @property
    def size(self):
        return (self.fan_in + 1) * self.fan_out


def make_layout(config: NetConfig):
    layout = []
    offset = 0
    for i, (fan_in, fan_out) in enumerate(config.layer_dims()):
        slot = LayerSlot(i, fan_in, fan_out, offset)
        layout.append(slot)
        offset += slot.size
    return tuple(layout)


@dataclass(frozen=True, eq=False)
class ParamVector:
    """Flat parameter (or gradient) storage with a per-layer layout.

    ``values`` is made read-only on construction; build a new vector instead
    of mutating one.
    """

    values: np.ndarray
    layout: tuple = ()

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64, copy=True).reshape(-1)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        if self.layout:
            expected = 0
            for slot in self.layout:
                if slot.offset != expected:
                    raise ShapeError("layout offsets must be contiguous")
                expected += slot.size
            if expected != values.size:
                raise ShapeError(f"layout covers {expected} entries but vector has {values.size}")

    def __len__(self):
        return self.values.size

    def weight(self, layer):
        slot = self.layout[layer]
        return self.values[slot.offset : slot.offset + slot.fan_in * slot.fan_out].reshape(
            slot.fan_in, slot.fan_out
        )

    def bias(self, layer):
        slot = self.layout[layer]
        start = slot.offset + slot.fan_in * slot.fan_out
        return self.values[start : start + slot.fan_out]

    def with_values(self, values):
        return ParamVector(values, self.layout)

    def zeros_like(self):
        return ParamVector(np.zeros_like(self.values), self.layout)

    def __add__(self, other):
        return self.with_values(self.values + _raw(other))

    def __sub__(self, other):
        return self.with_values(self.values - _raw(other))

    def __neg__(self):
        return self.with_values(-self.values)

    def __mul__(self, scalar):
        return self.with_values(self.values * scalar)

    __rmul__ = __mul__


def _raw(x):
    return x.values if isinstance(x, ParamVector) else np.asarray(x, dtype=np.float64)


def unflatten(params: ParamVector):
    """Split into a list of ``(W, b)`` array pairs (copies)."""
    return [(params.weight(i).copy(), params.bias(i).copy()) for i in range(len(params.layout))]


def flatten(layers, layout=None):
    """Inverse of :func:`unflatten`."""
    chunks = []
    slots = []
    offset = 0
    for i, (w, b) in enumerate(layers):
        w = np.asarray(w, dtype=np.float64)
        b = np.asarray(b, dtype=np.float64).reshape(-1)
        if w.ndim != 2 or b.size != w.shape[1]:
            raise ShapeError(f"layer {i}: weight {w.shape} incompatible with bias {b.shape}")
        chunks += [w.reshape(-1), b]
        slots.append(LayerSlot(i, w.shape[0], w.shape[1], offset))
        offset += (w.shape[0] + 1) * w.shape[1]
    if layout is not None and tuple(layout) != tuple(slots):
        raise ShapeError("layers do not match the requested layout")
    return ParamVector(np.concatenate(chunks) if chunks else np.zeros(0), tuple(slots))


def concat(vectors):
    """Join several vectors into one flat, layout-free vector."""
    return ParamVector(np.concatenate([_raw(v) for v in vectors]))


def init_network(config: NetConfig, seed) -> ParamVector:
    """Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)); biases zero."""
    rng = np.random.default_rng(seed)
    layout = make_layout(config)
    values = np.zeros(config.n_params())
    for slot in layout:
        bound = 1.0 / np.sqrt(slot.fan_in)
        n = slot.fan_in * slot.fan_out
        values[slot.offset : slot.offset + n] = rng.uniform(-bound, bound, size=n)
    return ParamVector(values, layout)


@dataclass(frozen=True, eq=False)
class ForwardCache:
    params_values: np.ndarray  # identity of the producing parameters
    inputs: np.ndarray  # (batch, input_dim)
    pre: list = field(default_factory=list)  # pre-activations of hidden layers
    post: list = field(default_factory=list)  # activations of hidden layers
    squeeze: bool = False


def _activate(z, kind):
    if kind == "tanh":
        return np.tanh(z)
    return np.maximum(z, 0.0)


def _activation_grad(z, a, kind):
    if kind == "tanh":
        return 1.0 - a * a
    return (z > 0.0).astype(np.float64)


def _check_layout(params, config):
    if len(params.layout) != config.n_layers or len(params) != config.n_params():
        raise ShapeError(
            f"parameter vector of length {len(params)} does not fit a network with "
            f"{config.n_params()} parameters"
        )


def forward(params: ParamVector, config: NetConfig, inputs):
    """Evaluate the network on one input vector or a batch (rows).

    Returns ``(output, cache)``; output has the same rank as ``inputs``.
    """
    _check_layout(params, config)
    x = np.asarray(inputs, dtype=np.float64)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != config.input_dim:
        raise ShapeError(f"expected input of width {config.input_dim}, got shape {np.shape(inputs)}")
    pre, post = [], []
    h = x
    last = config.n_layers - 1
    for i in range(config.n_layers):
        z = h @ params.weight(i) + params.bias(i)
        if i == last:
            h = z
        else:
            h = _activate(z, config.activation)
            pre.append(z)
            post.append(h)
    cache = ForwardCache(params.values, x, pre, post, squeeze)
    return (h[0] if squeeze else h), cache


def backward(params: ParamVector, config: NetConfig, cache: ForwardCache, output_grad, return_input_grad=False):
    """Gradient of a scalar loss w.r.t. the parameters, given dloss/doutput.

    For batched forwards, ``output_grad`` has one row per input and the
    parameter gradient is summed over rows. With ``return_input_grad`` the
    result is ``(param_grad, input_grad)``.
    """
    if cache.params_values is not params.values:
        raise ContractError("forward cache was produced by different parameters")
    _check_layout(params, config)
    g = np.asarray(output_grad, dtype=np.float64)
    if cache.squeeze:
        g = g[None, :]
    if g.shape != (cache.inputs.shape[0], config.output_dim):
        raise ShapeError(f"output_grad shape {np.shape(output_grad)} does not match forward output")
    out = np.empty(len(params))
    for i in range(config.n_layers - 1, -1, -1):
        slot = params.layout[i]
        h_in = cache.inputs if i == 0 else cache.post[i - 1]
        n_w = slot.fan_in * slot.fan_out
        out[slot.offset : slot.offset + n_w] = (h_in.T @ g).reshape(-1)
        out[slot.offset + n_w : slot.offset + slot.size] = g.sum(axis=0)
        g = g @ params.weight(i).T
        if i > 0:
            g = g * _activation_grad(cache.pre[i - 1], cache.post[i - 1], config.activation)
    grad = ParamVector(out, params.layout)
    if return_input_grad:
        return grad, (g[0] if cache.squeeze else g)
    return grad


def grad_l2_norm(g) -> float:
    return float(np.linalg.norm(_raw(g)))


@dataclass(frozen=True, eq=False)
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, n, **hyper):
        return cls(np.zeros(n), np.zeros(n), 0, **hyper)


def adam_step(params: ParamVector, grad, state: AdamState, lr: float):
    """One bias-corrected Adam update; returns ``(new_params, new_state)``."""
    g = _raw(grad)
    if g.shape != params.values.shape or state.m.shape != g.shape:
        raise ShapeError("params, grad and optimizer state must have equal length")
    if not np.all(np.isfinite(g)):
        raise NumericalError("non-finite entries in gradient")
    t = state.t + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * g
    v = state.beta2 * state.v + (1.0 - state.beta2) * g * g
    m_hat = m / (1.0 - state.beta1**t)
    v_hat = v / (1.0 - state.beta2**t)
    new_values = params.values - lr * m_hat / (np.sqrt(v_hat) + state.eps)
    new_state = AdamState(m, v, t, state.beta1, state.beta2, state.eps)
    return params.with_values(new_values), new_state
