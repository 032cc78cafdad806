"""Minimal dense-network substrate with hand-derived gradients.

Conventions: vectors are 1-D float64 arrays, matrices are row-major 2-D
float64 arrays of shape (out, in). All gradients are derived analytically;
``finite_difference_grad`` is the independent oracle used to check them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from .rng import Rng


class ShapeError(ValueError):
    """Operand dimensions do not match the declared geometry."""


class LayoutError(ValueError):
    """Flat parameter vectors do not share the same layout."""


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, message: str, epoch: int):
        super().__init__(f"{message} (epoch {epoch})")
        self.epoch = epoch


ACTIVATIONS = ("identity", "tanh", "sigmoid", "relu")


def _activate(name: str, z: np.ndarray) -> np.ndarray:
    if name == "identity":
        return z
    if name == "tanh":
        return np.tanh(z)
    if name == "sigmoid":
        return 1.0 / (1.0 + np.exp(-z))
    if name == "relu":
        return np.maximum(z, 0.0)
    raise ValueError(f"unknown activation {name!r}")


def _activate_grad(name: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    # Derivative wrt the pre-activation z, expressed through the cached output
    # a where that is cheaper.
    if name == "identity":
        return np.ones_like(z)
    if name == "tanh":
        return 1.0 - a * a
    if name == "sigmoid":
        return a * (1.0 - a)
    if name == "relu":
        return (z > 0.0).astype(float)
    raise ValueError(f"unknown activation {name!r}")


def as_array(x, ndim: int | None = None) -> np.ndarray:
    out = np.asarray(x, dtype=float)
    if ndim is not None and out.ndim != ndim:
        raise ShapeError(f"expected a {ndim}-D array, got shape {out.shape}")
    return out


# ---------------------------------------------------------------------------
# Dense layers
# ---------------------------------------------------------------------------


@dataclass
class DenseLayer:
    """Affine map plus pointwise activation: activation(W x + b)."""

    weights: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str = "identity"

    def __post_init__(self):
        self.weights = as_array(self.weights, ndim=2)
        self.bias = as_array(self.bias, ndim=1)
        if self.weights.shape[0] != self.bias.shape[0]:
            raise ShapeError(
                f"weights rows {self.weights.shape[0]} != bias length {self.bias.shape[0]}"
            )
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]


def init_dense(in_dim: int, out_dim: int, activation: str, rng: Rng) -> DenseLayer:
    """Scaled-uniform weight init, zero bias."""
    limit = math.sqrt(6.0 / (in_dim + out_dim))
    weights = rng.uniform(-limit, limit, (out_dim, in_dim))
    return DenseLayer(weights=weights, bias=np.zeros(out_dim), activation=activation)


def dense_forward(layer: DenseLayer, x: np.ndarray) -> np.ndarray:
    """Forward pass; ``x`` may be a vector or a (batch, in) matrix."""
    x = as_array(x)
    if x.ndim not in (1, 2) or x.shape[-1] != layer.in_dim:
        raise ShapeError(f"input shape {x.shape} incompatible with in_dim {layer.in_dim}")
    z = x @ layer.weights.T + layer.bias
    return _activate(layer.activation, z)


def dense_backward(
    layer: DenseLayer, x: np.ndarray, grad_out: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Exact gradients of the layer composition.

    Returns (grad_x, grad_weights, grad_bias) for the loss gradient
    ``grad_out`` arriving at the layer output. Batched inputs sum the
    parameter gradients over the batch.
    """
    x = as_array(x)
    grad_out = as_array(grad_out)
    if x.shape[-1] != layer.in_dim:
        raise ShapeError(f"input shape {x.shape} incompatible with in_dim {layer.in_dim}")
    if grad_out.shape != x.shape[:-1] + (layer.out_dim,):
        raise ShapeError(
            f"grad_out shape {grad_out.shape} incompatible with output dim {layer.out_dim}"
        )
    single = x.ndim == 1
    if single:
        x = x[None, :]
        grad_out = grad_out[None, :]
    z = x @ layer.weights.T + layer.bias
    a = _activate(layer.activation, z)
    dz = grad_out * _activate_grad(layer.activation, z, a)
    grad_w = dz.T @ x
    grad_b = dz.sum(axis=0)
    grad_x = dz @ layer.weights
    if single:
        grad_x = grad_x[0]
    return grad_x, grad_w, grad_b


def mse_loss(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean squared error over a vector and its gradient wrt ``pred``."""
    pred = as_array(pred, ndim=1)
    target = as_array(target, ndim=1)
    if pred.shape != target.shape:
        raise ShapeError(f"length mismatch: {pred.shape} vs {target.shape}")
    diff = pred - target
    loss = float(diff @ diff) / diff.size
    grad = 2.0 * diff / diff.size
    return loss, grad


# ---------------------------------------------------------------------------
# Flat parameter vectors
# ---------------------------------------------------------------------------


class Layout:
    """Ordered (name, shape) fields mapped onto one contiguous float64 vector.

    Offsets are assigned in declaration order with no gaps, so two models
    built from the same architecture description share an identical layout.
    """

    __slots__ = ("fields", "size", "_index")

    def __init__(self, fields: Sequence[tuple[str, Sequence[int]]]):
        norm: list[tuple[str, tuple[int, ...]]] = []
        index: dict[str, tuple[int, tuple[int, ...]]] = {}
        offset = 0
        for name, shape in fields:
            name = str(name)
            shape = tuple(int(s) for s in shape)
            if name in index:
                raise LayoutError(f"duplicate layout field {name!r}")
            if any(s <= 0 for s in shape):
                raise LayoutError(f"field {name!r} has non-positive shape {shape}")
            index[name] = (offset, shape)
            norm.append((name, shape))
            offset += int(np.prod(shape))
        self.fields = tuple(norm)
        self._index = index
        self.size = offset

    def offset_of(self, name: str) -> tuple[int, tuple[int, ...]]:
        try:
            return self._index[name]
        except KeyError:
            raise LayoutError(f"no layout field {name!r}") from None

    def describe(self) -> str:
        return ";".join(f"{name}:{'x'.join(map(str, shape))}" for name, shape in self.fields)

    def __eq__(self, other) -> bool:
        return isinstance(other, Layout) and self.fields == other.fields

    def __hash__(self) -> int:
        return hash(self.fields)

    def __repr__(self) -> str:
        return f"Layout({self.describe()})"


@dataclass
class ParamVector:
    """Flat float64 parameter vector plus its layout descriptor."""

    layout: Layout
    values: np.ndarray

    def __post_init__(self):
        self.values = as_array(self.values, ndim=1)
        if self.values.size != self.layout.size:
            raise LayoutError(
                f"value count {self.values.size} != layout size {self.layout.size}"
            )

    @staticmethod
    def pack(layout: Layout, arrays: Mapping[str, np.ndarray]) -> "ParamVector":
        values = np.empty(layout.size)
        seen = 0
        for name, shape in layout.fields:
            arr = as_array(arrays[name])
            if arr.shape != shape:
                raise LayoutError(f"field {name!r}: shape {arr.shape} != layout shape {shape}")
            offset, _ = layout.offset_of(name)
            values[offset : offset + arr.size] = arr.ravel()
            seen += 1
        if seen != len(arrays):
            extra = set(arrays) - {name for name, _ in layout.fields}
            raise LayoutError(f"arrays not in layout: {sorted(extra)}")
        return ParamVector(layout, values)

    def view(self, name: str) -> np.ndarray:
        offset, shape = self.layout.offset_of(name)
        return self.values[offset : offset + int(np.prod(shape))].reshape(shape)

    def to_arrays(self) -> dict[str, np.ndarray]:
        """Per-field views into the flat vector (reshaped, not copied)."""
        return {name: self.view(name) for name, _ in self.layout.fields}

    def copy(self) -> "ParamVector":
        return ParamVector(self.layout, self.values.copy())


def zeros_like(params: ParamVector) -> ParamVector:
    return ParamVector(params.layout, np.zeros(params.layout.size))


def sgd_step(params: ParamVector, grads: ParamVector, learning_rate: float) -> ParamVector:
    """One step of plain gradient descent: params - lr * grads."""
    if params.layout != grads.layout:
        raise LayoutError("params and grads have different layouts")
    return ParamVector(params.layout, params.values - learning_rate * grads.values)


def finite_difference_grad(
    f: Callable[[ParamVector], float], params: ParamVector, h: float = 1e-5
) -> ParamVector:
    """Central-difference gradient estimate of a scalar function of params.

    Serves as the independent oracle for every analytic gradient in the
    package; it never shares code with the backward passes it checks.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    base = params.values
    out = np.empty(base.size)
    for i in range(base.size):
        probe = base.copy()
        probe[i] = base[i] + h
        f_plus = float(f(ParamVector(params.layout, probe)))
        probe[i] = base[i] - h
        f_minus = float(f(ParamVector(params.layout, probe)))
        if not (math.isfinite(f_plus) and math.isfinite(f_minus)):
            raise ValueError(f"non-finite evaluation while probing coordinate {i}")
        out[i] = (f_plus - f_minus) / (2.0 * h)
    return ParamVector(params.layout, out)


# ---------------------------------------------------------------------------
# Plain multi-layer perceptrons
# ---------------------------------------------------------------------------


@dataclass
class Mlp:
    """Stack of dense layers applied in order."""

    layers: list[DenseLayer]

    @property
    def dims(self) -> tuple[int, ...]:
        return (self.layers[0].in_dim,) + tuple(layer.out_dim for layer in self.layers)


def mlp_layout(dims: Sequence[int]) -> Layout:
    fields = []
    for i in range(len(dims) - 1):
        fields.append((f"layer{i}.weights", (dims[i + 1], dims[i])))
        fields.append((f"layer{i}.bias", (dims[i + 1],)))
    return Layout(fields)


def build_mlp(
    dims: Sequence[int],
    rng: Rng,
    hidden_activation: str = "tanh",
    output_activation: str = "identity",
) -> Mlp:
    if len(dims) < 2:
        raise ShapeError("an MLP needs at least input and output dims")
    layers = []
    for i in range(len(dims) - 1):
        act = output_activation if i == len(dims) - 2 else hidden_activation
        layers.append(init_dense(dims[i], dims[i + 1], act, rng))
    return Mlp(layers)


def mlp_params(mlp: Mlp) -> ParamVector:
    layout = mlp_layout(mlp.dims)
    arrays = {}
    for i, layer in enumerate(mlp.layers):
        arrays[f"layer{i}.weights"] = layer.weights
        arrays[f"layer{i}.bias"] = layer.bias
    return ParamVector.pack(layout, arrays)


def mlp_from_params(
    dims: Sequence[int],
    params: ParamVector,
    hidden_activation: str = "tanh",
    output_activation: str = "identity",
) -> Mlp:
    layout = mlp_layout(dims)
    if params.layout != layout:
        raise LayoutError("params layout does not match the requested dims")
    layers = []
    for i in range(len(dims) - 1):
        act = output_activation if i == len(dims) - 2 else hidden_activation
        layers.append(
            DenseLayer(
                weights=params.view(f"layer{i}.weights").copy(),
                bias=params.view(f"layer{i}.bias").copy(),
                activation=act,
            )
        )
    return Mlp(layers)


def mlp_forward(mlp: Mlp, x: np.ndarray) -> np.ndarray:
    out = x
    for layer in mlp.layers:
        out = dense_forward(layer, out)
    return out


def mlp_forward_cached(mlp: Mlp, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
    inputs = []
    out = as_array(x)
    for layer in mlp.layers:
        inputs.append(out)
        out = dense_forward(layer, out)
    return out, inputs


def mlp_backward(
    mlp: Mlp, inputs: list[np.ndarray], grad_out: np.ndarray
) -> tuple[np.ndarray, ParamVector]:
    """Backpropagate ``grad_out`` through the cached forward pass."""
    grads = {}
    grad = grad_out
    for i in reversed(range(len(mlp.layers))):
        grad, grad_w, grad_b = dense_backward(mlp.layers[i], inputs[i], grad)
        grads[f"layer{i}.weights"] = grad_w
        grads[f"layer{i}.bias"] = grad_b
    return grad, ParamVector.pack(mlp_layout(mlp.dims), grads)
