"""Small dense feedforward networks with exact gradients and freeze masks.

Networks are immutable: training functions return new networks. Every
parameter is float64. Inputs may be a single vector or a batch (one sample
per row); losses are averaged over the batch.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .errors import (
    ConfigurationError,
    ParseError,
    RejectedInputError,
    TrainingDivergenceError,
)

ACTIVATIONS = ("affine", "relu", "tanh", "sigmoid", "softmax")
_ACT_CODE = {name: i for i, name in enumerate(ACTIVATIONS)}

MAGIC = b"SMNN"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sHH")
_LAYER_HEADER = struct.Struct("<IIB")
HEADER_FIXED_BYTES = _HEADER.size          # 8
HEADER_BYTES_PER_LAYER = _LAYER_HEADER.size  # 9


def header_size(n_layers: int) -> int:
    """Byte length of the serialization header for ``n_layers`` layers."""
    return HEADER_FIXED_BYTES + HEADER_BYTES_PER_LAYER * n_layers


def _frozen_array(a) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Layer:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray    # (out,)
    activation: str
    weight_frozen: bool = False
    bias_frozen: bool = False

    def __post_init__(self):
        if self.activation not in _ACT_CODE:
            raise ConfigurationError(f"unknown activation {self.activation!r}")
        object.__setattr__(self, "weight", _frozen_array(self.weight))
        object.__setattr__(self, "bias", _frozen_array(self.bias))
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise ConfigurationError(
                f"weight {self.weight.shape} and bias {self.bias.shape} do not match")

    @property
    def n_in(self) -> int:
        return self.weight.shape[1]

    @property
    def n_out(self) -> int:
        return self.weight.shape[0]


@dataclass(frozen=True, eq=False)
class DenseNet:
    layers: tuple[Layer, ...]

    def __post_init__(self):
        layers = tuple(self.layers)
        if not layers:
            raise ConfigurationError("a network needs at least one layer")
        for i in range(1, len(layers)):
            if layers[i].n_in != layers[i - 1].n_out:
                raise ConfigurationError(
                    f"layer {i} expects {layers[i].n_in} inputs but layer {i - 1} "
                    f"produces {layers[i - 1].n_out}")
        object.__setattr__(self, "layers", layers)

    @classmethod
    def init(cls, layer_sizes: Sequence[int], activations: Sequence[str] | str,
             rng: np.random.Generator | int) -> "DenseNet":
        """Glorot-uniform weights, zero biases."""
        if isinstance(rng, (int, np.integer)):
            rng = np.random.default_rng(int(rng))
        sizes = [int(s) for s in layer_sizes]
        if len(sizes) < 2 or any(s <= 0 for s in sizes):
            raise ConfigurationError(f"invalid layer sizes {layer_sizes}")
        if isinstance(activations, str):
            activations = [activations] * (len(sizes) - 1)
        if len(activations) != len(sizes) - 1:
            raise ConfigurationError("need one activation per layer")
        layers = []
        for n_in, n_out, act in zip(sizes[:-1], sizes[1:], activations):
            limit = np.sqrt(6.0 / (n_in + n_out))
            w = rng.uniform(-limit, limit, size=(n_out, n_in))
            layers.append(Layer(w, np.zeros(n_out), act))
        return cls(tuple(layers))

    @property
    def layer_sizes(self) -> list[int]:
        return [self.layers[0].n_in] + [layer.n_out for layer in self.layers]

    @property
    def activations(self) -> list[str]:
        return [layer.activation for layer in self.layers]

    @property
    def n_in(self) -> int:
        return self.layers[0].n_in

    @property
    def n_out(self) -> int:
        return self.layers[-1].n_out

    @property
    def freeze_mask(self) -> tuple[bool, ...]:
        """One flag per parameter tensor: (w0, b0, w1, b1, ...)."""
        out = []
        for layer in self.layers:
            out += [layer.weight_frozen, layer.bias_frozen]
        return tuple(out)

    def n_params(self) -> int:
        return sum(layer.weight.size + layer.bias.size for layer in self.layers)

    def tensors(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out += [layer.weight, layer.bias]
        return out

    def with_freeze_mask(self, mask: Sequence[bool]) -> "DenseNet":
        mask = [bool(m) for m in mask]
        if len(mask) != 2 * len(self.layers):
            raise ConfigurationError(
                f"freeze mask needs {2 * len(self.layers)} entries, got {len(mask)}")
        layers = tuple(
            replace(layer, weight_frozen=mask[2 * i], bias_frozen=mask[2 * i + 1])
            for i, layer in enumerate(self.layers))
        return DenseNet(layers)

    def freeze_all(self) -> "DenseNet":
        return self.with_freeze_mask([True] * (2 * len(self.layers)))

    def unfreeze_all(self) -> "DenseNet":
        return self.with_freeze_mask([False] * (2 * len(self.layers)))

    def freeze_except_last(self, n_trainable_layers: int) -> "DenseNet":
        """Freeze everything except the trailing ``n_trainable_layers`` layers."""
        n_frozen = len(self.layers) - n_trainable_layers
        mask = []
        for i in range(len(self.layers)):
            mask += [i < n_frozen] * 2
        return self.with_freeze_mask(mask)

    def sublayers(self, start: int, stop: int | None = None) -> "DenseNet":
        return DenseNet(self.layers[start:stop])

    def replace_layers(self, start: int, new_layers: Sequence[Layer]) -> "DenseNet":
        layers = list(self.layers)
        layers[start:start + len(new_layers)] = list(new_layers)
        return DenseNet(tuple(layers))

    def same_architecture(self, other: "DenseNet") -> bool:
        return (self.layer_sizes == other.layer_sizes
                and self.activations == other.activations)

    def equals(self, other: "DenseNet") -> bool:
        """Exact (bitwise) parameter and architecture equality."""
        if not self.same_architecture(other):
            return False
        return all(np.array_equal(a, b) for a, b in zip(self.tensors(), other.tensors()))

    def __call__(self, x) -> np.ndarray:
        return forward(self, x)[-1]


@dataclass(frozen=True, eq=False)
class Gradients:
    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]

    def tensors(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def matches(self, net: DenseNet) -> bool:
        return (len(self.weights) == len(net.layers)
                and all(g.shape == t.shape for g, t in zip(self.tensors(), net.tensors())))

    def scaled(self, factor: float) -> "Gradients":
        return Gradients(tuple(w * factor for w in self.weights),
                         tuple(b * factor for b in self.biases))

    def __add__(self, other: "Gradients") -> "Gradients":
        return Gradients(tuple(a + b for a, b in zip(self.weights, other.weights)),
                         tuple(a + b for a, b in zip(self.biases, other.biases)))


# Activation trace: tuple of arrays, trace[0] is the input batch, trace[-1] the output.
ActivationTrace = tuple


def _as_batch(x, n_in: int) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != n_in:
        raise RejectedInputError(
            f"input has shape {np.shape(x)}, network expects {n_in} features")
    return x, single


def _apply(act: str, z: np.ndarray) -> np.ndarray:
    if act == "affine":
        return z
    if act == "relu":
        return np.maximum(z, 0.0)
    if act == "tanh":
        return np.tanh(z)
    if act == "sigmoid":
        return 0.5 * (1.0 + np.tanh(0.5 * z))
    # softmax
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def _act_backward(act: str, a: np.ndarray, grad_a: np.ndarray) -> np.ndarray:
    """Map dL/da to dL/dz given the layer's output activation ``a``."""
    if act == "affine":
        return grad_a
    if act == "relu":
        return grad_a * (a > 0)
    if act == "tanh":
        return grad_a * (1.0 - a * a)
    if act == "sigmoid":
        return grad_a * a * (1.0 - a)
    return a * (grad_a - np.sum(grad_a * a, axis=1, keepdims=True))


def forward(net: DenseNet, x) -> ActivationTrace:
    """All layer activations, input first, output last.

    A 1-D input yields 1-D activations; a 2-D input is treated as a batch.
    """
    a, single = _as_batch(x, net.n_in)
    trace = [a]
    for layer in net.layers:
        a = _apply(layer.activation, a @ layer.weight.T + layer.bias)
        trace.append(a)
    if single:
        return tuple(t[0] for t in trace)
    return tuple(trace)


def _batched_trace(trace) -> list[np.ndarray]:
    return [t[None, :] if np.ndim(t) == 1 else t for t in trace]


def backprop(net: DenseNet, trace: ActivationTrace, grad_output=None, *,
             grad_preact=None) -> tuple[Gradients, np.ndarray]:
    """Chain rule from an output gradient back to parameters and input.

    Exactly one of ``grad_output`` (dL/d output activation) or
    ``grad_preact`` (dL/d last pre-activation) must be given. Returns the
    parameter gradients and dL/d input, shaped like the trace input.
    """
    acts = _batched_trace(trace)
    single = np.ndim(trace[0]) == 1
    if (grad_output is None) == (grad_preact is None):
        raise ConfigurationError("pass exactly one of grad_output, grad_preact")
    last = net.layers[-1]
    if grad_preact is not None:
        delta = np.asarray(grad_preact, dtype=np.float64).reshape(acts[-1].shape)
    else:
        g = np.asarray(grad_output, dtype=np.float64).reshape(acts[-1].shape)
        delta = _act_backward(last.activation, acts[-1], g)
    gw = [None] * len(net.layers)
    gb = [None] * len(net.layers)
    for i in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[i]
        gw[i] = delta.T @ acts[i]
        gb[i] = delta.sum(axis=0)
        grad_in = delta @ layer.weight
        if i > 0:
            delta = _act_backward(net.layers[i - 1].activation, acts[i], grad_in)
    grads = Gradients(tuple(gw), tuple(gb))
    return grads, (grad_in[0] if single else grad_in)


def loss_and_output_grad(net: DenseNet, output, loss_kind: str, target):
    """Return (loss, keyword args for :func:`backprop`).

    mse is the mean over every output element and sample. cross_entropy is
    ``-sum(target * log p)`` averaged over samples and requires a softmax
    output; targets need not sum to one (weighted score-function losses).
    """
    y = np.asarray(output, dtype=np.float64)
    y = y[None, :] if y.ndim == 1 else y
    t = np.asarray(target, dtype=np.float64)
    t = t[None, :] if t.ndim == 1 else t
    if t.shape != y.shape:
        raise RejectedInputError(
            f"target shape {np.shape(target)} does not match output {np.shape(output)}")
    n = y.shape[0]
    if loss_kind == "mse":
        diff = y - t
        loss = float(np.mean(diff * diff))
        return loss, {"grad_output": 2.0 * diff / diff.size}
    if loss_kind == "cross_entropy":
        if net.layers[-1].activation != "softmax":
            raise ConfigurationError(
                "cross_entropy requires a softmax output layer, got "
                f"{net.layers[-1].activation}")
        with np.errstate(divide="ignore", invalid="ignore"):
            logs = np.where(t != 0, np.log(y), 0.0)
        loss = float(-np.sum(t * logs) / n)
        grad_z = (y * t.sum(axis=1, keepdims=True) - t) / n
        return loss, {"grad_preact": grad_z}
    raise ConfigurationError(f"unsupported loss {loss_kind!r}")


def backward(net: DenseNet, trace: ActivationTrace, loss_kind: str,
             target) -> tuple[float, Gradients]:
    """Loss and exact parameter gradients for one sample or a batch."""
    loss, kw = loss_and_output_grad(net, trace[-1], loss_kind, target)
    grads, _ = backprop(net, trace, **kw)
    return loss, grads


def sgd_step(net: DenseNet, grads: Gradients, lr: float,
             step: int | None = None) -> DenseNet:
    """Plain gradient descent on unfrozen tensors. Frozen tensors are reused as-is."""
    if lr < 0:
        raise ConfigurationError(f"learning rate must be non-negative, got {lr}")
    if not grads.matches(net):
        raise ConfigurationError("gradient shapes do not match the network")
    layers = []
    for layer, gw, gb in zip(net.layers, grads.weights, grads.biases):
        w, b = layer.weight, layer.bias
        if not layer.weight_frozen:
            if not np.all(np.isfinite(gw)):
                raise TrainingDivergenceError("non-finite weight gradient", step)
            if lr:
                w = w - lr * gw
        if not layer.bias_frozen:
            if not np.all(np.isfinite(gb)):
                raise TrainingDivergenceError("non-finite bias gradient", step)
            if lr:
                b = b - lr * gb
        if w is layer.weight and b is layer.bias:
            layers.append(layer)
        else:
            layers.append(replace(layer, weight=w, bias=b))
    return DenseNet(tuple(layers))


def average(nets: Sequence[DenseNet]) -> DenseNet:
    """Elementwise parameter mean of networks sharing one architecture."""
    first = nets[0]
    layers = []
    for i, layer in enumerate(first.layers):
        w = np.mean([n.layers[i].weight for n in nets], axis=0)
        b = np.mean([n.layers[i].bias for n in nets], axis=0)
        layers.append(replace(layer, weight=w, bias=b))
    return DenseNet(tuple(layers))


def serialize(net: DenseNet) -> bytes:
    """Binary encoding; see ``deserialize`` for the layout."""
    parts = [_HEADER.pack(MAGIC, FORMAT_VERSION, len(net.layers))]
    for layer in net.layers:
        parts.append(_LAYER_HEADER.pack(layer.n_in, layer.n_out, _ACT_CODE[layer.activation]))
    for layer in net.layers:
        parts.append(layer.weight.astype("<f8").tobytes(order="C"))
        parts.append(layer.bias.astype("<f8").tobytes())
    return b"".join(parts)


def serialized_size(net: DenseNet) -> int:
    return header_size(len(net.layers)) + 8 * net.n_params()


def deserialize(data: bytes) -> DenseNet:
    """Inverse of :func:`serialize`.

    Layout: ``b"SMNN"``, version u16, layer count u16, then per layer
    (in u32, out u32, activation u8), then every layer's weights (row-major)
    followed by its bias, as little-endian float64. Freeze flags are not
    part of the format; deserialized networks are fully trainable.
    """
    data = bytes(data)
    if len(data) < _HEADER.size:
        raise ParseError("truncated header", offset=len(data), field="header")
    magic, version, n_layers = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise ParseError(f"bad magic {magic!r}", offset=0, field="magic")
    if version != FORMAT_VERSION:
        raise ParseError(f"unsupported version {version}", offset=4, field="version")
    if n_layers == 0:
        raise ParseError("layer count is zero", offset=6, field="layer_count")
    offset = _HEADER.size
    specs = []
    for i in range(n_layers):
        if offset + _LAYER_HEADER.size > len(data):
            raise ParseError(f"truncated header of layer {i}", offset=offset,
                             field="layer_header")
        n_in, n_out, code = _LAYER_HEADER.unpack_from(data, offset)
        if code >= len(ACTIVATIONS):
            raise ParseError(f"unknown activation code {code}", offset=offset + 8,
                             field="activation")
        if n_in == 0 or n_out == 0:
            raise ParseError(f"layer {i} has a zero dimension", offset=offset,
                             field="layer_header")
        specs.append((n_in, n_out, ACTIVATIONS[code]))
        offset += _LAYER_HEADER.size
    for i in range(1, n_layers):
        if specs[i][0] != specs[i - 1][1]:
            raise ParseError(f"layer {i} input size disagrees with layer {i - 1}",
                             offset=HEADER_FIXED_BYTES + HEADER_BYTES_PER_LAYER * i,
                             field="layer_header")
    layers = []
    for n_in, n_out, act in specs:
        need = 8 * (n_in * n_out + n_out)
        if offset + need > len(data):
            raise ParseError("truncated parameter block", offset=len(data),
                             field="parameters")
        flat = np.frombuffer(data, dtype="<f8", count=n_in * n_out + n_out, offset=offset)
        w = flat[:n_in * n_out].reshape(n_out, n_in).astype(np.float64)
        b = flat[n_in * n_out:].astype(np.float64)
        layers.append(Layer(w, b, act))
        offset += need
    if offset != len(data):
        raise ParseError(f"{len(data) - offset} trailing bytes", offset=offset,
                         field="trailer")
    return DenseNet(tuple(layers))
