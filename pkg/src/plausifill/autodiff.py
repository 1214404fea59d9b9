"""Dense float64 tensors with reverse-mode automatic differentiation.

Each forward operation records its input tensors and a closure mapping the
output gradient to input gradients, so the executed ops form a graph whose
traversal order is a valid topological order (inputs always precede the op
that consumed them).  ``backward`` on a scalar loss replays that record in
exact reverse order and accumulates gradients into every ``requires_grad``
tensor, summing when a tensor feeds several ops.

Everything is 64-bit so central finite-difference checks stay tight.
"""

from __future__ import annotations

import hashlib
import math
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, InputError, NumericError, ShapeError, UsageError

ACTIVATION_KINDS = ("tanh", "gelu", "sigmoid")

_SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)
_GELU_CUBIC = 0.044715
# sigmoid saturates to exactly 0.0/1.0 in float64 around |x| ~ 37; pinch the
# output into the open interval so downstream logs stay finite and the
# (1, 5) rescale stays strict even after rounding.
_SIGMOID_LO = 1e-15
_SIGMOID_HI = 1.0 - 1e-15

_grad_enabled = True


class no_grad:
    """Context manager that suspends graph recording (evaluation mode)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, exc_type, exc, tb):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


def _name_entropy(name: str) -> int:
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


class RandomStreams:
    """Named seeded random streams.

    ``stream(name)`` always derives its state from ``(seed, name)`` only, so
    two runs with the same seed replay identical draws regardless of how many
    other streams exist.
    """

    def __init__(self, seed: int):
        if int(seed) < 0:
            raise ConfigError("seed must be a non-negative integer")
        self.seed = int(seed)
        self._streams: dict[str, np.random.Generator] = {}

    def stream(self, name: str) -> np.random.Generator:
        gen = self._streams.get(name)
        if gen is None:
            gen = np.random.default_rng(
                np.random.SeedSequence([self.seed, _name_entropy(name)])
            )
            self._streams[name] = gen
        return gen


def _check_finite(arr: np.ndarray, op: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values produced by {op}")


class Tensor:
    """N-dimensional float64 array participating in reverse-mode autodiff."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_grad_fn", "_op")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=np.float64)
        _check_finite(arr, "tensor construction")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._grad_fn: Callable[[np.ndarray], tuple] | None = None
        self._op = "leaf"

    @classmethod
    def _from_op(cls, data, parents, grad_fn, op: str) -> "Tensor":
        _check_finite(data, op)
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        if _grad_enabled and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._grad_fn = grad_fn
        else:
            out.requires_grad = False
            out._parents = ()
            out._grad_fn = None
        out._op = op
        return out

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, op={self._op}, requires_grad={self.requires_grad})"

    # -- operator sugar -------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, mul(other, -1.0) if isinstance(other, Tensor) else -np.asarray(other))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims: bool = False):
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return tensor_mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, *shape)


class Parameter(Tensor):
    """A named trainable tensor; names must be unique within a model."""

    __slots__ = ("name",)

    def __init__(self, name: str, data):
        super().__init__(data, requires_grad=True)
        self.name = name

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.data.shape})"


def check_unique_names(params: Sequence[Parameter]) -> None:
    seen: set[str] = set()
    for p in params:
        if p.name in seen:
            raise UsageError(f"duplicate parameter name: {p.name}")
        seen.add(p.name)


def normal_param(name: str, shape, rng: np.random.Generator, std: float = 0.02) -> Parameter:
    return Parameter(name, rng.normal(0.0, std, size=shape))


def xavier_param(name: str, shape, rng: np.random.Generator) -> Parameter:
    """Glorot-scaled 2-d weight; at small widths a fixed tiny std stalls training."""
    fan_in, fan_out = shape
    std = math.sqrt(2.0 / (fan_in + fan_out))
    return Parameter(name, rng.normal(0.0, std, size=shape))


def zeros_param(name: str, shape) -> Parameter:
    return Parameter(name, np.zeros(shape))


def ones_param(name: str, shape) -> Parameter:
    return Parameter(name, np.ones(shape))


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# -- arithmetic ----------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data + b.data

    def grad_fn(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return Tensor._from_op(out, (a, b), grad_fn, "add")


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data * b.data

    def grad_fn(g):
        return (
            _unbroadcast(g * b.data, a.data.shape),
            _unbroadcast(g * a.data, b.data.shape),
        )

    return Tensor._from_op(out, (a, b), grad_fn, "mul")


def matmul(a, b) -> Tensor:
    """Matrix product; either operand may carry leading batch axes."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs >=2-d operands, got {a.shape} @ {b.shape}")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")

    if b.ndim == 2:
        k, m = b.data.shape
        flat = a.data.reshape(-1, k)
        out = (flat @ b.data).reshape(*a.data.shape[:-1], m)

        def grad_fn(g):
            gflat = g.reshape(-1, m)
            ga = (gflat @ b.data.T).reshape(a.data.shape)
            gb = flat.T @ gflat
            return ga, gb

    else:
        out = np.matmul(a.data, b.data)

        def grad_fn(g):
            ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
            gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
            return _unbroadcast(ga, a.data.shape), _unbroadcast(gb, b.data.shape)

    return Tensor._from_op(out, (a, b), grad_fn, "matmul")


def tensor_sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def grad_fn(g):
        if axis is None:
            return (np.broadcast_to(g, x.data.shape).copy(),)
        g_exp = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(g_exp, x.data.shape).copy(),)

    return Tensor._from_op(out, (x,), grad_fn, "sum")


def tensor_mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = x.data.size if axis is None else x.data.shape[axis]
    return mul(tensor_sum(x, axis=axis, keepdims=keepdims), 1.0 / count)


def reshape(x: Tensor, *shape) -> Tensor:
    if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
        shape = tuple(shape[0])
    out = x.data.reshape(shape)

    def grad_fn(g):
        return (g.reshape(x.data.shape),)

    return Tensor._from_op(out, (x,), grad_fn, "reshape")


def swap_last_axes(x: Tensor) -> Tensor:
    if x.ndim < 2:
        raise ShapeError("swap_last_axes needs a >=2-d tensor")
    out = np.swapaxes(x.data, -1, -2).copy()

    def grad_fn(g):
        return (np.swapaxes(g, -1, -2),)

    return Tensor._from_op(out, (x,), grad_fn, "swap_last_axes")


def slice_last(x: Tensor, start: int, stop: int) -> Tensor:
    """Slice [start:stop) of the last axis; the gradient scatters back."""
    if not (0 <= start < stop <= x.data.shape[-1]):
        raise ShapeError(f"slice [{start}:{stop}) out of range for last axis {x.data.shape[-1]}")
    out = x.data[..., start:stop].copy()

    def grad_fn(g):
        gx = np.zeros_like(x.data)
        gx[..., start:stop] = g
        return (gx,)

    return Tensor._from_op(out, (x,), grad_fn, "slice_last")


def slice_first(x: Tensor, start: int, stop: int) -> Tensor:
    """Slice [start:stop) of the first axis (used for position tables)."""
    if not (0 <= start < stop <= x.data.shape[0]):
        raise ShapeError(f"slice [{start}:{stop}) out of range for first axis {x.data.shape[0]}")
    out = x.data[start:stop].copy()

    def grad_fn(g):
        gx = np.zeros_like(x.data)
        gx[start:stop] = g
        return (gx,)

    return Tensor._from_op(out, (x,), grad_fn, "slice_first")


def concat_last(parts: Sequence[Tensor]) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    out = np.concatenate([p.data for p in parts], axis=-1)
    widths = [p.data.shape[-1] for p in parts]

    def grad_fn(g):
        grads, offset = [], 0
        for w in widths:
            grads.append(g[..., offset:offset + w])
            offset += w
        return tuple(grads)

    return Tensor._from_op(out, tuple(parts), grad_fn, "concat_last")


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row lookup ``table[ids]``; gradients scatter-add into the table."""
    ids = np.asarray(ids)
    if not np.issubdtype(ids.dtype, np.integer):
        raise InputError("embedding ids must be integers")
    if ids.size and (ids.min() < 0 or ids.max() >= table.data.shape[0]):
        raise InputError(
            f"embedding id out of range [0, {table.data.shape[0]}): min={ids.min()}, max={ids.max()}"
        )
    out = table.data[ids]

    def grad_fn(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids, g)
        return (gt,)

    return Tensor._from_op(out, (table,), grad_fn, "embedding")


# -- pointwise nonlinearities ---------------------------------------------


def log(x: Tensor) -> Tensor:
    if np.any(x.data <= 0.0):
        raise NumericError("log of a non-positive value")
    out = np.log(x.data)

    def grad_fn(g):
        return (g / x.data,)

    return Tensor._from_op(out, (x,), grad_fn, "log")


def exp(x: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        out = np.exp(x.data)

    def grad_fn(g):
        return (g * out,)

    return Tensor._from_op(out, (x,), grad_fn, "exp")


def clamp_min(x: Tensor, floor: float) -> Tensor:
    """Elementwise max(x, floor); gradient passes only where x > floor."""
    out = np.maximum(x.data, floor)
    passed = x.data > floor

    def grad_fn(g):
        return (g * passed,)

    return Tensor._from_op(out, (x,), grad_fn, "clamp_min")


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)

    def grad_fn(g):
        return (g * (1.0 - out * out),)

    return Tensor._from_op(out, (x,), grad_fn, "tanh")


def sigmoid(x: Tensor) -> Tensor:
    d = x.data
    out = np.where(d >= 0, 1.0 / (1.0 + np.exp(-np.abs(d))), np.exp(-np.abs(d)) / (1.0 + np.exp(-np.abs(d))))
    out = np.clip(out, _SIGMOID_LO, _SIGMOID_HI)

    def grad_fn(g):
        return (g * out * (1.0 - out),)

    return Tensor._from_op(out, (x,), grad_fn, "sigmoid")


def gelu(x: Tensor) -> Tensor:
    """Tanh-approximation gelu: 0.5*x*(1 + tanh(sqrt(2/pi)*(x + 0.044715*x^3)))."""
    d = x.data
    inner = _SQRT_2_OVER_PI * (d + _GELU_CUBIC * d ** 3)
    t = np.tanh(inner)
    out = 0.5 * d * (1.0 + t)

    def grad_fn(g):
        dinner = _SQRT_2_OVER_PI * (1.0 + 3.0 * _GELU_CUBIC * d * d)
        return (g * (0.5 * (1.0 + t) + 0.5 * d * (1.0 - t * t) * dinner),)

    return Tensor._from_op(out, (x,), grad_fn, "gelu")


def activation(x: Tensor, kind: str) -> Tensor:
    if kind == "tanh":
        return tanh(x)
    if kind == "gelu":
        return gelu(x)
    if kind == "sigmoid":
        return sigmoid(x)
    raise ConfigError(f"unknown activation kind: {kind!r} (expected one of {ACTIVATION_KINDS})")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def grad_fn(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return ((g - dot) * out,)

    return Tensor._from_op(out, (x,), grad_fn, "softmax")


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis to zero mean / unit variance, then affine."""
    if eps <= 0:
        raise ConfigError("layer_norm eps must be > 0")
    d = x.data
    mu = d.mean(axis=-1, keepdims=True)
    var = ((d - mu) ** 2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (d - mu) * inv
    out = gamma.data * xhat + beta.data

    def grad_fn(g):
        n = d.shape[-1]
        gs = g * gamma.data
        gx = inv * (
            gs
            - gs.mean(axis=-1, keepdims=True)
            - xhat * (gs * xhat).mean(axis=-1, keepdims=True)
        )
        ggamma = _unbroadcast(g * xhat, gamma.data.shape)
        gbeta = _unbroadcast(g, beta.data.shape)
        return gx, ggamma, gbeta

    return Tensor._from_op(out, (x, gamma, beta), grad_fn, "layer_norm")


def dropout(x: Tensor, p: float, mode: str, rng: np.random.Generator) -> Tensor:
    """Inverted dropout: survivors scaled by 1/(1-p) at train time, eval is identity."""
    if not 0.0 <= p < 1.0:
        raise ConfigError(f"dropout probability must be in [0, 1), got {p}")
    if mode not in ("train", "eval"):
        raise ConfigError(f"dropout mode must be 'train' or 'eval', got {mode!r}")
    if mode == "eval":
        return x
    keep = (rng.random(x.data.shape) >= p) / (1.0 - p)
    out = x.data * keep

    def grad_fn(g):
        return (g * keep,)

    return Tensor._from_op(out, (x,), grad_fn, "dropout")


# -- backward -------------------------------------------------------------


def backward(loss: Tensor) -> None:
    """Populate .grad of every requires_grad tensor reachable from a scalar loss.

    Gradients accumulate: tensors consumed by several ops sum their
    contributions, and repeated backward calls keep adding until zero_grad.
    """
    if loss.data.size != 1:
        raise UsageError(f"backward requires a scalar loss, got shape {loss.data.shape}")
    if not loss.requires_grad:
        raise UsageError("loss does not require grad; nothing to differentiate")

    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))

    if loss.grad is None:
        loss.grad = np.zeros_like(loss.data)
    loss.grad = loss.grad + np.ones_like(loss.data)

    for node in reversed(topo):
        if node._grad_fn is None:
            continue
        grads = node._grad_fn(node.grad)
        for parent, g in zip(node._parents, grads):
            if not parent.requires_grad or g is None:
                continue
            if parent.grad is None:
                parent.grad = np.zeros_like(parent.data)
            parent.grad += g
