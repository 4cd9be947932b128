"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every operation builds a node that remembers its parents and how to push a
gradient back to them.  Calling ``backward()`` on a scalar result walks the
recorded graph in reverse topological order and accumulates gradients into
``Tensor.grad`` buffers.  All arithmetic is 64-bit; forward results are
checked for NaN/Inf and abort loudly instead of propagating garbage.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

# Additive mask value standing in for minus infinity.  Large enough that
# exp() underflows to exactly 0.0 in float64, small enough to stay finite.
MASK_VALUE = -1e9

CHECK_FINITE = True


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class NonFiniteError(FloatingPointError):
    """A forward operation produced NaN or Inf."""


def _check_finite(data: np.ndarray, op: str) -> None:
    if CHECK_FINITE and not np.all(np.isfinite(data)):
        bad = np.argwhere(~np.isfinite(np.atleast_1d(data)))[0]
        raise NonFiniteError(f"{op}: non-finite value at index {tuple(bad)}")


class Tensor:
    """N-dimensional float64 array with optional gradient tracking."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._vjp: Callable[[np.ndarray], tuple] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Accumulate d(self)/d(leaf) into every reachable tracked tensor."""
        if not self.requires_grad:
            raise ValueError("backward() on a tensor that does not track gradients")
        if grad is None:
            if self.data.size != 1:
                raise ShapeError(
                    f"backward() without a seed gradient needs a scalar, got shape {self.shape}")
            grad = np.ones_like(self.data)
        grad = np.asarray(grad, dtype=np.float64)
        if grad.shape != self.data.shape:
            raise ShapeError(f"seed gradient shape {grad.shape} != tensor shape {self.shape}")

        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                stack.append((p, False))

        pending: dict[int, np.ndarray] = {id(self): grad}
        for node in reversed(topo):
            g = pending.pop(id(node), None)
            if g is None:
                continue
            if node.grad is None:
                node.grad = np.zeros_like(node.data)
            node.grad += g
            if node._vjp is None:
                continue
            for parent, pg in zip(node._parents, node._vjp(g)):
                if pg is None or not parent.requires_grad:
                    continue
                acc = pending.get(id(parent))
                pending[id(parent)] = pg if acc is None else acc + pg

    # -- operator sugar ----------------------------------------------------
    def __add__(self, other):
        return add(self, _wrap(other))

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(_wrap(other)))

    def __rsub__(self, other):
        return add(_wrap(other), neg(self))

    def __mul__(self, other):
        return mul(self, _wrap(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("tensor/tensor division is not part of the op set; multiply by a reciprocal constant")
        return mul(self, _wrap(1.0 / other))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, _wrap(other))

    def __repr__(self) -> str:
        flag = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], vjp, op: str) -> Tensor:
    data = np.asarray(data, dtype=np.float64)
    _check_finite(data, op)
    out = Tensor(data, requires_grad=any(p.requires_grad for p in parents))
    if out.requires_grad:
        out._parents = tuple(parents)
        out._vjp = vjp
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the original operand shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# -- arithmetic -------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    data = a.data + b.data

    def vjp(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _make(data, (a, b), vjp, "add")


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def mul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data * b.data

    def vjp(g):
        return (_unbroadcast(g * b.data, a.data.shape),
                _unbroadcast(g * a.data, b.data.shape))

    return _make(data, (a, b), vjp, "mul")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs rank >= 2 operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} @ {b.shape}")
    data = np.matmul(a.data, b.data)

    def vjp(g):
        ga = np.matmul(g, b.data.swapaxes(-1, -2))
        gb = np.matmul(a.data.swapaxes(-1, -2), g)
        return _unbroadcast(ga, a.data.shape), _unbroadcast(gb, b.data.shape)

    return _make(data, (a, b), vjp, "matmul")


def swapaxes(a: Tensor, ax1: int, ax2: int) -> Tensor:
    return _make(a.data.swapaxes(ax1, ax2), (a,),
                 lambda g: (g.swapaxes(ax1, ax2),), "swapaxes")


def transpose2d(a: Tensor) -> Tensor:
    return swapaxes(a, -1, -2)


def reshape(a: Tensor, shape) -> Tensor:
    return _make(a.data.reshape(shape), (a,),
                 lambda g: (g.reshape(a.data.shape),), "reshape")


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = list(tensors)
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = np.cumsum([t.data.shape[axis] for t in tensors])[:-1]

    def vjp(g):
        return tuple(np.split(g, sizes, axis=axis))

    return _make(data, tensors, vjp, "concat")


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, a.data.shape).copy(),)
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.data.shape).copy(),)

    return _make(data, (a,), vjp, "sum")


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = a.data.size
    else:
        count = a.data.shape[axis]
    return tsum(a, axis=axis, keepdims=keepdims) * (1.0 / count)


# -- elementwise nonlinearities ---------------------------------------------

def relu(a: Tensor) -> Tensor:
    data = np.maximum(a.data, 0.0)
    return _make(data, (a,), lambda g: (g * (a.data > 0.0),), "relu")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # Evaluate exp only on -|x| so neither branch can overflow.
    z = np.exp(-np.abs(x))
    return np.where(x >= 0.0, 1.0 / (1.0 + z), z / (1.0 + z))


def sigmoid(a: Tensor) -> Tensor:
    y = _sigmoid(a.data)
    return _make(y, (a,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return _make(y, (a,), lambda g: (g * (1.0 - y * y),), "tanh")


def tabs(a: Tensor) -> Tensor:
    return _make(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),), "abs")


def softplus(a: Tensor) -> Tensor:
    """log(1 + exp(x)), evaluated as max(x, 0) + log1p(exp(-|x|))."""
    x = a.data
    y = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
    s = _sigmoid(x)
    return _make(y, (a,), lambda g: (g * s,), "softplus")


# -- normalization and attention kernels --------------------------------------

def softmax_rows(a: Tensor) -> Tensor:
    """Softmax over the trailing axis, stabilized by max subtraction."""
    x = a.data
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    y = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        inner = (g * y).sum(axis=-1, keepdims=True)
        return (y * (g - inner),)

    return _make(y, (a,), vjp, "softmax_rows")


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize each trailing-axis vector to mean 0, variance 1, then affine."""
    d = x.data.shape[-1]
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    data = xhat * gamma.data + beta.data

    def vjp(g):
        lead = tuple(range(g.ndim - 1))
        dgamma = _unbroadcast((g * xhat).sum(axis=lead), gamma.data.shape)
        dbeta = _unbroadcast(g.sum(axis=lead), beta.data.shape)
        dxhat = g * gamma.data
        dx = (inv / d) * (d * dxhat
                          - dxhat.sum(axis=-1, keepdims=True)
                          - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True))
        return dx, dgamma, dbeta

    return _make(data, (x, gamma, beta), vjp, "layer_norm")


def dropout(x: Tensor, rate: float, mode: str = "element",
            training: bool = True, rng: np.random.Generator | None = None) -> Tensor:
    """Zero entries (or whole feature channels) and rescale survivors.

    ``channel`` mode shares one mask across the second-to-last axis, so a
    dropped feature channel vanishes from every node of the same sample.
    """
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if mode not in ("element", "channel"):
        raise ValueError(f"unknown dropout mode {mode!r}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("training-mode dropout needs an rng")
    if mode == "element":
        shape = x.data.shape
    else:
        if x.ndim < 2:
            raise ShapeError("channel dropout needs rank >= 2 input")
        shape = x.data.shape[:-2] + (1,) + x.data.shape[-1:]
    keep = (rng.random(shape) >= rate) / (1.0 - rate)
    return mul(x, Tensor(keep))


def rowwise_inner(qr: Tensor, kr: Tensor) -> Tensor:
    """Per-row inner products: out[..., k, l] = qr[..., k, :] . kr[..., k, l, :]."""
    if qr.ndim + 1 != kr.ndim or qr.shape[-1] != kr.shape[-1] or qr.shape[-2] != kr.shape[-3]:
        raise ShapeError(f"rowwise_inner shapes disagree: qr {qr.shape}, kr {kr.shape}")
    data = np.einsum("...kf,...klf->...kl", qr.data, kr.data)

    def vjp(g):
        gq = np.einsum("...kl,...klf->...kf", g, kr.data)
        gk = np.einsum("...kl,...kf->...klf", g, qr.data)
        return gq, gk

    return _make(data, (qr, kr), vjp, "rowwise_inner")


def rowwise_mix(a: Tensor, vr: Tensor) -> Tensor:
    """Attention-weighted sum of per-pair vectors: out[..., k, v] = sum_l a[..., k, l] vr[..., k, l, v]."""
    if a.ndim + 1 != vr.ndim or a.shape[-1] != vr.shape[-2] or a.shape[-2] != vr.shape[-3]:
        raise ShapeError(f"rowwise_mix shapes disagree: a {a.shape}, vr {vr.shape}")
    data = np.einsum("...kl,...klv->...kv", a.data, vr.data)

    def vjp(g):
        ga = np.einsum("...kv,...klv->...kl", g, vr.data)
        gv = np.einsum("...kl,...kv->...klv", a.data, g)
        return ga, gv

    return _make(data, (a, vr), vjp, "rowwise_mix")
