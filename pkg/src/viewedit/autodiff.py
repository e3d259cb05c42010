"""Minimal dense-tensor reverse-mode autodiff on numpy arrays.

Single-threaded, tape-based, deterministic. Broadcasting is restricted to
leading batch dimensions: two operands are compatible when their shapes are
equal or one shape is a trailing suffix of the other; anything else needs an
explicit reshape. Contracts are defined at float64; float32 is used for
training speed.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np

from .errors import ShapeError

LN_EPS = 1e-5

# tanh-form gelu constant sqrt(2/pi)
_GELU_C = math.sqrt(2.0 / math.pi)


def _suffix_compatible(sa: tuple, sb: tuple) -> bool:
    if sa == sb:
        return True
    if len(sa) > len(sb):
        return sa[len(sa) - len(sb):] == sb
    return sb[len(sb) - len(sa):] == sa


def _reduce_to_shape(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum gradient over the leading broadcast dims down to `shape`."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    return g.sum(axis=tuple(range(extra)))


def _bmm(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matmul with fast paths: fold to one GEMM when rhs is 2-D, else loop
    np.dot over flattened batch (faster than stacked np.matmul here)."""
    if a.ndim == 2 and b.ndim == 2:
        return np.dot(a, b)
    if b.ndim == 2:
        lead = a.shape[:-2]
        out = np.dot(a.reshape(-1, a.shape[-1]), b)
        return out.reshape(*lead, a.shape[-2], b.shape[-1])
    lead = a.shape[:-2]
    a2 = a.reshape((-1,) + a.shape[-2:])
    b2 = b.reshape((-1,) + b.shape[-2:])
    out = np.empty((a2.shape[0], a2.shape[1], b2.shape[2]),
                   dtype=np.result_type(a2.dtype, b2.dtype))
    for i in range(a2.shape[0]):
        np.dot(a2[i], b2[i], out=out[i])
    return out.reshape(lead + (a.shape[-2], b.shape[-1]))


class Tensor:
    """Dense n-d float tensor participating in a reverse-mode tape."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp", "_needs_grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data: np.ndarray = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._vjp: Callable[[np.ndarray], tuple] | None = None
        self._needs_grad = self.requires_grad

    # -- construction helpers -------------------------------------------------

    @staticmethod
    def _from_op(data: np.ndarray, parents: tuple["Tensor", ...],
                 vjp: Callable[[np.ndarray], tuple]) -> "Tensor":
        out = Tensor(data)
        if any(p._needs_grad for p in parents):
            out._parents = parents
            out._vjp = vjp
            out._needs_grad = True
        return out

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # -- operators ------------------------------------------------------------

    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, axes):
        return transpose(self, axes)

    # -- backward -------------------------------------------------------------

    def backward(self) -> None:
        """Reverse-mode sweep from a scalar loss; fills .grad on every
        reachable tensor that requires (or feeds) gradients."""
        if self.data.size != 1:
            raise ShapeError(f"backward() needs a scalar loss, got shape {self.shape}")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p._needs_grad and id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._vjp is None or node.grad is None:
                continue
            gs = node._vjp(node.grad)
            for p, g in zip(node._parents, gs):
                if g is None or not p._needs_grad:
                    continue
                if p.grad is None:
                    p.grad = g
                else:
                    p.grad = p.grad + g
            if not node.requires_grad and node is not self:
                node.grad = None  # free intermediate grads as we go


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x))


# -- elementwise / structural ops ---------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    if not _suffix_compatible(a.shape, b.shape):
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} are not "
                         "equal or leading-batch broadcastable")
    out = a.data + b.data

    def vjp(g):
        return _reduce_to_shape(g, a.shape), _reduce_to_shape(g, b.shape)

    return Tensor._from_op(out, (a, b), vjp)


def sub(a: Tensor, b: Tensor) -> Tensor:
    if not _suffix_compatible(a.shape, b.shape):
        raise ShapeError(f"sub: shapes {a.shape} and {b.shape} are not "
                         "equal or leading-batch broadcastable")
    out = a.data - b.data

    def vjp(g):
        return _reduce_to_shape(g, a.shape), -_reduce_to_shape(g, b.shape)

    return Tensor._from_op(out, (a, b), vjp)


def mul(a: Tensor, b: Tensor) -> Tensor:
    if not _suffix_compatible(a.shape, b.shape):
        raise ShapeError(f"mul: shapes {a.shape} and {b.shape} are not "
                         "equal or leading-batch broadcastable")
    out = a.data * b.data
    ad, bd = a.data, b.data

    def vjp(g):
        return _reduce_to_shape(g * bd, a.shape), _reduce_to_shape(g * ad, b.shape)

    return Tensor._from_op(out, (a, b), vjp)


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)
    out = a.data * s

    def vjp(g):
        return (g * s,)

    return Tensor._from_op(out, (a,), vjp)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    sa, sb = a.shape, b.shape
    if len(sa) < 2 or len(sb) < 2 or sa[-1] != sb[-2]:
        raise ShapeError(f"matmul: inner dims of {sa} and {sb} do not align")
    if len(sb) > 2 and sa[:-2] != sb[:-2]:
        raise ShapeError(f"matmul: batch dims of {sa} and {sb} differ")
    out = _bmm(a.data, b.data)
    ad, bd = a.data, b.data

    def vjp(g):
        if bd.ndim == 2:
            lead = ad.shape[:-2]
            g2 = g.reshape(-1, g.shape[-1])
            da = np.dot(g2, bd.T).reshape(ad.shape)
            db = np.dot(ad.reshape(-1, ad.shape[-1]).T, g2)
            return da, db
        da = _bmm(g, np.swapaxes(bd, -1, -2))
        db = _bmm(np.swapaxes(ad, -1, -2), g)
        return da, db

    return Tensor._from_op(out, (a, b), vjp)


def reshape(a: Tensor, shape: tuple) -> Tensor:
    try:
        out = a.data.reshape(shape)
    except ValueError as e:
        raise ShapeError(f"reshape: cannot view {a.shape} as {shape}") from e
    old = a.shape

    def vjp(g):
        return (g.reshape(old),)

    return Tensor._from_op(out, (a,), vjp)


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    if sorted(axes) != list(range(a.data.ndim)):
        raise ShapeError(f"transpose: axes {axes} invalid for shape {a.shape}")
    out = a.data.transpose(axes)
    inv = tuple(np.argsort(axes))

    def vjp(g):
        return (g.transpose(inv),)

    return Tensor._from_op(out, (a,), vjp)


def concatenate(tensors: Sequence[Tensor], axis: int) -> Tensor:
    ts = list(tensors)
    base = list(ts[0].shape)
    for t in ts[1:]:
        other = list(t.shape)
        if len(other) != len(base) or any(
                i != (axis % len(base)) and other[i] != base[i] for i in range(len(base))):
            raise ShapeError(f"concatenate: shape {t.shape} incompatible with "
                             f"{ts[0].shape} along axis {axis}")
    out = np.concatenate([t.data for t in ts], axis=axis)
    sizes = [t.shape[axis] for t in ts]

    def vjp(g):
        return tuple(np.split(g, np.cumsum(sizes)[:-1], axis=axis))

    return Tensor._from_op(out, tuple(ts), vjp)


def slice_axis(a: Tensor, axis: int, start: int, stop: int) -> Tensor:
    idx = [slice(None)] * a.data.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)
    out = a.data[idx]
    shape = a.shape
    dtype = a.dtype

    def vjp(g):
        full = np.zeros(shape, dtype=dtype)
        full[idx] = g
        return (full,)

    return Tensor._from_op(out, (a,), vjp)


def take_rows(a: Tensor, indices: np.ndarray) -> Tensor:
    """Row gather along axis 0 (embedding-table lookup)."""
    idx = np.asarray(indices)
    if idx.ndim != 1 or not np.issubdtype(idx.dtype, np.integer):
        raise ShapeError(f"take_rows: indices must be a 1-d integer array, got {idx.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[0]):
        raise IndexError(f"take_rows: index out of range for table of {a.shape[0]} rows")
    out = a.data[idx]
    shape = a.shape
    dtype = a.dtype

    def vjp(g):
        full = np.zeros(shape, dtype=dtype)
        np.add.at(full, idx, g)
        return (full,)

    return Tensor._from_op(out, (a,), vjp)


def mean(a: Tensor, axis=None) -> Tensor:
    out = a.data.mean(axis=axis)
    shape = a.shape
    n = a.data.size if axis is None else shape[axis]

    def vjp(g):
        if axis is None:
            return (np.full(shape, g / n, dtype=a.data.dtype),)
        return (np.broadcast_to(np.expand_dims(g, axis) / n, shape).copy(),)

    return Tensor._from_op(out, (a,), vjp)


def tsum(a: Tensor, axis=None) -> Tensor:
    out = a.data.sum(axis=axis)
    shape = a.shape

    def vjp(g):
        if axis is None:
            return (np.full(shape, g, dtype=a.data.dtype),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return Tensor._from_op(out, (a,), vjp)


def layer_norm(a: Tensor, eps: float = LN_EPS) -> Tensor:
    """Normalize the last axis to zero mean / unit variance (pre-affine).
    Zero-variance rows come out as zeros thanks to the eps in the root."""
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = np.mean(xc * xc, axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = xc * inv

    def vjp(g):
        gm = g.mean(axis=-1, keepdims=True)
        gym = np.mean(g * y, axis=-1, keepdims=True)
        return (inv * (g - gm - y * gym),)

    return Tensor._from_op(y, (a,), vjp)


def softmax(a: Tensor) -> Tensor:
    """Softmax along the last axis; rows sum to 1."""
    x = a.data
    y = np.empty_like(x)
    np.subtract(x, x.max(axis=-1, keepdims=True), out=y)
    np.exp(y, out=y)
    y /= y.sum(axis=-1, keepdims=True)

    def vjp(g):
        dot = np.sum(g * y, axis=-1, keepdims=True)
        return (y * (g - dot),)

    return Tensor._from_op(y, (a,), vjp)


def gelu(a: Tensor) -> Tensor:
    """Gaussian error linear unit (tanh form)."""
    x = a.data
    x3 = x * x * x
    u = _GELU_C * (x + 0.044715 * x3)
    th = np.tanh(u)

    def vjp(g):
        du = _GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
        return (g * (0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du),)

    return Tensor._from_op(0.5 * x * (1.0 + th), (a,), vjp)
