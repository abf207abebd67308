"""Minimal reverse-mode differentiation over dense float64 arrays.

This is not a general autodiff system: it supports exactly the primitives the
trainable parts of the package are composed of (affine maps, relu, sigmoid,
dropout, row-wise l2 normalization, concatenation, gather / segment-mean
aggregation, Frobenius-norm differences, row-wise dot products, log and the
scalar arithmetic needed to combine loss terms).  Everything runs on plain
numpy arrays in C order; results are deterministic for fixed inputs and a
fixed RNG.
"""

from __future__ import annotations

import numpy as np

from ..errors import DimensionError

__all__ = [
    "Tensor",
    "constant",
    "matmul",
    "add",
    "sub",
    "mul",
    "neg",
    "affine",
    "relu",
    "sigmoid",
    "log",
    "dropout",
    "row_l2_normalize",
    "concat_cols",
    "concat_rows",
    "gather_rows",
    "segment_mean",
    "rowwise_dot",
    "frobenius_diff",
    "sum_all",
    "scale",
]


def _as_array(x) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    return np.ascontiguousarray(a)


class Tensor:
    """A float64 array plus the backward closure that produced it."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, parents=(), backward=None, name=None):
        self.data = _as_array(data)
        self.grad = None
        self.requires_grad = bool(requires_grad) or any(p.requires_grad for p in parents)
        self._parents = tuple(parents)
        self._backward = backward
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError("item() requires a single-element tensor")
        return float(self.data.reshape(()))

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self) -> None:
        """Populate .grad on every upstream tensor with requires_grad."""
        if self.data.size != 1:
            raise DimensionError("backward() requires a scalar loss tensor")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                stack.append((p, False))
        self._accumulate(np.ones_like(self.data))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # Operator sugar used by the model code.
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def constant(x, name=None) -> Tensor:
    return Tensor(x, requires_grad=False, name=name)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else constant(x)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast gradient back to the operand's shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


def matmul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise DimensionError("matmul expects 2-D operands")
    if a.data.shape[1] != b.data.shape[0]:
        raise DimensionError(
            f"matmul shape mismatch: {a.data.shape} x {b.data.shape}"
        )
    out_data = a.data @ b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(g @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ g)

    return Tensor(out_data, parents=(a, b), backward=backward)


def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out_data = a.data + b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.data.shape))

    return Tensor(out_data, parents=(a, b), backward=backward)


def sub(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out_data = a.data - b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.data.shape))

    return Tensor(out_data, parents=(a, b), backward=backward)


def mul(a, b) -> Tensor:
    """Elementwise product (with numpy broadcasting)."""
    a, b = _wrap(a), _wrap(b)
    out_data = a.data * b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.data.shape))

    return Tensor(out_data, parents=(a, b), backward=backward)


def neg(a) -> Tensor:
    a = _wrap(a)

    def backward(g):
        if a.requires_grad:
            a._accumulate(-g)

    return Tensor(-a.data, parents=(a,), backward=backward)


def scale(a, s: float) -> Tensor:
    a = _wrap(a)
    s = float(s)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * s)

    return Tensor(a.data * s, parents=(a,), backward=backward)


def affine(x, w, b=None) -> Tensor:
    """x @ w (+ b broadcast over rows)."""
    out = matmul(x, w)
    if b is not None:
        out = add(out, b)
    return out


def relu(x) -> Tensor:
    x = _wrap(x)
    mask = x.data > 0.0
    out_data = np.where(mask, x.data, 0.0)

    def backward(g):
        if x.requires_grad:
            x._accumulate(g * mask)

    return Tensor(out_data, parents=(x,), backward=backward)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(x) -> Tensor:
    x = _wrap(x)
    out_data = _sigmoid(x.data)

    def backward(g):
        if x.requires_grad:
            x._accumulate(g * out_data * (1.0 - out_data))

    return Tensor(out_data, parents=(x,), backward=backward)


def log(x) -> Tensor:
    x = _wrap(x)
    with np.errstate(divide="ignore", invalid="ignore"):
        out_data = np.log(x.data)

    def backward(g):
        if x.requires_grad:
            x._accumulate(g / x.data)

    return Tensor(out_data, parents=(x,), backward=backward)


def dropout(x, p: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    """Inverted dropout; identity when not training or p == 0."""
    x = _wrap(x)
    if not training or p <= 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in training mode requires an rng")
    keep = 1.0 - p
    mask = (rng.random(x.data.shape) < keep) / keep

    def backward(g):
        if x.requires_grad:
            x._accumulate(g * mask)

    return Tensor(x.data * mask, parents=(x,), backward=backward)


def row_l2_normalize(x) -> Tensor:
    """Scale each row to unit l2 norm; all-zero rows stay zero."""
    x = _wrap(x)
    norms = np.linalg.norm(x.data, axis=1, keepdims=True)
    safe = np.where(norms > 0.0, norms, 1.0)
    out_data = x.data / safe

    def backward(g):
        if x.requires_grad:
            dots = np.sum(g * out_data, axis=1, keepdims=True)
            gx = (g - out_data * dots) / safe
            gx = np.where(norms > 0.0, gx, 0.0)
            x._accumulate(gx)

    return Tensor(out_data, parents=(x,), backward=backward)


def concat_cols(parts) -> Tensor:
    parts = [_wrap(p) for p in parts]
    rows = {p.data.shape[0] for p in parts}
    if len(rows) != 1:
        raise DimensionError(f"concat_cols row mismatch: {sorted(rows)}")
    out_data = np.concatenate([p.data for p in parts], axis=1)
    widths = [p.data.shape[1] for p in parts]

    def backward(g):
        start = 0
        for p, w in zip(parts, widths):
            if p.requires_grad:
                p._accumulate(g[:, start:start + w])
            start += w

    return Tensor(out_data, parents=tuple(parts), backward=backward)


def concat_rows(parts) -> Tensor:
    parts = [_wrap(p) for p in parts]
    cols = {p.data.shape[1] for p in parts}
    if len(cols) != 1:
        raise DimensionError(f"concat_rows column mismatch: {sorted(cols)}")
    out_data = np.concatenate([p.data for p in parts], axis=0)
    heights = [p.data.shape[0] for p in parts]

    def backward(g):
        start = 0
        for p, h in zip(parts, heights):
            if p.requires_grad:
                p._accumulate(g[start:start + h, :])
            start += h

    return Tensor(out_data, parents=tuple(parts), backward=backward)


def gather_rows(x, idx) -> Tensor:
    x = _wrap(x)
    idx = np.asarray(idx, dtype=np.intp)
    out_data = x.data[idx]

    def backward(g):
        if x.requires_grad:
            gx = np.zeros_like(x.data)
            np.add.at(gx, idx, g)
            x._accumulate(gx)

    return Tensor(out_data, parents=(x,), backward=backward)


def segment_mean(x, seg, n_segments: int) -> Tensor:
    """Mean of the rows of x per segment id; empty segments give zero rows."""
    x = _wrap(x)
    seg = np.asarray(seg, dtype=np.intp)
    if seg.shape[0] != x.data.shape[0]:
        raise DimensionError("segment_mean: one segment id per row required")
    counts = np.bincount(seg, minlength=n_segments).astype(np.float64)
    sums = np.zeros((n_segments, x.data.shape[1]))
    np.add.at(sums, seg, x.data)
    denom = np.where(counts > 0.0, counts, 1.0)[:, None]
    out_data = sums / denom

    def backward(g):
        if x.requires_grad:
            x._accumulate(g[seg] / denom[seg])

    return Tensor(out_data, parents=(x,), backward=backward)


def rowwise_dot(a, b) -> Tensor:
    """Per-row dot product of two equally shaped matrices -> column vector."""
    a, b = _wrap(a), _wrap(b)
    if a.data.shape != b.data.shape:
        raise DimensionError(
            f"rowwise_dot shape mismatch: {a.data.shape} vs {b.data.shape}"
        )
    out_data = np.sum(a.data * b.data, axis=1, keepdims=True)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * b.data)
        if b.requires_grad:
            b._accumulate(g * a.data)

    return Tensor(out_data, parents=(a, b), backward=backward)


_FROBENIUS_TINY = 1e-12


def frobenius_diff(a, b) -> Tensor:
    """The Frobenius norm ||a - b||_F as a scalar tensor."""
    a, b = _wrap(a), _wrap(b)
    diff = a.data - b.data
    value = float(np.sqrt(np.sum(diff * diff)))

    def backward(g):
        if value > _FROBENIUS_TINY:
            gd = (g * diff) / value
        else:
            gd = np.zeros_like(diff)
        if a.requires_grad:
            a._accumulate(gd)
        if b.requires_grad:
            b._accumulate(-gd)

    return Tensor(value, parents=(a, b), backward=backward)


def sum_all(x) -> Tensor:
    x = _wrap(x)
    out_data = np.sum(x.data)

    def backward(g):
        if x.requires_grad:
            x._accumulate(np.full_like(x.data, float(np.sum(g))))

    return Tensor(out_data, parents=(x,), backward=backward)
