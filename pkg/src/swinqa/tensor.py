"""Dense tensors with reverse-mode automatic differentiation.

Small numpy-backed engine: every operation records its parents and a
backward rule, `backward()` walks the graph in reverse topological order
and accumulates gradients into leaves. Two numeric widths are supported
as a global engine setting: float32 (training default) and float64
(gradient checking).
"""

from __future__ import annotations

import contextlib
from typing import Callable, Sequence

import numpy as np
from scipy.special import erf

_DEFAULT_DTYPE = np.float32
_GRAD_ENABLED = True

_INV_SQRT2 = 0.7071067811865476
_INV_SQRT_2PI = 0.3989422804014327


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class LabelError(ValueError):
    """Raised when a target distribution is not a valid soft label."""


def set_default_dtype(dtype) -> None:
    """Set the engine-wide numeric width ("float32" or "float64")."""
    global _DEFAULT_DTYPE
    dt = np.dtype(dtype)
    if dt not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValueError(f"unsupported dtype {dtype!r}; use float32 or float64")
    _DEFAULT_DTYPE = dt.type


def default_dtype():
    return _DEFAULT_DTYPE


@contextlib.contextmanager
def using_dtype(dtype):
    """Temporarily switch the default dtype (e.g. float64 for grad checks)."""
    prev = _DEFAULT_DTYPE
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(prev)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (evaluation-mode forwards)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` over the axes numpy broadcast when producing it from `shape`."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    """N-dimensional real array, optionally a node in an autodiff graph.

    `data` is a numpy array in the engine dtype. Leaves created with
    `requires_grad=True` receive accumulated gradients in `.grad` after
    `backward()`; gradients add across calls until `zero_grad()`.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=_DEFAULT_DTYPE)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    @classmethod
    def _from_op(cls, data: np.ndarray, parents: Sequence["Tensor"],
                 backward: Callable[[np.ndarray], None]) -> "Tensor":
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        if _GRAD_ENABLED and any(p.requires_grad or p._parents for p in parents):
            out.requires_grad = any(p.requires_grad for p in parents)
            out._parents = tuple(parents)
            out._backward = backward
        else:
            out.requires_grad = False
            out._parents = ()
            out._backward = None
        return out

    # -- basic introspection ------------------------------------------------

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self._not_scalar()

    def _not_scalar(self):
        raise ShapeError(f"expected a scalar tensor, got shape {self.shape}")

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def zero_grad(self) -> None:
        self.grad = None

    # -- arithmetic ---------------------------------------------------------

    @staticmethod
    def _coerce(other) -> "Tensor":
        return other if isinstance(other, Tensor) else Tensor(other)

    def __add__(self, other) -> "Tensor":
        other = self._coerce(other)
        a, b = self, other
        out_data = a.data + b.data

        def bwd(g):
            a._accumulate(_unbroadcast(g, a.data.shape))
            b._accumulate(_unbroadcast(g, b.data.shape))

        return Tensor._from_op(out_data, (a, b), bwd)

    __radd__ = __add__

    def __neg__(self) -> "Tensor":
        a = self

        def bwd(g):
            a._accumulate(-g)

        return Tensor._from_op(-a.data, (a,), bwd)

    def __sub__(self, other) -> "Tensor":
        return self + (-self._coerce(other))

    def __rsub__(self, other) -> "Tensor":
        return self._coerce(other) + (-self)

    def __mul__(self, other) -> "Tensor":
        other = self._coerce(other)
        a, b = self, other
        out_data = a.data * b.data

        def bwd(g):
            a._accumulate(_unbroadcast(g * b.data, a.data.shape))
            b._accumulate(_unbroadcast(g * a.data, b.data.shape))

        return Tensor._from_op(out_data, (a, b), bwd)

    __rmul__ = __mul__

    def __truediv__(self, other) -> "Tensor":
        other = self._coerce(other)
        return self * other ** -1.0

    def __pow__(self, p: float) -> "Tensor":
        a = self
        out_data = a.data ** p

        def bwd(g):
            a._accumulate(g * p * a.data ** (p - 1.0))

        return Tensor._from_op(out_data, (a,), bwd)

    def __matmul__(self, other) -> "Tensor":
        return matmul(self, other)

    # -- shape manipulation ---------------------------------------------------

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        a = self
        orig = a.data.shape

        def bwd(g):
            a._accumulate(g.reshape(orig))

        return Tensor._from_op(a.data.reshape(shape), (a,), bwd)

    def transpose(self, *axes) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        a = self
        inv = np.argsort(axes)

        def bwd(g):
            a._accumulate(g.transpose(inv))

        return Tensor._from_op(a.data.transpose(axes), (a,), bwd)

    def __getitem__(self, idx) -> "Tensor":
        a = self
        out_data = a.data[idx]
        # basic indexing only: each source element appears at most once
        if out_data.base is not None:
            out_data = out_data.copy()

        def bwd(g):
            if a.grad is None:
                a.grad = np.zeros_like(a.data)
            a.grad[idx] += g

        return Tensor._from_op(out_data, (a,), bwd)

    def take_rows(self, indices: np.ndarray) -> "Tensor":
        """Gather rows along axis 0 by an integer index array (may repeat)."""
        a = self
        idx = np.asarray(indices)

        def bwd(g):
            if a.grad is None:
                a.grad = np.zeros_like(a.data)
            np.add.at(a.grad, idx, g)

        return Tensor._from_op(a.data[idx], (a,), bwd)

    def roll(self, shifts, axes) -> "Tensor":
        a = self
        shifts = tuple(np.atleast_1d(shifts).tolist())
        axes = tuple(np.atleast_1d(axes).tolist())
        inv = tuple(-s for s in shifts)

        def bwd(g):
            a._accumulate(np.roll(g, inv, axis=axes))

        return Tensor._from_op(np.roll(a.data, shifts, axis=axes), (a,), bwd)

    # -- reductions -----------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        a = self
        out_data = a.data.sum(axis=axis, keepdims=keepdims)

        def bwd(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            a._accumulate(np.broadcast_to(g, a.data.shape))

        return Tensor._from_op(out_data, (a,), bwd)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        n = self.data.size if axis is None else np.prod(
            [self.data.shape[ax] for ax in np.atleast_1d(axis)])
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / float(n))


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    parents = tuple(tensors)
    sizes = [t.data.shape[axis] for t in parents]
    out_data = np.concatenate([t.data for t in parents], axis=axis)
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        for t, piece in zip(parents, np.split(g, splits, axis=axis)):
            t._accumulate(piece)

    return Tensor._from_op(out_data, parents, bwd)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes; leading axes broadcast."""
    a = Tensor._coerce(a)
    b = Tensor._coerce(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs >=2-d operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner extents differ: {a.shape} x {b.shape}")
    out_data = a.data @ b.data

    def bwd(g):
        a._accumulate(_unbroadcast(g @ b.data.swapaxes(-1, -2), a.data.shape))
        b._accumulate(_unbroadcast(a.data.swapaxes(-1, -2) @ g, b.data.shape))

    return Tensor._from_op(out_data, (a, b), bwd)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable softmax along `axis`; rows sum to 1."""
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        inner = (g * y).sum(axis=axis, keepdims=True)
        x._accumulate(y * (g - inner))

    return Tensor._from_op(y, (x,), bwd)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Standardize over the last axis, then scale/shift by gamma/beta."""
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(
            f"layer_norm affine shapes {gamma.shape}/{beta.shape} do not match last axis {d}")
    if eps <= 0:
        raise ValueError("eps must be positive")
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv_std
    out_data = xhat * gamma.data + beta.data

    def bwd(g):
        beta._accumulate(_unbroadcast(g, beta.data.shape))
        gamma._accumulate(_unbroadcast(g * xhat, gamma.data.shape))
        gx = g * gamma.data
        x._accumulate(inv_std * (gx
                                 - gx.mean(axis=-1, keepdims=True)
                                 - xhat * (gx * xhat).mean(axis=-1, keepdims=True)))

    return Tensor._from_op(out_data, (x, gamma, beta), bwd)


def gelu(x: Tensor) -> Tensor:
    """Exact Gaussian-error linear unit x * Phi(x) (erf form, no tanh fit)."""
    phi_cdf = 0.5 * (1.0 + erf(x.data * _INV_SQRT2))
    out_data = x.data * phi_cdf

    def bwd(g):
        pdf = np.exp(-0.5 * x.data * x.data) * _INV_SQRT_2PI
        x._accumulate(g * (phi_cdf + x.data * pdf))

    return Tensor._from_op(out_data, (x,), bwd)


def cross_entropy_soft(logits: Tensor, targets) -> Tensor:
    """Mean soft-label cross entropy over the batch.

    `targets` rows must each sum to 1 (within 1e-6); mixing augmentations
    produce such rows. Gradient w.r.t. logits is (softmax - target) / B.
    """
    t = targets.data if isinstance(targets, Tensor) else np.asarray(targets)
    if logits.ndim != 2 or t.shape != logits.shape:
        raise ShapeError(f"logits {logits.shape} and targets {t.shape} must both be [B, K]")
    row_sums = t.sum(axis=-1)
    if not np.all(np.abs(row_sums - 1.0) <= 1e-6):
        bad = int(np.argmax(np.abs(row_sums - 1.0)))
        raise LabelError(f"target row {bad} sums to {row_sums[bad]!r}, expected 1")
    z = logits.data
    m = z.max(axis=-1, keepdims=True)
    lse = m + np.log(np.exp(z - m).sum(axis=-1, keepdims=True))
    batch = z.shape[0]
    out_data = np.asarray((t * (lse - z)).sum() / batch, dtype=z.dtype)

    def bwd(g):
        p = np.exp(z - lse)
        logits._accumulate(g * (p - t) / batch)

    return Tensor._from_op(out_data, (logits,), bwd)


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into `.grad` of every reachable leaf.

    Repeated calls without `zero_grad()` add up, which is what gradient
    accumulation over micro-batches relies on.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, done = stack.pop()
        if done:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))
    loss._accumulate(np.ones_like(loss.data))
    for node in reversed(topo):
        if node._backward is not None:
            node._backward(node.grad)
            node.grad = None  # intermediate grads are not retained


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, h: float = 1e-5) -> float:
    """Compare backward() against central differences, coordinate by coordinate.

    Returns max over coordinates of |a - n| / max(|a|, |n|, 1e-8). Only
    meaningful in float64; finite differences drown in float32 rounding.
    """
    if not (1e-6 <= h <= 1e-3):
        raise ValueError(f"step h={h} outside [1e-6, 1e-3]")
    if _DEFAULT_DTYPE is not np.float64:
        raise ValueError("grad_check requires the float64 engine mode (set_default_dtype('float64'))")
    probe = Tensor(x.data.copy(), requires_grad=True)
    out = f(probe)
    if out.data.size != 1:
        raise ShapeError(f"grad_check needs a scalar-valued f, got shape {out.shape}")
    backward(out)
    analytic = probe.grad.copy()

    numeric = np.zeros_like(probe.data)
    flat = probe.data.reshape(-1)
    num_flat = numeric.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = float(f(probe).data)
            flat[i] = orig - h
            fm = float(f(probe).data)
            flat[i] = orig
            num_flat[i] = (fp - fm) / (2.0 * h)

    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float((np.abs(analytic - numeric) / denom).max())
