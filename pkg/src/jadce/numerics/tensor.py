"""Dense float64 tensors with a reverse-mode tape.

Every op takes :class:`Tensor` or array-like inputs and returns a new
:class:`Tensor`.  Nodes remember their parents and a closure mapping the
output cotangent to parent cotangents; :func:`backward` walks the graph in
reverse topological order.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
import scipy.linalg

DTYPE = np.float64


class DimensionError(ValueError):
    """Operand shapes are incompatible for the requested op."""


class ContractError(ValueError):
    """A caller broke an API contract (bad loss shape, misaligned bundles, ...)."""


class SingularMatrixError(np.linalg.LinAlgError):
    """A system matrix could not be factorized."""


class Tensor:
    __slots__ = ("data", "parents", "backward_fn", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False, parents=(), backward_fn=None):
        arr = np.asarray(data, dtype=DTYPE)
        if not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr)
        elif arr is data:
            arr = arr.view()
        # read-only view: the caller's array stays writeable
        arr.flags.writeable = False
        self.data = arr
        self.parents: tuple[Tensor, ...] = parents
        self.backward_fn: Callable | None = backward_fn
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return take(self, index)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def value(x) -> np.ndarray:
    """Raw array behind ``x`` (tensor or array-like)."""
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=DTYPE)


def _node(data, parents: Sequence[Tensor], backward_fn) -> Tensor:
    live = tuple(parents)
    if not any(p.requires_grad for p in live):
        return Tensor(data)
    return Tensor(data, parents=live, backward_fn=backward_fn)


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf requiring grad."""
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.backward_fn is None:
            node.grad = g if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _check_broadcast(a: np.ndarray, b: np.ndarray, name: str) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{name}: shapes {a.shape} and {b.shape} do not broadcast") from None


# --------------------------------------------------------------------------
# elementwise family
# --------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.data, b.data, "add")
    return _node(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.data, b.data, "sub")
    return _node(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.data, b.data, "mul")
    return _node(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.data, b.data, "div")
    out = a.data / b.data

    def bw(g):
        ga = g / b.data
        return _unbroadcast(ga, a.shape), _unbroadcast(-ga * out, b.shape)

    return _node(out, (a, b), bw)


def scale(x, alpha: float) -> Tensor:
    x = as_tensor(x)
    return _node(x.data * alpha, (x,), lambda g: (g * alpha,))


def square(x) -> Tensor:
    x = as_tensor(x)
    return _node(x.data * x.data, (x,), lambda g: (2.0 * g * x.data,))


def sqrt(x) -> Tensor:
    x = as_tensor(x)
    out = np.sqrt(x.data)
    return _node(out, (x,), lambda g: (g / (2.0 * out),))


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return _node(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


# --------------------------------------------------------------------------
# reductions and reshaping
# --------------------------------------------------------------------------

def _norm_axis(axis, ndim: int):
    if axis is None:
        return None
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    out = []
    for ax in axes:
        if not -ndim <= ax < ndim:
            raise DimensionError(f"axis {ax} out of range for {ndim}-d tensor")
        out.append(ax % ndim)
    return tuple(out)


def sum(x, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    x = as_tensor(x)
    axes = _norm_axis(axis, x.ndim)
    out = x.data.sum(axis=axes, keepdims=keepdims)

    def bw(g):
        if axes is not None and not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _node(out, (x,), bw)


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    axes = _norm_axis(axis, x.ndim)
    count = x.data.size if axes is None else int(np.prod([x.shape[a] for a in axes]))
    return scale(sum(x, axes, keepdims), 1.0 / count)


def frobenius(x, axis=None) -> Tensor:
    """sqrt of the sum of squares over ``axis`` (all entries by default)."""
    return sqrt(sum(square(x), axis))


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"cannot reshape {x.shape} into {tuple(shape)}") from None
    return _node(out, (x,), lambda g: (g.reshape(x.shape),))


def transpose(x, axes=None) -> Tensor:
    """Permute axes; by default swaps the last two."""
    x = as_tensor(x)
    if axes is None:
        if x.ndim < 2:
            raise DimensionError(f"transpose needs >= 2 dims, got {x.shape}")
        axes = tuple(range(x.ndim - 2)) + (x.ndim - 1, x.ndim - 2)
    inv = np.argsort(axes)
    return _node(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),))


def take(x, index) -> Tensor:
    x = as_tensor(x)

    def bw(g):
        out = np.zeros_like(x.data)
        np.add.at(out, index, g)
        return (out,)

    return _node(x.data[index], (x,), bw)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise DimensionError("concat of an empty sequence")
    ax = _norm_axis(axis, ts[0].ndim)[0]
    try:
        out = np.concatenate([t.data for t in ts], axis=ax)
    except ValueError:
        raise DimensionError(
            f"concat along axis {axis}: incompatible shapes {[t.shape for t in ts]}") from None
    bounds = np.cumsum([t.shape[ax] for t in ts])[:-1]
    return _node(out, ts, lambda g: tuple(np.split(g, bounds, axis=ax)))


# --------------------------------------------------------------------------
# linear algebra
# --------------------------------------------------------------------------

def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes, leading axes broadcast."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: shapes {a.shape} and {b.shape} are not aligned")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise DimensionError(f"matmul: shapes {a.shape} and {b.shape} are not aligned") from None

    def bw(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2)) if a.requires_grad else None
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g) if b.requires_grad else None
        return (None if ga is None else _unbroadcast(ga, a.shape),
                None if gb is None else _unbroadcast(gb, b.shape))

    return _node(out, (a, b), bw)


def spd_solve(a, b) -> Tensor:
    """Solve ``a @ x = b`` for symmetric positive definite ``a`` via Cholesky.

    Only the lower triangle of ``a`` is read, so gradients are meaningful
    when ``a`` is built symmetrically (e.g. ``B @ B.T + eps*I``).
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or b.shape[0] != a.shape[0]:
        raise DimensionError(f"spd_solve: system {a.shape} does not match rhs {b.shape}")
    try:
        factor = scipy.linalg.cho_factor(a.data, lower=True, check_finite=True)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise SingularMatrixError(
            f"matrix of shape {a.shape} is not positive definite ({exc}); "
            "use a regularizer eps > 0") from None
    x = scipy.linalg.cho_solve(factor, b.data)

    def bw(g):
        gb = scipy.linalg.cho_solve(factor, g)
        ga = -gb @ np.atleast_2d(x).T if gb.ndim == 2 else -np.outer(gb, x)
        return ga, gb

    return _node(x, (a, b), bw)


def group_shrink(x, tau, axis) -> Tensor:
    """Shrink each group of ``x`` radially: ``x * max(0, 1 - tau / ||x_group||)``.

    Groups are the slices reduced over ``axis``.  ``tau`` is a scalar or
    broadcasts against the keepdims group-norm shape.  Groups at or inside
    the threshold (including all-zero groups) map to exactly zero.
    """
    x, tau = as_tensor(x), as_tensor(tau)
    axes = _norm_axis(axis, x.ndim)
    r = np.sqrt(np.sum(x.data * x.data, axis=axes, keepdims=True))
    _check_broadcast(r, tau.data, "group_shrink")
    active = r > tau.data
    safe_r = np.where(active, r, 1.0)
    factor = np.where(active, 1.0 - tau.data / safe_r, 0.0)
    out = x.data * factor

    def bw(g):
        s = np.sum(g * x.data, axis=axes, keepdims=True)
        coef = np.where(active, tau.data / safe_r ** 3, 0.0) * s
        gx = g * factor + x.data * coef
        gtau = _unbroadcast(np.where(active, -s / safe_r, 0.0), tau.shape)
        return gx, gtau

    return _node(out, (x, tau), bw)


# --------------------------------------------------------------------------
# 1-D convolutions, layout (batch, channels, length) or (channels, length)
# --------------------------------------------------------------------------

def conv_out_len(length: int, k: int, stride: int, padding: int) -> int:
    return (length + 2 * padding - k) // stride + 1


def _batched(x: Tensor) -> tuple[Tensor, bool]:
    if x.ndim == 2:
        return reshape(x, (1,) + x.shape), True
    if x.ndim != 3:
        raise DimensionError(f"1-d conv input must be (C, L) or (B, C, L), got {x.shape}")
    return x, False


def conv1d(x, w, b=None, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation with zero padding; ``w`` is (C_out, C_in, k)."""
    x, squeeze = _batched(as_tensor(x))
    w = as_tensor(w)
    if w.ndim != 3 or w.shape[1] != x.shape[1]:
        raise DimensionError(f"conv1d: kernels {w.shape} incompatible with input {x.shape}")
    c_out, c_in, k = w.shape
    n, _, length = x.shape
    l_out = conv_out_len(length, k, stride, padding)
    if l_out <= 0:
        raise DimensionError(
            f"conv1d: non-positive output length for L={length}, k={k}, "
            f"stride={stride}, padding={padding}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding))) if padding else x.data
    span = stride * (l_out - 1) + 1
    # cols[c, j, n, l] = xp[n, c, l*stride + j]; batch folded into one GEMM
    xpt = xp.transpose(1, 0, 2)
    cols = np.empty((c_in, k, n, l_out))
    for j in range(k):
        cols[:, j] = xpt[:, :, j:j + span:stride]
    cols = cols.reshape(c_in * k, n * l_out)
    wmat = w.data.reshape(c_out, c_in * k)
    out = (wmat @ cols).reshape(c_out, n, l_out).transpose(1, 0, 2)
    parents = [x, w]
    if b is not None:
        b = as_tensor(b)
        if b.shape != (c_out,):
            raise DimensionError(f"conv1d: bias {b.shape} does not match {c_out} channels")
        out = out + b.data[None, :, None]
        parents.append(b)

    def bw(g):
        g2 = g.transpose(1, 0, 2).reshape(c_out, n * l_out)
        gw = (g2 @ cols.T).reshape(w.shape)
        gx = None
        if x.requires_grad:
            gcols = (wmat.T @ g2).reshape(c_in, k, n, l_out)
            gxp = np.zeros((c_in, n, xp.shape[2]))
            for j in range(k):
                gxp[:, :, j:j + span:stride] += gcols[:, j]
            gxp = gxp.transpose(1, 0, 2)
            gx = gxp[:, :, padding:padding + length] if padding else gxp
        grads = [gx, gw]
        if b is not None:
            grads.append(g.sum(axis=(0, 2)))
        return tuple(grads)

    res = _node(out, parents, bw)
    return reshape(res, res.shape[1:]) if squeeze else res


def convtranspose1d(x, w, b=None, stride: int = 1, padding: int = 0) -> Tensor:
    """Adjoint of :func:`conv1d`; ``w`` is (C_in, C_out, k) as in conv1d's (C_out, C_in, k).

    Output length is ``(L - 1) * stride + k - 2 * padding``.
    """
    x, squeeze = _batched(as_tensor(x))
    w = as_tensor(w)
    if w.ndim != 3 or w.shape[0] != x.shape[1]:
        raise DimensionError(
            f"convtranspose1d: kernels {w.shape} incompatible with input {x.shape}")
    c_in, c_out, k = w.shape
    n, _, length = x.shape
    full = (length - 1) * stride + k
    l_out = full - 2 * padding
    if length < 1 or l_out <= 0:
        raise DimensionError(f"convtranspose1d: non-positive output length for L={length}")
    span = stride * (length - 1) + 1
    xt = x.data.transpose(1, 0, 2).reshape(c_in, n * length)
    wall = w.data.transpose(2, 1, 0).reshape(k * c_out, c_in)
    taps = (wall @ xt).reshape(k, c_out, n, length)
    out_full = np.zeros((c_out, n, full))
    for j in range(k):
        out_full[:, :, j:j + span:stride] += taps[j]
    out = out_full[:, :, padding:padding + l_out].transpose(1, 0, 2)
    parents = [x, w]
    if b is not None:
        b = as_tensor(b)
        if b.shape != (c_out,):
            raise DimensionError(f"convtranspose1d: bias {b.shape} does not match {c_out}")
        out = out + b.data[None, :, None]
        parents.append(b)

    def bw(g):
        gf = g.transpose(1, 0, 2)
        if padding:
            gf = np.pad(gf, ((0, 0), (0, 0), (padding, padding)))
        gtaps = np.stack([gf[:, :, j:j + span:stride] for j in range(k)]).reshape(
            k * c_out, n * length)
        gx = None
        if x.requires_grad:
            gx = (wall.T @ gtaps).reshape(c_in, n, length).transpose(1, 0, 2)
        gw = (gtaps @ xt.T).reshape(k, c_out, c_in).transpose(2, 1, 0)
        grads = [gx, gw]
        if b is not None:
            grads.append(g.sum(axis=(0, 2)))
        return tuple(grads)

    res = _node(out, parents, bw)
    return reshape(res, res.shape[1:]) if squeeze else res
