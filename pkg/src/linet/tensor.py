"""Minimal dense tensor with reverse-mode differentiation.

Values are numpy arrays of rank 0-3 (rank 0 only for scalar losses).
Every op builds a node holding its parents and a backward rule mapping the
output gradient to one gradient per parent. Calling ``backward`` on a
scalar replays the recorded nodes in reverse execution order and adds the
results into each leaf's ``grad``.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Sequence

import numpy as np

from .errors import ShapeError

__all__ = [
    "Tensor", "tensor", "no_grad", "is_grad_enabled",
    "add", "sub", "mul", "div", "scale", "relu", "absolute", "sqrt", "exp", "log",
    "matmul", "matmul_batched", "linear", "transpose_last2", "concat_lastdim",
    "slice_lastdim", "reshape", "sum", "mean", "softmax_axis", "softmax_grad",
    "take_rows", "layer_norm", "log1p_sum_exp", "graph_nodes",
]

MAX_RANK = 3

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (evaluation passes)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def is_grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_backward", "op", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        if arr.ndim > MAX_RANK:
            raise ShapeError(f"rank {arr.ndim} exceeds the supported maximum of {MAX_RANK}")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(arr) if self.requires_grad else None
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self.op = ""

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag}, requires_grad={self.requires_grad})"

    # -- operator sugar ---------------------------------------------------
    def __add__(self, other):
        return add(self, _lift(other, self))

    def __radd__(self, other):
        return add(_lift(other, self), self)

    def __sub__(self, other):
        return sub(self, _lift(other, self))

    def __rsub__(self, other):
        return sub(_lift(other, self), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, 1.0 / other)
        return div(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self) -> "Tensor":
        return transpose_last2(self)

    # -- differentiation --------------------------------------------------
    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into every leaf that requires grad."""
        if self.data.size != 1:
            raise ValueError(f"backward needs a scalar loss, got shape {self.shape}")
        order = _topological(self)
        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    node.grad += g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg


def tensor(data, requires_grad: bool = False, dtype=None, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype, name=name)


def _lift(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.full(like.shape, x, dtype=like.dtype))


def _node(data: np.ndarray, parents: Sequence[Tensor], backward: Callable, op: str = "") -> Tensor:
    out = Tensor(data)
    out.op = op
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _topological(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def graph_nodes(root: Tensor) -> list[Tensor]:
    """All tensors reachable from ``root``, in execution order."""
    return _topological(root)


# -- elementwise ------------------------------------------------------------

def _check_binary(a: Tensor, b: Tensor, op: str) -> bool:
    """Return True when ``b`` is a trailing-dim bias for ``a``."""
    if a.shape == b.shape:
        return False
    if b.ndim == 1 and a.ndim >= 1 and a.shape[-1] == b.shape[0]:
        return True
    raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} are not compatible")


def _reduce_bias(g: np.ndarray) -> np.ndarray:
    return g.reshape(-1, g.shape[-1]).sum(axis=0)


def add(a: Tensor, b: Tensor) -> Tensor:
    bias = _check_binary(a, b, "add")

    def backward(g):
        return g, (_reduce_bias(g) if bias else g)

    return _node(a.data + b.data, (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    bias = _check_binary(a, b, "sub")

    def backward(g):
        return g, -(_reduce_bias(g) if bias else g)

    return _node(a.data - b.data, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    bias = _check_binary(a, b, "mul")

    def backward(g):
        gb = g * a.data
        return g * b.data, (_reduce_bias(gb) if bias else gb)

    return _node(a.data * b.data, (a, b), backward)


def div(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"div: shapes {a.shape} and {b.shape} differ")
    out = a.data / b.data

    def backward(g):
        return g / b.data, -g * out / b.data

    return _node(out, (a, b), backward)


def scale(a: Tensor, c: float) -> Tensor:
    return _node(a.data * c, (a,), lambda g: (g * c,))


def relu(a: Tensor) -> Tensor:
    # subgradient 0 at exactly 0
    live = a.data > 0
    return _node(np.where(live, a.data, 0).astype(a.dtype, copy=False), (a,), lambda g: (g * live,), "relu")


def absolute(a: Tensor) -> Tensor:
    sign = np.sign(a.data)
    return _node(np.abs(a.data), (a,), lambda g: (g * sign,), "abs")


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    return _node(out, (a,), lambda g: (g * 0.5 / out,))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _node(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    return _node(np.log(a.data), (a,), lambda g: (g / a.data,))


# -- linear algebra -----------------------------------------------------------

def _swap(x: np.ndarray) -> np.ndarray:
    return np.swapaxes(x, -1, -2)


def matmul_batched(a: Tensor, b: Tensor) -> Tensor:
    """Batched product [B,m,k] x [B,k,n] -> [B,m,n] (rank-2 operands are B=1)."""
    if a.ndim not in (2, 3) or b.ndim not in (2, 3):
        raise ShapeError(f"matmul: ranks {a.ndim} and {b.ndim} unsupported")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner extents differ, {a.shape} x {b.shape}")
    if a.ndim == 3 and b.ndim == 3 and a.shape[0] != b.shape[0]:
        raise ShapeError(f"matmul: batch extents differ, {a.shape} x {b.shape}")
    out = a.data @ b.data

    def backward(g):
        ga = g @ _swap(b.data)
        gb = _swap(a.data) @ g
        if ga.ndim > a.ndim:
            ga = ga.sum(axis=0)
        if gb.ndim > b.ndim:
            gb = gb.sum(axis=0)
        return ga, gb

    return _node(out, (a, b), backward)


matmul = matmul_batched


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Affine map over the last axis: x @ w + b, with w shared across leading axes."""
    if w.ndim != 2 or x.shape[-1] != w.shape[0]:
        raise ShapeError(f"linear: input {x.shape} does not fit weight {w.shape}")
    if b is not None and b.shape != (w.shape[1],):
        raise ShapeError(f"linear: bias {b.shape} does not fit weight {w.shape}")
    out = x.data @ w.data
    if b is not None:
        out = out + b.data

    def backward(g):
        flat_x = x.data.reshape(-1, x.shape[-1])
        flat_g = g.reshape(-1, g.shape[-1])
        grads = [g @ w.data.T, flat_x.T @ flat_g]
        if b is not None:
            grads.append(flat_g.sum(axis=0))
        return grads

    parents = (x, w) if b is None else (x, w, b)
    return _node(out, parents, backward)


def transpose_last2(a: Tensor) -> Tensor:
    if a.ndim < 2:
        raise ShapeError(f"transpose needs rank >= 2, got rank {a.ndim}")
    out = np.ascontiguousarray(_swap(a.data))
    return _node(out, (a,), lambda g: (np.ascontiguousarray(_swap(g)),))


# -- structural -----------------------------------------------------------

def concat_lastdim(parts: Sequence[Tensor]) -> Tensor:
    if not parts:
        raise ShapeError("concat needs at least one part")
    lead = parts[0].shape[:-1]
    for p in parts[1:]:
        if p.shape[:-1] != lead:
            raise ShapeError(f"concat: leading extents {p.shape[:-1]} differ from {lead}")
    if len(parts) == 1:
        return parts[0]
    bounds = np.cumsum([0] + [p.shape[-1] for p in parts])
    out = np.concatenate([p.data for p in parts], axis=-1)

    def backward(g):
        return [g[..., bounds[i]:bounds[i + 1]] for i in range(len(parts))]

    return _node(out, tuple(parts), backward)


def slice_lastdim(a: Tensor, start: int, stop: int) -> Tensor:
    n = a.shape[-1]
    if not 0 <= start < stop <= n:
        raise ShapeError(f"slice [{start}:{stop}] out of range for last extent {n}")

    def backward(g):
        full = np.zeros_like(a.data)
        full[..., start:stop] = g
        return (full,)

    return _node(a.data[..., start:stop].copy(), (a,), backward)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    out = a.data.reshape(tuple(shape))
    if out.ndim > MAX_RANK:
        raise ShapeError(f"reshape to rank {out.ndim} exceeds maximum {MAX_RANK}")
    return _node(out, (a,), lambda g: (g.reshape(a.shape),))


def take_rows(table: Tensor, index) -> Tensor:
    """Gather rows of a [V,D] table; ``index`` is an int array of rank <= 2."""
    idx = np.asarray(index, dtype=np.intp)
    if table.ndim != 2:
        raise ShapeError(f"take_rows needs a rank-2 table, got {table.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise IndexError(f"row index out of range for table with {table.shape[0]} rows")

    def backward(g):
        full = np.zeros_like(table.data)
        np.add.at(full, idx.reshape(-1), g.reshape(-1, table.shape[1]))
        return (full,)

    return _node(table.data[idx], (table,), backward)


# -- reductions ---------------------------------------------------------------

def sum(a: Tensor, axis: int | None = None) -> Tensor:  # noqa: A001 - mirrors numpy
    if axis is None:
        return _node(np.asarray(a.data.sum(), dtype=a.dtype), (a,),
                     lambda g: (np.broadcast_to(g, a.shape).copy(),))
    ax = axis % a.ndim

    def backward(g):
        return (np.broadcast_to(np.expand_dims(g, ax), a.shape).copy(),)

    return _node(a.data.sum(axis=ax), (a,), backward)


def mean(a: Tensor, axis: int | None = None) -> Tensor:
    n = a.size if axis is None else a.shape[axis]
    return scale(sum(a, axis), 1.0 / n)


def log1p_sum_exp(x: Tensor) -> Tensor:
    """log(1 + sum(exp(x))) over all entries, stable against overflow."""
    m = max(0.0, float(x.data.max())) if x.size else 0.0
    shifted = np.exp(x.data - m)
    total = np.exp(-m) + shifted.sum()
    out = np.asarray(m + np.log(total), dtype=x.dtype)

    def backward(g):
        return (g * shifted / total,)

    return _node(out, (x,), backward)


# -- softmax family -------------------------------------------------------------

def _masked_softmax(z: np.ndarray, axis: int, mask: np.ndarray | None) -> np.ndarray:
    if mask is None:
        e = np.exp(z - z.max(axis=axis, keepdims=True))
        return e / e.sum(axis=axis, keepdims=True)
    if not np.all(mask.any(axis=axis)):
        raise ValueError("softmax mask leaves a slice with empty support")
    # stabilize with the largest selected logit so excluded outliers cannot underflow the rest
    top = np.max(z, axis=axis, keepdims=True, where=mask, initial=np.finfo(z.dtype).min)
    e = np.where(mask, np.exp(np.where(mask, z - top, 0)), 0).astype(z.dtype, copy=False)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_grad(p: np.ndarray, g: np.ndarray, axis: int) -> np.ndarray:
    """Vector-Jacobian product of softmax: p * (g - <g, p>) along ``axis``."""
    return p * (g - (g * p).sum(axis=axis, keepdims=True))


def softmax_axis(z: Tensor, axis: int = -1, mask: np.ndarray | None = None) -> Tensor:
    """Softmax along ``axis``; entries where ``mask`` is False get weight 0.

    The mask is treated as a constant. Excluded entries are dropped from the
    normalizing sum rather than set to -inf, so no infinities are formed.
    """
    if z.ndim == 0:
        raise ShapeError("softmax needs rank >= 1")
    ax = axis % z.ndim
    if not np.all(np.isfinite(z.data)):
        if np.any(np.all(np.isneginf(z.data), axis=ax)):
            raise ValueError("softmax over an all -inf slice has empty support")
    p = _masked_softmax(z.data, ax, mask)
    return _node(p, (z,), lambda g: (softmax_grad(p, g, ax),))


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then apply per-feature gain and shift."""
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(f"layer_norm: gain/shift must have shape ({d},)")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data

    def backward(g):
        gh = g * gamma.data
        gx = inv * (gh - gh.mean(axis=-1, keepdims=True)
                    - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        return gx, _reduce_bias(g * xhat), _reduce_bias(g)

    return _node(out.astype(x.dtype, copy=False), (x, gamma, beta), backward)
