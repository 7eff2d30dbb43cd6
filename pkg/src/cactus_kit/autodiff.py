"""Dense float64 tensors with taped reverse-mode differentiation.

Small by design: a `Tensor` wraps a NumPy array, and every differentiable
operation optionally records itself on the innermost active `GradientTape`.
Calling `GradientTape.backward(loss)` replays the recorded operations in
exact reverse execution order and returns a gradient per registered
parameter (exactly zero for parameters the loss never touched).

Each operation carries a hand-written vector-Jacobian product; there is no
symbolic layer. Gradients accumulate additively across fan-out, so callers
zero parameter grads before each optimization step (`zero_grads`).
"""

from __future__ import annotations

from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "ShapeError",
    "TapeError",
    "ZeroNormError",
    "Tensor",
    "GradientTape",
    "tensor",
    "parameter",
    "zero_grads",
    "matmul",
    "softmax_rows",
    "mean_pool",
    "cosine",
    "relu",
    "sigmoid",
    "softplus",
    "log",
    "sqrt",
    "clip",
    "concat",
    "gather_rows",
    "slice_axis",
]


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class TapeError(RuntimeError):
    """Misuse of a GradientTape (non-scalar root, reuse after backward, ...)."""


class ZeroNormError(ValueError):
    """A vector expected to have positive norm was (numerically) zero."""

    def __init__(self, message: str, index: int | None = None):
        super().__init__(message)
        self.index = index


class Tensor:
    """A float64 n-d array that can participate in gradient recording."""

    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name

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
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag})"

    # Arithmetic sugar; scalars are promoted to constant tensors.
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __truediv__(self, other):
        return div(self, _as_tensor(other))

    def __rtruediv__(self, other):
        return div(_as_tensor(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return reduce_mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, shape: Sequence[int]) -> "Tensor":
        return reshape(self, shape)

    def transpose(self, axes: Sequence[int]) -> "Tensor":
        return transpose(self, axes)


def tensor(data) -> Tensor:
    """Constant (non-trainable) tensor."""
    return Tensor(data, requires_grad=False)


def parameter(data, name: str) -> Tensor:
    """Named trainable tensor."""
    return Tensor(data, requires_grad=True, name=name)


def zero_grads(params: Iterable[Tensor] | Mapping[str, Tensor]) -> None:
    values = params.values() if isinstance(params, Mapping) else params
    for p in values:
        p.grad = None


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class _Node:
    __slots__ = ("out", "inputs", "vjp")

    def __init__(self, out: Tensor, inputs: tuple[Tensor, ...], vjp: Callable):
        self.out = out
        self.inputs = inputs
        self.vjp = vjp


_TAPE_STACK: list["GradientTape"] = []


class GradientTape:
    """Records operations executed inside its `with` block.

    Parameters registered at construction (or via `register`) define the
    gradient map returned by `backward`; a registered parameter the loss does
    not reach gets an all-zero gradient. A tape can run backward once.
    """

    def __init__(self, params: Mapping[str, Tensor] | None = None):
        self._nodes: list[_Node] = []
        self._params: dict[str, Tensor] = dict(params) if params else {}
        self._consumed = False

    def register(self, name: str, t: Tensor) -> None:
        t.requires_grad = True
        self._params[name] = t

    def __enter__(self) -> "GradientTape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        _TAPE_STACK.pop()

    def _record(self, node: _Node) -> None:
        self._nodes.append(node)

    def backward(self, loss: Tensor) -> dict[str, np.ndarray]:
        """Propagate d(loss)/d(param) for every registered parameter.

        Also accumulates into each parameter's `.grad` so repeated tapes can
        build up a batch gradient between explicit `zero_grads` calls.
        """
        if self._consumed:
            raise TapeError("tape already consumed by a previous backward pass")
        if loss.data.size != 1:
            raise TapeError(f"backward root must be scalar, got shape {loss.shape}")
        self._consumed = True

        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for node in reversed(self._nodes):
            g_out = grads.get(id(node.out))
            if g_out is None:
                continue
            g_inputs = node.vjp(g_out)
            for t, g in zip(node.inputs, g_inputs):
                if g is None or not t.requires_grad:
                    continue
                acc = grads.get(id(t))
                grads[id(t)] = g if acc is None else acc + g

        out: dict[str, np.ndarray] = {}
        for name, p in self._params.items():
            g = grads.get(id(p))
            g = np.zeros_like(p.data) if g is None else np.asarray(g)
            out[name] = g
            p.grad = g.copy() if p.grad is None else p.grad + g
        return out


def _record(out: Tensor, inputs: tuple[Tensor, ...], vjp: Callable) -> Tensor:
    if _TAPE_STACK and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        _TAPE_STACK[-1]._record(_Node(out, inputs, vjp))
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `g` down to `shape`, inverting NumPy broadcasting."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data + b.data)

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _record(out, (a, b), vjp)


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data - b.data)

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _record(out, (a, b), vjp)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data * b.data)

    def vjp(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _record(out, (a, b), vjp)


def div(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data / b.data)

    def vjp(g):
        ga = _unbroadcast(g / b.data, a.shape)
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.shape)
        return ga, gb

    return _record(out, (a, b), vjp)


def neg(a: Tensor) -> Tensor:
    out = Tensor(-a.data)
    return _record(out, (a,), lambda g: (-g,))


def relu(a: Tensor) -> Tensor:
    out = Tensor(np.maximum(a.data, 0.0))
    mask = a.data > 0.0

    def vjp(g):
        return (g * mask,)

    return _record(out, (a,), vjp)


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    y = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    out = Tensor(y)

    def vjp(g):
        return (g * y * (1.0 - y),)

    return _record(out, (a,), vjp)


def softplus(a: Tensor) -> Tensor:
    """log(1 + exp(x)) with the overflow-safe split form."""
    x = a.data
    out = Tensor(np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x))))
    sig = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))

    def vjp(g):
        return (g * sig,)

    return _record(out, (a,), vjp)


def log(a: Tensor) -> Tensor:
    out = Tensor(np.log(a.data))

    def vjp(g):
        return (g / a.data,)

    return _record(out, (a,), vjp)


def sqrt(a: Tensor) -> Tensor:
    y = np.sqrt(a.data)
    out = Tensor(y)

    def vjp(g):
        return (g * 0.5 / y,)

    return _record(out, (a,), vjp)


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp values into [lo, hi]; gradient passes only where unclamped."""
    out = Tensor(np.clip(a.data, lo, hi))
    mask = (a.data >= lo) & (a.data <= hi)

    def vjp(g):
        return (g * mask,)

    return _record(out, (a,), vjp)


# ---------------------------------------------------------------------------
# structural ops


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product for 2-d operands or stacked 3-d operands (equal batch)."""
    ad, bd = a.data, b.data
    if ad.ndim == 2 and bd.ndim == 2:
        if ad.shape[1] != bd.shape[0]:
            raise ShapeError(f"matmul inner extents differ: {ad.shape} x {bd.shape}")
    elif ad.ndim == 3 and bd.ndim == 3:
        if ad.shape[0] != bd.shape[0] or ad.shape[2] != bd.shape[1]:
            raise ShapeError(f"batched matmul shapes differ: {ad.shape} x {bd.shape}")
    else:
        raise ShapeError(f"matmul supports 2d x 2d or 3d x 3d, got {ad.shape} x {bd.shape}")
    out = Tensor(ad @ bd)

    def vjp(g):
        if ad.ndim == 2:
            return g @ bd.T, ad.T @ g
        return g @ bd.transpose(0, 2, 1), ad.transpose(0, 2, 1) @ g

    return _record(out, (a, b), vjp)


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    out = Tensor(a.data.transpose(axes))
    inv = tuple(np.argsort(axes))

    def vjp(g):
        return (g.transpose(inv),)

    return _record(out, (a,), vjp)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    out = Tensor(a.data.reshape(shape))
    orig = a.shape

    def vjp(g):
        return (g.reshape(orig),)

    return _record(out, (a,), vjp)


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    parts = list(parts)
    if not parts:
        raise ShapeError("concat needs at least one tensor")
    out = Tensor(np.concatenate([p.data for p in parts], axis=axis))
    sizes = [p.data.shape[axis] for p in parts]
    bounds = np.cumsum([0] + sizes)

    def vjp(g):
        return tuple(
            g[(slice(None),) * (axis % g.ndim) + (slice(bounds[i], bounds[i + 1]),)]
            for i in range(len(parts))
        )

    return _record(out, tuple(parts), vjp)


def slice_axis(a: Tensor, axis: int, start: int, stop: int) -> Tensor:
    idx = (slice(None),) * axis + (slice(start, stop),)
    out = Tensor(a.data[idx])
    shape = a.shape

    def vjp(g):
        full = np.zeros(shape)
        full[idx] = g
        return (full,)

    return _record(out, (a,), vjp)


def gather_rows(a: Tensor, indices) -> Tensor:
    """Select rows (axis 0) by integer index; backward scatter-adds."""
    idx = np.asarray(indices, dtype=np.int64)
    out = Tensor(a.data[idx])
    shape = a.shape

    def vjp(g):
        full = np.zeros(shape)
        np.add.at(full, idx, g)
        return (full,)

    return _record(out, (a,), vjp)


def reduce_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims))
    shape = a.shape

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy() if np.ndim(g) == 0 else np.full(shape, g),)
        g2 = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(g2, shape).copy(),)

    return _record(out, (a,), vjp)


def reduce_mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = a.data.size if axis is None else a.data.shape[axis]
    out = Tensor(a.data.mean(axis=axis, keepdims=keepdims))
    shape = a.shape

    def vjp(g):
        if axis is None:
            return (np.full(shape, np.asarray(g) / count),)
        g2 = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(g2 / count, shape).copy(),)

    return _record(out, (a,), vjp)


# ---------------------------------------------------------------------------
# named contract ops


def softmax_rows(x: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Numerically stable softmax over the last axis.

    `mask` (same shape, boolean, True = keep) zeroes masked entries exactly;
    a row with no unmasked entry is an error because it would have no
    attention target.
    """
    data = x.data
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != data.shape:
            raise ShapeError(f"mask shape {mask.shape} != input shape {data.shape}")
        if not mask.any(axis=-1).all():
            raise ShapeError("softmax_rows: at least one row is fully masked")
        shifted = np.where(mask, data, -np.inf)
    else:
        shifted = data
    m = shifted.max(axis=-1, keepdims=True)
    e = np.exp(shifted - m)
    if mask is not None:
        e = np.where(mask, e, 0.0)
    y = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(y)

    def vjp(g):
        inner = (g * y).sum(axis=-1, keepdims=True)
        return (y * (g - inner),)

    return _record(out, (x,), vjp)


def mean_pool(x: Tensor) -> Tensor:
    """Mean over the rows of an [L, d] tensor; L must be >= 1."""
    if x.ndim != 2:
        raise ShapeError(f"mean_pool expects a 2-d tensor, got shape {x.shape}")
    if x.shape[0] < 1:
        raise ShapeError("mean_pool needs at least one row")
    return reduce_mean(x, axis=0)


def cosine(u: Tensor, v: Tensor) -> Tensor:
    """Cosine similarity of two 1-d vectors, clamped into [-1, 1]."""
    if u.ndim != 1 or v.ndim != 1 or u.shape != v.shape:
        raise ShapeError(f"cosine expects equal-length vectors, got {u.shape} and {v.shape}")
    nu = float(np.linalg.norm(u.data))
    nv = float(np.linalg.norm(v.data))
    if nu == 0.0:
        raise ZeroNormError("first argument has zero norm", index=0)
    if nv == 0.0:
        raise ZeroNormError("second argument has zero norm", index=1)
    dot = reduce_sum(mul(u, v))
    denom = mul(sqrt(reduce_sum(mul(u, u))), sqrt(reduce_sum(mul(v, v))))
    return clip(div(dot, denom), -1.0, 1.0)
