"""Dense tensors with tape-based reverse-mode differentiation.

Every differentiable op executed while a :class:`Tape` is active is appended
to that tape.  :func:`backward` replays the tape in reverse and returns a
fresh gradient map, so calling it twice on the same tape gives identical
results.

Ops work on numpy arrays of any rank.  Broadcasting is limited to what the
models need (bias rows, scalar factors); gradients are summed back to the
operand shape.
"""

from __future__ import annotations

import itertools
from typing import Callable, Iterable, Sequence

import numpy as np

SIGMOID_CLAMP = 1e-7

_active_tapes: list["Tape"] = []
_node_ids = itertools.count()


class ShapeError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "requires_grad", "name", "_node")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = requires_grad
        self.name = name
        self._node = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{label})"

    def __len__(self) -> int:
        return self.shape[0]

    # operator sugar
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

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None):
        return sum_(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)

    @property
    def T(self):
        return transpose(self)


class _Node:
    __slots__ = ("seq", "out", "inputs", "backward_fn")

    def __init__(self, out, inputs, backward_fn):
        self.seq = next(_node_ids)
        self.out = out
        self.inputs = inputs
        self.backward_fn = backward_fn


class Tape:
    """Ordered record of differentiable ops.

    Use as a context manager; nested tapes all record the same ops.
    """

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self) -> "Tape":
        _active_tapes.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _active_tapes.remove(self)

    def __len__(self) -> int:
        return len(self.nodes)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype if dtype is not None else np.float64))


def _result_dtype(*tensors: Tensor):
    return np.result_type(*(t.data.dtype for t in tensors))


def _record(out_data: np.ndarray, inputs: Sequence[Tensor], backward_fn) -> Tensor:
    needs = any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=needs and bool(_active_tapes))
    if out.requires_grad:
        node = _Node(out, tuple(inputs), backward_fn)
        out._node = node
        for tape in _active_tapes:
            tape.nodes.append(node)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _lift(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=a.dtype))
    elif isinstance(b, Tensor) and not isinstance(a, Tensor):
        a = Tensor(np.asarray(a, dtype=b.dtype))
    return a, b


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _lift(a, b)
    return _record(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = _lift(a, b)
    return _record(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = _lift(a, b)
    return _record(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)
    return _record(y, (x,), lambda g: (g * y,))


def log(x: Tensor) -> Tensor:
    if np.any(x.data <= 0):
        raise ValueError("log of non-positive value")
    return _record(np.log(x.data), (x,), lambda g: (g / x.data,))


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return _record(y, (x,), lambda g: (g * (1.0 - y * y),))


def sigmoid(x: Tensor) -> Tensor:
    """Numerically stable logistic function, kept strictly inside (0, 1)."""
    d = x.data
    y = np.empty_like(d)
    pos = d >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    ez = np.exp(d[~pos])
    y[~pos] = ez / (1.0 + ez)
    tiny = np.finfo(d.dtype).tiny
    y = np.clip(y, tiny, np.nextafter(d.dtype.type(1), d.dtype.type(0)))
    return _record(y, (x,), lambda g: (g * y * (1.0 - y),))


def clamp(x: Tensor, lo: float, hi: float) -> Tensor:
    y = np.clip(x.data, lo, hi)
    inside = (x.data >= lo) & (x.data <= hi)
    return _record(y, (x,), lambda g: (g * inside,))


def activation(x: Tensor, kind: str) -> Tensor:
    if kind == "tanh":
        return tanh(x)
    if kind == "sigmoid":
        return sigmoid(x)
    raise ValueError(f"unknown activation {kind!r}")


# ---------------------------------------------------------------------------
# reductions and shape ops
# ---------------------------------------------------------------------------


def sum_(x: Tensor, axis=None) -> Tensor:
    def back(g):
        if axis is None:
            return (np.broadcast_to(g, x.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), x.shape).copy(),)

    return _record(np.asarray(x.data.sum(axis=axis)), (x,), back)


def mean(x: Tensor, axis=None) -> Tensor:
    count = x.data.size if axis is None else x.shape[axis]
    return mul(sum_(x, axis), 1.0 / count)


def reshape(x: Tensor, shape) -> Tensor:
    return _record(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def transpose(x: Tensor) -> Tensor:
    return _record(x.data.T, (x,), lambda g: (g.T,))


def getitem(x: Tensor, index) -> Tensor:
    """Basic or integer-array indexing; repeated indices accumulate."""

    parts = index if isinstance(index, tuple) else (index,)
    basic = all(p is Ellipsis or p is None or isinstance(p, (slice, int, np.integer)) for p in parts)

    def back(g):
        grad = np.zeros_like(x.data)
        if basic:
            grad[index] = g
        else:
            np.add.at(grad, index, g)
        return (grad,)

    return _record(np.array(x.data[index]), (x,), back)


def take_rows(table: Tensor, ids) -> Tensor:
    """Embedding lookup: ``table[ids]`` for an integer array of any shape."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError(f"row id out of range for table with {table.shape[0]} rows")

    def back(g):
        grad = np.zeros_like(table.data)
        np.add.at(grad, ids.reshape(-1), g.reshape(-1, *table.shape[1:]))
        return (grad,)

    return _record(table.data[ids], (table,), back)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = list(tensors)
    axis_n = axis % tensors[0].ndim
    sizes = [t.shape[axis_n] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def back(g):
        return tuple(
            np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis_n) for i in range(len(tensors))
        )

    return _record(np.concatenate([t.data for t in tensors], axis=axis_n), tensors, back)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)

    def back(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return _record(np.stack([t.data for t in tensors], axis=axis), tensors, back)


def pad_time(x: Tensor, before: int, after: int) -> Tensor:
    """Zero-pad axis -2 (the time axis of a ``[..., L, f]`` tensor)."""
    widths = [(0, 0)] * x.ndim
    widths[-2] = (before, after)
    length = x.shape[-2]
    return _record(np.pad(x.data, widths), (x,), lambda g: (g[..., before : before + length, :],))


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """``a @ b`` where ``b`` is 1-D or 2-D and ``a`` has any leading dims."""
    a, b = _lift(a, b)
    if a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")

    def back(g):
        if b.ndim == 1:
            ga = g[..., None] * b.data
            gb = np.tensordot(g, a.data, axes=(tuple(range(g.ndim)), tuple(range(a.ndim - 1))))
        else:
            ga = g @ b.data.T
            a2 = a.data.reshape(-1, a.shape[-1])
            g2 = g.reshape(-1, b.shape[1]) if a.ndim > 1 else g.reshape(1, -1)
            gb = a2.T @ g2
        return ga, gb

    return _record(a.data @ b.data, (a, b), back)


def affine(x: Tensor, W: Tensor, b: Tensor) -> Tensor:
    """``W·x + b`` for a vector ``x``, or row-wise ``x·Wᵀ + b`` for a batch."""
    if W.ndim != 2 or b.ndim != 1 or W.shape[1] != x.shape[-1] or W.shape[0] != b.shape[0]:
        raise ShapeError(f"affine shape mismatch: x{x.shape}, W{W.shape}, b{b.shape}")
    return add(matmul(x, transpose(W)), b)


# ---------------------------------------------------------------------------
# normalisers
# ---------------------------------------------------------------------------


def softmax(v: Tensor, axis: int = -1) -> Tensor:
    if v.data.size == 0 or v.shape[axis] == 0:
        raise ValueError("softmax of an empty vector")
    z = v.data - v.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _record(y, (v,), back)


def logsumexp(v: Tensor, axis: int = -1) -> Tensor:
    if v.data.size == 0:
        raise ValueError("logsumexp of an empty vector")
    m = v.data.max(axis=axis, keepdims=True)
    s = np.exp(v.data - m).sum(axis=axis, keepdims=True)
    out = np.squeeze(m + np.log(s), axis=axis)
    y = np.exp(v.data - m) / s
    return _record(np.asarray(out), (v,), lambda g: (np.expand_dims(g, axis) * y,))


def log_softmax(v: Tensor, axis: int = -1) -> Tensor:
    m = v.data.max(axis=axis, keepdims=True)
    z = v.data - m
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    y = np.exp(out)
    return _record(out, (v,), lambda g: (g - y * g.sum(axis=axis, keepdims=True),))


# ---------------------------------------------------------------------------
# pooling and dropout
# ---------------------------------------------------------------------------


def max_over_time(M: Tensor) -> Tensor:
    """Maximum over axis -2; ties route the gradient to the first row."""
    if M.shape[-2] < 1:
        raise ValueError("max_over_time needs at least one row")
    idx = np.argmax(M.data, axis=-2)
    out = np.take_along_axis(M.data, idx[..., None, :], axis=-2)[..., 0, :]

    def back(g):
        grad = np.zeros_like(M.data)
        np.put_along_axis(grad, idx[..., None, :], g[..., None, :], axis=-2)
        return (grad,)

    return _record(out, (M,), back)


def dropout(x: Tensor, p: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    """Inverted dropout: survivors are scaled by ``1/(1-p)`` at train time."""
    if not 0 <= p < 1:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if not training or p == 0:
        return x
    keep = (rng.random(x.shape) >= p).astype(x.dtype) / (1.0 - p)
    return mul(x, Tensor(keep))


# ---------------------------------------------------------------------------
# differentiation
# ---------------------------------------------------------------------------


class Gradients(dict):
    """Map from parameter tensor (by identity) to gradient array."""

    def __init__(self, params: Iterable[Tensor] = ()):
        super().__init__()
        self._by_id = {}
        for p in params:
            self[p] = np.zeros_like(p.data)

    def __setitem__(self, key: Tensor, value) -> None:
        self._by_id[id(key)] = key
        super().__setitem__(id(key), value)

    def __getitem__(self, key: Tensor) -> np.ndarray:
        return super().__getitem__(id(key))

    def get(self, key: Tensor, default=None):
        return super().get(id(key), default)

    def __contains__(self, key) -> bool:
        return super().__contains__(id(key))

    def tensors(self) -> list[Tensor]:
        return list(self._by_id.values())


def backward(tape: Tape, loss: Tensor, params: Iterable[Tensor] = ()) -> Gradients:
    """Replay ``tape`` in reverse execution order from a scalar ``loss``.

    Returns gradients for every tensor in ``params`` (zeros if unreachable)
    plus every other leaf that required grad and was reached.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    params = list(params)
    out = Gradients(params)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node.out), None)
        if g is None:
            continue
        for inp, gi in zip(node.inputs, node.backward_fn(g)):
            if not inp.requires_grad:
                continue
            gi = np.asarray(gi, dtype=inp.dtype).reshape(inp.shape)
            prev = grads.get(id(inp))
            grads[id(inp)] = gi if prev is None else prev + gi
            if inp._node is None:
                leaf_prev = out.get(inp)
                out[inp] = gi if leaf_prev is None else leaf_prev + gi
                del grads[id(inp)]
    if loss._node is None and loss.requires_grad:
        out[loss] = np.ones_like(loss.data)
    return out


def value_and_grad(f: Callable[[], Tensor], params: Sequence[Tensor]) -> tuple[float, Gradients]:
    with Tape() as tape:
        loss = f()
    return loss.item(), backward(tape, loss, params)


def finite_diff_check(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    eps: float = 1e-5,
    coords: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Max relative error between tape gradients and central differences.

    ``f`` is re-evaluated after perturbing ``params`` in place, so it must
    read the parameters each time it is called and be deterministic.
    ``coords`` limits the check to a random subset of coordinates per tensor.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    for p in params:
        if p.dtype != np.float64:
            raise TypeError(f"gradient checks need float64 parameters, got {p.dtype} for {p.name}")
    _, grads = value_and_grad(f, params)
    worst = 0.0
    for p in params:
        flat = p.data.reshape(-1)
        analytic = grads[p].reshape(-1)
        idx = np.arange(flat.size)
        if coords is not None and flat.size > coords:
            idx = (rng or np.random.default_rng(0)).choice(flat.size, size=coords, replace=False)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + eps
            hi = f().item()
            flat[i] = orig - eps
            lo = f().item()
            flat[i] = orig
            if not (np.isfinite(hi) and np.isfinite(lo)):
                raise FloatingPointError(f"non-finite objective while probing {p.name}[{i}]")
            numeric = (hi - lo) / (2 * eps)
            err = abs(analytic[i] - numeric) / max(1e-8, abs(analytic[i]) + abs(numeric))
            worst = max(worst, err)
    return worst


def sgd_step(params: Sequence[Tensor], grads: Gradients, lr: float) -> None:
    """In-place ``θ ← θ − lr·g`` for every parameter present in ``grads``."""
    if lr < 0:
        raise ValueError("learning rate must be non-negative")
    for p in params:
        g = grads.get(p)
        if g is None:
            continue
        if g.shape != p.shape:
            raise ShapeError(f"gradient shape {g.shape} does not match parameter {p.name} {p.shape}")
        if lr:
            p.data -= (lr * g).astype(p.dtype)
