"""Dense float64 tensors and a small tape-based reverse-mode autodiff engine.

Tensors are plain read-only ``numpy.ndarray`` objects of dtype float64.  A
:class:`Tape` records operations on :class:`Var` handles; calling
:meth:`Tape.backward` on a scalar node walks the tape once, newest node first,
and returns the adjoint of every node.

Every op in this module accepts either tensors or ``Var`` handles.  When no
argument is tracked the op is evaluated eagerly and returns a tensor, so model
code can be written once and run with or without a tape.

Broadcasting is restricted to exact-shape and scalar-with-tensor operands.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import DimensionError, EmptyLossError, NumericError, StaleTapeError

_DEBUG = False


def set_debug(flag: bool) -> None:
    """Toggle finiteness checks on the output of every op."""
    global _DEBUG
    _DEBUG = bool(flag)


def tensor(data, shape: Sequence[int] | None = None) -> np.ndarray:
    """Build an immutable float64 tensor, rejecting NaN/Inf."""
    arr = np.array(data, dtype=np.float64)
    if shape is not None:
        shape = tuple(int(s) for s in shape)
        if any(s <= 0 for s in shape):
            raise DimensionError(f"shape entries must be positive, got {shape}")
        if int(np.prod(shape)) != arr.size:
            raise DimensionError(f"{arr.size} values do not fill shape {shape}")
        arr = arr.reshape(shape)
    if not np.all(np.isfinite(arr)):
        raise NumericError("tensor contains NaN or Inf")
    arr.flags.writeable = False
    return arr


class Var:
    """A node on a tape: a forward value plus its position in the record."""

    __slots__ = ("tape", "id", "value", "parents", "vjp")

    def __init__(self, tape: "Tape", id: int, value: np.ndarray, parents, vjp):
        self.tape = tape
        self.id = id
        self.value = value
        self.parents = parents
        self.vjp = vjp

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Var(id={self.id}, shape={self.value.shape})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)


class Gradients:
    """Adjoints from one backward pass, indexable by ``Var``."""

    def __init__(self, adjoints: list):
        self._adj = adjoints

    def __getitem__(self, var: Var) -> np.ndarray:
        g = self._adj[var.id]
        if g is None:
            return np.zeros_like(var.value)
        return g

    def by_id(self) -> dict[int, np.ndarray]:
        return {i: g for i, g in enumerate(self._adj) if g is not None}


class Tape:
    """Append-only operation record.  One tape per forward pass."""

    def __init__(self):
        self.nodes: list[Var] = []
        self._consumed = False

    def leaf(self, value) -> Var:
        value = np.asarray(value, dtype=np.float64)
        return self._push(value, (), None)

    def leaves(self, params: dict[str, np.ndarray]) -> dict[str, Var]:
        return {k: self.leaf(v) for k, v in params.items()}

    def _push(self, value, parents, vjp) -> Var:
        if self._consumed:
            raise StaleTapeError("tape already differentiated; record a new one")
        if _DEBUG and not np.all(np.isfinite(value)):
            raise NumericError(f"non-finite value produced at node {len(self.nodes)}")
        node = Var(self, len(self.nodes), value, parents, vjp)
        self.nodes.append(node)
        return node

    def backward(self, loss: Var) -> Gradients:
        if not isinstance(loss, Var) or loss.tape is not self:
            raise ValueError("loss must be a node recorded on this tape")
        if loss.value.size != 1:
            raise DimensionError(f"loss must be scalar, got shape {loss.value.shape}")
        if self._consumed:
            raise StaleTapeError("backward already called on this tape")
        self._consumed = True
        adj: list = [None] * len(self.nodes)
        adj[loss.id] = np.ones_like(loss.value)
        for node in reversed(self.nodes[: loss.id + 1]):
            g = adj[node.id]
            if g is None or node.vjp is None:
                continue
            for parent, pg in zip(node.parents, node.vjp(g)):
                if parent is None or pg is None:
                    continue
                if adj[parent.id] is None:
                    adj[parent.id] = pg
                else:
                    adj[parent.id] = adj[parent.id] + pg
        return Gradients(adj)


def grad(loss_fn: Callable[..., Var], params: dict[str, np.ndarray]):
    """Evaluate ``loss_fn(**leaves)`` on a fresh tape; return (loss, grads)."""
    tape = Tape()
    leaves = tape.leaves(params)
    loss = loss_fn(leaves)
    grads = tape.backward(loss)
    return float(loss.value), {k: grads[v] for k, v in leaves.items()}


# ---------------------------------------------------------------------------
# op plumbing


def _val(x):
    return x.value if isinstance(x, Var) else x


def _tape_of(*args) -> Tape | None:
    tape = None
    for a in args:
        if isinstance(a, Var):
            if tape is None:
                tape = a.tape
            elif a.tape is not tape:
                raise ValueError("operands belong to different tapes")
    return tape


def _record(value, args, vjp):
    tape = _tape_of(*args)
    if tape is None:
        if _DEBUG and not np.all(np.isfinite(value)):
            raise NumericError("non-finite value produced")
        return value
    parents = tuple(a if isinstance(a, Var) else None for a in args)
    return tape._push(value, parents, vjp)


def _as_array(x):
    if isinstance(x, Var):
        return x.value
    return np.asarray(x, dtype=np.float64)


def _check_binary(a, b):
    sa, sb = np.shape(a), np.shape(b)
    if sa != sb and np.size(a) != 1 and np.size(b) != 1:
        raise DimensionError(f"shape mismatch {sa} vs {sb}")


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    return np.sum(g).reshape(shape)


# ---------------------------------------------------------------------------
# elementwise


def add(a, b):
    av, bv = _as_array(a), _as_array(b)
    _check_binary(av, bv)
    sa, sb = av.shape, bv.shape
    return _record(av + bv, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b):
    av, bv = _as_array(a), _as_array(b)
    _check_binary(av, bv)
    sa, sb = av.shape, bv.shape
    return _record(av - bv, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b):
    av, bv = _as_array(a), _as_array(b)
    _check_binary(av, bv)
    sa, sb = av.shape, bv.shape
    return _record(
        av * bv, (a, b), lambda g: (_unbroadcast(g * bv, sa), _unbroadcast(g * av, sb))
    )


def scale(a, c: float):
    c = float(c)
    return _record(_as_array(a) * c, (a,), lambda g: (g * c,))


def relu(a):
    av = _as_array(a)
    mask = av > 0
    return _record(np.where(mask, av, 0.0), (a,), lambda g: (g * mask,))


def sigmoid(a):
    av = _as_array(a)
    # split by sign so exp never overflows
    out = np.empty_like(av)
    pos = av >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-av[pos]))
    ex = np.exp(av[~pos])
    out[~pos] = ex / (1.0 + ex)
    return _record(out, (a,), lambda g: (g * out * (1.0 - out),))


def tanh(a):
    out = np.tanh(_as_array(a))
    return _record(out, (a,), lambda g: (g * (1.0 - out * out),))


def log(a):
    av = _as_array(a)
    if np.any(av <= 0):
        raise NumericError("log of non-positive value")
    return _record(np.log(av), (a,), lambda g: (g / av,))


def clip(a, lo: float, hi: float):
    av = _as_array(a)
    inside = (av >= lo) & (av <= hi)
    return _record(np.clip(av, lo, hi), (a,), lambda g: (g * inside,))


def square(a):
    av = _as_array(a)
    return _record(av * av, (a,), lambda g: (2.0 * g * av,))


def elementwise(kind: str, *args):
    """Dispatch an elementwise op by name."""
    table = {
        "relu": relu,
        "sigmoid": sigmoid,
        "tanh": tanh,
        "add": add,
        "sub": sub,
        "mul": mul,
        "scale": scale,
        "log": log,
        "square": square,
    }
    try:
        fn = table[kind]
    except KeyError:
        raise ValueError(f"unknown elementwise op {kind!r}") from None
    return fn(*args)


# ---------------------------------------------------------------------------
# reductions and linear algebra


def sum(a):  # noqa: A001 - mirrors numpy naming
    av = _as_array(a)
    shape = av.shape
    return _record(np.sum(av), (a,), lambda g: (np.full(shape, float(g)),))


def mean(a):
    av = _as_array(a)
    if av.size == 0:
        raise EmptyLossError("mean of empty tensor")
    n, shape = av.size, av.shape
    return _record(np.sum(av) / n, (a,), lambda g: (np.full(shape, float(g) / n),))


def reshape(a, shape):
    av = _as_array(a)
    old = av.shape
    return _record(av.reshape(shape), (a,), lambda g: (g.reshape(old),))


def matmul(a, b):
    """Matrix product for 2-D @ 2-D, 2-D @ 1-D and 1-D @ 2-D operands."""
    av, bv = _as_array(a), _as_array(b)
    if av.ndim not in (1, 2) or bv.ndim not in (1, 2) or (av.ndim == 1 and bv.ndim == 1):
        raise DimensionError(f"matmul needs a matrix operand, got {av.shape} @ {bv.shape}")
    if av.shape[-1] != bv.shape[0]:
        raise DimensionError(f"inner dimensions differ: {av.shape} @ {bv.shape}")
    out = av @ bv

    def vjp(g):
        if av.ndim == 2 and bv.ndim == 2:
            return g @ bv.T, av.T @ g
        if bv.ndim == 1:
            return np.outer(g, bv), av.T @ g
        return bv @ g, np.outer(av, g)

    return _record(out, (a, b), vjp)


def dot(a, b):
    """Inner product of two equal-length vectors."""
    av, bv = _as_array(a), _as_array(b)
    if av.ndim != 1 or av.shape != bv.shape:
        raise DimensionError(f"dot needs equal-length vectors, got {av.shape}, {bv.shape}")
    return _record(np.dot(av, bv), (a, b), lambda g: (g * bv, g * av))


def mse(pred, target, reduction: str = "sum"):
    """Squared error between two vectors, summed (default) or averaged."""
    pv, tv = _as_array(pred), _as_array(target)
    if pv.shape != tv.shape:
        raise DimensionError(f"pred {pv.shape} vs target {tv.shape}")
    if pv.size == 0:
        raise EmptyLossError("squared error over an empty set")
    if reduction not in ("sum", "mean"):
        raise ValueError(f"unknown reduction {reduction!r}")
    diff = pv - tv
    c = 1.0 if reduction == "sum" else 1.0 / pv.size
    return _record(
        c * np.dot(diff.ravel(), diff.ravel()),
        (pred, target),
        lambda g: (2.0 * c * g * diff, -2.0 * c * g * diff),
    )
