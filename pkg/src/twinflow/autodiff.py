"""Tape-based reverse-mode autodiff over float64 arrays of rank 1 or 2.

A :class:`Tape` records every primitive whose operands include a recorded
value.  Values built only from constants never touch a tape, which is how
stop-gradient is realised: :func:`stop_gradient` just drops the node handle.

    >>> tape = Tape()
    >>> x = tape.leaf(np.array([1.0, 2.0, 3.0]))
    >>> grads = tape.backward(sum_(square(x)))
    >>> grads[x.node_id]
    array([2., 4., 6.])
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes do not conform for a primitive."""

    def __init__(self, primitive: str, *shapes: tuple[int, ...]):
        self.primitive = primitive
        self.shapes = shapes
        joined = " and ".join(str(s) for s in shapes)
        super().__init__(f"{primitive}: incompatible shapes {joined}")


class TapeError(RuntimeError):
    pass


def _as_array(data) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.ndim not in (1, 2) or arr.size == 0:
        raise ShapeError("value", arr.shape)
    return arr


class DiffValue:
    """A float64 array that may carry a handle to a tape node.

    ``node_id is None`` means the value is a constant and no gradient flows
    into it.
    """

    __slots__ = ("data", "tape", "node_id")
    __array_priority__ = 100  # make ndarray <op> DiffValue defer to us

    def __init__(self, data, tape: Tape | None = None, node_id: int | None = None):
        self.data = _as_array(data)
        self.tape = tape
        self.node_id = node_id

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def recorded(self) -> bool:
        return self.node_id is not None

    def __repr__(self) -> str:
        tag = f"node={self.node_id}" if self.recorded else "const"
        return f"DiffValue({self.data!r}, {tag})"

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError("item", self.shape)
        return float(self.data.reshape(-1)[0])

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scalar_mul(self, other)
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scalar_mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)


@dataclass
class _Node:
    inputs: tuple[int | None, ...]
    # maps the output cotangent to one cotangent per input (None where unused)
    vjp: Callable[[np.ndarray], Sequence[np.ndarray | None]]
    shape: tuple[int, ...]
    op: str


@dataclass
class Tape:
    """Ordered record of primitives; node ids are insertion indices."""

    nodes: list[_Node] = field(default_factory=list)
    leaves: list[int] = field(default_factory=list)

    def leaf(self, data) -> DiffValue:
        arr = _as_array(data).copy()
        node_id = self._push(_Node((), lambda g: (), arr.shape, "leaf"))
        self.leaves.append(node_id)
        return DiffValue(arr, self, node_id)

    def _push(self, node: _Node) -> int:
        self.nodes.append(node)
        return len(self.nodes) - 1

    def clear(self) -> None:
        self.nodes.clear()
        self.leaves.clear()

    def backward(self, loss: DiffValue) -> dict[int, np.ndarray]:
        """Gradient of a scalar ``loss`` with respect to every leaf on the tape.

        Leaves that the loss does not depend on get zero arrays.  The tape is
        cleared afterwards.
        """
        if loss.data.size != 1:
            raise TapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        if not loss.recorded or loss.tape is not self:
            raise TapeError("backward called on a value that is not recorded on this tape")

        cot: dict[int, np.ndarray] = {loss.node_id: np.ones(loss.shape)}
        for node_id in range(loss.node_id, -1, -1):
            g = cot.get(node_id)
            if g is None:
                continue
            node = self.nodes[node_id]
            if not node.inputs:
                continue
            for inp, gi in zip(node.inputs, node.vjp(g)):
                if inp is None or gi is None:
                    continue
                if inp in cot:
                    cot[inp] = cot[inp] + gi
                else:
                    cot[inp] = gi
            # intermediate cotangents are not needed once propagated
            del cot[node_id]

        grads = {
            leaf: cot.get(leaf, np.zeros(self.nodes[leaf].shape)) for leaf in self.leaves
        }
        self.clear()
        return grads


def constant(data) -> DiffValue:
    return DiffValue(data)


def _lift(v) -> DiffValue:
    return v if isinstance(v, DiffValue) else DiffValue(v)


def _record(op: str, out: np.ndarray, operands: Sequence[DiffValue], vjp) -> DiffValue:
    tape = None
    for v in operands:
        if v.recorded:
            if tape is not None and v.tape is not tape:
                raise TapeError(f"{op}: operands recorded on different tapes")
            tape = v.tape
    if tape is None:
        return DiffValue(out)
    inputs = tuple(v.node_id for v in operands)
    node_id = tape._push(_Node(inputs, vjp, out.shape, op))
    return DiffValue(out, tape, node_id)


def _is_scalar(v: DiffValue) -> bool:
    return v.data.size == 1


def _reduce_to(g: np.ndarray, v: DiffValue) -> np.ndarray:
    """Undo scalar broadcasting of ``v`` in a cotangent."""
    if g.shape == v.shape:
        return g
    return np.full(v.shape, g.sum())


def _check_elementwise(op: str, a: DiffValue, b: DiffValue) -> tuple[int, ...]:
    if a.shape == b.shape:
        return a.shape
    if _is_scalar(b):
        return a.shape
    if _is_scalar(a):
        return b.shape
    raise ShapeError(op, a.shape, b.shape)


def _bcast(v: DiffValue, shape: tuple[int, ...]) -> np.ndarray:
    return v.data if v.shape == shape else v.data.reshape(-1)[0] * np.ones(shape)


def add(a, b) -> DiffValue:
    a, b = _lift(a), _lift(b)
    shape = _check_elementwise("add", a, b)
    out = _bcast(a, shape) + _bcast(b, shape)
    return _record("add", out, (a, b), lambda g: (_reduce_to(g, a), _reduce_to(g, b)))


def sub(a, b) -> DiffValue:
    a, b = _lift(a), _lift(b)
    shape = _check_elementwise("sub", a, b)
    out = _bcast(a, shape) - _bcast(b, shape)
    return _record("sub", out, (a, b), lambda g: (_reduce_to(g, a), _reduce_to(-g, b)))


def scalar_mul(a, s: float) -> DiffValue:
    a = _lift(a)
    s = float(s)
    return _record("scalar_mul", a.data * s, (a,), lambda g: (g * s,))


def mul(a, b) -> DiffValue:
    """Elementwise product (same shape, or one side a scalar)."""
    a, b = _lift(a), _lift(b)
    shape = _check_elementwise("elementwise_mul", a, b)
    ad, bd = _bcast(a, shape), _bcast(b, shape)
    return _record(
        "elementwise_mul",
        ad * bd,
        (a, b),
        lambda g: (_reduce_to(g * bd, a), _reduce_to(g * ad, b)),
    )


def matmul(a, b) -> DiffValue:
    a, b = _lift(a), _lift(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape)
    ad, bd = a.data, b.data
    need_a, need_b = a.recorded, b.recorded

    def vjp(g):
        # skip products whose cotangent would be discarded
        return (g @ bd.T if need_a else None, ad.T @ g if need_b else None)

    return _record("matmul", ad @ bd, (a, b), vjp)


def affine(w, b, x) -> DiffValue:
    """``x @ w + b`` with ``x`` of shape (n, in) or (in,), ``b`` of shape (out,)."""
    w, b, x = _lift(w), _lift(b), _lift(x)
    if w.data.ndim != 2 or b.data.ndim != 1 or b.shape[0] != w.shape[1]:
        raise ShapeError("affine", w.shape, b.shape)
    if x.shape[-1] != w.shape[0]:
        raise ShapeError("affine", x.shape, w.shape)
    wd, xd = w.data, x.data
    out = xd @ wd + b.data
    need_w, need_x = w.recorded, x.recorded

    def vjp(g):
        if xd.ndim == 1:
            return (np.outer(xd, g) if need_w else None, g,
                    wd @ g if need_x else None)
        return (xd.T @ g if need_w else None, g.sum(axis=0),
                g @ wd.T if need_x else None)

    return _record("affine", out, (w, b, x), vjp)


def tanh(a) -> DiffValue:
    a = _lift(a)
    y = np.tanh(a.data)
    return _record("tanh", y, (a,), lambda g: (g * (1.0 - y * y),))


def silu(a) -> DiffValue:
    a = _lift(a)
    x = a.data
    sig = 0.5 * (1.0 + np.tanh(0.5 * x))  # overflow-free logistic
    y = x * sig
    return _record("silu", y, (a,), lambda g: (g * (sig + y * (1.0 - sig)),))


def square(a) -> DiffValue:
    a = _lift(a)
    x = a.data
    return _record("square", x * x, (a,), lambda g: (2.0 * x * g,))


def sum_(a) -> DiffValue:
    a = _lift(a)
    shape = a.shape
    return _record("sum", np.array([a.data.sum()]), (a,), lambda g: (np.full(shape, g[0]),))


def mean(a) -> DiffValue:
    a = _lift(a)
    shape, n = a.shape, a.data.size
    return _record(
        "mean", np.array([a.data.sum() / n]), (a,), lambda g: (np.full(shape, g[0] / n),)
    )


def concat_rows(a, b) -> DiffValue:
    a, b = _lift(a), _lift(b)
    if a.data.ndim != b.data.ndim or a.shape[1:] != b.shape[1:]:
        raise ShapeError("concat_rows", a.shape, b.shape)
    k = a.shape[0]
    out = np.concatenate([a.data, b.data], axis=0)
    return _record("concat_rows", out, (a, b), lambda g: (g[:k], g[k:]))


def stop_gradient(v) -> DiffValue:
    v = _lift(v)
    return DiffValue(v.data)
