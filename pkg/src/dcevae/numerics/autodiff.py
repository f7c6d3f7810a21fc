"""Tape-based reverse-mode differentiation over dense numpy arrays.

Every primitive executed on a :class:`Var` appends a node to the owning
:class:`Tape`. ``Tape.backward`` walks the nodes in reverse creation order
and accumulates adjoints, so the tape alone is enough to replay the
gradient of any scalar (or seeded vector) output.

Example::

    tape = Tape()
    w = tape.watch(np.eye(2))
    x = tape.watch(np.array([[3.0, 4.0]]))
    loss = 0.5 * ad.sum(ad.square(x @ ad.transpose(w)))
    grads = tape.backward(loss)
    grads[x]  # -> [[3., 4.]]
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Raised when operands have incompatible shapes."""


class Var:
    """A value recorded on a tape."""

    __slots__ = ("value", "tape", "parents", "vjp", "index")
    __array_ufunc__ = None  # make numpy defer to our reflected operators

    def __init__(self, value, tape: "Tape", parents=(), vjp=None):
        self.value = value
        self.tape = tape
        self.parents = parents
        self.vjp = vjp
        self.index = tape._push(self)

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Var(shape={self.value.shape}, index={self.index})"

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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    @property
    def T(self):
        return transpose(self)


class Gradients:
    """Adjoints produced by one backward pass, looked up by Var or by watched array."""

    def __init__(self, tape: "Tape", adjoints: list):
        self._tape = tape
        self._adjoints = adjoints

    def __getitem__(self, key) -> np.ndarray:
        if isinstance(key, Var):
            var = key
        else:
            var = self._tape._watched.get(id(key))
            if var is None:
                return np.zeros_like(np.asarray(key, dtype=float))
        g = self._adjoints[var.index]
        if g is None:
            return np.zeros_like(var.value)
        return g

    def wrt(self, arrays: Sequence[np.ndarray]) -> list[np.ndarray]:
        return [self[a] for a in arrays]


class Tape:
    """Ordered record of primitive operations."""

    def __init__(self):
        self.nodes: list[Var] = []
        self._watched: dict[int, Var] = {}
        # keep watched arrays alive so id() stays unique for the tape's lifetime
        self._keep: list[np.ndarray] = []

    def _push(self, var: Var) -> int:
        self.nodes.append(var)
        return len(self.nodes) - 1

    def __len__(self):
        return len(self.nodes)

    def watch(self, array: np.ndarray) -> Var:
        """Trace ``array`` as an input. Watching the same array twice returns the same Var."""
        var = self._watched.get(id(array))
        if var is None:
            var = Var(np.asarray(array, dtype=float), self)
            self._watched[id(array)] = var
            self._keep.append(array)
        return var

    def constant(self, value) -> Var:
        return Var(np.asarray(value, dtype=float), self)

    def backward(self, output: Var, adjoint=None) -> Gradients:
        if output.tape is not self:
            raise ValueError("output was not recorded on this tape")
        if adjoint is None:
            if output.value.size != 1:
                raise ShapeError(
                    f"non-scalar output of shape {output.value.shape} needs an explicit adjoint"
                )
            adjoint = np.ones_like(output.value)
        adjoint = np.asarray(adjoint, dtype=float)
        if adjoint.shape != output.value.shape:
            raise ShapeError(
                f"adjoint shape {adjoint.shape} does not match output shape {output.value.shape}"
            )
        adj: list = [None] * len(self.nodes)
        adj[output.index] = adjoint
        for node in reversed(self.nodes[: output.index + 1]):
            g = adj[node.index]
            if g is None or node.vjp is None:
                continue
            for parent, pg in zip(node.parents, node.vjp(g)):
                if pg is None or not isinstance(parent, Var):
                    continue
                if adj[parent.index] is None:
                    adj[parent.index] = pg
                else:
                    adj[parent.index] = adj[parent.index] + pg
        return Gradients(self, adj)


# ---------------------------------------------------------------------------
# helpers


def _tape_of(*xs) -> Tape:
    for x in xs:
        if isinstance(x, Var):
            return x.tape
    raise TypeError("at least one operand must be a Var")


def value(x) -> np.ndarray:
    return x.value if isinstance(x, Var) else np.asarray(x, dtype=float)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (reverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _check_broadcast(x, y, op):
    try:
        return np.broadcast_shapes(np.shape(value(x)), np.shape(value(y)))
    except ValueError:
        raise ShapeError(
            f"{op}: cannot broadcast {np.shape(value(x))} with {np.shape(value(y))}"
        ) from None


def _unary(x: Var, out: np.ndarray, local: Callable[[np.ndarray], np.ndarray]) -> Var:
    return Var(out, x.tape, (x,), lambda g: (local(g),))


# ---------------------------------------------------------------------------
# primitives


def add(x, y) -> Var:
    _check_broadcast(x, y, "add")
    xv, yv = value(x), value(y)
    return Var(
        xv + yv,
        _tape_of(x, y),
        (x, y),
        lambda g: (_unbroadcast(g, xv.shape), _unbroadcast(g, yv.shape)),
    )


def sub(x, y) -> Var:
    _check_broadcast(x, y, "sub")
    xv, yv = value(x), value(y)
    return Var(
        xv - yv,
        _tape_of(x, y),
        (x, y),
        lambda g: (_unbroadcast(g, xv.shape), _unbroadcast(-g, yv.shape)),
    )


def mul(x, y) -> Var:
    _check_broadcast(x, y, "mul")
    xv, yv = value(x), value(y)
    return Var(
        xv * yv,
        _tape_of(x, y),
        (x, y),
        lambda g: (_unbroadcast(g * yv, xv.shape), _unbroadcast(g * xv, yv.shape)),
    )


def div(x, y) -> Var:
    _check_broadcast(x, y, "div")
    xv, yv = value(x), value(y)
    return Var(
        xv / yv,
        _tape_of(x, y),
        (x, y),
        lambda g: (
            _unbroadcast(g / yv, xv.shape),
            _unbroadcast(-g * xv / (yv * yv), yv.shape),
        ),
    )


def neg(x: Var) -> Var:
    return _unary(x, -x.value, lambda g: -g)


def matmul(x, y) -> Var:
    xv, yv = value(x), value(y)
    if xv.ndim != 2 or yv.ndim != 2 or xv.shape[1] != yv.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {xv.shape} @ {yv.shape}")
    return Var(
        xv @ yv,
        _tape_of(x, y),
        (x, y),
        lambda g: (g @ yv.T, xv.T @ g),
    )


def transpose(x: Var) -> Var:
    return _unary(x, x.value.T, lambda g: g.T)


def tanh(x: Var) -> Var:
    out = np.tanh(x.value)
    return _unary(x, out, lambda g: g * (1.0 - out * out))


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid(x: Var) -> Var:
    out = _sigmoid(x.value)
    return _unary(x, out, lambda g: g * out * (1.0 - out))


def softplus(x: Var) -> Var:
    z = x.value
    out = np.logaddexp(0.0, z)
    s = _sigmoid(z)
    return _unary(x, out, lambda g: g * s)


def log_sigmoid(x: Var) -> Var:
    """log(sigmoid(x)) computed without overflow."""
    z = x.value
    out = -np.logaddexp(0.0, -z)
    s = _sigmoid(-z)
    return _unary(x, out, lambda g: g * s)


def exp(x: Var) -> Var:
    out = np.exp(x.value)
    return _unary(x, out, lambda g: g * out)


def log(x: Var) -> Var:
    xv = x.value
    return _unary(x, np.log(xv), lambda g: g / xv)


def square(x: Var) -> Var:
    xv = x.value
    return _unary(x, xv * xv, lambda g: 2.0 * g * xv)


def sqrt(x: Var) -> Var:
    out = np.sqrt(x.value)
    return _unary(x, out, lambda g: 0.5 * g / out)


def abs(x: Var) -> Var:  # noqa: A001 - mirrors numpy naming
    xv = x.value
    return _unary(x, np.abs(xv), lambda g: g * np.sign(xv))


def clip_min(x: Var, lo: float) -> Var:
    """Elementwise max(x, lo); entries held at ``lo`` pass no gradient."""
    xv = x.value
    keep = xv >= lo
    return _unary(x, np.where(keep, xv, lo), lambda g: g * keep)


def sum(x: Var, axis=None, keepdims=False) -> Var:  # noqa: A001
    xv = x.value

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, xv.shape).copy(),)

    return Var(np.sum(xv, axis=axis, keepdims=keepdims), x.tape, (x,), vjp)


def mean(x: Var, axis=None, keepdims=False) -> Var:
    n = x.value.size if axis is None else x.value.shape[axis]
    return sum(x, axis=axis, keepdims=keepdims) * (1.0 / n)


def concat(xs: Sequence, axis: int = 1) -> Var:
    values = [value(x) for x in xs]
    try:
        out = np.concatenate(values, axis=axis)
    except ValueError as exc:
        raise ShapeError(
            f"concat: shapes {[v.shape for v in values]} along axis {axis}: {exc}"
        ) from None
    bounds = np.cumsum([0] + [v.shape[axis] for v in values])

    def vjp(g):
        return tuple(
            np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis)
            for i in range(len(values))
        )

    return Var(out, _tape_of(*xs), tuple(xs), vjp)


def columns(x: Var, start: int, stop: int) -> Var:
    """Column slice ``x[:, start:stop]``."""
    xv = x.value

    def vjp(g):
        full = np.zeros_like(xv)
        full[:, start:stop] = g
        return (full,)

    return Var(xv[:, start:stop], x.tape, (x,), vjp)


def take_rows(x: Var, index: np.ndarray) -> Var:
    """Row gather ``x[index]``; repeated indices accumulate."""
    xv = x.value
    index = np.asarray(index)

    def vjp(g):
        full = np.zeros_like(xv)
        np.add.at(full, index, g)
        return (full,)

    return Var(xv[index], x.tape, (x,), vjp)


def where(mask: np.ndarray, x, y) -> Var:
    """Select ``x`` where ``mask`` else ``y``; mask is a constant."""
    mask = np.asarray(mask, dtype=bool)
    xv, yv = value(x), value(y)
    out = np.where(mask, xv, yv)
    return Var(
        out,
        _tape_of(x, y),
        (x, y),
        lambda g: (
            _unbroadcast(np.where(mask, g, 0.0), np.shape(xv)),
            _unbroadcast(np.where(mask, 0.0, g), np.shape(yv)),
        ),
    )


def stop_gradient(x: Var) -> Var:
    """Same value, recorded as a fresh input with no path back to ``x``."""
    return Var(x.value, x.tape)
