"""Array-level reverse-mode automatic differentiation.

A :class:`Tape` records every operation applied to :class:`Var` values in
evaluation order (define-by-run).  Primals are computed eagerly and cached on
the tape; :func:`backward` then walks the tape once in reverse and returns a
:class:`GradStore` holding one gradient per trainable leaf.

Values are float64 numpy arrays.  Binary elementwise ops follow numpy
broadcasting; gradients are summed back down to the input shape.

The module-level functions (:func:`sin`, :func:`matmul`, ...) accept plain
arrays as well as ``Var`` objects, so model code can be written once and run
either with or without a tape.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np


class AutodiffError(ValueError):
    """Raised for malformed graphs: shape mismatches, non-scalar losses, ..."""


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    ndim_extra = grad.ndim - len(shape)
    if ndim_extra > 0:
        grad = grad.sum(axis=tuple(range(ndim_extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _broadcast_shape(kind: str, shapes: Sequence[tuple]) -> tuple:
    try:
        return np.broadcast_shapes(*shapes)
    except ValueError:
        raise AutodiffError(
            f"{kind}: incompatible shapes {' and '.join(str(s) for s in shapes)}"
        ) from None


# ---------------------------------------------------------------------------
# primitive rules: forward(values, **attrs) -> value
#                  vjp(grad_out, values, out, **attrs) -> tuple of input grads


def _fwd_add(a, b):
    return a + b


def _vjp_add(g, vals, out):
    return _unbroadcast(g, vals[0].shape), _unbroadcast(g, vals[1].shape)


def _fwd_sub(a, b):
    return a - b


def _vjp_sub(g, vals, out):
    return _unbroadcast(g, vals[0].shape), _unbroadcast(-g, vals[1].shape)


def _fwd_mul(a, b):
    return a * b


def _vjp_mul(g, vals, out):
    a, b = vals
    return _unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)


def _fwd_div(a, b):
    return a / b


def _vjp_div(g, vals, out):
    a, b = vals
    ga = g / b
    return _unbroadcast(ga, a.shape), _unbroadcast(-ga * out, b.shape)


def _fwd_neg(a):
    return -a


def _vjp_neg(g, vals, out):
    return (-g,)


def _fwd_sin(a):
    return np.sin(a)


def _vjp_sin(g, vals, out):
    return (g * np.cos(vals[0]),)


def _fwd_cos(a):
    return np.cos(a)


def _vjp_cos(g, vals, out):
    return (-g * np.sin(vals[0]),)


def _fwd_matmul(a, b):
    return np.matmul(a, b)


def _vjp_matmul(g, vals, out):
    a, b = vals
    if a.ndim == 1 or b.ndim == 1:
        a2 = a[None, :] if a.ndim == 1 else a
        b2 = b[:, None] if b.ndim == 1 else b
        g2 = g
        if a.ndim == 1:
            g2 = np.expand_dims(g2, -2)
        if b.ndim == 1:
            g2 = np.expand_dims(g2, -1)
        ga = np.matmul(g2, np.swapaxes(b2, -1, -2))
        gb = np.matmul(np.swapaxes(a2, -1, -2), g2)
        if a.ndim == 1:
            ga = ga[..., 0, :]
        if b.ndim == 1:
            gb = gb[..., :, 0]
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)
    ga = np.matmul(g, np.swapaxes(b, -1, -2))
    gb = np.matmul(np.swapaxes(a, -1, -2), g)
    return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)


def _fwd_sum(a, axis=None):
    return np.sum(a, axis=axis)


def _expand_reduced(g, shape, axis):
    if axis is None:
        return np.broadcast_to(g, shape)
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    axes = tuple(ax % len(shape) for ax in axes)
    for ax in sorted(axes):
        g = np.expand_dims(g, ax)
    return np.broadcast_to(g, shape)


def _vjp_sum(g, vals, out, axis=None):
    return (np.array(_expand_reduced(g, vals[0].shape, axis)),)


def _fwd_mean(a, axis=None):
    return np.mean(a, axis=axis)


def _vjp_mean(g, vals, out, axis=None):
    shape = vals[0].shape
    count = vals[0].size // max(np.size(out), 1)
    return (np.array(_expand_reduced(g, shape, axis)) / count,)


def _fwd_clamp(a, lo=0.0, hi=1.0):
    return np.clip(a, lo, hi)


def _vjp_clamp(g, vals, out, lo=0.0, hi=1.0):
    # straight-through: the clamp is invisible to the gradient
    return (g,)


def _fwd_reshape(a, shape):
    return np.reshape(a, shape)


def _vjp_reshape(g, vals, out, shape):
    return (np.reshape(g, vals[0].shape),)


def _fwd_transpose(a, axes=None):
    return np.transpose(a, axes)


def _vjp_transpose(g, vals, out, axes=None):
    inv = None if axes is None else tuple(np.argsort(axes))
    return (np.transpose(g, inv),)


def _fwd_getitem(a, index):
    return a[index]


def _vjp_getitem(g, vals, out, index):
    ga = np.zeros_like(vals[0])
    np.add.at(ga, index, g)
    return (ga,)


def _fwd_stack(*arrays, axis=0):
    return np.stack(arrays, axis=axis)


def _vjp_stack(g, vals, out, axis=0):
    return tuple(np.take(g, i, axis=axis) for i in range(len(vals)))


def _fwd_concat(*arrays, axis=0):
    return np.concatenate(arrays, axis=axis)


def _vjp_concat(g, vals, out, axis=0):
    bounds = np.cumsum([v.shape[axis] for v in vals])[:-1]
    return tuple(np.split(g, bounds, axis=axis))


@dataclass(frozen=True)
class _Rule:
    forward: Callable
    vjp: Callable
    arity: int | None  # None: variadic


_ELEMENTWISE = {"add", "sub", "mul", "div"}

RULES: dict[str, _Rule] = {
    "add": _Rule(_fwd_add, _vjp_add, 2),
    "sub": _Rule(_fwd_sub, _vjp_sub, 2),
    "mul": _Rule(_fwd_mul, _vjp_mul, 2),
    "div": _Rule(_fwd_div, _vjp_div, 2),
    "neg": _Rule(_fwd_neg, _vjp_neg, 1),
    "sin": _Rule(_fwd_sin, _vjp_sin, 1),
    "cos": _Rule(_fwd_cos, _vjp_cos, 1),
    "matmul": _Rule(_fwd_matmul, _vjp_matmul, 2),
    "sum": _Rule(_fwd_sum, _vjp_sum, 1),
    "mean": _Rule(_fwd_mean, _vjp_mean, 1),
    "clamp_grad_passthrough": _Rule(_fwd_clamp, _vjp_clamp, 1),
    "reshape": _Rule(_fwd_reshape, _vjp_reshape, 1),
    "transpose": _Rule(_fwd_transpose, _vjp_transpose, 1),
    "getitem": _Rule(_fwd_getitem, _vjp_getitem, 1),
    "stack": _Rule(_fwd_stack, _vjp_stack, None),
    "concat": _Rule(_fwd_concat, _vjp_concat, None),
}


@dataclass
class Node:
    kind: str
    inputs: tuple[int, ...]
    value: np.ndarray
    attrs: dict = field(default_factory=dict)


class Tape:
    """Append-only record of operations.

    Node ids are list indices, so every input id is smaller than the id of the
    node consuming it and a reverse scan is a valid topological order.
    """

    def __init__(self) -> None:
        self.nodes: list[Node] = []
        self.trainable: list[int] = []

    def __len__(self) -> int:
        return len(self.nodes)

    def _append(self, node: Node) -> int:
        self.nodes.append(node)
        return len(self.nodes) - 1

    def leaf(self, value, trainable: bool = True) -> "Var":
        """Put ``value`` on the tape as an input node."""
        arr = np.array(value, dtype=np.float64)
        idx = self._append(Node("leaf", (), arr))
        if trainable:
            self.trainable.append(idx)
        return Var(self, idx)

    def constant(self, value) -> "Var":
        return self.leaf(value, trainable=False)

    def record(self, kind: str, inputs: Sequence[int], **attrs) -> int:
        """Evaluate ``kind`` on existing nodes, append the result, return its id."""
        rule = RULES.get(kind)
        if rule is None:
            raise AutodiffError(f"unknown op kind {kind!r}")
        if rule.arity is not None and len(inputs) != rule.arity:
            raise AutodiffError(f"{kind}: expected {rule.arity} inputs, got {len(inputs)}")
        for i in inputs:
            if not 0 <= i < len(self.nodes):
                raise AutodiffError(f"{kind}: input node {i} is not on the tape")
        vals = [self.nodes[i].value for i in inputs]
        if kind in _ELEMENTWISE:
            _broadcast_shape(kind, [v.shape for v in vals])
        elif kind == "matmul":
            a, b = vals
            if a.ndim == 0 or b.ndim == 0 or a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
                raise AutodiffError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
        try:
            value = rule.forward(*vals, **attrs)
        except ValueError as exc:
            shapes = ", ".join(str(v.shape) for v in vals)
            raise AutodiffError(f"{kind}: {exc} (input shapes {shapes})") from None
        return self._append(Node(kind, tuple(inputs), np.asarray(value, dtype=np.float64), attrs))


class GradStore:
    """Gradients of the trainable leaves of one backward pass."""

    def __init__(self, grads: dict[int, np.ndarray], tape: Tape) -> None:
        self._grads = grads
        self._tape = tape

    def __getitem__(self, var: "Var | int") -> np.ndarray:
        idx = var.id if isinstance(var, Var) else var
        if idx in self._grads:
            return self._grads[idx]
        return np.zeros_like(self._tape.nodes[idx].value)

    def __contains__(self, var: "Var | int") -> bool:
        idx = var.id if isinstance(var, Var) else var
        return idx in self._tape.trainable

    def zero(self) -> None:
        for g in self._grads.values():
            g[...] = 0.0


def backward(tape: Tape, loss: "Var | int") -> GradStore:
    idx = loss.id if isinstance(loss, Var) else loss
    out = tape.nodes[idx].value
    if out.size != 1:
        raise AutodiffError(f"backward needs a scalar loss, got shape {out.shape}")
    trainable = set(tape.trainable)
    adj: dict[int, np.ndarray] = {idx: np.ones_like(out)}
    for nid in range(idx, -1, -1):
        g = adj.get(nid) if nid in trainable else adj.pop(nid, None)
        node = tape.nodes[nid]
        if g is None or not node.inputs:
            continue
        vals = [tape.nodes[i].value for i in node.inputs]
        in_grads = RULES[node.kind].vjp(g, vals, node.value, **node.attrs)
        for i, gi in zip(node.inputs, in_grads):
            if i in adj:
                adj[i] = adj[i] + gi
            else:
                adj[i] = np.array(gi, dtype=np.float64)
    grads = {i: adj[i] for i in tape.trainable if i in adj}
    return GradStore(grads, tape)


class Var:
    """Handle to a node on a tape; supports the usual arithmetic operators."""

    __array_priority__ = 1000

    def __init__(self, tape: Tape, id: int) -> None:
        self.tape = tape
        self.id = id

    @property
    def value(self) -> np.ndarray:
        return self.tape.nodes[self.id].value

    @property
    def shape(self) -> tuple:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    @property
    def T(self) -> "Var":
        return transpose(self)

    def __repr__(self) -> str:
        return f"Var(id={self.id}, shape={self.shape})"

    def __add__(self, other):
        return _binary("add", self, other)

    def __radd__(self, other):
        return _binary("add", other, self)

    def __sub__(self, other):
        return _binary("sub", self, other)

    def __rsub__(self, other):
        return _binary("sub", other, self)

    def __mul__(self, other):
        return _binary("mul", self, other)

    def __rmul__(self, other):
        return _binary("mul", other, self)

    def __truediv__(self, other):
        return _binary("div", self, other)

    def __rtruediv__(self, other):
        return _binary("div", other, self)

    def __matmul__(self, other):
        return _binary("matmul", self, other)

    def __rmatmul__(self, other):
        return _binary("matmul", other, self)

    def __neg__(self):
        return _unary("neg", self)

    def __getitem__(self, index):
        return _unary("getitem", self, index=index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return _unary("reshape", self, shape=shape)

    def sum(self, axis=None):
        return _unary("sum", self, axis=axis)

    def mean(self, axis=None):
        return _unary("mean", self, axis=axis)


def _tape_of(*args) -> Tape | None:
    tape = None
    for a in args:
        if isinstance(a, Var):
            if tape is not None and a.tape is not tape:
                raise AutodiffError("operands live on different tapes")
            tape = a.tape
    return tape


def _as_id(tape: Tape, x) -> int:
    if isinstance(x, Var):
        return x.id
    return tape.constant(x).id


def _binary(kind: str, a, b):
    tape = _tape_of(a, b)
    if tape is None:
        return RULES[kind].forward(np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64))
    return Var(tape, tape.record(kind, (_as_id(tape, a), _as_id(tape, b))))


def _unary(kind: str, a, **attrs):
    if not isinstance(a, Var):
        return RULES[kind].forward(np.asarray(a, dtype=np.float64), **attrs)
    return Var(a.tape, a.tape.record(kind, (a.id,), **attrs))


def _variadic(kind: str, items, **attrs):
    tape = _tape_of(*items)
    if tape is None:
        return RULES[kind].forward(*[np.asarray(x, dtype=np.float64) for x in items], **attrs)
    ids = tuple(_as_id(tape, x) for x in items)
    return Var(tape, tape.record(kind, ids, **attrs))


def add(a, b):
    return _binary("add", a, b)


def sub(a, b):
    return _binary("sub", a, b)


def mul(a, b):
    return _binary("mul", a, b)


def div(a, b):
    return _binary("div", a, b)


def matmul(a, b):
    return _binary("matmul", a, b)


def sin(a):
    return _unary("sin", a)


def cos(a):
    return _unary("cos", a)


def sum(a, axis=None):  # noqa: A001 - mirrors numpy naming
    return _unary("sum", a, axis=axis)


def mean(a, axis=None):
    return _unary("mean", a, axis=axis)


def clamp_grad_passthrough(a, lo: float = 0.0, hi: float = 1.0):
    """Clip the primal to ``[lo, hi]`` but pass gradients through unchanged."""
    return _unary("clamp_grad_passthrough", a, lo=lo, hi=hi)


def reshape(a, shape):
    return _unary("reshape", a, shape=tuple(shape))


def transpose(a, axes=None):
    return _unary("transpose", a, axes=None if axes is None else tuple(axes))


def stack(items, axis: int = 0):
    return _variadic("stack", list(items), axis=axis)


def concat(items, axis: int = 0):
    return _variadic("concat", list(items), axis=axis)


def value_of(x) -> np.ndarray:
    return x.value if isinstance(x, Var) else np.asarray(x, dtype=np.float64)


def finite_diff_check(
    f: Callable[[np.ndarray], float],
    at: np.ndarray,
    h: float = 1e-5,
    grad: np.ndarray | None = None,
    floor: float = 1e-12,
) -> float:
    """Largest relative error between an analytic gradient and central differences.

    ``f`` maps a flat parameter vector to a scalar.  When ``grad`` is omitted
    it is obtained by running ``f`` on a tape, so ``f`` must be written with
    the functions of this module.  ``floor`` bounds the denominator from
    below, so components smaller than the difference quotient's round-off
    are judged absolutely rather than relatively.
    """
    if h <= 0:
        raise ValueError("finite-difference step must be positive")
    x0 = np.array(at, dtype=np.float64).ravel()
    if grad is None:
        tape = Tape()
        xv = tape.leaf(x0)
        loss = f(xv)
        if not np.all(np.isfinite(value_of(loss))):
            raise AutodiffError("f is not finite at the evaluation point")
        grad = backward(tape, loss)[xv]
    grad = np.asarray(grad, dtype=np.float64).ravel()
    fd = np.empty_like(x0)
    for i in range(x0.size):
        xp = x0.copy()
        xm = x0.copy()
        xp[i] += h
        xm[i] -= h
        fp = float(value_of(f(xp)))
        fm = float(value_of(f(xm)))
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise AutodiffError(f"f is not finite at component {i} +/- {h}")
        fd[i] = (fp - fm) / (2.0 * h)
    return float(np.max(np.abs(grad - fd) / np.maximum(np.abs(fd), floor)))
