"""Define-by-run reverse-mode differentiation.

A :class:`Tape` records every differentiable operation as a
:class:`GraphNode` holding its forward value and a vector-Jacobian product
closure. Node ids increase in recording order, so walking the node list
backwards is a valid reverse topological order.

The generic elementwise/linear-algebra ops live here; volumetric layers
(conv, pool, batch norm, dropout) and the loss are in :mod:`volnet.layers`
and :mod:`volnet.training` and record through :meth:`Tape.record`.
"""
from __future__ import annotations

import hashlib
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import (
    NonDeterministicFunction,
    NonScalarLoss,
    ShapeMismatch,
    UnknownInput,
)
from .tensor import Tensor, _sigmoid

VJP = Callable[[np.ndarray], Sequence[np.ndarray | None]]


class GraphNode:
    __slots__ = ("id", "op_kind", "input_ids", "value", "grad", "name", "_tape", "_vjp")

    def __init__(self, tape, id, op_kind, input_ids, value, vjp=None, name=None):
        self._tape = tape
        self.id = id
        self.op_kind = op_kind
        self.input_ids = tuple(input_ids)
        self.value = value if isinstance(value, Tensor) else Tensor(value)
        self.grad = None
        self.name = name
        self._vjp = vjp

    @property
    def data(self) -> np.ndarray:
        return self.value.data

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"GraphNode(id={self.id}, op={self.op_kind!r}, shape={self.shape})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return neg(self)


class Tape:
    """Append-only operation log for one forward/backward pass."""

    def __init__(self):
        self.nodes: list[GraphNode] = []
        self.parameter_ids: list[int] = []
        # relu sign masks and pool argmax maps; lets the gradient checker
        # notice a perturbation that crossed a non-differentiable point
        self.kink_log: list[bytes] = []
        self.log_kinks = False

    def __len__(self):
        return len(self.nodes)

    def _check(self, node):
        if not isinstance(node, GraphNode) or node._tape is not self or node.id >= len(self.nodes) \
                or self.nodes[node.id] is not node:
            raise UnknownInput(f"{node!r} is not recorded on this tape")
        return node

    def leaf(self, value, trainable: bool = False, name: str | None = None) -> GraphNode:
        node = GraphNode(self, len(self.nodes), "param" if trainable else "leaf", (), value, name=name)
        self.nodes.append(node)
        if trainable:
            self.parameter_ids.append(node.id)
        return node

    def constant(self, value, dtype=None) -> GraphNode:
        return self.leaf(np.asarray(value, dtype=dtype))

    def record(self, op_kind: str, inputs: Iterable[GraphNode], forward_value, vjp: VJP | None = None,
               name: str | None = None) -> GraphNode:
        inputs = [self._check(n) for n in inputs]
        node = GraphNode(self, len(self.nodes), op_kind, [n.id for n in inputs], forward_value, vjp, name)
        self.nodes.append(node)
        return node

    def note_kinks(self, *arrays: np.ndarray) -> None:
        if self.log_kinks:
            for a in arrays:
                self.kink_log.append(np.ascontiguousarray(a).tobytes())

    def kink_signature(self) -> str:
        h = hashlib.sha1()
        for chunk in self.kink_log:
            h.update(chunk)
        return h.hexdigest()

    def zero_grad(self) -> None:
        for n in self.nodes:
            n.grad = None

    def backward(self, loss: GraphNode) -> dict[int, Tensor]:
        """Accumulate d(loss)/d(node) for every node; return parameter grads."""
        self._check(loss)
        if loss.value.size != 1:
            raise NonScalarLoss(f"loss must have one element, shape is {loss.shape}")
        self.zero_grad()
        loss.grad = np.ones_like(loss.data)
        for node in reversed(self.nodes[: loss.id + 1]):
            if node.grad is None or node._vjp is None:
                continue
            in_grads = node._vjp(node.grad)
            for nid, g in zip(node.input_ids, in_grads):
                if g is None:
                    continue
                target = self.nodes[nid]
                if g.shape != target.shape:
                    g = g.reshape(target.shape)
                if target.grad is None:
                    target.grad = np.array(g, dtype=target.data.dtype, copy=True)
                else:
                    target.grad += g
        out = {}
        for pid in self.parameter_ids:
            node = self.nodes[pid]
            g = node.grad if node.grad is not None else np.zeros_like(node.data)
            out[pid] = Tensor(g)
        return out


def backward(tape: Tape, loss: GraphNode) -> dict[int, Tensor]:
    return tape.backward(loss)


def zero_grad(tape: Tape) -> None:
    tape.zero_grad()


# ---------------------------------------------------------------- ops


def _as_node(tape: Tape, x, like: GraphNode) -> GraphNode:
    if isinstance(x, GraphNode):
        return x
    return tape.constant(x, dtype=like.data.dtype)


def _binary_shapes(a: GraphNode, b: GraphNode, op: str) -> bool:
    """True when ``b`` is a broadcast scalar."""
    if a.shape == b.shape:
        return False
    if b.value.size == 1:
        return True
    raise ShapeMismatch(f"{op}: shapes {a.shape} and {b.shape} differ and b is not scalar")


def add(a: GraphNode, b) -> GraphNode:
    tape = a._tape
    b = _as_node(tape, b, a)
    scalar = _binary_shapes(a, b, "add")
    rhs = b.data.reshape(()) if scalar else b.data

    def vjp(g):
        return g, (g.sum().reshape(b.shape) if scalar else g)

    return tape.record("add", (a, b), a.data + rhs, vjp)


def sub(a: GraphNode, b) -> GraphNode:
    tape = a._tape
    b = _as_node(tape, b, a)
    scalar = _binary_shapes(a, b, "sub")
    rhs = b.data.reshape(()) if scalar else b.data

    def vjp(g):
        return g, (-g.sum().reshape(b.shape) if scalar else -g)

    return tape.record("sub", (a, b), a.data - rhs, vjp)


def rsub(c: float, a: GraphNode) -> GraphNode:
    """``c - a`` for a python scalar ``c``."""
    return a._tape.record("rsub", (a,), (c - a.data).astype(a.data.dtype), lambda g: (-g,))


def mul(a: GraphNode, b) -> GraphNode:
    tape = a._tape
    b = _as_node(tape, b, a)
    scalar = _binary_shapes(a, b, "mul")
    av, bv = a.data, (b.data.reshape(()) if scalar else b.data)

    def vjp(g):
        gb = g * av
        return g * bv, (gb.sum().reshape(b.shape) if scalar else gb)

    return tape.record("mul", (a, b), av * bv, vjp)


def neg(a: GraphNode) -> GraphNode:
    return a._tape.record("neg", (a,), -a.data, lambda g: (-g,))


def matmul(a: GraphNode, b: GraphNode) -> GraphNode:
    """Matrix product over the last axis of ``a`` and the first of ``b``."""
    tape = a._tape
    if b.data.ndim != 2 or a.shape[-1] != b.shape[0]:
        raise ShapeMismatch(f"matmul: {a.shape} x {b.shape}")
    av, bv = a.data, b.data

    def vjp(g):
        a2 = av.reshape(-1, av.shape[-1])
        g2 = g.reshape(-1, g.shape[-1])
        return g @ bv.T, a2.T @ g2

    return tape.record("matmul", (a, b), av @ bv, vjp)


def linear(x: GraphNode, weight: GraphNode, bias: GraphNode, layout: str = "in_out") -> GraphNode:
    """Affine map over the last axis.

    ``layout="in_out"`` computes ``x @ W + b`` with ``W`` of shape
    ``(in, out)``; ``"out_in"`` computes ``x @ W.T + b`` with ``W`` of shape
    ``(out, in)``.
    """
    tape = x._tape
    xv, wv, bv = x.data, weight.data, bias.data
    w = wv if layout == "in_out" else wv.T
    if w.shape[0] != xv.shape[-1] or bv.shape != (w.shape[1],):
        raise ShapeMismatch(f"linear: input {xv.shape}, weight {wv.shape} ({layout}), bias {bv.shape}")

    def vjp(g):
        x2 = xv.reshape(-1, xv.shape[-1])
        g2 = g.reshape(-1, g.shape[-1])
        gw = x2.T @ g2
        return g @ w.T, (gw if layout == "in_out" else gw.T), g2.sum(axis=0)

    return tape.record("linear", (x, weight, bias), xv @ w + bv, vjp)


def relu(a: GraphNode) -> GraphNode:
    mask = a.data > 0
    a._tape.note_kinks(np.packbits(mask))
    # subgradient at exactly 0 is 0; NaN passes through
    return a._tape.record("relu", (a,), np.maximum(a.data, a.data.dtype.type(0)),
                          lambda g: (g * mask,))


def sigmoid(a: GraphNode) -> GraphNode:
    s = _sigmoid(a.data)
    return a._tape.record("sigmoid", (a,), s, lambda g: (g * s * (1 - s),))


def tanh(a: GraphNode) -> GraphNode:
    t = np.tanh(a.data)
    return a._tape.record("tanh", (a,), t, lambda g: (g * (1 - t * t),))


def exp(a: GraphNode) -> GraphNode:
    with np.errstate(over="ignore"):
        e = np.exp(a.data)
    return a._tape.record("exp", (a,), e, lambda g: (g * e,))


def log(a: GraphNode) -> GraphNode:
    av = a.data
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(av)
    return a._tape.record("log", (a,), out, lambda g: (g / av,))


def sum_all(a: GraphNode) -> GraphNode:
    shape, dtype = a.shape, a.data.dtype
    return a._tape.record("sum", (a,), np.asarray([a.data.sum()], dtype=dtype),
                          lambda g: (np.full(shape, g.reshape(()), dtype=dtype),))


def mean_all(a: GraphNode) -> GraphNode:
    shape, dtype, n = a.shape, a.data.dtype, a.data.size
    return a._tape.record("mean", (a,), np.asarray([a.data.mean()], dtype=dtype),
                          lambda g: (np.full(shape, g.reshape(()) / n, dtype=dtype),))


def reshape(a: GraphNode, shape: Sequence[int]) -> GraphNode:
    old = a.shape
    return a._tape.record("reshape", (a,), a.data.reshape(tuple(shape)), lambda g: (g.reshape(old),))


def concat(nodes: Sequence[GraphNode], axis: int = -1) -> GraphNode:
    tape = nodes[0]._tape
    sizes = [n.shape[axis] for n in nodes]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return np.split(g, splits, axis=axis)

    return tape.record("concat", nodes, np.concatenate([n.data for n in nodes], axis=axis), vjp)


def take(a: GraphNode, index: int, axis: int = 0) -> GraphNode:
    """Sub-tensor at ``index`` along ``axis`` (rank drops by one)."""
    shape, dtype = a.shape, a.data.dtype
    ax = axis % len(shape)

    def vjp(g):
        full = np.zeros(shape, dtype=dtype)
        sl = [slice(None)] * len(shape)
        sl[ax] = index
        full[tuple(sl)] = g
        return (full,)

    return a._tape.record("take", (a,), np.take(a.data, index, axis=ax), vjp)


def stack(nodes: Sequence[GraphNode], axis: int = 0) -> GraphNode:
    tape = nodes[0]._tape
    n = len(nodes)

    def vjp(g):
        return [np.take(g, i, axis=axis) for i in range(n)]

    return tape.record("stack", nodes, np.stack([x.data for x in nodes], axis=axis), vjp)


# ---------------------------------------------------------------- finite differences


def _eval(f, params):
    out = f(params)
    sig = None
    if isinstance(out, tuple):
        out, sig = out
    return float(np.asarray(out).reshape(-1)[0]), sig


def finite_diff_check(f: Callable, params: Sequence[np.ndarray], analytic: Sequence[np.ndarray],
                      eps: float = 1e-5, report: dict | None = None) -> float:
    """Max relative error between ``analytic`` and central differences of ``f``.

    ``f(params)`` returns a float, or ``(float, signature)`` where the
    signature identifies the active branch of every non-smooth op (relu
    masks, pool argmax). Scalars whose +/-eps evaluations land on a
    different branch than the base point are excluded; their count goes into
    ``report["skipped"]`` when a dict is given.

    ``params`` are modified in place during the sweep and restored after.
    Error per scalar is ``|a - n| / max(1, |a|, |n|)``.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    base, sig = _eval(f, params)
    again, sig2 = _eval(f, params)
    if again != base or sig2 != sig:
        raise NonDeterministicFunction("two evaluations at the same point differ")
    worst = 0.0
    skipped = 0
    for p, a in zip(params, analytic):
        a = np.asarray(a).reshape(p.shape)
        flat = p.reshape(-1)
        if not np.shares_memory(flat, p):
            raise ValueError("parameters must be contiguous arrays")
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + eps
            fp, sp = _eval(f, params)
            flat[i] = old - eps
            fm, sm = _eval(f, params)
            flat[i] = old
            if sig is not None and (sp != sig or sm != sig):
                skipped += 1
                continue
            numeric = (fp - fm) / (2 * eps)
            an = float(a.reshape(-1)[i])
            err = abs(an - numeric) / max(1.0, abs(an), abs(numeric))
            worst = max(worst, err)
    if report is not None:
        report["skipped"] = report.get("skipped", 0) + skipped
    return worst
