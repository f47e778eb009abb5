"""GRU and LSTM cells and the sequence fold that feeds the classifier head.

Gate weights act on the concatenation ``[state, input]`` and have shape
``(hidden, hidden + input)``. States may carry a leading batch axis.

GRU::

    G_r = sigmoid(W_r [c, x] + b_r)
    G_u = sigmoid(W_u [c, x] + b_u)
    c~  = tanh(W_c [G_r * c, x] + b_c)
    c'  = G_u * c~ + (1 - G_u) * c,     a' = c'

LSTM (the output gate has its own W_o, b_o)::

    c~  = tanh(W_c [a, x] + b_c)
    G_u, G_f, G_o = sigmoid(W_{u,f,o} [a, x] + b_{u,f,o})
    c'  = G_u * c~ + G_f * c
    a'  = G_o * tanh(c')
"""
from __future__ import annotations

from dataclasses import dataclass, fields
from typing import NamedTuple

import numpy as np

from . import autodiff as ad
from .autodiff import GraphNode, Tape
from .errors import ShapeMismatch, VolnetError


@dataclass
class GRUParams:
    W_c: np.ndarray
    W_u: np.ndarray
    W_r: np.ndarray
    b_c: np.ndarray
    b_u: np.ndarray
    b_r: np.ndarray


@dataclass
class LSTMParams:
    W_c: np.ndarray
    W_u: np.ndarray
    W_f: np.ndarray
    W_o: np.ndarray
    b_c: np.ndarray
    b_u: np.ndarray
    b_f: np.ndarray
    b_o: np.ndarray


CELLS = {"gru": GRUParams, "lstm": LSTMParams}


class RNNState(NamedTuple):
    c: GraphNode
    a: GraphNode


def init_params(kind: str, n_input: int, hidden: int, rng: np.random.Generator, dtype=np.float32):
    """Weights uniform in +-1/sqrt(hidden + input), biases zero."""
    cls = CELLS[kind]
    limit = 1.0 / np.sqrt(hidden + n_input)
    values = {}
    for f in fields(cls):
        if f.name.startswith("W_"):
            values[f.name] = rng.uniform(-limit, limit, (hidden, hidden + n_input)).astype(dtype)
        else:
            values[f.name] = np.zeros(hidden, dtype)
    return cls(**values)


def hidden_size(p) -> int:
    return p.b_c.shape[0]


def input_size(p) -> int:
    return p.W_c.shape[1] - p.W_c.shape[0]


def _check(x: GraphNode, state: RNNState, p):
    h = hidden_size(p)
    if x.shape[-1] != input_size(p) or state.c.shape[-1] != h or state.a.shape[-1] != h:
        raise ShapeMismatch(
            f"cell expects input {input_size(p)} / hidden {h}, got x {x.shape}, c {state.c.shape}")


def _gate(z: GraphNode, W: GraphNode, b: GraphNode) -> GraphNode:
    return ad.linear(z, W, b, layout="out_in")


def zero_state(tape: Tape, batch_shape: tuple, hidden: int, dtype) -> RNNState:
    z = tape.constant(np.zeros(batch_shape + (hidden,), dtype=dtype))
    return RNNState(z, z)


def gru_step(x: GraphNode, state: RNNState, p) -> RNNState:
    """One GRU update. ``p`` holds graph nodes (see :func:`param_nodes`)."""
    _check(x, state, p)
    c = state.c
    cx = ad.concat([c, x], axis=-1)
    g_r = ad.sigmoid(_gate(cx, p.W_r, p.b_r))
    g_u = ad.sigmoid(_gate(cx, p.W_u, p.b_u))
    c_tilde = ad.tanh(_gate(ad.concat([ad.mul(g_r, c), x], axis=-1), p.W_c, p.b_c))
    c_new = ad.add(ad.mul(g_u, c_tilde), ad.mul(ad.rsub(1.0, g_u), c))
    return RNNState(c_new, c_new)


def lstm_step(x: GraphNode, state: RNNState, p) -> RNNState:
    _check(x, state, p)
    ax = ad.concat([state.a, x], axis=-1)
    c_tilde = ad.tanh(_gate(ax, p.W_c, p.b_c))
    g_u = ad.sigmoid(_gate(ax, p.W_u, p.b_u))
    g_f = ad.sigmoid(_gate(ax, p.W_f, p.b_f))
    g_o = ad.sigmoid(_gate(ax, p.W_o, p.b_o))
    c_new = ad.add(ad.mul(g_u, c_tilde), ad.mul(g_f, state.c))
    a_new = ad.mul(g_o, ad.tanh(c_new))
    return RNNState(c_new, a_new)


STEPS = {"gru": gru_step, "lstm": lstm_step}


def run_sequence(cell: str, xs: GraphNode, p, time_axis: int = 0) -> GraphNode:
    """Fold ``cell`` over ``xs`` from a zero state and return the final output.

    ``xs`` is ``(T, input)`` or, with ``time_axis=1``, ``(N, T, input)``.
    """
    step = STEPS[cell]
    steps = xs.shape[time_axis]
    if steps < 1:
        raise ShapeMismatch("run_sequence needs at least one timestep")
    batch_shape = tuple(s for i, s in enumerate(xs.shape[:-1]) if i != time_axis % xs.data.ndim)
    state = zero_state(xs._tape, batch_shape, hidden_size(p), xs.data.dtype)
    for t in range(steps):
        x_t = ad.take(xs, t, axis=time_axis)
        try:
            state = step(x_t, state, p)
        except VolnetError as exc:
            raise type(exc)(f"timestep {t}: {exc}") from exc
    return state.a


def param_nodes(tape: Tape, p, trainable: bool = True, prefix: str = ""):
    """Record every field of ``p`` on ``tape``; returns the same dataclass of nodes."""
    cls = type(p)
    return cls(**{f.name: tape.leaf(getattr(p, f.name), trainable, prefix + f.name) for f in fields(cls)})
