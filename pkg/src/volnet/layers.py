"""Volumetric feed-forward layers.

Every layer comes in two forms: a raw array function (used by oracles,
shape tracing and benchmarks) and a tape op that records the forward value
together with its vector-Jacobian product.

Tensors are channels-last. Layers accept any number of leading axes in
front of ``(D, H, W, C)``; they are folded into one batch axis, which is
how the time-distributed wrapper shares parameters across timesteps.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import autodiff as ad
from . import kernels
from .autodiff import GraphNode
from .errors import DegenerateBatch, ShapeMismatch, VolnetError

KERNEL = 2


# ---------------------------------------------------------------- parameter containers


@dataclass
class ConvParams:
    kernel: np.ndarray  # (2, 2, 2, Cin, Cout)
    bias: np.ndarray  # (Cout,)

    @property
    def in_channels(self):
        return self.kernel.shape[3]

    @property
    def out_channels(self):
        return self.kernel.shape[4]


@dataclass
class BatchNormParams:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.9
    epsilon: float = 1e-5

    @classmethod
    def identity(cls, channels: int, dtype=np.float64, momentum=0.9, epsilon=1e-5):
        return cls(np.ones(channels, dtype), np.zeros(channels, dtype),
                   np.zeros(channels, dtype), np.ones(channels, dtype), momentum, epsilon)


@dataclass
class DenseParams:
    weight: np.ndarray  # (in, out)
    bias: np.ndarray  # (out,)


@dataclass
class DropoutState:
    rate: float = 0.3
    rng_seed: int = 0
    mode: str = "train"
    calls: int = field(default=0)

    def next_mask(self, shape, dtype) -> np.ndarray:
        """Scaled keep-mask for one call; advances the call counter."""
        rng = np.random.default_rng([self.rng_seed, self.calls])
        self.calls += 1
        keep = rng.random(shape) >= self.rate
        return keep.astype(dtype) / dtype(1.0 - self.rate)


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int, dtype) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def init_conv(rng, cin: int, cout: int, dtype=np.float32) -> ConvParams:
    fan = KERNEL ** 3
    k = glorot_uniform(rng, (KERNEL, KERNEL, KERNEL, cin, cout), fan * cin, fan * cout, dtype)
    return ConvParams(k, np.zeros(cout, dtype))


def init_dense(rng, n_in: int, n_out: int, dtype=np.float32) -> DenseParams:
    return DenseParams(glorot_uniform(rng, (n_in, n_out), n_in, n_out, dtype), np.zeros(n_out, dtype))


# ---------------------------------------------------------------- conv3d


def _fold(x: np.ndarray, tail: int = 4) -> np.ndarray:
    if x.ndim < tail:
        raise ShapeMismatch(f"expected at least {tail} axes, got shape {x.shape}")
    return x.reshape((-1,) + x.shape[-tail:])


def conv3d_forward(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Stride-1 2x2x2 convolution with asymmetric "same" zero padding."""
    if x.shape[-1] != kernel.shape[3]:
        raise ShapeMismatch(f"conv3d: input has {x.shape[-1]} channels, kernel expects {kernel.shape[3]}")
    xb = _fold(x)
    cout = kernel.shape[4]
    cols = kernels.im2col3d(xb)
    out = cols.reshape(-1, cols.shape[-1]) @ kernel.reshape(-1, cout) + bias
    return out.reshape(x.shape[:-1] + (cout,))


def _conv3d_backward(x: np.ndarray, kernel: np.ndarray, gout: np.ndarray):
    xb = _fold(x)
    cin, cout = kernel.shape[3], kernel.shape[4]
    g2 = gout.reshape(-1, cout)
    cols = kernels.im2col3d(xb)
    gk = (cols.reshape(-1, cols.shape[-1]).T @ g2).reshape(kernel.shape)
    gb = g2.sum(axis=0)
    dcols = (g2 @ kernel.reshape(-1, cout).T).reshape(xb.shape[:-1] + (8 * cin,))
    gx = kernels.col2im3d(dcols, cin).reshape(x.shape)
    return gx, gk, gb


def conv3d(x: GraphNode, kernel: GraphNode, bias: GraphNode) -> GraphNode:
    xv, kv = x.data, kernel.data
    out = conv3d_forward(xv, kv, bias.data)

    def vjp(g):
        # resolved at call time so a test can substitute the backward rule
        return _conv3d_backward(xv, kv, g)

    return x._tape.record("conv3d", (x, kernel, bias), out, vjp)


# ---------------------------------------------------------------- maxpool3d


def pooled_shape(shape):
    *lead, d, h, w, c = shape
    if min(d, h, w) < 2:
        raise ShapeMismatch(f"maxpool3d needs spatial extents >= 2, got {(d, h, w)}")
    return tuple(lead) + (d // 2, h // 2, w // 2, c)


def maxpool3d_forward(x: np.ndarray):
    """2x2x2 max pool with stride 2; returns ``(out, argmax)``."""
    out_shape = pooled_shape(x.shape)
    out, arg = kernels.maxpool3d_forward(_fold(x))
    return out.reshape(out_shape), arg


def maxpool3d(x: GraphNode) -> GraphNode:
    xv = x.data
    out, arg = maxpool3d_forward(xv)
    x._tape.note_kinks(arg)
    folded = _fold(xv).shape

    def vjp(g):
        gin = kernels.maxpool3d_backward(g.reshape((-1,) + g.shape[-4:]), arg, folded)
        return (gin.reshape(xv.shape),)

    return x._tape.record("maxpool3d", (x,), out, vjp)


# ---------------------------------------------------------------- batch norm


def batchnorm_forward(x: np.ndarray, p: BatchNormParams, mode: str = "train", update_stats: bool = True):
    """Per-channel normalisation over every non-channel axis.

    Train mode uses batch statistics and, when ``update_stats`` is set,
    moves the running estimates: ``new = momentum * old + (1 - momentum) * batch``.
    The running variance tracks the unbiased batch variance. Eval mode
    normalises with the running estimates.

    Returns ``(y, xhat, inv_std)``.
    """
    c = x.shape[-1]
    if p.gamma.shape != (c,):
        raise ShapeMismatch(f"batchnorm: {c} channels, params for {p.gamma.shape[0]}")
    if mode == "train":
        x2 = x.reshape(-1, c)
        n = x2.shape[0]
        if n < 2:
            raise DegenerateBatch(f"batchnorm needs >= 2 elements per channel, got {n}")
        mean = x2.mean(axis=0)
        var = x2.var(axis=0)
        if update_stats:
            m = p.momentum
            p.running_mean[...] = m * p.running_mean + (1 - m) * mean
            p.running_var[...] = m * p.running_var + (1 - m) * var * (n / (n - 1))
    else:
        mean, var = p.running_mean, p.running_var
    inv_std = (1.0 / np.sqrt(var + p.epsilon)).astype(x.dtype)
    xhat = (x - mean) * inv_std
    return xhat * p.gamma + p.beta, xhat, inv_std


def batchnorm(x: GraphNode, gamma: GraphNode, beta: GraphNode, p: BatchNormParams,
              mode: str = "train", update_stats: bool = True) -> GraphNode:
    # gamma/beta nodes carry the trainable values; p supplies running stats
    view = BatchNormParams(gamma.data, beta.data, p.running_mean, p.running_var, p.momentum, p.epsilon)
    y, xhat, inv_std = batchnorm_forward(x.data, view, mode, update_stats)
    c = x.shape[-1]
    gv = gamma.data

    def vjp(g):
        g2 = g.reshape(-1, c)
        xh = xhat.reshape(-1, c)
        dgamma = (g2 * xh).sum(axis=0)
        dbeta = g2.sum(axis=0)
        dxhat = g2 * gv
        if mode == "train":
            n = g2.shape[0]
            dx = inv_std / n * (n * dxhat - dxhat.sum(axis=0) - xh * (dxhat * xh).sum(axis=0))
        else:
            dx = dxhat * inv_std
        return dx.reshape(g.shape), dgamma, dbeta

    return x._tape.record("batchnorm", (x, gamma, beta), y, vjp)


# ---------------------------------------------------------------- dense / dropout


ACTIVATIONS: dict[str, Callable[[GraphNode], GraphNode]] = {
    "relu": ad.relu,
    "sigmoid": ad.sigmoid,
    "tanh": ad.tanh,
    "none": lambda n: n,
}


def dense_forward(x: np.ndarray, p: DenseParams, activation: str = "none") -> np.ndarray:
    if x.shape[-1] != p.weight.shape[0]:
        raise ShapeMismatch(f"dense: input width {x.shape[-1]}, weight {p.weight.shape}")
    tape = ad.Tape()
    node = dense(tape.constant(x), tape.constant(p.weight), tape.constant(p.bias), activation)
    return node.data


def dense(x: GraphNode, weight: GraphNode, bias: GraphNode, activation: str = "none") -> GraphNode:
    """``activation(x @ W + b)`` with ``W`` of shape ``(in, out)``."""
    return ACTIVATIONS[activation](ad.linear(x, weight, bias, layout="in_out"))


def dropout_forward(x: np.ndarray, state: DropoutState) -> np.ndarray:
    if state.mode != "train" or state.rate == 0:
        return x
    return x * state.next_mask(x.shape, x.dtype.type)


def dropout(x: GraphNode, state: DropoutState) -> GraphNode:
    """Inverted dropout: identity in eval mode, scaled keep-mask in train mode."""
    if state.mode != "train" or state.rate == 0:
        return x
    mask = state.next_mask(x.shape, x.data.dtype.type)
    return x._tape.record("dropout", (x,), x.data * mask, lambda g: (g * mask,))


# ---------------------------------------------------------------- time distribution


def time_distributed(f: Callable, x, batched: bool = False):
    """Apply ``f`` to every leading-axis slice of ``x`` and stack the results.

    ``x`` may be an ndarray or a :class:`GraphNode`. With ``batched=True``
    ``f`` must accept the leading axis itself and is called once, which is
    equivalent because the same parameters serve every timestep.
    """
    is_node = isinstance(x, GraphNode)
    if batched:
        return f(x)
    outs = []
    for t in range(x.shape[0]):
        xt = ad.take(x, t, axis=0) if is_node else x[t]
        try:
            outs.append(f(xt))
        except VolnetError as exc:
            raise type(exc)(f"timestep {t}: {exc}") from exc
    return ad.stack(outs, axis=0) if is_node else np.stack(outs)
