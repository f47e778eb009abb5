"""The four classifiers: SM-GRU, SM-LSTM, MM-GRU, MM-LSTM.

fMRI branch (time-distributed, parameters shared over T)::

    3 x [conv 2^3 same -> relu -> maxpool 2^3/2 -> batchnorm]  filters 64,128,256
    flatten per timestep -> GRU|LSTM (final output) -> dropout -> dense 512 relu

MRI branch (multi-modal only)::

    4 x [conv -> relu -> maxpool -> batchnorm]  filters 64,128,256,256
    flatten -> dense 512 sigmoid

Single-modal head: dense 1 sigmoid on the fMRI embedding. Multi-modal head:
concat(512, 512) -> dense 1 sigmoid.

Layers are described by small objects that know their parameters and
their per-sample output shape; the forward pass records on a fresh
:class:`~volnet.autodiff.Tape` each call.
"""
from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np

from . import autodiff as ad
from . import layers as L
from . import recurrent as R
from .autodiff import GraphNode, Tape
from .errors import InvalidSpec, MissingModality, ShapeMismatch
from .tensor import DTYPES

FULL_FMRI = (30, 28, 28, 28, 1)
FULL_MRI = {64: (64, 64, 64, 1), 32: (32, 32, 32, 1)}
FULL_FMRI_FILTERS = (64, 128, 256)
FULL_MRI_FILTERS = (64, 128, 256, 256)

KINDS = {
    "sm-gru": ("single", "gru"),
    "sm-lstm": ("single", "lstm"),
    "mm-gru": ("multi", "gru"),
    "mm-lstm": ("multi", "lstm"),
}


@dataclass(frozen=True)
class ModelSpec:
    modality: str = "single"
    rnn_kind: str = "gru"
    fmri_input: tuple = FULL_FMRI
    mri_input: Optional[tuple] = FULL_MRI[64]
    rnn_hidden: int = 256
    seed: int = 0
    fmri_filters: tuple = FULL_FMRI_FILTERS
    mri_filters: tuple = FULL_MRI_FILTERS
    head_width: int = 512
    dropout: float = 0.3
    precision: str = "single"
    # "full" pins inputs and filters to the full-size architecture;
    # "desk" and "toy" are reduced variants for training runs and gradient checks
    scale: str = "full"

    @classmethod
    def full(cls, kind: str = "sm-gru", mri_res: int = 64, seed: int = 0, **kw) -> "ModelSpec":
        modality, rnn = parse_kind(kind)
        if mri_res not in FULL_MRI:
            raise InvalidSpec(f"MRI resolution must be 64 or 32, got {mri_res}")
        return cls(modality=modality, rnn_kind=rnn, mri_input=FULL_MRI[mri_res], seed=seed, **kw)

    @classmethod
    def toy(cls, kind: str = "sm-gru", seed: int = 0, **kw) -> "ModelSpec":
        """Tiny double-precision variant used by the gradient checker."""
        modality, rnn = parse_kind(kind)
        base = dict(modality=modality, rnn_kind=rnn, fmri_input=(2, 8, 8, 8, 1), mri_input=(32, 32, 32, 1),
                    rnn_hidden=8, seed=seed, fmri_filters=(4, 8, 16), mri_filters=(4, 8, 16, 16),
                    head_width=8, dropout=0.0, precision="double", scale="toy")
        base.update(kw)
        return cls(**base)

    @classmethod
    def desk(cls, kind: str = "sm-gru", seed: int = 0, **kw) -> "ModelSpec":
        """Reduced variant that trains on a laptop CPU in minutes."""
        modality, rnn = parse_kind(kind)
        base = dict(modality=modality, rnn_kind=rnn, fmri_input=(30, 16, 16, 16, 1), mri_input=(32, 32, 32, 1),
                    rnn_hidden=32, seed=seed, fmri_filters=(8, 16, 32), mri_filters=(8, 16, 32, 32),
                    head_width=32, dropout=0.3, precision="single", scale="desk")
        base.update(kw)
        return cls(**base)

    @property
    def kind(self) -> str:
        return ("sm-" if self.modality == "single" else "mm-") + self.rnn_kind

    @property
    def dtype(self):
        return DTYPES[self.precision]

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("fmri_input", "mri_input", "fmri_filters", "mri_filters"):
            if d[k] is not None:
                d[k] = list(d[k])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        d = dict(d)
        for k in ("fmri_input", "mri_input", "fmri_filters", "mri_filters"):
            if d.get(k) is not None:
                d[k] = tuple(d[k])
        return cls(**d)


def parse_kind(kind: str):
    try:
        return KINDS[kind.lower()]
    except KeyError:
        raise InvalidSpec(f"unknown model kind {kind!r}; expected one of {sorted(KINDS)}") from None


def validate_spec(spec: ModelSpec) -> None:
    if spec.modality not in ("single", "multi"):
        raise InvalidSpec(f"modality must be 'single' or 'multi', got {spec.modality!r}")
    if spec.rnn_kind not in R.CELLS:
        raise InvalidSpec(f"rnn_kind must be 'gru' or 'lstm', got {spec.rnn_kind!r}")
    if spec.precision not in DTYPES:
        raise InvalidSpec(f"precision must be 'single' or 'double', got {spec.precision!r}")
    if not 0 <= spec.dropout < 1:
        raise InvalidSpec(f"dropout must lie in [0, 1), got {spec.dropout}")
    if spec.rnn_hidden < 1 or spec.head_width < 1:
        raise InvalidSpec("rnn_hidden and head_width must be positive")
    if len(spec.fmri_input) != 5 or any(d < 1 for d in spec.fmri_input):
        raise InvalidSpec(f"fmri_input must be (T, D, H, W, C), got {spec.fmri_input}")
    if spec.modality == "multi":
        if spec.mri_input is None or len(spec.mri_input) != 4:
            raise InvalidSpec(f"multi-modal spec needs mri_input (D, H, W, C), got {spec.mri_input}")
    if spec.scale == "full":
        if tuple(spec.fmri_input) != FULL_FMRI:
            raise InvalidSpec(f"full-scale fMRI input is fixed at {FULL_FMRI}, got {spec.fmri_input}")
        if spec.modality == "multi" and tuple(spec.mri_input) not in FULL_MRI.values():
            raise InvalidSpec(f"full-scale MRI input must be 64^3 or 32^3, got {spec.mri_input}")
        if tuple(spec.fmri_filters) != FULL_FMRI_FILTERS or tuple(spec.mri_filters) != FULL_MRI_FILTERS:
            raise InvalidSpec("full-scale filters are fixed at 64/128/256 (fMRI) and 64/128/256/256 (MRI)")
    elif spec.scale not in ("desk", "toy", "custom"):
        raise InvalidSpec(f"unknown scale {spec.scale!r}")


# ---------------------------------------------------------------- layer descriptions


class Layer:
    kind = "layer"

    def __init__(self, name: str):
        self.name = name
        self.params: "OrderedDict[str, np.ndarray]" = OrderedDict()
        self.buffers: "OrderedDict[str, np.ndarray]" = OrderedDict()
        self.out_shape: tuple = ()

    def output_shape(self, in_shape: tuple) -> tuple:
        return in_shape

    def forward(self, x: GraphNode, ctx: "ForwardContext") -> GraphNode:
        raise NotImplementedError

    def node(self, ctx, pname) -> GraphNode:
        return ctx.nodes[f"{self.name}.{pname}"]

    def n_params(self) -> int:
        return sum(p.size for p in self.params.values())

    def n_buffers(self) -> int:
        return sum(b.size for b in self.buffers.values())

    def __repr__(self):
        return f"{type(self).__name__}({self.name!r}, out={self.out_shape})"


class Conv3D(Layer):
    kind = "conv3d"

    def __init__(self, name, cin, cout, rng, dtype):
        super().__init__(name)
        p = L.init_conv(rng, cin, cout, dtype)
        self.params["kernel"] = p.kernel
        self.params["bias"] = p.bias

    def output_shape(self, s):
        if s[-1] != self.params["kernel"].shape[3]:
            raise ShapeMismatch(f"{self.name}: {s[-1]} input channels, expected {self.params['kernel'].shape[3]}")
        return s[:-1] + (self.params["kernel"].shape[4],)

    def forward(self, x, ctx):
        return L.conv3d(x, self.node(ctx, "kernel"), self.node(ctx, "bias"))


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, ctx):
        return ad.relu(x)


class MaxPool3D(Layer):
    kind = "maxpool3d"

    def output_shape(self, s):
        return L.pooled_shape(s)

    def forward(self, x, ctx):
        return L.maxpool3d(x)


class BatchNorm(Layer):
    kind = "batchnorm"

    def __init__(self, name, channels, dtype, momentum=0.9, epsilon=1e-5):
        super().__init__(name)
        p = L.BatchNormParams.identity(channels, dtype, momentum, epsilon)
        self.momentum, self.epsilon = momentum, epsilon
        self.params["gamma"] = p.gamma
        self.params["beta"] = p.beta
        self.buffers["running_mean"] = p.running_mean
        self.buffers["running_var"] = p.running_var

    def forward(self, x, ctx):
        stats = L.BatchNormParams(self.params["gamma"], self.params["beta"], self.buffers["running_mean"],
                                  self.buffers["running_var"], self.momentum, self.epsilon)
        return L.batchnorm(x, self.node(ctx, "gamma"), self.node(ctx, "beta"), stats,
                           ctx.mode, ctx.update_stats)


class Flatten(Layer):
    """Flatten everything after the first ``keep`` per-sample axes."""

    kind = "flatten"

    def __init__(self, name, keep=0):
        super().__init__(name)
        self.keep = keep

    def output_shape(self, s):
        return s[: self.keep] + (math.prod(s[self.keep:]),)

    def forward(self, x, ctx):
        lead = x.shape[: 1 + self.keep]
        return ad.reshape(x, lead + (-1,))


class Recurrent(Layer):
    def __init__(self, name, cell, n_input, hidden, rng, dtype):
        super().__init__(name)
        self.kind = cell
        p = R.init_params(cell, n_input, hidden, rng, dtype)
        for k, v in vars(p).items():
            self.params[k] = v
        self.hidden = hidden

    def output_shape(self, s):
        return (self.hidden,)

    def forward(self, x, ctx):
        cls = R.CELLS[self.kind]
        p = cls(**{k: self.node(ctx, k) for k in self.params})
        return R.run_sequence(self.kind, x, p, time_axis=1)


class Dropout(Layer):
    kind = "dropout"

    def __init__(self, name, rate):
        super().__init__(name)
        self.rate = rate

    def forward(self, x, ctx):
        state = L.DropoutState(self.rate, ctx.dropout_seed, ctx.mode)
        return L.dropout(x, state)


class Dense(Layer):
    kind = "dense"

    def __init__(self, name, n_in, n_out, activation, rng, dtype):
        super().__init__(name)
        p = L.init_dense(rng, n_in, n_out, dtype)
        self.params["weight"] = p.weight
        self.params["bias"] = p.bias
        self.activation = activation

    def output_shape(self, s):
        if s != (self.params["weight"].shape[0],):
            raise ShapeMismatch(f"{self.name}: input {s}, expected ({self.params['weight'].shape[0]},)")
        return (self.params["weight"].shape[1],)

    def forward(self, x, ctx):
        return L.dense(x, self.node(ctx, "weight"), self.node(ctx, "bias"), self.activation)


class TimeDistributed(Layer):
    """Shares ``inner`` across the leading (time) axis of each sample."""

    kind = "time_distributed"

    def __init__(self, name, inner: list):
        super().__init__(name)
        self.inner = inner

    def output_shape(self, s):
        t, rest = s[0], s[1:]
        for layer in self.inner:
            rest = layer.output_shape(rest)
        return (t,) + rest

    def forward(self, x, ctx):
        n, t = x.shape[:2]

        def apply(xb):
            h = ad.reshape(xb, (n * t,) + xb.shape[2:])
            for layer in self.inner:
                h = layer.forward(h, ctx)
                ctx.note(layer.name, h.shape[1:], lead=t)
            return ad.reshape(h, (n, t) + h.shape[1:])

        return L.time_distributed(apply, x, batched=True)


# ---------------------------------------------------------------- model


@dataclass
class ForwardContext:
    tape: Tape
    mode: str
    nodes: dict
    dropout_seed: int = 0
    update_stats: bool = True
    trace: Optional[list] = None

    def note(self, name, sample_shape, lead=None):
        if self.trace is not None:
            shape = ((lead,) if lead is not None else ()) + tuple(sample_shape)
            self.trace.append((name, shape))


@dataclass
class ForwardResult:
    tape: Tape
    prob: GraphNode  # (N,)
    logit: GraphNode  # (N, 1)
    param_nodes: dict
    embeddings: dict = field(default_factory=dict)


class Model:
    def __init__(self, spec: ModelSpec):
        validate_spec(spec)
        self.spec = spec
        dtype = spec.dtype
        rng = np.random.default_rng(spec.seed)
        multi = spec.modality == "multi"

        blocks = []
        cin = spec.fmri_input[-1]
        for i, f in enumerate(spec.fmri_filters, 1):
            blocks += [Conv3D(f"fmri.block{i}.conv", cin, f, rng, dtype), ReLU(f"fmri.block{i}.relu"),
                       MaxPool3D(f"fmri.block{i}.pool"), BatchNorm(f"fmri.block{i}.bn", f, dtype)]
            cin = f
        self.fmri_blocks = TimeDistributed("fmri.blocks", blocks)
        t, *spatial = self.fmri_blocks.output_shape(tuple(spec.fmri_input))
        flat = math.prod(spatial)
        self.fmri_layers: list[Layer] = [
            self.fmri_blocks,
            Flatten("fmri.flatten", keep=1),
            Recurrent(f"fmri.{spec.rnn_kind}", spec.rnn_kind, flat, spec.rnn_hidden, rng, dtype),
            Dropout("fmri.dropout", spec.dropout),
            Dense("fmri.dense", spec.rnn_hidden, spec.head_width, "relu", rng, dtype),
        ]
        self.mri_layers: list[Layer] = []
        if multi:
            cin = spec.mri_input[-1]
            for i, f in enumerate(spec.mri_filters, 1):
                self.mri_layers += [Conv3D(f"mri.block{i}.conv", cin, f, rng, dtype), ReLU(f"mri.block{i}.relu"),
                                    MaxPool3D(f"mri.block{i}.pool"), BatchNorm(f"mri.block{i}.bn", f, dtype)]
                cin = f
            shape = tuple(spec.mri_input)
            for layer in self.mri_layers:
                shape = layer.output_shape(shape)
            self.mri_layers += [Flatten("mri.flatten"),
                                Dense("mri.dense", math.prod(shape), spec.head_width, "sigmoid", rng, dtype)]
        fused = spec.head_width * (2 if multi else 1)
        self.output = Dense("output.dense", fused, 1, "none", rng, dtype)
        # construction-time shape chain; raises on any inconsistency
        self.construction_trace = self.shape_trace()

    # -- structure

    def all_layers(self) -> list[Layer]:
        out = []
        for layer in self.fmri_layers + self.mri_layers + [self.output]:
            out.append(layer)
            if isinstance(layer, TimeDistributed):
                out.extend(layer.inner)
        return out

    def param_layers(self) -> list[Layer]:
        return [l for l in self.all_layers() if l.params]

    def params(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((f"{l.name}.{k}", v) for l in self.param_layers() for k, v in l.params.items())

    def buffers(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((f"{l.name}.{k}", v) for l in self.all_layers() for k, v in l.buffers.items())

    def state_arrays(self) -> "OrderedDict[str, np.ndarray]":
        out = self.params()
        out.update(self.buffers())
        return out

    def shape_trace(self) -> list[tuple[str, tuple]]:
        """Per-sample output shape of every layer, computed symbolically."""
        spec = self.spec
        trace = [("fmri.input", tuple(spec.fmri_input))]
        shape = tuple(spec.fmri_input)
        for layer in self.fmri_layers:
            if isinstance(layer, TimeDistributed):
                t, rest = shape[0], shape[1:]
                for inner in layer.inner:
                    rest = inner.output_shape(rest)
                    inner.out_shape = (t,) + rest
                    trace.append((inner.name, inner.out_shape))
                shape = (t,) + rest
                layer.out_shape = shape
                continue
            shape = layer.output_shape(shape)
            layer.out_shape = shape
            trace.append((layer.name, shape))
        fused = shape[0]
        if self.mri_layers:
            shape = tuple(spec.mri_input)
            trace.append(("mri.input", shape))
            for layer in self.mri_layers:
                shape = layer.output_shape(shape)
                layer.out_shape = shape
                trace.append((layer.name, shape))
            fused += shape[0]
            trace.append(("fusion.concat", (fused,)))
        out = self.output.output_shape((fused,))
        self.output.out_shape = out
        trace.append((self.output.name, out))
        trace.append(("output.sigmoid", out))
        return trace

    def count_params(self) -> dict:
        """Trainable and non-trainable scalar counts per layer and in total."""
        rows = [(l.name, l.kind, l.n_params(), l.n_buffers()) for l in self.all_layers() if l.params or l.buffers]
        return {
            "layers": rows,
            "trainable": sum(r[2] for r in rows),
            "non_trainable": sum(r[3] for r in rows),
        }

    @property
    def total_params(self) -> int:
        return self.count_params()["trainable"]

    # -- forward

    def _check_inputs(self, fmri, mri):
        spec = self.spec
        if fmri.shape[1:] != tuple(spec.fmri_input):
            raise ShapeMismatch(f"fMRI batch {fmri.shape} does not match (N,) + {tuple(spec.fmri_input)}")
        if spec.modality == "multi":
            if mri is None:
                raise MissingModality("multi-modal model needs an MRI volume")
            if mri.shape[1:] != tuple(spec.mri_input) or mri.shape[0] != fmri.shape[0]:
                raise ShapeMismatch(f"MRI batch {mri.shape} does not match ({fmri.shape[0]},) + {spec.mri_input}")
        elif mri is not None:
            raise MissingModality("single-modal model takes no MRI input")

    def forward_batch(self, fmri: np.ndarray, mri: Optional[np.ndarray] = None, mode: str = "eval",
                      dropout_seed: int = 0, update_stats: bool = True, trace: Optional[list] = None,
                      ablate: tuple = (), log_kinks: bool = False) -> ForwardResult:
        """Forward a batch ``fmri (N, T, D, H, W, C)`` [+ ``mri (N, D, H, W, C)``].

        Train mode uses batch statistics in batch norm (over the batch, time
        and spatial axes) and draws dropout masks from ``dropout_seed``.
        ``ablate`` may name ``"fmri"`` and/or ``"mri"`` to zero that branch's
        embedding before the output layer.
        """
        if mode not in ("train", "eval"):
            raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
        dtype = self.spec.dtype
        fmri = np.asarray(fmri, dtype=dtype)
        mri = None if mri is None else np.asarray(mri, dtype=dtype)
        self._check_inputs(fmri, mri)

        tape = Tape()
        tape.log_kinks = log_kinks
        nodes = OrderedDict((name, tape.leaf(v, trainable=True, name=name)) for name, v in self.params().items())
        ctx = ForwardContext(tape, mode, nodes, dropout_seed, update_stats, trace)
        ctx.note("fmri.input", fmri.shape[1:])

        h = tape.leaf(fmri, name="fmri")
        for layer in self.fmri_layers:
            h = layer.forward(h, ctx)
            if not isinstance(layer, TimeDistributed):
                ctx.note(layer.name, h.shape[1:])
        embeddings = {"fmri": h}
        feats = [h]
        if self.mri_layers:
            ctx.note("mri.input", mri.shape[1:])
            m = tape.leaf(mri, name="mri")
            for layer in self.mri_layers:
                m = layer.forward(m, ctx)
                ctx.note(layer.name, m.shape[1:])
            embeddings["mri"] = m
            feats.append(m)
        feats = [ad.mul(f, 0.0) if name in ablate else f for name, f in zip(embeddings, feats)]
        fused = ad.concat(feats, axis=-1) if len(feats) > 1 else feats[0]
        if len(feats) > 1:
            ctx.note("fusion.concat", fused.shape[1:])
        logit = self.output.forward(fused, ctx)
        ctx.note(self.output.name, logit.shape[1:])
        prob = ad.reshape(ad.sigmoid(logit), (logit.shape[0],))
        ctx.note("output.sigmoid", (1,))
        return ForwardResult(tape, prob, logit, nodes, embeddings)

    def predict(self, fmri: np.ndarray, mri: Optional[np.ndarray] = None) -> np.ndarray:
        """Eval-mode probabilities for a batch."""
        return self.forward_batch(fmri, mri, mode="eval").prob.data.copy()


def build_model(spec: ModelSpec) -> Model:
    return Model(spec)


def forward(model: Model, fmri: np.ndarray, mri: Optional[np.ndarray] = None, mode: str = "eval",
            dropout_seed: int = 0) -> float:
    """Probability for one sample ``fmri (T, D, H, W, C)`` [+ ``mri (D, H, W, C)``]."""
    fmri = np.asarray(fmri)[None]
    mri = None if mri is None else np.asarray(mri)[None]
    res = model.forward_batch(fmri, mri, mode=mode, dropout_seed=dropout_seed)
    return float(res.prob.data[0])


def shape_trace(model: Model) -> list[tuple[str, tuple]]:
    return model.shape_trace()


def count_params(model: Model) -> dict:
    return model.count_params()


def format_shape(shape) -> str:
    return "x".join(str(s) for s in shape)


def with_seed(spec: ModelSpec, seed: int) -> ModelSpec:
    return replace(spec, seed=seed)
