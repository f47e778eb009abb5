"""Loss, optimiser, metrics and the epoch loop.

Protocol defaults: batch size 3, 10 epochs, Adam at lr 1e-5, dropout 0.3
after the recurrent layer, 5 repeats with seeds ``seed + repeat``.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import kernels
from .autodiff import GraphNode
from .checkpoint import save_checkpoint, snapshot
from .data.dataset import Dataset
from .data.splits import batch_iter
from .errors import EmptyInput, NonFiniteLoss, ShapeMismatch
from .models import Model, ModelSpec, build_model

log = logging.getLogger(__name__)

P_MIN = 1e-7
EVAL_CHUNK = 10
CSV_HEADER = ["run_id", "epoch", "train_loss", "train_acc", "val_loss", "val_acc", "wall_time_s"]


# ---------------------------------------------------------------- loss


def bce_loss(p: float, y: int) -> float:
    p = min(max(float(p), P_MIN), 1 - P_MIN)
    return -(y * math.log(p) + (1 - y) * math.log(1 - p))


def bce_values(p: np.ndarray, y: np.ndarray) -> np.ndarray:
    p = np.clip(np.asarray(p, dtype=np.float64), P_MIN, 1 - P_MIN)
    y = np.asarray(y, dtype=np.float64)
    return -(y * np.log(p) + (1 - y) * np.log(1 - p))


def bce(prob: GraphNode, labels) -> GraphNode:
    """Mean binary cross-entropy of a ``(N,)`` probability node."""
    pv = prob.data
    y = np.asarray(labels, dtype=pv.dtype).reshape(pv.shape)
    lo, hi = pv.dtype.type(P_MIN), pv.dtype.type(1 - P_MIN)
    pc = np.clip(pv, lo, hi)
    inside = (pv >= lo) & (pv <= hi)
    n = pv.size
    loss = -(y * np.log(pc) + (1 - y) * np.log(1 - pc)).mean()

    def vjp(g):
        return (g.reshape(()) * inside * (-(y / pc) + (1 - y) / (1 - pc)) / n,)

    return prob._tape.record("bce", (prob,), np.asarray([loss], dtype=pv.dtype), vjp)


# ---------------------------------------------------------------- optimiser


@dataclass
class AdamState:
    lr: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps_hat: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState) -> tuple[dict, AdamState]:
    """One bias-corrected Adam update, applied to ``params`` in place."""
    if set(grads) != set(params):
        raise ShapeMismatch(f"gradients for {sorted(set(grads) ^ set(params))} do not match parameters")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1 - b1 ** state.t
    c2 = 1 - b2 ** state.t
    for name, p in params.items():
        g = np.asarray(grads[name])
        if g.shape != p.shape:
            raise ShapeMismatch(f"{name}: gradient {g.shape} vs parameter {p.shape}")
        g = g.astype(p.dtype, copy=False)
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * (g * g)
        m_hat = m / c1
        v_hat = v / c2
        p -= (state.lr * m_hat / (np.sqrt(v_hat) + state.eps_hat)).astype(p.dtype, copy=False)
    return params, state


# ---------------------------------------------------------------- metrics


def accuracy(probs, labels) -> float:
    probs = np.asarray(probs).reshape(-1)
    labels = np.asarray(labels).reshape(-1)
    if probs.size == 0:
        raise EmptyInput("accuracy of an empty prediction set")
    if probs.size != labels.size:
        raise ShapeMismatch(f"{probs.size} predictions for {labels.size} labels")
    # p == 0.5 counts as class 1
    return float(np.mean((probs >= 0.5).astype(np.int64) == labels))


@dataclass
class MetricsRow:
    run_id: int
    epoch: int
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float
    wall_time_s: float

    def csv_row(self) -> list:
        return [self.run_id, self.epoch, repr(self.train_loss), repr(self.train_acc), repr(self.val_loss),
                repr(self.val_acc), f"{self.wall_time_s:.3f}"]


@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 3
    dropout: float = 0.3
    repeats: int = 5
    seed: int = 0
    lr: float = 1e-5
    record_wall_time: bool = True

    def validate(self):
        if self.epochs < 0 or self.batch_size < 1 or self.repeats < 1:
            raise ValueError("epochs >= 0, batch_size >= 1 and repeats >= 1 are required")
        if not 0 <= self.dropout < 1:
            raise ValueError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.lr <= 0:
            raise ValueError("lr must be positive")


@dataclass
class RepeatResult:
    run_id: int
    seed: int
    rows: list
    aborted: bool = False
    abort_reason: str = ""
    best_val_acc: float = float("nan")
    best_epoch: int = 0
    grad_norms: list = field(default_factory=list)  # per epoch: {"fmri": x, "mri": y}
    checkpoint: Optional[Path] = None


@dataclass
class TrainResult:
    repeats: list
    summary: dict

    @property
    def rows(self) -> list:
        return [r for rep in self.repeats for r in rep.rows]


def predict(model: Model, dataset: Dataset, ids, threads: int = 1) -> np.ndarray:
    """Eval-mode probabilities for ``ids`` in order (chunked, optionally threaded)."""
    ids = list(ids)
    chunks = [ids[i:i + EVAL_CHUNK] for i in range(0, len(ids), EVAL_CHUNK)]
    dtype = model.spec.dtype

    def run(chunk):
        fmri, mri, _ = dataset.arrays(chunk, dtype)
        return model.predict(fmri, mri)

    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run, chunks))
    else:
        parts = [run(c) for c in chunks]
    return np.concatenate(parts)


def split_metrics(model: Model, dataset: Dataset, ids, threads: int = 1) -> tuple[float, float]:
    probs = predict(model, dataset, ids, threads)
    y = dataset.labels(ids)
    return float(bce_values(probs, y).mean()), accuracy(probs, y)


def evaluate(model: Model, dataset: Dataset, threads: int = 1, run_id=0, epoch: int = 0) -> MetricsRow:
    """Deterministic eval-mode metrics on both splits (no dropout, running BN stats)."""
    start = time.perf_counter()
    tl, ta = split_metrics(model, dataset, dataset.plan.train_ids, threads)
    vl, va = split_metrics(model, dataset, dataset.plan.val_ids, threads)
    return MetricsRow(run_id, epoch, tl, ta, vl, va, time.perf_counter() - start)


def branch_of(param_name: str) -> str:
    return param_name.split(".", 1)[0]


def train_step(model: Model, adam: AdamState, fmri, mri, labels, dropout_seed: int) -> tuple[float, dict]:
    """Forward/backward/update on one micro-batch. Returns loss and grad norms per branch."""
    res = model.forward_batch(fmri, mri, mode="train", dropout_seed=dropout_seed)
    loss = bce(res.prob, labels)
    value = float(loss.data[0])
    if not math.isfinite(value):
        raise NonFiniteLoss(f"loss is {value}")
    grads_by_id = res.tape.backward(loss)
    grads = {name: grads_by_id[node.id].data for name, node in res.param_nodes.items()}
    sq: dict[str, float] = {}
    for name, g in grads.items():
        b = branch_of(name)
        sq[b] = sq.get(b, 0.0) + float(np.sum(np.square(g, dtype=np.float64)))
    adam_step(model.params(), grads, adam)
    return value, {k: math.sqrt(v) for k, v in sq.items()}


def train_repeat(spec: ModelSpec, config: TrainConfig, dataset: Dataset, run_id: int,
                 out_dir: Optional[Path] = None, threads: int = 1, on_row=None) -> RepeatResult:
    seed = config.seed + run_id
    model = build_model(replace(spec, seed=seed, dropout=config.dropout))
    adam = AdamState(lr=config.lr)
    result = RepeatResult(run_id, seed, [])
    best = snapshot(model)
    step = 0
    clock = time.perf_counter()
    try:
        for epoch in range(1, config.epochs + 1):
            norms: dict[str, float] = {}
            for batch in batch_iter(dataset.plan, config.batch_size, epoch_seed=seed * 100_003 + epoch):
                fmri, mri, y = dataset.arrays(batch, spec.dtype)
                _, gn = train_step(model, adam, fmri, mri, y, dropout_seed=seed * 1_000_003 + step)
                step += 1
                for k, v in gn.items():
                    norms[k] = norms.get(k, 0.0) + v
            n_batches = max(1, math.ceil(len(dataset.plan.train_ids) / config.batch_size))
            result.grad_norms.append({k: v / n_batches for k, v in norms.items()})
            row = evaluate(model, dataset, threads, run_id, epoch)
            row.wall_time_s = (time.perf_counter() - clock) if config.record_wall_time else 0.0
            result.rows.append(row)
            if on_row:
                on_row(row)
            if not row.val_acc <= result.best_val_acc:  # first epoch or strict improvement
                result.best_val_acc, result.best_epoch = row.val_acc, epoch
                best = snapshot(model)
    except NonFiniteLoss as exc:
        result.aborted, result.abort_reason = True, f"epoch {len(result.rows) + 1}: {exc}"
        log.warning("repeat %d aborted: %s", run_id, result.abort_reason)
    if out_dir is not None:
        result.checkpoint = save_checkpoint(model, Path(out_dir) / "checkpoints" / f"run{run_id}", best)
    return result


def summarize(config: TrainConfig, spec: ModelSpec, repeats: list) -> dict:
    ok = [r for r in repeats if not r.aborted]
    per_epoch = []
    for e in range(config.epochs):
        rows = [r.rows[e] for r in ok if len(r.rows) > e]
        if not rows:
            break
        per_epoch.append({
            "epoch": e + 1,
            **{k: float(np.mean([getattr(r, k) for r in rows]))
               for k in ("train_loss", "train_acc", "val_loss", "val_acc")},
            "n_repeats": len(rows),
        })
    final_val = [r.rows[-1].val_acc for r in ok if r.rows]
    return {
        "model": spec.to_dict(),
        "config": asdict(config),
        "lr": config.lr,
        "kernel_backend": kernels.BACKEND,
        "repeats": [{
            "run_id": r.run_id, "seed": r.seed, "aborted": r.aborted, "abort_reason": r.abort_reason,
            "best_epoch": r.best_epoch, "best_val_acc": None if math.isnan(r.best_val_acc) else r.best_val_acc,
            "final_val_acc": r.rows[-1].val_acc if r.rows else None,
            "grad_norms": r.grad_norms,
        } for r in repeats],
        "aborted_repeats": [r.run_id for r in repeats if r.aborted],
        "averages_exclude_aborted": bool(len(ok) < len(repeats)),
        "per_epoch_mean": per_epoch,
        "mean_final_val_acc": float(np.mean(final_val)) if final_val else None,
    }


def write_metrics_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in rows:
            w.writerow(r.csv_row())


def train(config: TrainConfig, dataset: Dataset, spec: ModelSpec, out_dir=None, threads: int = 1,
          on_row=None) -> TrainResult:
    """Run ``config.repeats`` independent trainings and aggregate them.

    With ``out_dir`` set, writes ``metrics.csv``, ``summary.json`` and the
    best-validation checkpoint of every repeat under ``checkpoints/run<k>``.
    """
    config.validate()
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    repeats = [train_repeat(spec, config, dataset, r, out, threads, on_row) for r in range(config.repeats)]
    summary = summarize(config, spec, repeats)
    if out is not None:
        write_metrics_csv(out / "metrics.csv", [row for rep in repeats for row in rep.rows])
        (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    return TrainResult(repeats, summary)
