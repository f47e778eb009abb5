"""Whole-model gradient check against central finite differences."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import finite_diff_check
from .models import Model, ModelSpec
from .training import bce

THRESHOLD = 1e-4


@dataclass
class LayerCheck:
    layer: str
    n_params: int
    max_rel_error: float
    skipped: int = 0


@dataclass
class GradcheckReport:
    kind: str
    seed: int
    rows: list = field(default_factory=list)
    threshold: float = THRESHOLD

    @property
    def worst(self) -> LayerCheck:
        return max(self.rows, key=lambda r: r.max_rel_error)

    @property
    def passed(self) -> bool:
        return all(r.max_rel_error < self.threshold for r in self.rows)

    def table(self) -> str:
        width = max(len(r.layer) for r in self.rows)
        lines = [f"{'layer':<{width}}  {'params':>7}  {'max_rel_err':>11}  {'skipped':>7}"]
        for r in self.rows:
            lines.append(f"{r.layer:<{width}}  {r.n_params:>7d}  {r.max_rel_error:>11.3e}  {r.skipped:>7d}")
        verdict = "PASS" if self.passed else f"FAIL (worst layer: {self.worst.layer})"
        lines.append(f"{verdict}: max relative error {self.worst.max_rel_error:.3e} vs threshold {self.threshold:g}")
        return "\n".join(lines)


def toy_batch(spec: ModelSpec, seed: int, n: int = 2):
    rng = np.random.default_rng([seed, 1])
    fmri = rng.standard_normal((n,) + tuple(spec.fmri_input))
    mri = rng.standard_normal((n,) + tuple(spec.mri_input)) if spec.modality == "multi" else None
    labels = np.arange(n) % 2
    return fmri, mri, labels


def run_gradcheck(kind: str, seed: int = 0, eps: float = 1e-5, spec: ModelSpec | None = None) -> GradcheckReport:
    """Check every parameterised layer of a toy-sized ``kind`` model.

    Batch norm runs in train mode without touching running statistics and
    dropout is off, so the loss is a deterministic function of the weights.
    Perturbations that flip a relu mask or a pooling argmax are skipped.
    """
    spec = spec or ModelSpec.toy(kind, seed=seed)
    model = Model(spec)
    fmri, mri, labels = toy_batch(spec, seed)

    def loss_of(_params=None):
        res = model.forward_batch(fmri, mri, mode="train", update_stats=False, log_kinks=True)
        loss = bce(res.prob, labels)
        return float(loss.data[0]), res.tape.kink_signature()

    res = model.forward_batch(fmri, mri, mode="train", update_stats=False)
    grads_by_id = res.tape.backward(bce(res.prob, labels))
    grads = {name: grads_by_id[node.id].data for name, node in res.param_nodes.items()}

    report = GradcheckReport(spec.kind, seed)
    for layer in model.param_layers():
        names = [f"{layer.name}.{k}" for k in layer.params]
        arrays = list(layer.params.values())
        info: dict = {}
        err = finite_diff_check(loss_of, arrays, [grads[n] for n in names], eps=eps, report=info)
        report.rows.append(LayerCheck(layer.name, layer.n_params(), err, info.get("skipped", 0)))
    return report
