"""Model checkpoints: one tensor dump per named array plus a JSON manifest.

Layout::

    <dir>/manifest.json
    <dir>/<layer>.<param>.bin      # u32 rank, u32 extents, f64 data (LE)

The manifest records the model spec and, in layer order, each layer's kind
and the shapes of its trainable parameters and running buffers.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import ShapeMismatch
from .models import Model, ModelSpec
from .tensor import Tensor, load_tensor, save_tensor

MANIFEST = "manifest.json"


def manifest_for(model: Model) -> dict:
    layers = []
    for layer in model.all_layers():
        if not (layer.params or layer.buffers):
            continue
        layers.append({
            "name": layer.name,
            "kind": layer.kind,
            "params": {k: list(v.shape) for k, v in layer.params.items()},
            "buffers": {k: list(v.shape) for k, v in layer.buffers.items()},
        })
    return {"format": "volnet-checkpoint/1", "spec": model.spec.to_dict(), "layers": layers}


def snapshot(model: Model) -> dict:
    return {k: v.copy() for k, v in model.state_arrays().items()}


def restore(model: Model, arrays: dict) -> None:
    for name, target in model.state_arrays().items():
        src = arrays[name]
        if src.shape != target.shape:
            raise ShapeMismatch(f"{name}: checkpoint shape {src.shape}, model expects {target.shape}")
        target[...] = src


def save_checkpoint(model: Model, directory, arrays: dict | None = None) -> Path:
    """Write ``model`` (or a ``snapshot`` of it) to ``directory``."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    arrays = arrays if arrays is not None else model.state_arrays()
    for name in model.state_arrays():
        save_tensor(Tensor(np.asarray(arrays[name], dtype=np.float64)), out / f"{name}.bin")
    (out / MANIFEST).write_text(json.dumps(manifest_for(model), indent=2) + "\n")
    return out


def load_checkpoint(directory) -> Model:
    src = Path(directory)
    manifest = json.loads((src / MANIFEST).read_text())
    model = Model(ModelSpec.from_dict(manifest["spec"]))
    expected = {l["name"]: l for l in manifest["layers"]}
    precision = model.spec.precision
    arrays = {}
    for layer in model.all_layers():
        if not (layer.params or layer.buffers):
            continue
        entry = expected.get(layer.name)
        if entry is None:
            raise ShapeMismatch(f"checkpoint has no entry for layer {layer.name}")
        for group in ("params", "buffers"):
            for k, v in getattr(layer, group).items():
                if tuple(entry[group][k]) != v.shape:
                    raise ShapeMismatch(f"{layer.name}.{k}: manifest {entry[group][k]}, model {v.shape}")
                arrays[f"{layer.name}.{k}"] = load_tensor(src / f"{layer.name}.{k}.bin", precision).data
    restore(model, arrays)
    return model
