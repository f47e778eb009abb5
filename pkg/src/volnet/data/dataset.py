"""In-memory datasets assembled from phantoms or NIfTI files."""
from __future__ import annotations

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from ..errors import VolnetError
from ..tensor import Tensor, write_dump
from .nifti import read_nifti
from .phantom import generate_phantom_fmri, generate_phantom_mri
from .preprocess import prepare_fmri, prepare_mri
from .splits import SplitPlan, make_splits


class DataError(VolnetError):
    """Missing or malformed input data."""


@dataclass
class Sample:
    subject_id: str
    label: int
    fmri: np.ndarray  # (T, D, H, W, 1), network-ready
    mri: Optional[np.ndarray]  # (D, H, W, 1) or None
    source: str


@dataclass
class Dataset:
    samples: dict
    plan: SplitPlan

    def labels(self, ids) -> np.ndarray:
        return np.array([self.samples[i].label for i in ids], dtype=np.int64)

    def arrays(self, ids, dtype=np.float32):
        fmri = np.stack([self.samples[i].fmri for i in ids]).astype(dtype, copy=False)
        mris = [self.samples[i].mri for i in ids]
        mri = None if mris[0] is None else np.stack(mris).astype(dtype, copy=False)
        return fmri, mri, self.labels(ids)


def sample_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([int(seed), int(index)]).generate_state(1)[0])


def balanced_labels(count: int) -> list[int]:
    return [i % 2 for i in range(count)]


def _map(fn, items, workers: int):
    # results come back in input order whatever the completion order
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def phantom_dataset(count: int, delta: float, seed: int, fmri_input: tuple, mri_input: Optional[tuple] = None,
                    phantom_dims: Optional[tuple] = None, ratio: float = 0.5, workers: int = 1) -> Dataset:
    """Balanced phantom cohort split into train/validation.

    fMRI phantoms are generated at ``phantom_dims`` (default: the network's
    own ``(T, D, H, W)``) and then resampled to ``fmri_input``. MRI phantoms
    are drawn independently of the class label.
    """
    dims = tuple(phantom_dims) if phantom_dims else tuple(fmri_input[:4])
    labels = balanced_labels(count)

    def make(i):
        s = sample_seed(seed, i)
        vol = generate_phantom_fmri(s, labels[i], dims, delta, subject_id=f"ph{i:04d}")
        fmri = prepare_fmri(vol.data.data[..., 0], fmri_input)
        mri = None
        if mri_input is not None:
            mri = generate_phantom_mri(sample_seed(seed + 1, i), mri_input[:3]).data.data
        return Sample(vol.subject_id, labels[i], fmri, mri, "phantom")

    samples = {s.subject_id: s for s in _map(make, range(count), workers)}
    ids = list(samples)
    plan = make_splits(ids, ratio, seed, labels=[samples[i].label for i in ids])
    return Dataset(samples, plan)


def read_labels(path) -> dict[str, int]:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"labels CSV not found: {path}")
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"subject_id", "label"} <= set(reader.fieldnames):
            raise DataError(f"{path}: header must be 'subject_id,label'")
        out = {}
        for row in reader:
            try:
                label = int(row["label"])
            except (TypeError, ValueError):
                label = -1
            if label not in (0, 1):
                raise DataError(f"{path}: label for {row['subject_id']} must be 0 or 1")
            out[row["subject_id"].strip()] = label
    if not out:
        raise DataError(f"{path}: no subjects listed")
    return out


def find_nifti(directory: Path, subject_id: str) -> Path:
    for suffix in (".nii.gz", ".nii"):
        p = directory / f"{subject_id}{suffix}"
        if p.is_file():
            return p
    raise DataError(f"no .nii or .nii.gz file for subject {subject_id!r} in {directory}")


def nifti_dataset(nifti_dir, labels_csv, fmri_input: tuple, mri_input: Optional[tuple] = None,
                  seed: int = 0, ratio: float = 0.5, workers: int = 1) -> Dataset:
    """Subjects listed in ``labels_csv`` read from ``<nifti_dir>/<subject_id>.nii[.gz]``.

    The structural branch gets a phantom MRI per subject, as no matching
    structural scan is expected.
    """
    directory = Path(nifti_dir)
    if not directory.is_dir():
        raise DataError(f"nifti_dir not found: {directory}")
    labels = read_labels(labels_csv)
    subjects = sorted(labels)
    paths = {s: find_nifti(directory, s) for s in subjects}

    def load(item):
        i, sid = item
        _, vol = read_nifti(paths[sid])
        fmri = prepare_fmri(vol.data, fmri_input)
        mri = None
        if mri_input is not None:
            mri = prepare_mri(generate_phantom_mri(sample_seed(seed + 1, i), mri_input[:3]).data.data[..., 0],
                              mri_input)
        return Sample(sid, labels[sid], fmri, mri, "nifti")

    samples = {s.subject_id: s for s in _map(load, list(enumerate(subjects)), workers)}
    plan = make_splits(subjects, ratio, seed, labels=[labels[s] for s in subjects])
    return Dataset(samples, plan)


def write_phantom_set(out_dir, count: int, delta: float, seed: int, fmri_dims=(30, 28, 28, 28),
                      mri_dims=(64, 64, 64)) -> dict:
    """Write ``count`` fMRI and ``count`` MRI phantoms plus ``manifest.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    labels = balanced_labels(count)
    entries = []
    for i in range(count):
        s = sample_seed(seed, i)
        vol = generate_phantom_fmri(s, labels[i], tuple(fmri_dims), delta, subject_id=f"ph{i:04d}")
        name = f"fmri_{i:04d}.bin"
        with open(out / name, "wb") as fh:
            write_dump(vol.data, fh)
        entries.append({"file": name, "kind": "fmri", "subject_id": vol.subject_id, "seed": s,
                        "label": labels[i], "dims": list(fmri_dims), "delta": delta})
    for i in range(count):
        s = sample_seed(seed + 1, i)
        vol = generate_phantom_mri(s, tuple(mri_dims))
        name = f"mri_{i:04d}.bin"
        with open(out / name, "wb") as fh:
            write_dump(vol.data, fh)
        entries.append({"file": name, "kind": "mri", "seed": s, "dims": list(mri_dims)})
    manifest = {
        "seed": seed,
        "count": count,
        "delta": delta,
        "null_signal": delta == 0,
        "fmri_dims": list(fmri_dims),
        "mri_dims": list(mri_dims),
        "labels": {"0": labels.count(0), "1": labels.count(1)},
        "files": entries,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return manifest


def load_phantom_set(out_dir) -> list[tuple[dict, Tensor]]:
    from ..tensor import load_tensor

    out = Path(out_dir)
    manifest = json.loads((out / "manifest.json").read_text())
    return [(e, load_tensor(out / e["file"])) for e in manifest["files"]]
