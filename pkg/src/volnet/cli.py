"""``volnet`` command line: train, evaluate, gradcheck, generate, shape-trace.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 every
training repeat hit a non-finite loss, 5 gradient check failure.

``VOLNET_OUTPUT_DIR``, when set, replaces the output directory of
``train``, ``evaluate`` and ``generate``.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from contextlib import contextmanager
from dataclasses import fields
from pathlib import Path

from . import __version__
from .errors import InvalidSpec, NiftiError, VolnetError
from .models import KINDS, FULL_MRI, Model, ModelSpec, format_shape

log = logging.getLogger("volnet")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NONFINITE, EXIT_GRADCHECK = 0, 2, 3, 4, 5
OUTPUT_ENV = "VOLNET_OUTPUT_DIR"


class ConfigError(VolnetError):
    pass


class CliDataError(VolnetError):
    pass


# ---------------------------------------------------------------- run config

MODEL_KEYS = {"kind", "scale", "mri_res", "fmri_input", "mri_input", "rnn_hidden", "fmri_filters",
              "mri_filters", "head_width", "precision"}
TRAIN_KEYS = {"epochs", "batch_size", "dropout", "repeats", "seed", "lr", "record_wall_time"}
DATA_KEYS = {"nifti_dir", "labels_csv", "phantom", "split_ratio", "split_seed"}
PHANTOM_KEYS = {"count", "delta", "seed", "dims"}
TOP_KEYS = {"model", "train", "data", "output_dir"}


def _reject_unknown(section: dict, allowed: set, where: str):
    if not isinstance(section, dict):
        raise ConfigError(f"{where} must be a JSON object")
    extra = sorted(set(section) - allowed)
    if extra:
        raise ConfigError(f"unknown key {extra[0]!r} in {where}")


def load_config(path) -> dict:
    path = Path(path)
    try:
        cfg = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    _reject_unknown(cfg, TOP_KEYS, "config")
    _reject_unknown(cfg.setdefault("model", {}), MODEL_KEYS, "model")
    _reject_unknown(cfg.setdefault("train", {}), TRAIN_KEYS, "train")
    data = cfg.setdefault("data", {})
    _reject_unknown(data, DATA_KEYS, "data")
    if "phantom" in data:
        _reject_unknown(data["phantom"], PHANTOM_KEYS, "data.phantom")
    if "kind" not in cfg["model"]:
        raise ConfigError("model.kind is required")
    if "nifti_dir" not in data and "phantom" not in data:
        raise ConfigError("data needs either nifti_dir + labels_csv or a phantom block")
    if "nifti_dir" in data and "labels_csv" not in data:
        raise ConfigError("data.nifti_dir requires data.labels_csv")
    return cfg


def model_spec(cfg: dict) -> ModelSpec:
    m = dict(cfg["model"])
    kind = m.pop("kind")
    scale = m.pop("scale", "desk")
    mri_res = m.pop("mri_res", 64)
    seed = int(cfg.get("train", {}).get("seed", 0))
    for k in ("fmri_input", "mri_input", "fmri_filters", "mri_filters"):
        if k in m:
            m[k] = tuple(m[k])
    try:
        if scale == "full":
            return ModelSpec.full(kind, mri_res=mri_res, seed=seed, **m)
        if scale == "toy":
            return ModelSpec.toy(kind, seed=seed, **m)
        if scale == "desk":
            return ModelSpec.desk(kind, seed=seed, **m)
        if scale == "custom":
            return ModelSpec.desk(kind, seed=seed, scale="custom", **m)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    raise ConfigError(f"model.scale must be full, desk, toy or custom, got {scale!r}")


def train_config(cfg: dict):
    from .training import TrainConfig

    allowed = {f.name for f in fields(TrainConfig)}
    tc = TrainConfig(**{k: v for k, v in cfg["train"].items() if k in allowed})
    try:
        tc.validate()
    except ValueError as exc:
        raise ConfigError(f"train: {exc}") from None
    return tc


def output_dir(configured) -> Path:
    override = os.environ.get(OUTPUT_ENV)
    if override:
        return Path(override)
    if configured is None:
        raise ConfigError("output_dir is required")
    return Path(configured)


def check_paths(cfg: dict) -> None:
    """Validate every input path before any compute starts."""
    data = cfg["data"]
    if "nifti_dir" in data:
        if not Path(data["nifti_dir"]).is_dir():
            raise CliDataError(f"nifti_dir not found: {data['nifti_dir']}")
        if not Path(data["labels_csv"]).is_file():
            raise CliDataError(f"labels CSV not found: {data['labels_csv']}")


def ensure_writable(path: Path) -> Path:
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliDataError(f"cannot create output directory {path}: {exc.strerror}") from None
    if not os.access(path, os.W_OK):
        raise CliDataError(f"output directory is not writable: {path}")
    return path


def build_dataset(cfg: dict, spec: ModelSpec, threads: int):
    from .data import nifti_dataset, phantom_dataset

    data = cfg["data"]
    mri_input = spec.mri_input if spec.modality == "multi" else None
    ratio = float(data.get("split_ratio", 0.5))
    if "nifti_dir" in data:
        return nifti_dataset(data["nifti_dir"], data["labels_csv"], spec.fmri_input, mri_input,
                             seed=int(data.get("split_seed", 0)), ratio=ratio, workers=threads)
    ph = data["phantom"]
    dims = ph.get("dims")
    return phantom_dataset(int(ph.get("count", 120)), float(ph.get("delta", 0.5)), int(ph.get("seed", 0)),
                           spec.fmri_input, mri_input, phantom_dims=tuple(dims) if dims else (30, 28, 28, 28),
                           ratio=ratio, workers=threads)


@contextmanager
def thread_limit(n: int):
    from threadpoolctl import threadpool_limits

    with threadpool_limits(limits=n):
        yield


# ---------------------------------------------------------------- commands


def cmd_train(args) -> int:
    from .training import train

    cfg = load_config(args.config)
    spec = model_spec(cfg)
    tc = train_config(cfg)
    check_paths(cfg)
    out = ensure_writable(output_dir(cfg.get("output_dir")))
    (out / "config.json").write_text(json.dumps(cfg, indent=2) + "\n")
    dataset = build_dataset(cfg, spec, args.threads)
    log.info("training %s (%s scale): %d train / %d val, %d repeats x %d epochs, lr %g", spec.kind, spec.scale,
             len(dataset.plan.train_ids), len(dataset.plan.val_ids), tc.repeats, tc.epochs, tc.lr)

    def progress(row):
        log.info("run %d epoch %d: train loss %.4f acc %.3f | val loss %.4f acc %.3f", row.run_id, row.epoch,
                 row.train_loss, row.train_acc, row.val_loss, row.val_acc)

    result = train(tc, dataset, spec, out_dir=out, threads=args.threads, on_row=progress)
    if all(r.aborted for r in result.repeats):
        print(f"every repeat stopped on a non-finite loss; see {out / 'summary.json'}", file=sys.stderr)
        return EXIT_NONFINITE
    final = result.summary["mean_final_val_acc"]
    print(f"wrote {out / 'metrics.csv'}; mean final val acc {final:.4f}" if final is not None
          else f"wrote {out / 'metrics.csv'}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    from .checkpoint import load_checkpoint
    from .training import evaluate

    cfg = load_config(args.config)
    check_paths(cfg)
    ckpt = Path(args.checkpoint)
    if not (ckpt / "manifest.json").is_file():
        raise CliDataError(f"no checkpoint manifest in {ckpt}")
    model = load_checkpoint(ckpt)
    dataset = build_dataset(cfg, model.spec, args.threads)
    row = evaluate(model, dataset, threads=args.threads)
    payload = {k: getattr(row, k) for k in ("train_loss", "train_acc", "val_loss", "val_acc")}
    payload["checkpoint"] = str(ckpt)
    text = json.dumps(payload, indent=2)
    print(text)
    if os.environ.get(OUTPUT_ENV) or args.out:
        out = ensure_writable(output_dir(args.out))
        (out / "evaluation.json").write_text(text + "\n")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradcheck import run_gradcheck

    report = run_gradcheck(args.kind, seed=args.seed)
    print(f"gradcheck {report.kind} seed {report.seed}")
    print(report.table())
    if not report.passed:
        print(f"gradient check failed in layer {report.worst.layer}", file=sys.stderr)
        return EXIT_GRADCHECK
    return EXIT_OK


def cmd_generate(args) -> int:
    from .data import write_phantom_set

    if args.count < 1:
        raise ConfigError("--count must be at least 1")
    out = ensure_writable(output_dir(args.out))
    try:
        manifest = write_phantom_set(out, args.count, args.delta, args.seed, tuple(args.fmri_dims),
                                     tuple(args.mri_dims))
    except OSError as exc:
        raise CliDataError(f"cannot write to {out}: {exc.strerror}") from None
    print(f"wrote {2 * args.count} phantoms to {out} (labels {manifest['labels']})")
    return EXIT_OK


def cmd_shape_trace(args) -> int:
    spec = ModelSpec.full(args.kind, mri_res=args.mri)
    model = Model(spec)
    trace = model.shape_trace()
    width = max(len(n) for n, _ in trace)
    for name, shape in trace:
        print(f"{name:<{width}}  {format_shape(shape)}")
    counts = model.count_params()
    print(f"trainable parameters: {counts['trainable']}  non-trainable: {counts['non_trainable']}")
    print(json.dumps({"kind": spec.kind, "mri_res": args.mri,
                      "trace": [{"layer": n, "shape": list(s)} for n, s in trace],
                      "trainable_params": counts["trainable"], "non_trainable_params": counts["non_trainable"]}))
    return EXIT_OK


# ---------------------------------------------------------------- entry point


def _kind(value: str) -> str:
    v = value.lower()
    if v not in KINDS:
        raise argparse.ArgumentTypeError(f"unknown model kind {value!r}; choose from {', '.join(KINDS)}")
    return v


def _dims(n):
    def parse(value):
        parts = [int(p) for p in value.lower().replace(",", "x").split("x")]
        if len(parts) != n or any(p < 1 for p in parts):
            raise argparse.ArgumentTypeError(f"expected {n} positive extents like {'x'.join(['28'] * n)}")
        return parts
    return parse


def _threads(value: str) -> int:
    n = int(value)
    if n < 1:
        raise argparse.ArgumentTypeError("--threads must be >= 1")
    return n


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=_threads, default=1,
                        help="worker and BLAS thread cap; 1 gives bitwise-reproducible output (default 1)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="volnet", description="3D CNN + RNN volumetric classifiers.")
    p.add_argument("--version", action="version", version=f"volnet {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", parents=[common], help="train from a JSON run config")
    t.add_argument("--config", required=True)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", parents=[common], help="eval-mode metrics of a checkpoint")
    e.add_argument("--checkpoint", required=True, help="checkpoint directory (contains manifest.json)")
    e.add_argument("--config", required=True, help="run config supplying the data section")
    e.add_argument("--out", help="also write evaluation.json here")
    e.set_defaults(func=cmd_evaluate)

    g = sub.add_parser("gradcheck", parents=[common], help="finite-difference check of a toy-sized model")
    g.add_argument("kind", type=_kind)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_gradcheck)

    gen = sub.add_parser("generate", parents=[common], help="write synthetic phantom volumes")
    gen.add_argument("--count", type=int, required=True)
    gen.add_argument("--delta", type=float, default=0.5)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", required=False)
    gen.add_argument("--fmri-dims", type=_dims(4), default=[30, 28, 28, 28], metavar="TxDxHxW")
    gen.add_argument("--mri-dims", type=_dims(3), default=[64, 64, 64], metavar="DxHxW")
    gen.set_defaults(func=cmd_generate)

    s = sub.add_parser("shape-trace", parents=[common], help="print per-layer output shapes")
    s.add_argument("kind", type=_kind)
    s.add_argument("--mri", type=int, choices=sorted(FULL_MRI), default=64)
    s.set_defaults(func=cmd_shape_trace)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(message)s",
                        stream=sys.stderr, force=True)
    try:
        with thread_limit(args.threads):
            return args.func(args)
    except (ConfigError, InvalidSpec) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (CliDataError, NiftiError, VolnetError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
