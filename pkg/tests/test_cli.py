import csv
import json

import numpy as np
import pytest

from volnet import cli
from volnet import layers as L
from volnet.data import write_nifti
from volnet.errors import NonFiniteLoss


def run(capsys, *argv):
    code = cli.main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def toy_config(tmp_path, **over):
    cfg = {
        "model": {"kind": "sm-gru", "scale": "toy"},
        "train": {"epochs": 2, "repeats": 2, "seed": 0, "lr": 1e-3, "record_wall_time": False},
        "data": {"phantom": {"count": 8, "delta": 0.5, "seed": 0, "dims": [2, 8, 8, 8]}},
        "output_dir": str(tmp_path / "run"),
    }
    for k, v in over.items():
        cfg[k] = v
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    return path, cfg


def test_shape_trace_text_and_json(capsys):
    code, out, _ = run(capsys, "shape-trace", "mm-lstm", "--mri", "64")
    assert code == 0 and "4x4x4x256" in out
    doc = json.loads(out.strip().splitlines()[-1])
    assert doc["trace"][-1]["shape"] == [1]
    code, out, _ = run(capsys, "shape-trace", "sm-gru")
    assert "30x14x14x14x64" in out


def test_shape_trace_bad_arguments(capsys):
    with pytest.raises(SystemExit) as e:
        cli.main(["shape-trace", "mm-lstm", "--mri", "48"])
    assert e.value.code == 2
    with pytest.raises(SystemExit) as e:
        cli.main(["shape-trace", "xx-gru"])
    assert e.value.code == 2


def test_generate(capsys, tmp_path):
    code, out, _ = run(capsys, "generate", "--count", "10", "--delta", "0", "--seed", "3", "--out",
                       str(tmp_path / "a"), "--fmri-dims", "4x8x8x8", "--mri-dims", "8x8x8")
    assert code == 0
    man = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert man["labels"] == {"0": 5, "1": 5} and man["null_signal"] is True
    run(capsys, "generate", "--count", "10", "--delta", "0", "--seed", "3", "--out", str(tmp_path / "b"),
        "--fmri-dims", "4x8x8x8", "--mri-dims", "8x8x8")
    for f in (tmp_path / "a").iterdir():
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()


def test_generate_unwritable(capsys, tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    code, _, err = run(capsys, "generate", "--count", "2", "--out", str(blocker / "sub"))
    assert code == 3 and "file" in err


def test_output_override(capsys, tmp_path, monkeypatch):
    monkeypatch.setenv("VOLNET_OUTPUT_DIR", str(tmp_path / "ci"))
    code, _, _ = run(capsys, "generate", "--count", "2", "--out", str(tmp_path / "ignored"),
                     "--fmri-dims", "2x6x6x6", "--mri-dims", "6x6x6")
    assert code == 0 and (tmp_path / "ci" / "manifest.json").is_file()
    assert not (tmp_path / "ignored").exists()


def test_train_writes_artifacts(capsys, tmp_path):
    path, cfg = toy_config(tmp_path, model={"kind": "mm-gru", "scale": "toy"},
                           train={"epochs": 10, "repeats": 1, "lr": 1e-3})
    code, out, _ = run(capsys, "train", "--config", str(path))
    assert code == 0
    out_dir = tmp_path / "run"
    rows = list(csv.DictReader(open(out_dir / "metrics.csv")))
    assert len(rows) == 10 and list(rows[0]) == ["run_id", "epoch", "train_loss", "train_acc", "val_loss",
                                                 "val_acc", "wall_time_s"]
    summary = json.loads((out_dir / "summary.json").read_text())
    assert summary["lr"] == 1e-3 and len(summary["per_epoch_mean"]) == 10
    assert json.loads((out_dir / "config.json").read_text()) == cfg
    assert (out_dir / "checkpoints" / "run0" / "manifest.json").is_file()


def test_train_deterministic(capsys, tmp_path):
    path, _ = toy_config(tmp_path)
    for name in ("one", "two"):
        cfg = json.loads(path.read_text())
        cfg["output_dir"] = str(tmp_path / name)
        path.write_text(json.dumps(cfg))
        assert run(capsys, "train", "--config", str(path), "--threads", "1")[0] == 0
    a, b = tmp_path / "one", tmp_path / "two"
    files = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file() and p.name != "config.json")
    assert files
    for rel in files:
        assert (a / rel).read_bytes() == (b / rel).read_bytes(), rel


def test_unknown_key(capsys, tmp_path):
    path, _ = toy_config(tmp_path, train={"epochs": 1, "learning_rate": 1})
    code, _, err = run(capsys, "train", "--config", str(path))
    assert code == 2 and "learning_rate" in err


def test_bad_json_and_missing_config(capsys, tmp_path):
    p = tmp_path / "x.json"
    p.write_text("{nope")
    assert run(capsys, "train", "--config", str(p))[0] == 2
    assert run(capsys, "train", "--config", str(tmp_path / "none.json"))[0] == 2


def test_missing_labels_csv(capsys, tmp_path):
    (tmp_path / "nii").mkdir()
    missing = tmp_path / "labels.csv"
    path, _ = toy_config(tmp_path, data={"nifti_dir": str(tmp_path / "nii"), "labels_csv": str(missing)})
    code, _, err = run(capsys, "train", "--config", str(path))
    assert code == 3 and str(missing) in err
    assert not (tmp_path / "run").exists()


def test_train_on_nifti(capsys, tmp_path):
    nii = tmp_path / "nii"
    nii.mkdir()
    rng = np.random.default_rng(0)
    lines = ["subject_id,label"]
    for i in range(6):
        write_nifti(rng.standard_normal((3, 9, 9, 9)).astype(np.float32), nii / f"sub{i}.nii.gz")
        lines.append(f"sub{i},{i % 2}")
    (tmp_path / "labels.csv").write_text("\n".join(lines) + "\n")
    path, _ = toy_config(tmp_path, data={"nifti_dir": str(nii), "labels_csv": str(tmp_path / "labels.csv")},
                         train={"epochs": 1, "repeats": 1})
    assert run(capsys, "train", "--config", str(path))[0] == 0


def test_all_repeats_non_finite(capsys, tmp_path, monkeypatch):
    from volnet import training

    def boom(*a, **k):
        raise NonFiniteLoss("loss is nan")

    monkeypatch.setattr(training, "train_step", boom)
    path, _ = toy_config(tmp_path)
    code, _, err = run(capsys, "train", "--config", str(path))
    assert code == 4 and "non-finite" in err


def test_evaluate(capsys, tmp_path):
    path, _ = toy_config(tmp_path)
    run(capsys, "train", "--config", str(path))
    ckpt = tmp_path / "run" / "checkpoints" / "run0"
    code, out, _ = run(capsys, "evaluate", "--checkpoint", str(ckpt), "--config", str(path))
    assert code == 0
    first = json.loads(out)
    assert 0 <= first["val_acc"] <= 1
    assert json.loads(run(capsys, "evaluate", "--checkpoint", str(ckpt), "--config", str(path))[1]) == first
    assert run(capsys, "evaluate", "--checkpoint", str(tmp_path), "--config", str(path))[0] == 3


def test_gradcheck_passes(capsys):
    code, out, _ = run(capsys, "gradcheck", "sm-gru", "--seed", "7")
    assert code == 0 and out.strip().splitlines()[-1].startswith("PASS")
    assert "fmri.block1.conv" in out


def test_gradcheck_catches_wrong_conv_backward(capsys, monkeypatch):
    real = L._conv3d_backward

    def corrupted(x, kernel, gout):
        gx, gk, gb = real(x, kernel, gout)
        return gx, gk * 1.1, gb

    monkeypatch.setattr(L, "_conv3d_backward", corrupted)
    code, out, err = run(capsys, "gradcheck", "sm-gru", "--seed", "7")
    assert code == 5
    assert "FAIL" in out and ".conv" in err
