import json

import numpy as np
import pytest

from volnet.checkpoint import load_checkpoint, save_checkpoint, snapshot
from volnet.errors import ShapeMismatch
from volnet.models import ModelSpec, build_model
from volnet.tensor import load_tensor

from helpers import arrays_equal


@pytest.mark.parametrize("kind", ["sm-gru", "mm-lstm"])
def test_round_trip(kind, tmp_path, rng):
    model = build_model(ModelSpec.toy(kind, seed=4))
    for v in model.state_arrays().values():
        v[...] += rng.standard_normal(v.shape)
    save_checkpoint(model, tmp_path)
    again = load_checkpoint(tmp_path)
    assert again.spec == model.spec
    assert arrays_equal(again.state_arrays(), model.state_arrays())


def test_single_precision_round_trip_is_exact(tmp_path):
    model = build_model(ModelSpec.desk("sm-lstm", seed=1))
    save_checkpoint(model, tmp_path)
    assert arrays_equal(load_checkpoint(tmp_path).state_arrays(), model.state_arrays())


def test_manifest_layout(tmp_path):
    model = build_model(ModelSpec.toy("mm-gru"))
    save_checkpoint(model, tmp_path)
    man = json.loads((tmp_path / "manifest.json").read_text())
    names = [l["name"] for l in man["layers"]]
    assert names[0] == "fmri.block1.conv" and names[-1] == "output.dense"
    gru = next(l for l in man["layers"] if l["name"] == "fmri.gru")
    assert gru["kind"] == "gru" and gru["params"]["W_c"] == [8, 24]
    t = load_tensor(tmp_path / "fmri.gru.W_c.bin")
    np.testing.assert_array_equal(t.data, model.params()["fmri.gru.W_c"])


def test_snapshot_is_a_copy():
    model = build_model(ModelSpec.toy("sm-gru"))
    snap = snapshot(model)
    model.params()["output.dense.bias"][...] = 9
    assert snap["output.dense.bias"][0] == 0


def test_shape_mismatch_detected(tmp_path):
    model = build_model(ModelSpec.toy("sm-gru"))
    save_checkpoint(model, tmp_path)
    man = json.loads((tmp_path / "manifest.json").read_text())
    man["layers"][-1]["params"]["weight"] = [9, 1]
    (tmp_path / "manifest.json").write_text(json.dumps(man))
    with pytest.raises(ShapeMismatch):
        load_checkpoint(tmp_path)
