import gzip
import struct
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from volnet.data import nifti as N
from volnet.errors import BadMagic, TruncatedFile, UnsupportedDatatype

DATA = Path(__file__).parent / "data"
GOLDEN = ["golden_le.nii", "golden_be.nii", "golden_le.nii.gz", "golden_be.nii.gz"]


def expected_golden():
    # file order is x fastest, so index [t, z, y, x] = x + 2y + 4z
    return np.arange(8, dtype=np.float64).reshape(1, 2, 2, 2)


@pytest.mark.parametrize("name", GOLDEN)
def test_golden_reads(name):
    hdr, vol = N.read_nifti(DATA / name)
    assert vol.shape == (1, 2, 2, 2)
    np.testing.assert_array_equal(vol.data, expected_golden())
    assert hdr.sizeof_hdr == 348 and hdr.datatype == 16
    assert hdr.endian == (">" if "_be" in name else "<")


@pytest.mark.parametrize("name", GOLDEN)
def test_golden_round_trip_bitwise(name, tmp_path):
    hdr, vol = N.read_nifti(DATA / name)
    out = tmp_path / name
    N.write_nifti(vol.data, out, datatype=16, endian=hdr.endian)
    raw = out.read_bytes()
    if name.endswith(".gz"):
        raw = gzip.decompress(raw)
    golden = (DATA / name).read_bytes()
    if name.endswith(".gz"):
        golden = gzip.decompress(golden)
    assert raw[352:] == golden[352:]
    _, again = N.read_nifti(out)
    assert again.data.tobytes() == vol.data.tobytes()


def test_explicit_gz_flag():
    raw = (DATA / "golden_le.nii.gz").read_bytes()
    _, vol = N.read_nifti(raw, gz=True)
    np.testing.assert_array_equal(vol.data, expected_golden())


def test_bad_magic():
    raw = bytearray((DATA / "golden_le.nii").read_bytes())
    raw[344:348] = b"xyz\x00"
    with pytest.raises(BadMagic):
        N.read_nifti(bytes(raw))


def test_pair_file_rejected():
    raw = bytearray((DATA / "golden_le.nii").read_bytes())
    raw[344:348] = b"ni1\x00"
    with pytest.raises(BadMagic, match="two-file"):
        N.read_nifti(bytes(raw))


def test_nifti2_rejected():
    raw = bytearray(600)
    struct.pack_into("<i", raw, 0, 540)
    with pytest.raises(BadMagic):
        N.read_nifti(bytes(raw))


def test_unsupported_datatype():
    raw = bytearray((DATA / "golden_le.nii").read_bytes())
    struct.pack_into("<h", raw, 70, 32)  # complex64
    with pytest.raises(UnsupportedDatatype):
        N.read_nifti(bytes(raw))


def test_truncated_payload():
    raw = (DATA / "golden_le.nii").read_bytes()[:-4]
    with pytest.raises(TruncatedFile):
        N.read_nifti(raw)


def test_truncated_gzip():
    raw = (DATA / "golden_le.nii.gz").read_bytes()[:-10]
    with pytest.raises(TruncatedFile):
        N.read_nifti(raw)


def test_scaling_applied():
    payload = N.encode_nifti(np.arange(8).reshape(2, 2, 2), datatype=4, scl_slope=2.0, scl_inter=1.0)
    _, vol = N.read_nifti(payload)
    np.testing.assert_array_equal(vol.data.reshape(-1), np.arange(8) * 2.0 + 1.0)


@given(st.sampled_from([2, 4, 8, 16, 64]), st.sampled_from(["<", ">"]), st.integers(1, 3), st.integers(1, 3),
       st.integers(1, 3), st.integers(1, 3), st.integers(0, 2**31))
def test_round_trip_property(code, endian, t, d, h, w, seed):
    r = np.random.default_rng(seed)
    dtype = N.DATATYPES[code]
    if np.issubdtype(dtype, np.integer):
        info = np.iinfo(dtype)
        arr = r.integers(max(info.min, -1000), min(info.max, 1000), (t, d, h, w)).astype(dtype)
    else:
        arr = r.standard_normal((t, d, h, w)).astype(dtype)
    hdr, vol = N.read_nifti(N.encode_nifti(arr, datatype=code, endian=endian))
    assert hdr.endian == endian
    np.testing.assert_array_equal(vol.data, arr.astype(np.float64).reshape(vol.shape))


def test_4d_axis_order():
    arr = np.arange(2 * 3 * 4 * 5, dtype=np.float32).reshape(2, 3, 4, 5)
    hdr, vol = N.read_nifti(N.encode_nifti(arr))
    assert tuple(hdr.dim[:5]) == (4, 5, 4, 3, 2)
    np.testing.assert_array_equal(vol.data, arr)
