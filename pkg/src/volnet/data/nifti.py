"""Single-file NIfTI-1 (.nii / .nii.gz) reader and writer.

Only the fields needed to recover voxel data are interpreted; orientation
(qform/sform) is carried through untouched on write and ignored on read.
Voxels are returned as ``(T, D, H, W)`` in C order, which is the file's
x-fastest layout read back to front: ``D = z``, ``H = y``, ``W = x``.
"""
from __future__ import annotations

import gzip
import io
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, Union

import numpy as np

from ..errors import BadMagic, TruncatedFile, UnsupportedDatatype
from ..tensor import Tensor

HEADER_SIZE = 348
DEFAULT_VOX_OFFSET = 352
GZIP_MAGIC = b"\x1f\x8b"

DATATYPES = {
    2: np.uint8,
    4: np.int16,
    8: np.int32,
    16: np.float32,
    64: np.float64,
}
DATATYPE_CODES = {np.dtype(v): k for k, v in DATATYPES.items()}

# (offset, struct code) of the interpreted header fields
_FIELDS = {
    "sizeof_hdr": (0, "i"),
    "dim": (40, "8h"),
    "datatype": (70, "h"),
    "bitpix": (72, "h"),
    "pixdim": (76, "8f"),
    "vox_offset": (108, "f"),
    "scl_slope": (112, "f"),
    "scl_inter": (116, "f"),
    "magic": (344, "4s"),
}


@dataclass
class NiftiHeader:
    dim: tuple
    datatype: int
    bitpix: int
    vox_offset: float = float(DEFAULT_VOX_OFFSET)
    scl_slope: float = 0.0
    scl_inter: float = 0.0
    magic: bytes = b"n+1\x00"
    sizeof_hdr: int = HEADER_SIZE
    pixdim: tuple = field(default=(1.0,) * 8)
    endian: str = "<"

    @property
    def rank(self) -> int:
        return self.dim[0]

    @property
    def shape_xyzt(self) -> tuple:
        return tuple(self.dim[1:1 + self.rank])


Source = Union[bytes, bytearray, str, Path, BinaryIO]


def _read_all(source: Source) -> bytes:
    if isinstance(source, (bytes, bytearray)):
        return bytes(source)
    if isinstance(source, (str, Path)):
        return Path(source).read_bytes()
    return source.read()


def parse_header(raw: bytes) -> NiftiHeader:
    if len(raw) < HEADER_SIZE:
        raise TruncatedFile(f"NIfTI header needs {HEADER_SIZE} bytes, got {len(raw)}")
    (le_size,) = struct.unpack_from("<i", raw, 0)
    (be_size,) = struct.unpack_from(">i", raw, 0)
    if le_size == HEADER_SIZE:
        endian = "<"
    elif be_size == HEADER_SIZE:
        endian = ">"
    elif 540 in (le_size, be_size):
        raise BadMagic("NIfTI-2 files are not supported")
    else:
        raise BadMagic(f"sizeof_hdr is {le_size}, expected {HEADER_SIZE}")
    vals = {k: struct.unpack_from(endian + code, raw, off) for k, (off, code) in _FIELDS.items()}
    magic = vals["magic"][0]
    if magic == b"ni1\x00":
        raise BadMagic("two-file NIfTI (.hdr/.img) is not supported; convert to single-file .nii")
    if magic != b"n+1\x00":
        raise BadMagic(f"bad NIfTI magic {magic!r}")
    return NiftiHeader(
        dim=vals["dim"],
        datatype=vals["datatype"][0],
        bitpix=vals["bitpix"][0],
        vox_offset=vals["vox_offset"][0],
        scl_slope=vals["scl_slope"][0],
        scl_inter=vals["scl_inter"][0],
        magic=magic,
        sizeof_hdr=HEADER_SIZE,
        pixdim=vals["pixdim"],
        endian=endian,
    )


def read_nifti(source: Source, gz: bool | None = None) -> tuple[NiftiHeader, Tensor]:
    """Parse a NIfTI-1 stream into its header and a ``(T, D, H, W)`` tensor.

    ``gz=None`` sniffs the gzip magic. Values are scaled by
    ``scl_slope``/``scl_inter`` when the slope is non-zero.
    """
    raw = _read_all(source)
    if gz or (gz is None and raw[:2] == GZIP_MAGIC):
        try:
            raw = gzip.decompress(raw)
        except (EOFError, OSError) as exc:
            raise TruncatedFile(f"gzip stream is damaged: {exc}") from exc
    hdr = parse_header(raw)
    if hdr.datatype not in DATATYPES:
        raise UnsupportedDatatype(f"datatype code {hdr.datatype} not supported "
                                  f"(supported: {sorted(DATATYPES)})")
    rank = hdr.rank
    if not 3 <= rank <= 4:
        raise UnsupportedDatatype(f"only 3D and 4D volumes are supported, dim[0]={rank}")
    dims = hdr.shape_xyzt
    if any(d < 1 for d in dims):
        raise UnsupportedDatatype(f"non-positive extent in dim {hdr.dim}")
    dtype = np.dtype(DATATYPES[hdr.datatype]).newbyteorder(hdr.endian)
    count = int(np.prod(dims))
    start = int(hdr.vox_offset)
    end = start + count * dtype.itemsize
    if len(raw) < end:
        raise TruncatedFile(f"voxel data needs {end} bytes, file has {len(raw)}")
    vox = np.frombuffer(raw, dtype=dtype, count=count, offset=start).astype(np.float64)
    slope, inter = hdr.scl_slope, hdr.scl_inter
    if slope != 0 and np.isfinite(slope):
        vox = vox * slope + inter
    nx, ny, nz = dims[:3]
    nt = dims[3] if rank == 4 else 1
    return hdr, Tensor(vox.reshape(nt, nz, ny, nx))


def encode_nifti(data, datatype: int = 16, endian: str = "<", scl_slope: float = 0.0,
                 scl_inter: float = 0.0, pixdim=None) -> bytes:
    """Serialise a ``(T, D, H, W)`` or ``(D, H, W)`` array as single-file NIfTI-1."""
    arr = np.asarray(data.data if isinstance(data, Tensor) else data)
    if arr.ndim == 3:
        arr = arr[None]
    if arr.ndim != 4:
        raise ValueError(f"expected (T, D, H, W) or (D, H, W), got shape {arr.shape}")
    if datatype not in DATATYPES:
        raise UnsupportedDatatype(f"datatype code {datatype} not supported")
    nt, nz, ny, nx = arr.shape
    rank = 4 if nt > 1 else 3
    dim = (rank, nx, ny, nz, nt if rank == 4 else 1, 1, 1, 1)
    dtype = np.dtype(DATATYPES[datatype]).newbyteorder(endian)
    hdr = bytearray(DEFAULT_VOX_OFFSET)
    e = endian
    struct.pack_into(e + "i", hdr, 0, HEADER_SIZE)
    struct.pack_into(e + "8h", hdr, 40, *dim)
    struct.pack_into(e + "h", hdr, 70, datatype)
    struct.pack_into(e + "h", hdr, 72, dtype.itemsize * 8)
    struct.pack_into(e + "8f", hdr, 76, *(pixdim or (1.0,) * 8))
    struct.pack_into(e + "f", hdr, 108, float(DEFAULT_VOX_OFFSET))
    struct.pack_into(e + "f", hdr, 112, scl_slope)
    struct.pack_into(e + "f", hdr, 116, scl_inter)
    struct.pack_into("4s", hdr, 344, b"n+1\x00")
    return bytes(hdr) + np.ascontiguousarray(arr, dtype=dtype).tobytes()


def write_nifti(data, path, gz: bool | None = None, **kw) -> None:
    path = Path(path)
    payload = encode_nifti(data, **kw)
    if gz or (gz is None and path.suffix == ".gz"):
        # mtime pinned so identical volumes give identical bytes
        buf = io.BytesIO()
        with gzip.GzipFile(fileobj=buf, mode="wb", mtime=0) as fh:
            fh.write(payload)
        payload = buf.getvalue()
    path.write_bytes(payload)
