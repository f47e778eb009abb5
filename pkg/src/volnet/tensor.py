"""Dense row-major tensor value type and its primitive operations.

Tensors are immutable: the wrapped array is marked read-only on
construction. Kernels elsewhere work on the raw ``ndarray`` (``t.data``)
and wrap results back into :class:`Tensor` at module boundaries.

Shapes are channels-last. A 5D fMRI sample is ``(T, D, H, W, C)``; a batch
axis, when present, comes first.
"""
from __future__ import annotations

import struct
from typing import BinaryIO, Iterable, Sequence

import numpy as np

from .errors import IndexOutOfRange, RankError, ShapeMismatch

MAX_RANK = 6

DTYPES = {"single": np.float32, "double": np.float64}

_BINARY = {
    "add": np.add,
    "sub": np.subtract,
    "mul": np.multiply,
    "div": np.divide,
    "max": np.maximum,
}


def _sigmoid(x):
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


_UNARY = {
    "relu": lambda x: np.maximum(x, 0),
    "sigmoid": _sigmoid,
    "tanh": np.tanh,
    "exp": np.exp,
    "log": np.log,
    "neg": np.negative,
}


def check_shape(dims: Iterable[int]) -> tuple[int, ...]:
    dims = tuple(int(d) for d in dims)
    if not 1 <= len(dims) <= MAX_RANK:
        raise RankError(f"rank must be in 1..{MAX_RANK}, got {len(dims)}")
    if any(d < 1 for d in dims):
        raise ShapeMismatch(f"all extents must be >= 1, got {dims}")
    return dims


class Tensor:
    """Immutable N-d real array (rank 1-6) with a precision tag."""

    __slots__ = ("data",)

    def __init__(self, data, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        check_shape(arr.shape)
        arr = np.ascontiguousarray(arr)
        if arr.flags.writeable:
            arr = arr.view()
            arr.flags.writeable = False
        self.data = arr

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self) -> str:
        return "single" if self.data.dtype == np.float32 else "double"

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeMismatch(f"item() needs a single element, shape is {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def __len__(self):
        return self.shape[0]

    def __eq__(self, other):
        if not isinstance(other, Tensor):
            return NotImplemented
        return self.shape == other.shape and np.array_equal(self.data, other.data)

    __hash__ = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype})"


def tensor(data, dtype: str = "double") -> Tensor:
    return Tensor(data, dtype=DTYPES[dtype])


def zeros(shape: Sequence[int], dtype: str = "double") -> Tensor:
    return Tensor(np.zeros(check_shape(shape), dtype=DTYPES[dtype]))


def elementwise(op: str, a: Tensor, b: Tensor) -> Tensor:
    fn = _BINARY[op]
    if a.shape != b.shape and b.size != 1:
        raise ShapeMismatch(f"{op}: shapes {a.shape} and {b.shape} differ and b is not scalar")
    rhs = b.data if a.shape == b.shape else b.data.reshape(())
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        return Tensor(fn(a.data, rhs).astype(a.data.dtype, copy=False))


def map_unary(op: str, a: Tensor) -> Tensor:
    fn = _UNARY[op]
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        return Tensor(fn(a.data))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if len(a.shape) != 2 or len(b.shape) != 2:
        raise RankError(f"matmul needs rank-2 operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"matmul inner dimensions differ: {a.shape} x {b.shape}")
    return Tensor(a.data @ b.data)


def reshape(a: Tensor, new: Sequence[int]) -> Tensor:
    new = check_shape(new)
    if int(np.prod(new)) != a.size:
        raise ShapeMismatch(f"cannot reshape {a.shape} into {new}")
    return Tensor(a.data.reshape(new))


def concat(a: Tensor, b: Tensor) -> Tensor:
    if len(a.shape) != 1 or len(b.shape) != 1:
        raise RankError(f"concat needs rank-1 operands, got {a.shape} and {b.shape}")
    return Tensor(np.concatenate([a.data, b.data]))


def slice_time(a: Tensor, t: int) -> Tensor:
    if len(a.shape) < 2:
        raise RankError("slice_time needs rank >= 2")
    if not 0 <= t < a.shape[0]:
        raise IndexOutOfRange(f"timestep {t} outside [0, {a.shape[0]})")
    return Tensor(a.data[t])


def stack(items: Sequence[Tensor]) -> Tensor:
    if not items:
        raise ShapeMismatch("stack of zero tensors")
    first = items[0].shape
    for it in items:
        if it.shape != first:
            raise ShapeMismatch(f"stack: {it.shape} != {first}")
    return Tensor(np.stack([it.data for it in items]))


def flat_index(shape: Sequence[int], idx: Sequence[int]) -> int:
    """Row-major linear offset of ``idx`` in ``shape``."""
    off = 0
    for extent, i in zip(shape, idx):
        off = off * extent + i
    return off


# debug dump: u32 rank, u32 extents[rank], f64 data[], little-endian

def write_dump(t: Tensor, fh: BinaryIO) -> None:
    fh.write(struct.pack(f"<I{len(t.shape)}I", len(t.shape), *t.shape))
    fh.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())


def read_dump(fh: BinaryIO, dtype: str = "double") -> Tensor:
    head = fh.read(4)
    if len(head) != 4:
        raise ShapeMismatch("truncated tensor dump header")
    (rank,) = struct.unpack("<I", head)
    if not 1 <= rank <= MAX_RANK:
        raise RankError(f"bad rank {rank} in tensor dump")
    dims = struct.unpack(f"<{rank}I", fh.read(4 * rank))
    count = int(np.prod(dims))
    payload = fh.read(8 * count)
    if len(payload) != 8 * count:
        raise ShapeMismatch("truncated tensor dump payload")
    arr = np.frombuffer(payload, dtype="<f8").reshape(dims)
    return Tensor(arr.astype(DTYPES[dtype]))


def save_tensor(t: Tensor, path) -> None:
    with open(path, "wb") as fh:
        write_dump(t, fh)


def load_tensor(path, dtype: str = "double") -> Tensor:
    with open(path, "rb") as fh:
        return read_dump(fh, dtype)
