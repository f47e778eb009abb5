"""Regenerate the NIfTI golden files. Written with struct only, independent of volnet.

A 2x2x2 float32 volume holding 0..7 in file (x-fastest) order, with a
348-byte header, 4 bytes of extension padding, and vox_offset 352.
"""
import gzip
import struct
from pathlib import Path

HERE = Path(__file__).parent


def header(e):
    h = bytearray(352)
    struct.pack_into(e + "i", h, 0, 348)
    struct.pack_into(e + "8h", h, 40, 3, 2, 2, 2, 1, 1, 1, 1)
    struct.pack_into(e + "h", h, 70, 16)
    struct.pack_into(e + "h", h, 72, 32)
    struct.pack_into(e + "8f", h, 76, 1, 1, 1, 1, 1, 1, 1, 1)
    struct.pack_into(e + "f", h, 108, 352.0)
    h[344:348] = b"n+1\x00"
    return bytes(h)


def main():
    for tag, e in (("le", "<"), ("be", ">")):
        raw = header(e) + struct.pack(e + "8f", *range(8))
        (HERE / f"golden_{tag}.nii").write_bytes(raw)
        (HERE / f"golden_{tag}.nii.gz").write_bytes(gzip.compress(raw, mtime=0))


if __name__ == "__main__":
    main()
