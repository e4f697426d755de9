"""Minimal NIfTI-1 single-file (.nii / .nii.gz) reader and writer.

Covers the subset this package needs: 3D scalar volumes, voxel spacing from
pixdim, little/big endian, optional gzip, and the common scalar datatypes.
No orientation handling beyond writing a diagonal sform.
"""

from __future__ import annotations

import gzip
import struct
from pathlib import Path

import numpy as np

HDR_SIZE = 348
MAGIC = b"n+1\x00"

# NIfTI-1 datatype codes <-> numpy dtypes
_DTYPES = {
    2: np.uint8,
    4: np.int16,
    8: np.int32,
    16: np.float32,
    64: np.float64,
    256: np.int8,
    512: np.uint16,
    768: np.uint32,
}
_CODES = {np.dtype(v): k for k, v in _DTYPES.items()}


class NiftiError(ValueError):
    pass


def _open(path, mode):
    path = str(path)
    if path.endswith(".gz"):
        return gzip.open(path, mode)
    return open(path, mode)


def read(path):
    """Read a 3D NIfTI-1 file.

    Returns (data, spacing) where data has shape (nx, ny, nz) with x the
    fastest-varying on-disk axis, and spacing is (sx, sy, sz) in mm.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such volume file: {path}")
    with _open(path, "rb") as f:
        raw = f.read()
    if len(raw) < HDR_SIZE + 4:
        raise NiftiError(f"truncated NIfTI header in {path}")

    end = "<"
    (sizeof_hdr,) = struct.unpack_from("<i", raw, 0)
    if sizeof_hdr != HDR_SIZE:
        end = ">"
        (sizeof_hdr,) = struct.unpack_from(">i", raw, 0)
        if sizeof_hdr != HDR_SIZE:
            raise NiftiError(f"not a NIfTI-1 file: {path}")

    dim = struct.unpack_from(end + "8h", raw, 40)
    datatype, _bitpix = struct.unpack_from(end + "2h", raw, 70)
    pixdim = struct.unpack_from(end + "8f", raw, 76)
    (vox_offset,) = struct.unpack_from(end + "f", raw, 108)
    scl_slope, scl_inter = struct.unpack_from(end + "2f", raw, 112)

    ndim = dim[0]
    if ndim != 3:
        raise NiftiError(f"non-3D image (dim[0]={ndim}) in {path}")
    shape = tuple(int(d) for d in dim[1:4])
    if datatype not in _DTYPES:
        raise NiftiError(f"unsupported NIfTI datatype code {datatype} in {path}")
    dtype = np.dtype(_DTYPES[datatype]).newbyteorder(end)

    n = int(np.prod(shape))
    offset = int(vox_offset) if vox_offset else HDR_SIZE + 4
    body = raw[offset : offset + n * dtype.itemsize]
    if len(body) != n * dtype.itemsize:
        raise NiftiError(f"truncated data section in {path}")
    data = np.frombuffer(body, dtype=dtype).reshape(shape, order="F")
    data = data.astype(dtype.newbyteorder("="))

    if scl_slope not in (0.0, 1.0) or scl_inter != 0.0:
        slope = scl_slope if scl_slope != 0.0 else 1.0
        data = data * slope + scl_inter

    spacing = tuple(float(abs(p)) for p in pixdim[1:4])
    if any(s <= 0 for s in spacing):
        raise NiftiError(f"non-positive pixdim {spacing} in {path}")
    return data, spacing


def write(path, data, spacing):
    """Write a 3D array as a NIfTI-1 single file; spacing goes into pixdim."""
    data = np.asarray(data)
    if data.ndim != 3:
        raise NiftiError(f"can only write 3D data, got shape {data.shape}")
    dt = np.dtype(data.dtype).newbyteorder("=")
    if dt not in _CODES:
        raise NiftiError(f"unsupported dtype for NIfTI write: {data.dtype}")

    hdr = bytearray(HDR_SIZE + 4)
    struct.pack_into("<i", hdr, 0, HDR_SIZE)
    struct.pack_into("<8h", hdr, 40, 3, *data.shape, 1, 1, 1, 1)
    struct.pack_into("<2h", hdr, 70, _CODES[dt], dt.itemsize * 8)
    struct.pack_into("<8f", hdr, 76, 1.0, *(float(s) for s in spacing), 1.0, 1.0, 1.0, 1.0)
    struct.pack_into("<f", hdr, 108, float(HDR_SIZE + 4))
    struct.pack_into("<2f", hdr, 112, 1.0, 0.0)
    struct.pack_into("<b", hdr, 123, 2)  # xyzt_units: mm
    struct.pack_into("<2h", hdr, 252, 0, 1)  # qform off, sform scaling-only
    struct.pack_into("<4f", hdr, 280, float(spacing[0]), 0.0, 0.0, 0.0)
    struct.pack_into("<4f", hdr, 296, 0.0, float(spacing[1]), 0.0, 0.0)
    struct.pack_into("<4f", hdr, 312, 0.0, 0.0, float(spacing[2]), 0.0)
    struct.pack_into("<4s", hdr, 344, MAGIC)

    with _open(path, "wb") as f:
        f.write(bytes(hdr))
        f.write(np.asfortranarray(data).tobytes(order="F"))
