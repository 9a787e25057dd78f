"""Minimal NIfTI-1 reader/writer.

Covers the subset of the format this toolkit produces and consumes:
single-file ``.nii`` / ``.nii.gz`` images, 3D or 4D, scalar datatypes,
sform/qform affines, and scl_slope/scl_inter rescaling. Data are returned
in Fortran voxel order as (X, Y, Z[, G]) arrays.
"""

from __future__ import annotations

import gzip
import struct
from pathlib import Path

import numpy as np

from .errors import LoadError

HEADER_SIZE = 348
_MAGIC_SINGLE = b"n+1\x00"

# NIfTI-1 datatype code -> numpy dtype
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
_DTYPE_CODES = {np.dtype(v): k for k, v in _DTYPES.items()}


def _read_bytes(path: Path) -> bytes:
    with open(path, "rb") as fh:
        head = fh.read(2)
        fh.seek(0)
        if head == b"\x1f\x8b":
            return gzip.decompress(fh.read())
        return fh.read()


def _quaternion_affine(hdr: dict) -> np.ndarray:
    b, c, d = hdr["quatern_b"], hdr["quatern_c"], hdr["quatern_d"]
    a = np.sqrt(max(0.0, 1.0 - (b * b + c * c + d * d)))
    rot = np.array(
        [
            [a * a + b * b - c * c - d * d, 2 * (b * c - a * d), 2 * (b * d + a * c)],
            [2 * (b * c + a * d), a * a + c * c - b * b - d * d, 2 * (c * d - a * b)],
            [2 * (b * d - a * c), 2 * (c * d + a * b), a * a + d * d - b * b - c * c],
        ]
    )
    qfac = -1.0 if hdr["pixdim"][0] < 0 else 1.0
    scales = np.array([hdr["pixdim"][1], hdr["pixdim"][2], hdr["pixdim"][3] * qfac])
    affine = np.eye(4)
    affine[:3, :3] = rot * scales
    affine[:3, 3] = [hdr["qoffset_x"], hdr["qoffset_y"], hdr["qoffset_z"]]
    return affine


def _parse_header(raw: bytes, path: Path) -> dict:
    if len(raw) < HEADER_SIZE:
        raise LoadError(f"{path}: file too short for a NIfTI-1 header")
    order = "<"
    (sizeof_hdr,) = struct.unpack_from("<i", raw, 0)
    if sizeof_hdr != HEADER_SIZE:
        order = ">"
        (sizeof_hdr,) = struct.unpack_from(">i", raw, 0)
        if sizeof_hdr != HEADER_SIZE:
            raise LoadError(f"{path}: not a NIfTI-1 file (sizeof_hdr={sizeof_hdr})")

    dim = struct.unpack_from(f"{order}8h", raw, 40)
    datatype, bitpix = struct.unpack_from(f"{order}2h", raw, 70)
    pixdim = struct.unpack_from(f"{order}8f", raw, 76)
    (vox_offset,) = struct.unpack_from(f"{order}f", raw, 108)
    scl_slope, scl_inter = struct.unpack_from(f"{order}2f", raw, 112)
    qform_code, sform_code = struct.unpack_from(f"{order}2h", raw, 252)
    quatern = struct.unpack_from(f"{order}6f", raw, 256)
    srow_x = struct.unpack_from(f"{order}4f", raw, 280)
    srow_y = struct.unpack_from(f"{order}4f", raw, 296)
    srow_z = struct.unpack_from(f"{order}4f", raw, 312)
    magic = raw[344:348]

    if magic not in (_MAGIC_SINGLE, b"ni1\x00"):
        raise LoadError(f"{path}: bad magic {magic!r}")
    if not 1 <= dim[0] <= 7:
        raise LoadError(f"{path}: invalid ndim {dim[0]}")
    if datatype not in _DTYPES:
        raise LoadError(f"{path}: unsupported datatype code {datatype}")

    return {
        "order": order,
        "dim": dim,
        "datatype": datatype,
        "bitpix": bitpix,
        "pixdim": pixdim,
        "vox_offset": int(vox_offset),
        "scl_slope": scl_slope,
        "scl_inter": scl_inter,
        "qform_code": qform_code,
        "sform_code": sform_code,
        "quatern_b": quatern[0],
        "quatern_c": quatern[1],
        "quatern_d": quatern[2],
        "qoffset_x": quatern[3],
        "qoffset_y": quatern[4],
        "qoffset_z": quatern[5],
        "srow": np.array([srow_x, srow_y, srow_z]),
    }


def read_nifti(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Read a 3D/4D NIfTI-1 image.

    Returns ``(data, voxel_size, affine)`` where data is float64 with the
    header's scl rescaling applied and shape (X, Y, Z) or (X, Y, Z, G).
    """
    path = Path(path)
    if not path.exists():
        raise LoadError(f"{path}: no such file")
    raw = _read_bytes(path)
    hdr = _parse_header(raw, path)

    ndim = hdr["dim"][0]
    if ndim not in (3, 4):
        raise LoadError(f"{path}: expected 3D or 4D image, got {ndim}D")
    shape = tuple(int(n) for n in hdr["dim"][1 : ndim + 1])
    if any(n < 1 for n in shape):
        raise LoadError(f"{path}: non-positive dimension in {shape}")

    dtype = np.dtype(_DTYPES[hdr["datatype"]]).newbyteorder(hdr["order"])
    count = int(np.prod(shape))
    offset = max(hdr["vox_offset"], HEADER_SIZE)
    need = offset + count * dtype.itemsize
    if len(raw) < need:
        raise LoadError(f"{path}: truncated data section ({len(raw)} < {need} bytes)")
    data = np.frombuffer(raw, dtype=dtype, count=count, offset=offset)
    data = data.reshape(shape, order="F").astype(np.float64)

    slope, inter = hdr["scl_slope"], hdr["scl_inter"]
    if np.isfinite(slope) and slope not in (0.0, 1.0):
        data = data * slope + inter
    elif np.isfinite(slope) and slope == 1.0 and np.isfinite(inter) and inter != 0.0:
        data = data + inter

    if hdr["sform_code"] > 0:
        affine = np.eye(4)
        affine[:3, :] = hdr["srow"]
    elif hdr["qform_code"] > 0:
        affine = _quaternion_affine(hdr)
    else:
        affine = np.diag([hdr["pixdim"][1], hdr["pixdim"][2], hdr["pixdim"][3], 1.0])

    voxel_size = np.abs(np.array(hdr["pixdim"][1:4], dtype=float))
    return data, voxel_size, affine


def write_nifti(path, data: np.ndarray, voxel_size=None, affine=None) -> None:
    """Write a 3D/4D array as a single-file NIfTI-1 image (float32 payload)."""
    path = Path(path)
    data = np.asarray(data)
    if data.ndim not in (3, 4):
        raise ValueError(f"expected 3D or 4D array, got {data.ndim}D")
    if voxel_size is None:
        voxel_size = np.ones(3)
    voxel_size = np.asarray(voxel_size, dtype=float)
    if affine is None:
        affine = np.diag([voxel_size[0], voxel_size[1], voxel_size[2], 1.0])
    affine = np.asarray(affine, dtype=float)

    out = data.astype(np.float32)
    hdr = bytearray(HEADER_SIZE)
    struct.pack_into("<i", hdr, 0, HEADER_SIZE)
    dim = [out.ndim] + list(out.shape) + [1] * (7 - out.ndim)
    struct.pack_into("<8h", hdr, 40, *dim)
    struct.pack_into("<2h", hdr, 70, _DTYPE_CODES[np.dtype(np.float32)], 32)
    pixdim = [1.0, voxel_size[0], voxel_size[1], voxel_size[2], 1.0, 1.0, 1.0, 1.0]
    struct.pack_into("<8f", hdr, 76, *pixdim)
    struct.pack_into("<f", hdr, 108, 352.0)  # vox_offset
    struct.pack_into("<2f", hdr, 112, 1.0, 0.0)  # scl_slope/inter
    struct.pack_into("<2h", hdr, 252, 0, 1)  # qform off, sform on
    struct.pack_into("<4f", hdr, 280, *affine[0, :])
    struct.pack_into("<4f", hdr, 296, *affine[1, :])
    struct.pack_into("<4f", hdr, 312, *affine[2, :])
    hdr[344:348] = _MAGIC_SINGLE

    payload = bytes(hdr) + b"\x00" * 4 + out.tobytes(order="F")
    if str(path).endswith(".gz"):
        # mtime pinned so identical volumes produce identical files
        payload = gzip.compress(payload, mtime=0)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(payload)
