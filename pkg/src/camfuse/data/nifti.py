"""Minimal NIfTI-1 single-file reader and writer.

Only uncompressed ``.nii`` files (magic ``n+1``) and header/image pairs
(magic ``ni1``) with uint8, int16 or float32 voxels are handled.  Voxel
arrays are returned indexed ``[i, j, k]`` with ``i`` varying fastest on
disk, as the format prescribes.
"""
from __future__ import annotations

import os
import struct
from dataclasses import dataclass

import numpy as np

HEADER_SIZE = 348

DATATYPES = {
    2: np.dtype(np.uint8),
    4: np.dtype(np.int16),
    16: np.dtype(np.float32),
}
DATATYPE_CODES = {v: k for k, v in DATATYPES.items()}

# byte offsets of the fields we read or write
OFF_DIM = 40
OFF_DATATYPE = 70
OFF_BITPIX = 72
OFF_PIXDIM = 76
OFF_VOX_OFFSET = 108
OFF_SCL_SLOPE = 112
OFF_SCL_INTER = 116
OFF_QFORM = 252
OFF_MAGIC = 344


class NiftiError(ValueError):
    """Base class for unreadable NIfTI input."""


class NiftiHeaderError(NiftiError):
    pass


class NiftiMagicError(NiftiError):
    pass


class NiftiDatatypeError(NiftiError):
    pass


class NiftiTruncatedError(NiftiError):
    pass


@dataclass
class NiftiImage:
    data: np.ndarray
    voxel_size: tuple[float, float, float]
    datatype: int
    scl_slope: float
    scl_inter: float
    endian: str


def _endianness(raw: bytes) -> str:
    for endian in ("<", ">"):
        if struct.unpack_from(endian + "i", raw, 0)[0] == HEADER_SIZE:
            return endian
    raise NiftiHeaderError(f"sizeof_hdr is not {HEADER_SIZE} in either byte order")


def read_header(raw: bytes) -> dict:
    if len(raw) < HEADER_SIZE:
        raise NiftiTruncatedError(f"header has {len(raw)} bytes, expected {HEADER_SIZE}")
    e = _endianness(raw)
    magic = raw[OFF_MAGIC:OFF_MAGIC + 4]
    if magic not in (b"n+1\x00", b"ni1\x00"):
        raise NiftiMagicError(f"bad magic {magic!r}; expected b'n+1\\x00' or b'ni1\\x00'")
    dim = struct.unpack_from(e + "8h", raw, OFF_DIM)
    return {
        "endian": e,
        "dim": dim,
        "datatype": struct.unpack_from(e + "h", raw, OFF_DATATYPE)[0],
        "bitpix": struct.unpack_from(e + "h", raw, OFF_BITPIX)[0],
        "pixdim": struct.unpack_from(e + "8f", raw, OFF_PIXDIM),
        "vox_offset": struct.unpack_from(e + "f", raw, OFF_VOX_OFFSET)[0],
        "scl_slope": struct.unpack_from(e + "f", raw, OFF_SCL_SLOPE)[0],
        "scl_inter": struct.unpack_from(e + "f", raw, OFF_SCL_INTER)[0],
        "magic": magic,
    }


def read_nifti(path: str | os.PathLike) -> NiftiImage:
    """Read a 3-D volume; intensities are scaled by ``scl_slope``/``scl_inter`` when set."""
    with open(path, "rb") as fh:
        raw = fh.read()
    hdr = read_header(raw)
    ndim = hdr["dim"][0]
    if not 1 <= ndim <= 7:
        raise NiftiHeaderError(f"dim[0]={ndim} out of range")
    shape = tuple(int(d) for d in hdr["dim"][1:1 + ndim])
    # trailing singleton dims (e.g. a 4-D file with one volume) collapse to 3-D
    while len(shape) > 3 and shape[-1] == 1:
        shape = shape[:-1]
    if any(d < 1 for d in shape):
        raise NiftiHeaderError(f"non-positive extent in dim {hdr['dim']}")
    if hdr["datatype"] not in DATATYPES:
        raise NiftiDatatypeError(f"unsupported datatype code {hdr['datatype']}")
    dtype = DATATYPES[hdr["datatype"]].newbyteorder(hdr["endian"])
    count = int(np.prod(shape))
    if hdr["magic"] == b"n+1\x00":
        payload, offset = raw, int(hdr["vox_offset"])
        if offset < HEADER_SIZE:
            raise NiftiHeaderError(f"vox_offset {offset} inside the header")
    else:
        img = os.path.splitext(os.fspath(path))[0] + ".img"
        with open(img, "rb") as fh:
            payload = fh.read()
        offset = int(hdr["vox_offset"])
    need = offset + count * dtype.itemsize
    if len(payload) < need:
        raise NiftiTruncatedError(f"voxel payload truncated: {len(payload)} bytes, need {need}")
    flat = np.frombuffer(payload, dtype=dtype, count=count, offset=offset)
    data = flat.reshape(shape, order="F").astype(np.float32)
    slope, inter = hdr["scl_slope"], hdr["scl_inter"]
    if slope != 0 and np.isfinite(slope):
        data = data * np.float32(slope) + np.float32(inter)
    pix = hdr["pixdim"]
    return NiftiImage(
        data=np.ascontiguousarray(data),
        voxel_size=(float(pix[1]), float(pix[2]), float(pix[3])),
        datatype=hdr["datatype"],
        scl_slope=float(slope),
        scl_inter=float(inter),
        endian=hdr["endian"],
    )


def load_volume(path: str | os.PathLike) -> np.ndarray:
    """Voxel data as a ``1 x D x H x W`` float32 array."""
    return read_nifti(path).data[None]


def write_nifti(
    path: str | os.PathLike,
    data: np.ndarray,
    voxel_size=(1.0, 1.0, 1.0),
    dtype=np.float32,
    scl_slope: float = 0.0,
    scl_inter: float = 0.0,
    endian: str = "<",
) -> None:
    """Write a single-file NIfTI-1 volume (stored values are written as given)."""
    data = np.asarray(data)
    if data.ndim == 4 and data.shape[0] == 1:
        data = data[0]
    if data.ndim != 3:
        raise ValueError(f"expected a 3-D volume, got shape {data.shape}")
    dt = np.dtype(dtype)
    if dt not in DATATYPE_CODES:
        raise NiftiDatatypeError(f"cannot write dtype {dt}")
    hdr = bytearray(HEADER_SIZE)
    struct.pack_into(endian + "i", hdr, 0, HEADER_SIZE)
    struct.pack_into(endian + "8h", hdr, OFF_DIM, 3, *data.shape, 1, 1, 1, 1)
    struct.pack_into(endian + "h", hdr, OFF_DATATYPE, DATATYPE_CODES[dt])
    struct.pack_into(endian + "h", hdr, OFF_BITPIX, dt.itemsize * 8)
    struct.pack_into(endian + "8f", hdr, OFF_PIXDIM, 1.0, *voxel_size, 0, 0, 0, 0)
    struct.pack_into(endian + "f", hdr, OFF_VOX_OFFSET, 352.0)
    struct.pack_into(endian + "f", hdr, OFF_SCL_SLOPE, scl_slope)
    struct.pack_into(endian + "f", hdr, OFF_SCL_INTER, scl_inter)
    hdr[OFF_MAGIC:OFF_MAGIC + 4] = b"n+1\x00"
    body = np.asarray(data, dtype=dt.newbyteorder(endian)).tobytes(order="F")
    with open(path, "wb") as fh:
        fh.write(bytes(hdr))
        fh.write(b"\x00" * 4)  # empty extension flag
        fh.write(body)
