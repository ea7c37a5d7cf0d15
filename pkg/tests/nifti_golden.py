"""Byte-level NIfTI-1 files assembled field by field, independent of the package writer."""
import struct

import numpy as np


def build(shape, values, datatype=16, bitpix=32, fmt="f", endian="<", magic=b"n+1\x00",
          pixdim=(1.0, 1.0, 1.0), slope=0.0, inter=0.0, vox_offset=352, truncate=0):
    hdr = bytearray(348)
    struct.pack_into(endian + "i", hdr, 0, 348)                      # sizeof_hdr
    struct.pack_into(endian + "8h", hdr, 40, 3, *shape, 1, 1, 1, 1)  # dim
    struct.pack_into(endian + "h", hdr, 70, datatype)
    struct.pack_into(endian + "h", hdr, 72, bitpix)
    struct.pack_into(endian + "8f", hdr, 76, 1.0, *pixdim, 0, 0, 0, 0)
    struct.pack_into(endian + "f", hdr, 108, float(vox_offset))
    struct.pack_into(endian + "f", hdr, 112, slope)
    struct.pack_into(endian + "f", hdr, 116, inter)
    hdr[344:348] = magic
    pad = b"\x00" * (vox_offset - 348)
    # x varies fastest on disk
    flat = [values[i, j, k] for k in range(shape[2]) for j in range(shape[1]) for i in range(shape[0])]
    body = struct.pack(endian + fmt * len(flat), *flat)
    raw = bytes(hdr) + pad + body
    return raw[: len(raw) - truncate] if truncate else raw
