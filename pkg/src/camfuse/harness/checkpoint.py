"""Binary checkpoint format.

Layout (little endian)::

    b"CAMF" | u32 version | u32 header length | JSON header | float32 payload

The JSON header holds the run configuration, the model flags, the RNG
state and the tensor table (name and shape, in payload order).
"""
from __future__ import annotations

import json
import struct

import numpy as np

from ..model import FusionNet

MAGIC = b"CAMF"
VERSION = 1


class CheckpointError(ValueError):
    pass


def model_spec(model: FusionNet) -> dict:
    return {
        "use_tca": model.use_tca,
        "use_ccfe": model.use_ccfe,
        "use_ssff": model.use_ssff,
        "n_prototypes": model.lpr_m.R.shape[0] if model.lpr_m is not None else 64,
        "block_norm": model.shared.afe.blocks[0].norm1.kind,
    }


def save_checkpoint(model: FusionNet, path, config: dict | None = None, rng_state: dict | None = None) -> None:
    state = model.state_dict()
    table = [{"name": k, "shape": list(v.shape)} for k, v in state.items()]
    header = json.dumps(
        {"config": config or {}, "model": model_spec(model), "rng_state": rng_state, "tensors": table}
    ).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(header)))
        fh.write(header)
        for v in state.values():
            fh.write(np.ascontiguousarray(v, dtype="<f4").tobytes())


def load_checkpoint(path) -> tuple[FusionNet, dict, dict | None]:
    """Return ``(model, config, rng_state)``."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != MAGIC:
        raise CheckpointError(f"not a checkpoint: magic {raw[:4]!r}, expected {MAGIC!r}")
    if len(raw) < 12:
        raise CheckpointError("checkpoint truncated in the preamble")
    version, hlen = struct.unpack_from("<II", raw, 4)
    if version != VERSION:
        raise CheckpointError(f"checkpoint version {version} is not supported (reader version {VERSION})")
    header = json.loads(raw[12:12 + hlen].decode())
    model = FusionNet(**header["model"])
    offset = 12 + hlen
    state = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape))
        if offset + 4 * count > len(raw):
            raise CheckpointError(f"payload truncated at tensor {entry['name']}")
        state[entry["name"]] = np.frombuffer(raw, dtype="<f4", count=count, offset=offset).reshape(shape).astype(np.float32)
        offset += 4 * count
    model.load_state_dict(state)
    return model, header["config"], header["rng_state"]
