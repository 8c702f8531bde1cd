"""Binary checkpoint container.

Layout: magic, little-endian uint32 header length, UTF-8 JSON header with
sorted keys, then the raw float64 buffers concatenated in header order. The
header carries arbitrary metadata plus the tensor directory (name, shape).
Files are written to a temp path and renamed into place, and contain no
timestamps: identical state gives byte-identical files.

Optimizer state rides along under the "adam." name prefix so a resumed run
continues bit-exactly.
"""

from __future__ import annotations

import json
import os
import struct

import numpy as np

MAGIC = b"MOGNETCK\x00\x01"
ADAM_PREFIX = "adam."


def save_checkpoint(path, tensors: dict, meta: dict):
    directory = []
    buffers = []
    for name in sorted(tensors):
        # tobytes() emits C order for any layout; 0-d shapes survive as ()
        arr = np.asarray(tensors[name], dtype=np.float64)
        directory.append([name, list(arr.shape)])
        buffers.append(arr.tobytes())
    header = json.dumps({"meta": meta, "tensors": directory},
                        sort_keys=True, separators=(",", ":")).encode("utf-8")
    tmp = str(path) + ".tmp"
    with open(tmp, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(header)))
        f.write(header)
        for buf in buffers:
            f.write(buf)
    os.replace(tmp, path)


def load_checkpoint(path):
    with open(path, "rb") as f:
        blob = f.read()
    if not blob.startswith(MAGIC):
        raise ValueError(f"{path} is not a checkpoint file")
    off = len(MAGIC)
    if len(blob) < off + 4:
        raise ValueError(f"{path} is truncated")
    (hlen,) = struct.unpack("<I", blob[off:off + 4])
    off += 4
    try:
        header = json.loads(blob[off:off + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ValueError(f"{path} has a corrupt header: {e}") from e
    off += hlen
    tensors = {}
    for name, shape in header["tensors"]:
        n = int(np.prod(shape, dtype=np.int64)) if shape else 1
        nbytes = 8 * n
        if off + nbytes > len(blob):
            raise ValueError(f"{path} is truncated inside tensor {name}")
        arr = np.frombuffer(blob[off:off + nbytes], dtype=np.float64).reshape(shape)
        tensors[name] = arr.copy()
        off += nbytes
    if off != len(blob):
        raise ValueError(f"{path} has {len(blob) - off} trailing bytes")
    return tensors, header["meta"]


def pack_training_state(model_state: dict, adam_state: dict):
    packed = dict(model_state)
    for k, v in adam_state.items():
        if not k.startswith(ADAM_PREFIX):
            raise ValueError(f"optimizer key {k!r} lacks the {ADAM_PREFIX!r} prefix")
        packed[k] = np.asarray(v, dtype=np.float64)
    return packed


def unpack_training_state(tensors: dict):
    model_state, adam_state = {}, {}
    for k, v in tensors.items():
        (adam_state if k.startswith(ADAM_PREFIX) else model_state)[k] = v
    return model_state, adam_state
