"""Byte-stable named-tensor container.

Layout::

    b"KCLT" | u32 version | u64 header length | header JSON (utf-8) | payload

The header lists each tensor's name, shape and byte offset into the payload
(little-endian float64) and carries free-form ``meta``.  Nothing time- or
platform-dependent is written, so equal content gives equal bytes.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from kcl.errors import KclError
from kcl.numcore.optim import ParameterSet

MAGIC = b"KCLT"
FORMAT_VERSION = 1


class CheckpointError(KclError):
    pass


def dumps_tensors(tensors: dict[str, np.ndarray], meta: dict | None = None) -> bytes:
    entries, chunks, offset = [], [], 0
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f8")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(arr.tobytes())
        offset += arr.nbytes
    header = json.dumps({"tensors": entries, "meta": meta or {}},
                        sort_keys=True, separators=(",", ":")).encode()
    return MAGIC + struct.pack("<IQ", FORMAT_VERSION, len(header)) + header + b"".join(chunks)


def loads_tensors(blob: bytes) -> tuple[dict[str, np.ndarray], dict]:
    if blob[:4] != MAGIC:
        raise CheckpointError("not a kcl tensor file")
    if len(blob) < 16:
        raise CheckpointError("truncated tensor file")
    version, hlen = struct.unpack("<IQ", blob[4:16])
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported format version {version}")
    try:
        header = json.loads(blob[16:16 + hlen])
    except ValueError:
        raise CheckpointError("corrupt tensor file header") from None
    payload = memoryview(blob)[16 + hlen:]
    out = {}
    for e in header["tensors"]:
        count = int(np.prod(e["shape"])) if e["shape"] else 1
        if e["offset"] + 8 * count > len(payload):
            raise CheckpointError(f"tensor {e['name']!r} runs past the end of the file")
        arr = np.frombuffer(payload, dtype="<f8", count=count, offset=e["offset"])
        out[e["name"]] = arr.reshape(e["shape"]).astype(np.float64)
    return out, header["meta"]


def save_tensors(path, tensors, meta=None):
    Path(path).write_bytes(dumps_tensors(tensors, meta))


def load_tensors(path):
    return loads_tensors(Path(path).read_bytes())


def save_parameters(path, params: ParameterSet, meta: dict | None = None):
    """Write parameter values and Adam state (``adam.m/...``, ``adam.v/...``)."""
    tensors = {}
    for k, t in params.items():
        tensors[f"param/{k}"] = t.data
        tensors[f"adam.m/{k}"] = params.m[k]
        tensors[f"adam.v/{k}"] = params.v[k]
    meta = dict(meta or {})
    meta["adam_step"] = params.step
    meta["trainable"] = {k: params.trainable[k] for k in params}
    save_tensors(path, tensors, meta)


def load_parameters(path) -> tuple[ParameterSet, dict]:
    tensors, meta = load_tensors(path)
    ps = ParameterSet()
    for name, arr in tensors.items():
        if name.startswith("param/"):
            k = name[len("param/"):]
            ps.add(k, arr, trainable=meta.get("trainable", {}).get(k, True))
    for k in ps:
        ps.m[k] = tensors.get(f"adam.m/{k}", ps.m[k])
        ps.v[k] = tensors.get(f"adam.v/{k}", ps.v[k])
    ps.step = int(meta.get("adam_step", 0))
    return ps, meta
