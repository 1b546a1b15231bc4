"""DSQC checkpoint files.

Layout: ``b"DSQC"``, u32 version, u32 header length (all little-endian),
a UTF-8 JSON header, then every tensor of the parameter store as
little-endian float32, concatenated in header order.  The header carries
the network spec, init seed, a parameter index (name, shape, trainable,
buffer flag, byte offset into the payload) and free-form metadata.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import CheckpointError, SpecError
from .nn import Network, NetworkSpec, ParameterStore, build_network

MAGIC = b"DSQC"
VERSION = 1
_PRELUDE = struct.Struct("<4sII")


def checkpoint_bytes(network: Network, metadata: Optional[dict] = None) -> bytes:
    index = []
    chunks = []
    offset = 0
    for name, entry in network.store.entries():
        blob = np.ascontiguousarray(entry.tensor.data, dtype="<f4").tobytes()
        index.append({"name": name, "shape": list(entry.tensor.shape), "trainable": entry.trainable,
                      "buffer": entry.buffer, "offset": offset})
        chunks.append(blob)
        offset += len(blob)
    header = {
        "format": "DSQC",
        "spec": network.spec.to_dict(),
        "seed": network.init_seed,
        "params": index,
        "metadata": metadata or {},
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return _PRELUDE.pack(MAGIC, VERSION, len(head)) + head + b"".join(chunks)


def save_checkpoint(path, network: Network, metadata: Optional[dict] = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(checkpoint_bytes(network, metadata))
    return path


def read_header(raw: bytes, source="checkpoint") -> tuple[dict, int]:
    if len(raw) < _PRELUDE.size:
        raise CheckpointError(f"{source}: file too short")
    magic, version, head_len = _PRELUDE.unpack_from(raw)
    if magic != MAGIC:
        raise CheckpointError(f"{source}: bad magic {magic!r}")
    if version != VERSION:
        raise CheckpointError(f"{source}: unsupported version {version}")
    end = _PRELUDE.size + head_len
    try:
        header = json.loads(raw[_PRELUDE.size:end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{source}: corrupt header ({exc})") from None
    return header, end


def load_checkpoint(path) -> tuple[Network, ParameterStore, dict]:
    """Rebuild the network from the stored spec and overwrite every tensor from the payload."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"{path}: {exc.strerror or exc}") from None
    header, start = read_header(raw, path)
    try:
        spec = NetworkSpec.from_dict(header["spec"])
        network, store = build_network(spec, int(header["seed"]))
    except (KeyError, TypeError, ValueError, SpecError) as exc:
        raise CheckpointError(f"{path}: invalid network spec ({exc})") from None
    try:
        listed = {p["name"]: p for p in header["params"]}
    except (KeyError, TypeError):
        raise CheckpointError(f"{path}: malformed parameter index") from None
    if set(listed) != set(store):
        raise CheckpointError(f"{path}: parameter names do not match the stored spec")
    payload = memoryview(raw)[start:]
    for name, entry in store.entries():
        info = listed[name]
        if tuple(info.get("shape", ())) != entry.tensor.shape:
            raise CheckpointError(f"{path}: {name} has shape {info.get('shape')}, spec expects {entry.tensor.shape}")
        count = entry.tensor.size
        offset = info.get("offset")
        if not isinstance(offset, int) or offset < 0:
            raise CheckpointError(f"{path}: {name} has no valid payload offset")
        if offset + 4 * count > len(payload):
            raise CheckpointError(f"{path}: payload truncated at {name}")
        arr = np.frombuffer(payload, dtype="<f4", count=count, offset=offset)
        entry.tensor.data[...] = arr.reshape(entry.tensor.shape)
    return network, store, header.get("metadata", {})
