"""Versioned weight container.

Layout: magic ``b"WJDD"``, ``u32`` version, ``u32`` header length, UTF-8
JSON header, then each array as little-endian float32 in manifest order.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .imaging import atomic_write_bytes
from .net import NetConfig, check_weights

MAGIC = b"WJDD"
VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    net_config: NetConfig
    weights: dict
    training_meta: dict = field(default_factory=dict)
    version: int = VERSION


def dump_arrays(arrays: dict, header_extra: dict | None = None) -> bytes:
    manifest = []
    payload = []
    offset = 0
    for name, arr in arrays.items():
        a = np.ascontiguousarray(arr, dtype="<f4")
        manifest.append({"name": name, "shape": list(a.shape), "offset": offset, "count": int(a.size)})
        payload.append(a.tobytes())
        offset += a.size * 4
    header = dict(header_extra or {})
    header["arrays"] = manifest
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    return MAGIC + struct.pack("<II", VERSION, len(hbytes)) + hbytes + b"".join(payload)


def parse_arrays(blob: bytes):
    if blob[:4] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    version, hlen = struct.unpack("<II", blob[4:12])
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    header = json.loads(blob[12 : 12 + hlen].decode("utf-8"))
    body = memoryview(blob)[12 + hlen :]
    arrays = {}
    for entry in header["arrays"]:
        start, count = entry["offset"], entry["count"]
        if start + 4 * count > len(body):
            raise CheckpointError(f"truncated payload for {entry['name']}")
        a = np.frombuffer(body[start : start + 4 * count], dtype="<f4").astype(np.float32)
        arrays[entry["name"]] = a.reshape(entry["shape"])
    return header, arrays, version


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    check_weights(ckpt.weights, ckpt.net_config)
    blob = dump_arrays(
        ckpt.weights,
        {"net_config": ckpt.net_config.to_dict(), "training_meta": ckpt.training_meta},
    )
    atomic_write_bytes(path, blob)


def load_checkpoint(path) -> Checkpoint:
    header, arrays, version = parse_arrays(Path(path).read_bytes())
    try:
        cfg = NetConfig(**header["net_config"])
    except (KeyError, TypeError) as exc:
        raise CheckpointError(f"bad net_config in header: {exc}") from exc
    check_weights(arrays, cfg)
    return Checkpoint(cfg, arrays, header.get("training_meta", {}), version)


def save_float_dump(arrays: dict, path, meta: dict | None = None) -> None:
    """Sidecar float dump (same container) for exact noise maps and the like."""
    atomic_write_bytes(path, dump_arrays(arrays, {"meta": meta or {}}))


def load_float_dump(path):
    header, arrays, _ = parse_arrays(Path(path).read_bytes())
    return arrays, header.get("meta", {})
