"""Checkpoint file: named float64 tensors behind a JSON header.

Layout (little-endian)::

    magic "PMCECKPT" | u32 version | u64 header length | header JSON (utf-8)
    | raw <f8 tensor bytes in header order | sha256 of everything before it

The header holds the config snapshot, stage, step and a list of
``{"name", "shape"}`` entries. Optimizer moments live under ``optim.*``.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"PMCECKPT"
VERSION = 1
_PREFIX = struct.Struct("<8sIQ")
_DIGEST = 32


class CheckpointError(Exception):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointCorruptError(CheckpointError):
    pass


@dataclass
class Checkpoint:
    tensors: dict[str, np.ndarray]
    config: dict = field(default_factory=dict)
    stage: int = 1
    step: int = 0
    extra: dict = field(default_factory=dict)

    def subset(self, prefix: str) -> dict[str, np.ndarray]:
        """Tensors under ``prefix.`` with the prefix stripped."""
        p = prefix + "."
        return {k[len(p):]: v for k, v in self.tensors.items() if k.startswith(p)}


def to_bytes(ckpt: Checkpoint) -> bytes:
    names = list(ckpt.tensors)
    arrays = [np.array(ckpt.tensors[n], dtype="<f8", order="C") for n in names]  # keeps 0-d shapes
    header = {
        "config": ckpt.config,
        "stage": ckpt.stage,
        "step": ckpt.step,
        "extra": ckpt.extra,
        "tensors": [{"name": n, "shape": list(a.shape)} for n, a in zip(names, arrays)],
    }
    hbytes = json.dumps(header, sort_keys=True).encode()
    body = b"".join([_PREFIX.pack(MAGIC, VERSION, len(hbytes)), hbytes, *(a.tobytes() for a in arrays)])
    return body + hashlib.sha256(body).digest()


def from_bytes(raw: bytes, name: str = "checkpoint") -> Checkpoint:
    if len(raw) < _PREFIX.size + _DIGEST:
        raise CheckpointCorruptError(f"{name}: truncated")
    magic, version, hlen = _PREFIX.unpack_from(raw)
    if magic != MAGIC:
        raise CheckpointError(f"{name}: not a checkpoint file")
    if version != VERSION:
        raise CheckpointVersionError(f"{name}: version {version}, expected {VERSION}")
    body, digest = raw[:-_DIGEST], raw[-_DIGEST:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointCorruptError(f"{name}: checksum mismatch (truncated or corrupt)")
    pos = _PREFIX.size
    header = json.loads(body[pos:pos + hlen].decode())
    pos += hlen
    tensors = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        n = int(np.prod(shape, dtype=np.int64))
        if pos + 8 * n > len(body):
            raise CheckpointCorruptError(f"{name}: tensor {entry['name']} runs past the end")
        tensors[entry["name"]] = np.frombuffer(body, dtype="<f8", count=n, offset=pos).reshape(shape).astype(np.float64)
        pos += 8 * n
    if pos != len(body):
        raise CheckpointCorruptError(f"{name}: {len(body) - pos} trailing bytes")
    return Checkpoint(tensors, header["config"], header["stage"], header["step"], header.get("extra", {}))


def save(ckpt: Checkpoint, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(to_bytes(ckpt))
    tmp.replace(path)
    return path


def load(path) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"missing checkpoint {path}")
    return from_bytes(path.read_bytes(), str(path))
