"""Checkpoint files.

Layout (all integers little-endian)::

    8 bytes   magic  b"TENXCKPT"
    u8        format version (1)
    u32       length of the metadata block
    bytes     metadata, UTF-8 JSON with sorted keys
    u32       number of tensor records
    records:  u16 name length, UTF-8 name, u8 ndim, u32 x ndim dims,
              prod(dims) float32 values
    u32       CRC-32 of every preceding byte

Records are written in sorted name order, so saving the same tensors and
metadata always produces the same bytes.
"""
from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

MAGIC = b"TENXCKPT"
VERSION = 1


class CheckpointError(ValueError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointMismatch(CheckpointError):
    pass


def dumps(tensors: dict, meta: dict | None = None) -> bytes:
    meta_b = json.dumps(meta or {}, sort_keys=True, separators=(",", ":")).encode()
    parts = [MAGIC, struct.pack("<BI", VERSION, len(meta_b)), meta_b, struct.pack("<I", len(tensors))]
    for name in sorted(tensors):
        arr = np.asarray(tensors[name], dtype="<f4", order="C")  # ascontiguousarray would promote 0-d
        nb = name.encode()
        parts.append(struct.pack("<H", len(nb)) + nb + struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def loads(buf: bytes) -> tuple[dict, dict]:
    if len(buf) < len(MAGIC) or buf[: len(MAGIC)] != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic header)")
    if len(buf) < len(MAGIC) + 9:
        raise CheckpointError("truncated checkpoint")
    body, crc = buf[:-4], struct.unpack("<I", buf[-4:])[0]
    version = buf[len(MAGIC)]
    if version != VERSION:
        raise CheckpointVersionError(f"checkpoint version {version}, this build reads {VERSION}")
    if zlib.crc32(body) != crc:
        raise CheckpointError("checkpoint checksum mismatch (truncated or corrupted file)")
    pos = len(MAGIC) + 1

    def take(n):
        nonlocal pos
        if pos + n > len(body):
            raise CheckpointError("truncated checkpoint")
        out = body[pos:pos + n]
        pos += n
        return out

    (mlen,) = struct.unpack("<I", take(4))
    meta = json.loads(take(mlen).decode())
    (count,) = struct.unpack("<I", take(4))
    tensors = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", take(2))
        name = take(nlen).decode()
        (ndim,) = struct.unpack("<B", take(1))
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
        n = int(np.prod(shape, dtype=np.int64))
        tensors[name] = np.frombuffer(take(4 * n), dtype="<f4").reshape(shape).copy()
    if pos != len(body):
        raise CheckpointError("trailing bytes after last record")
    return tensors, meta


def save(path, tensors: dict, meta: dict | None = None):
    Path(path).write_bytes(dumps(tensors, meta))


def load(path) -> tuple[dict, dict]:
    return loads(Path(path).read_bytes())


# ---------------------------------------------------------------------------
# model-level helpers


def model_state(model) -> dict:
    return {name: p.data for name, p in model.named_parameters()}


def load_state(model, tensors: dict, strict: bool = True):
    """Copy tensors into ``model``; every check runs before any parameter is touched."""
    params = dict(model.named_parameters())
    for name, p in params.items():
        if name not in tensors:
            if strict:
                raise CheckpointMismatch(f"checkpoint lacks tensor {name!r}")
            continue
        if tensors[name].shape != p.data.shape:
            raise CheckpointMismatch(
                f"tensor {name!r}: checkpoint shape {tensors[name].shape} vs model shape {p.data.shape}")
    unknown = sorted(set(tensors) - set(params))
    if unknown and strict:
        raise CheckpointMismatch(f"unknown tensor name {unknown[0]!r} in checkpoint")
    for name, p in params.items():
        if name in tensors:
            p.data[...] = tensors[name]


def save_checkpoint(model, path, step: int = 0, best_f1: float | None = None, extra_meta: dict | None = None):
    meta = {"config": model.config.to_dict(), "step": int(step), "best_f1": best_f1}
    meta.update(extra_meta or {})
    save(path, model_state(model), meta)


def load_checkpoint(path, model=None):
    """Rebuild the model recorded in ``path`` (or fill ``model``) and return ``(model, meta)``."""
    from .model import ModelConfig, TENeXt

    tensors, meta = load(path)
    if model is None:
        if "config" not in meta:
            raise CheckpointError("checkpoint has no model config")
        model = TENeXt(ModelConfig(**meta["config"]))
    load_state(model, tensors)
    return model, meta
