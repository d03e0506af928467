"""Binary checkpoint container.

Layout (all integers little-endian)::

    b"RDSGAN-CKPT"  u32 version
    repeated:  u32 name_len, name (UTF-8), u32 rank, rank × u64 extents,
               float32 values (row-major)
    u32 CRC-32 of every preceding byte
"""

from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np

from .params import Model, ModelConfig

MAGIC = b"RDSGAN-CKPT"
VERSION = 1


class CheckpointError(Exception):
    pass


class ChecksumError(CheckpointError):
    pass


class VersionError(CheckpointError):
    pass


class ShapeMismatchError(CheckpointError):
    pass


def encode_tensors(tensors: dict[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<I", VERSION)]
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f4")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(arr.tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def decode_tensors(blob: bytes) -> dict[str, np.ndarray]:
    if len(blob) < len(MAGIC) + 8 or not blob.startswith(MAGIC):
        raise ChecksumError("not a checkpoint or truncated header")
    body, (crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(body) != crc:
        raise ChecksumError("CRC-32 mismatch; file is corrupt or truncated")
    (version,) = struct.unpack_from("<I", body, len(MAGIC))
    if version != VERSION:
        raise VersionError(f"checkpoint format version {version}, expected {VERSION}")
    offset = len(MAGIC) + 4
    out = {}
    while offset < len(body):
        (n,) = struct.unpack_from("<I", body, offset)
        offset += 4
        name = body[offset : offset + n].decode("utf-8")
        offset += n
        (rank,) = struct.unpack_from("<I", body, offset)
        offset += 4
        shape = struct.unpack_from(f"<{rank}Q", body, offset)
        offset += 8 * rank
        count = int(np.prod(shape, dtype=np.int64))
        out[name] = np.frombuffer(body, dtype="<f4", count=count, offset=offset).reshape(shape).copy()
        offset += 4 * count
    return out


def save_checkpoint(model: Model, path: str | Path) -> None:
    blob = encode_tensors({name: t.data for name, t in model.named_parameters().items()})
    tmp = Path(str(path) + ".tmp")
    tmp.write_bytes(blob)
    tmp.replace(path)


def read_checkpoint(path: str | Path) -> dict[str, np.ndarray]:
    return decode_tensors(Path(path).read_bytes())


def load_checkpoint(path: str | Path, config: ModelConfig) -> Model:
    tensors = read_checkpoint(path)
    model = Model.init(config)
    params = model.named_parameters()
    missing = sorted(set(params) - set(tensors))
    extra = sorted(set(tensors) - set(params))
    if missing or extra:
        raise ShapeMismatchError(f"tensor names differ: missing {missing}, unexpected {extra}")
    for name, t in params.items():
        if tensors[name].shape != t.shape:
            raise ShapeMismatchError(f"{name}: checkpoint shape {tensors[name].shape}, model expects {t.shape}")
    for name, t in params.items():
        t.data = tensors[name].astype(config.dtype)
    return model
