"""Binary weight files.

Layout, little-endian::

    b"MUNW"  u16 version  u32 tensor_count
    u32 descriptor_length  descriptor (UTF-8 JSON of the architecture)
    per tensor:
        u16 name_length  name (UTF-8)  u8 ndim  ndim x u32 dims  prod(dims) x f32
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .model import Architecture, ModelWeights

MAGIC = b"MUNW"
VERSION = 1


class CorruptWeightsError(ValueError):
    pass


def _header(arch: Architecture, count: int) -> bytes:
    desc = json.dumps(arch.to_dict(), sort_keys=True).encode()
    return MAGIC + struct.pack("<HI", VERSION, count) + struct.pack("<I", len(desc)) + desc


def expected_file_size(weights: ModelWeights) -> int:
    size = len(_header(weights.arch, len(weights.params)))
    for name, arr in weights.params.items():
        size += 2 + len(name.encode()) + 1 + 4 * arr.ndim + 4 * arr.size
    return size


def save_weights(weights: ModelWeights, path: str | Path) -> Path:
    parts = [_header(weights.arch, len(weights.params))]
    for name, arr in weights.params.items():
        raw = name.encode()
        parts.append(struct.pack("<H", len(raw)) + raw + struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(parts))
    return Path(path)


class _Reader:
    def __init__(self, blob: bytes, path):
        self.blob, self.pos, self.path = blob, 0, path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise CorruptWeightsError(f"{self.path}: truncated weight file")
        out = self.blob[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_weights(path: str | Path) -> ModelWeights:
    blob = Path(path).read_bytes()
    r = _Reader(blob, path)
    if r.take(4) != MAGIC:
        raise CorruptWeightsError(f"{path}: bad magic, not a weight file")
    version, count = r.unpack("<HI")
    if version != VERSION:
        raise CorruptWeightsError(f"{path}: unsupported version {version}")
    (dlen,) = r.unpack("<I")
    try:
        desc = json.loads(r.take(dlen).decode())
        arch = Architecture(tuple(desc["widths"]), int(desc["in_channels"]))
    except (ValueError, KeyError, TypeError) as exc:
        raise CorruptWeightsError(f"{path}: bad architecture descriptor") from exc
    params = {}
    for _ in range(count):
        (nlen,) = r.unpack("<H")
        name = r.take(nlen).decode()
        (ndim,) = r.unpack("<B")
        dims = r.unpack(f"<{ndim}I")
        n = int(np.prod(dims)) if ndim else 1
        params[name] = np.frombuffer(r.take(4 * n), dtype="<f4").reshape(dims).astype(np.float32)
    if r.pos != len(blob):
        raise CorruptWeightsError(f"{path}: trailing bytes after last tensor")
    try:
        return ModelWeights(arch, params)
    except ValueError as exc:
        raise CorruptWeightsError(f"{path}: {exc}") from exc
