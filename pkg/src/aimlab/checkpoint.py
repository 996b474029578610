"""Versioned binary checkpoints.

Layout (all little-endian)::

    b"AIMV1"
    u32 K, u32 D, u32 L, f64 beta
    u32 array count
    per array: u16 tag length, tag (utf-8), u8 ndim, u32 * ndim shape,
               u64 element count, float64 * count

The tag names the component (``encoder.w0``, ``agent_a.policy.b1`` ...).
Writing is deterministic: identical parameters give identical bytes.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from aimlab.errors import ConfigError

MAGIC = b"AIMV1"


@dataclass
class Checkpoint:
    K: int
    D: int
    L: int
    beta: float
    arrays: dict[str, np.ndarray] = field(default_factory=dict)

    def to_bytes(self) -> bytes:
        out = [MAGIC, struct.pack("<IIId", self.K, self.D, self.L, self.beta), struct.pack("<I", len(self.arrays))]
        for tag, arr in self.arrays.items():
            arr = np.ascontiguousarray(arr, dtype="<f8")
            name = tag.encode()
            out.append(struct.pack("<H", len(name)) + name)
            out.append(struct.pack(f"<B{arr.ndim}I", arr.ndim, *arr.shape))
            out.append(struct.pack("<Q", arr.size) + arr.tobytes())
        return b"".join(out)

    @classmethod
    def from_bytes(cls, data: bytes) -> "Checkpoint":
        if not data.startswith(MAGIC):
            raise ConfigError("not an AIMV1 checkpoint")
        pos = len(MAGIC)
        K, D, L, beta = struct.unpack_from("<IIId", data, pos)
        pos += struct.calcsize("<IIId")
        (n,) = struct.unpack_from("<I", data, pos)
        pos += 4
        arrays = {}
        try:
            for _ in range(n):
                (tlen,) = struct.unpack_from("<H", data, pos)
                pos += 2
                tag = data[pos : pos + tlen].decode()
                pos += tlen
                (ndim,) = struct.unpack_from("<B", data, pos)
                pos += 1
                shape = struct.unpack_from(f"<{ndim}I", data, pos)
                pos += 4 * ndim
                (count,) = struct.unpack_from("<Q", data, pos)
                pos += 8
                arr = np.frombuffer(data, dtype="<f8", count=count, offset=pos).astype(np.float64)
                pos += 8 * count
                arrays[tag] = arr.reshape(shape)
        except (struct.error, ValueError) as exc:
            raise ConfigError(f"truncated or corrupt checkpoint: {exc}") from exc
        return cls(K, D, L, beta, arrays)

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(self.to_bytes())
        return path

    @classmethod
    def load(cls, path) -> "Checkpoint":
        return cls.from_bytes(Path(path).read_bytes())
