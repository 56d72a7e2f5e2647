"""Binary model checkpoints.

Layout: magic ``TWCK``, format version, a length-prefixed JSON header echoing
the model config and vocab settings, then named tensors. Each tensor record
is name (length-prefixed UTF-8), dims (u8 ndim + u64 dims), and a u64
byte-length prefix followed by raw float64 little-endian data. Round-trips
are bit-exact; writes go through a temp file and an atomic rename.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

MAGIC = b"TWCK"
FORMAT_VERSION = 1


def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.off = 0

    def take(self, n: int) -> bytes:
        if self.off + n > len(self.data):
            raise ValueError("truncated checkpoint file")
        out = self.data[self.off : self.off + n]
        self.off += n
        return out

    def u8(self) -> int:
        return struct.unpack("<B", self.take(1))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]

    def string(self) -> str:
        return self.take(self.u32()).decode("utf-8")


def atomic_write(path: str | Path, data: bytes) -> None:
    """Write bytes to ``path`` via temp-file-then-rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_checkpoint(path: str | Path, params: dict[str, np.ndarray], header: dict) -> None:
    """Serialize named float64 tensors plus a JSON header, atomically."""
    chunks = [MAGIC, struct.pack("<I", FORMAT_VERSION)]
    header = dict(header)
    header["format_version"] = FORMAT_VERSION
    chunks.append(_pack_str(json.dumps(header, sort_keys=True)))
    names = sorted(params)
    chunks.append(struct.pack("<I", len(names)))
    for name in names:
        # tobytes() emits C order regardless of layout; ascontiguousarray is
        # avoided because it silently promotes 0-d scalars to 1-d
        arr = np.asarray(params[name], dtype="<f8")
        chunks.append(_pack_str(name))
        chunks.append(struct.pack("<B", arr.ndim))
        for dim in arr.shape:
            chunks.append(struct.pack("<Q", dim))
        raw = arr.tobytes(order="C")
        chunks.append(struct.pack("<Q", len(raw)))
        chunks.append(raw)
    atomic_write(path, b"".join(chunks))


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    """Load (params, header) from a checkpoint file."""
    data = Path(path).read_bytes()
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise ValueError(f"not a checkpoint file: {path}")
    version = r.u32()
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format version {version}")
    header = json.loads(r.string())
    n_tensors = r.u32()
    params: dict[str, np.ndarray] = {}
    for _ in range(n_tensors):
        name = r.string()
        ndim = r.u8()
        shape = tuple(r.u64() for _ in range(ndim))
        nbytes = r.u64()
        arr = np.frombuffer(r.take(nbytes), dtype="<f8").reshape(shape).copy()
        params[name] = arr
    return params, header


def file_sha256(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def config_hash(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True).encode("utf-8")).hexdigest()
