"""Binary checkpoints of named parameter tensors.

Layout (all integers little-endian):

    b"LINET\\x00\\x01"
    uint32  parameter count
    per parameter:
        uint32 name length, UTF-8 name
        uint8  element width (4 or 8)
        uint8  rank
        uint32 extent * rank
        raw little-endian values, row-major

The model configuration travels in a JSON sidecar (``<path>.json``) so the
binary stays a plain tensor container.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import DataError
from .model import LiNet, ModelConfig
from .tensor import Tensor

MAGIC = b"LINET\x00\x01"
_DTYPES = {4: np.dtype("<f4"), 8: np.dtype("<f8")}


def encode_tensors(tensors: dict[str, np.ndarray]) -> bytes:
    chunks = [MAGIC, struct.pack("<I", len(tensors))]
    for name, value in tensors.items():
        arr = np.asarray(value)
        width = arr.dtype.itemsize
        if width not in _DTYPES or arr.dtype.kind != "f":
            raise ValueError(f"parameter {name!r} has unsupported dtype {arr.dtype}")
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw)) + raw)
        chunks.append(struct.pack("<BB", width, arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(np.ascontiguousarray(arr, dtype=_DTYPES[width]).tobytes())
    return b"".join(chunks)


def decode_tensors(blob: bytes) -> dict[str, np.ndarray]:
    if not blob.startswith(MAGIC):
        raise DataError("not a checkpoint: bad magic bytes")
    view = memoryview(blob)
    pos = len(MAGIC)

    def take(fmt: str):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(view):
            raise DataError("checkpoint truncated")
        out = struct.unpack_from(fmt, view, pos)
        pos += size
        return out

    (count,) = take("<I")
    tensors = {}
    for _ in range(count):
        (n,) = take("<I")
        name = bytes(take(f"<{n}s")[0]).decode("utf-8")
        width, rank = take("<BB")
        if width not in _DTYPES:
            raise DataError(f"parameter {name!r}: element width {width} not in (4, 8)")
        shape = take(f"<{rank}I") if rank else ()
        nbytes = int(np.prod(shape, dtype=np.int64)) * width
        if pos + nbytes > len(view):
            raise DataError(f"checkpoint truncated inside {name!r}")
        arr = np.frombuffer(view[pos:pos + nbytes], dtype=_DTYPES[width]).reshape(shape)
        tensors[name] = arr.astype(arr.dtype.newbyteorder("="), copy=True)
        pos += nbytes
    if pos != len(view):
        raise DataError(f"{len(view) - pos} trailing bytes after the last parameter")
    return tensors


def save_checkpoint(model: LiNet, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_tensors({k: v.data for k, v in model.params.items()}))
    sidecar = path.with_name(path.name + ".json")
    sidecar.write_text(json.dumps(model.cfg.to_dict(), indent=2, sort_keys=True))
    return path


def load_checkpoint(path: str | Path, cfg: ModelConfig | None = None) -> LiNet:
    path = Path(path)
    if cfg is None:
        sidecar = path.with_name(path.name + ".json")
        if not sidecar.exists():
            raise DataError(f"{sidecar}: missing configuration sidecar")
        cfg = ModelConfig.from_dict(json.loads(sidecar.read_text()))
    tensors = decode_tensors(path.read_bytes())
    params = {k: Tensor(v, requires_grad=True, name=k) for k, v in tensors.items()}
    return LiNet(cfg, params)
