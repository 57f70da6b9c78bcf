"""Binary checkpoint format.

Layout, all integers little-endian::

    b"LNXT" | version u16 | count u32
    count x ( name_len u16 | name utf-8 | rank u8 | dims u32 x rank | dtype u8 | payload )
    crc32 u32 over every preceding byte

dtype codes: 0 = float32, 1 = float64. Tensor names are ``<group>.<name>``;
the ``meta`` group carries scalar architecture settings that cannot be
recovered from weight shapes (image size, context scale).
"""
from __future__ import annotations

import math
import os
import struct
import zlib
from pathlib import Path

import numpy as np

from .model import ModelConfig, ModelParams, infer_config

MAGIC = b"LNXT"
VERSION = 1
DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
DTYPE_CODES = {v: k for k, v in DTYPES.items()}
META_KEYS = ("image_size", "context_scale")


class CheckpointError(Exception):
    """Base class for unreadable checkpoints."""


class FormatError(CheckpointError):
    pass


class ChecksumError(CheckpointError):
    pass


class VersionError(CheckpointError):
    pass


class TruncatedError(CheckpointError):
    pass


def encode(tensors: dict[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<HI", VERSION, len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        code = DTYPE_CODES.get(arr.dtype.newbyteorder("<"))
        if code is None:
            raise TypeError(f"{name}: unsupported dtype {arr.dtype}")
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF or arr.ndim > 0xFF:
            raise ValueError(f"{name}: name or rank too large for the format")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack(f"<B{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(struct.pack("<B", code))
        parts.append(np.ascontiguousarray(arr, dtype=DTYPES[code]).tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


class _Reader:
    def __init__(self, buf: bytes, end: int):
        self.buf, self.pos, self.end = buf, 0, end

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > self.end:
            raise TruncatedError(f"file ends inside {what} (need {n} bytes at offset {self.pos})")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def decode(buf: bytes) -> dict[str, np.ndarray]:
    """Parse and validate a checkpoint image.

    Checks run in order magic, structure (truncation), CRC, version, so a
    cut-short file reports truncation rather than a checksum failure.
    """
    if buf[:4] != MAGIC:
        raise FormatError(f"bad magic {bytes(buf[:4])!r}, expected {MAGIC!r}")
    r = _Reader(buf, len(buf) - 4)
    r.pos = 4
    version, count = r.unpack("<HI", "header")
    entries: dict[str, tuple] = {}
    for i in range(count):
        (n,) = r.unpack("<H", f"name length of tensor {i}")
        raw = r.take(n, f"name of tensor {i}")
        name = raw.decode("utf-8", errors="replace")
        (rank,) = r.unpack("<B", f"rank of {name}")
        dims = r.unpack(f"<{rank}I", f"dims of {name}")
        (code,) = r.unpack("<B", f"dtype of {name}")
        dt = DTYPES.get(code, DTYPES[0])
        size = math.prod(dims) * dt.itemsize
        payload = r.take(size, f"payload of {name}")
        entries[name] = (code, dims, payload)
    if r.pos != r.end:
        raise FormatError(f"{r.end - r.pos} unexpected bytes after the last tensor")
    stored = struct.unpack("<I", buf[-4:])[0]
    computed = zlib.crc32(buf[:-4])
    if computed != stored:
        raise ChecksumError(f"CRC-32 mismatch: stored {stored:#010x}, computed {computed:#010x}")
    if version != VERSION:
        raise VersionError(f"unsupported checkpoint version {version} (this build reads {VERSION})")
    tensors = {}
    for name, (code, dims, payload) in entries.items():
        if code not in DTYPES:
            raise FormatError(f"{name}: unknown dtype code {code}")
        tensors[name] = np.frombuffer(payload, dtype=DTYPES[code]).reshape(dims).copy()
    return tensors


def params_to_tensors(params: ModelParams) -> dict[str, np.ndarray]:
    dtype = next(iter(params.theta.values())).data.dtype
    tensors = {k: t.data for k, t in params.named().items()}
    for key in META_KEYS:
        tensors[f"meta.{key}"] = np.array([getattr(params.cfg, key)], dtype=dtype)
    return tensors


def tensors_to_params(tensors: dict[str, np.ndarray]) -> ModelParams:
    meta = {}
    for key in META_KEYS:
        v = tensors.get(f"meta.{key}")
        if v is not None:
            meta[key] = int(v.reshape(-1)[0])
    named = {k: v for k, v in tensors.items() if not k.startswith("meta.")}
    try:
        cfg: ModelConfig = infer_config(named, **meta)
    except KeyError as exc:
        raise FormatError(f"checkpoint lacks required tensor {exc.args[0]}") from exc
    try:
        params = ModelParams.from_named(named, cfg)
        params.check_pairing()
    except ValueError as exc:
        raise FormatError(str(exc)) from exc
    return params


def save_checkpoint(params: ModelParams, path) -> Path:
    """Write atomically: encode to a sibling temp file, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(encode(params_to_tensors(params)))
    os.replace(tmp, path)
    return path


def load_checkpoint(path) -> ModelParams:
    return tensors_to_params(decode(Path(path).read_bytes()))
