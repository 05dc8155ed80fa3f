"""Bit-exact model file format.

Layout (all integers little-endian):

    magic   4 bytes  b"MCL1"
    u32     version (1)
    u32     n_landmarks
    u32     D (feature channels)
    u32     block_count
    per block:
        u16     name length
        bytes   UTF-8 name
        u8      rank
        u32     extents[rank]
        f32     values, row-major
    u32     CRC-32 of all preceding bytes

Blocks cover every learnable array plus the batch-norm running statistics;
prediction heads are stored as "head.<i>.W". Values are float32 on disk,
so float32 models round-trip bit-exactly.
"""

from __future__ import annotations

import struct
import zlib

import numpy as np

from .errors import ModelFormatError
from .network import NetworkParams, NetworkSpec
from .optim import ParamBlock

MAGIC = b"MCL1"
VERSION = 1


def save_model(params: NetworkParams, spec: NetworkSpec, path) -> None:
    """Serialize every block and running statistic; see module docstring."""
    entries = [(name, blk.value) for name, blk in params.blocks.items()]
    entries += [(name, arr) for name, arr in params.stats.items()]
    entries.sort(key=lambda kv: kv[0])
    out = bytearray()
    out += MAGIC
    out += struct.pack("<IIII", VERSION, spec.n_landmarks,
                       spec.feature_channels, len(entries))
    for name, arr in entries:
        raw = name.encode("utf-8")
        out += struct.pack("<H", len(raw))
        out += raw
        out += struct.pack("<B", arr.ndim)
        out += struct.pack(f"<{arr.ndim}I", *arr.shape)
        out += np.ascontiguousarray(arr, dtype="<f4").tobytes()
    out += struct.pack("<I", zlib.crc32(bytes(out)) & 0xFFFFFFFF)
    with open(path, "wb") as fh:
        fh.write(bytes(out))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, count: int, what: str) -> bytes:
        if self.pos + count > len(self.data):
            raise ModelFormatError(f"truncated while reading {what}", self.pos)
        chunk = self.data[self.pos:self.pos + count]
        self.pos += count
        return chunk

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def load_model(path, dtype=np.float32) -> tuple[NetworkSpec, NetworkParams]:
    """Parse and validate a model file; inverse of `save_model`."""
    with open(path, "rb") as fh:
        data = fh.read()
    r = _Reader(data)
    if r.take(4, "magic") != MAGIC:
        raise ModelFormatError(f"bad magic, expected {MAGIC!r}", 0)
    version, n, d, block_count = r.unpack("<IIII", "header")
    if version != VERSION:
        raise ModelFormatError(f"unsupported version {version}", 4)
    arrays: dict[str, np.ndarray] = {}
    offsets: dict[str, int] = {}
    for _ in range(block_count):
        (name_len,) = r.unpack("<H", "block name length")
        name = r.take(name_len, "block name").decode("utf-8")
        (rank,) = r.unpack("<B", "block rank")
        offsets[name] = r.pos
        extents = r.unpack(f"<{rank}I", "block extents")
        count = int(np.prod(extents)) if rank else 1
        raw = r.take(4 * count, f"values of {name}")
        arrays[name] = np.frombuffer(raw, dtype="<f4").reshape(extents)
    (stored_crc,) = r.unpack("<I", "checksum")
    actual = zlib.crc32(data[:len(data) - 4]) & 0xFFFFFFFF
    if stored_crc != actual:
        raise ModelFormatError(
            f"checksum mismatch (stored {stored_crc:#010x}, "
            f"computed {actual:#010x})", len(data) - 4)
    if r.pos != len(data):
        raise ModelFormatError("trailing bytes after checksum", r.pos)
    return _rebuild(n, d, arrays, np.dtype(dtype), offsets)


def _rebuild(n: int, d: int, arrays: dict, dtype,
             offsets: dict) -> tuple[NetworkSpec, NetworkParams]:
    header_end = 20
    try:
        trunk = tuple(arrays[f"conv{i}.weight"].shape[3] for i in range(1, 9))
        spec = NetworkSpec.build(n, feature_channels=d, conv_channels=trunk)
    except KeyError as exc:
        raise ModelFormatError(f"missing block {exc}", header_end) from exc
    except Exception as exc:
        raise ModelFormatError(f"inconsistent architecture: {exc}",
                               header_end) from exc
    blocks: dict[str, ParamBlock] = {}
    stats: dict[str, np.ndarray] = {}
    expected = _expected_shapes(spec)
    for name, arr in arrays.items():
        if name in expected and arr.shape != expected[name]:
            raise ModelFormatError(
                f"block {name} has dims {arr.shape}, expected "
                f"{expected[name]}", offsets[name])
        if ".running_" in name:
            stats[name] = arr.astype(dtype)
        else:
            blocks[name] = ParamBlock(arr.astype(dtype))
    missing = set(expected) - set(blocks) - set(stats)
    if missing:
        raise ModelFormatError(f"missing blocks {sorted(missing)}",
                               header_end)
    if not any(k.startswith("head.") for k in blocks):
        raise ModelFormatError("model has no prediction head", header_end)
    for name, blk in blocks.items():
        if name.startswith("head.") and blk.value.shape != (
                d + 1, 2 * n):
            raise ModelFormatError(
                f"head {name} has dims {blk.value.shape}, expected "
                f"({d + 1}, {2 * n})", offsets[name])
    return spec, NetworkParams(spec, blocks, stats, dtype)


def _expected_shapes(spec: NetworkSpec) -> dict:
    shapes = {}
    c_in = 1
    for i, c_out in enumerate(spec.conv_channels, start=1):
        shapes[f"conv{i}.weight"] = (3, 3, c_in, c_out)
        shapes[f"conv{i}.bias"] = (c_out,)
        for suffix in ("gamma", "beta"):
            shapes[f"bn{i}.{suffix}"] = (c_out,)
        for suffix in ("running_mean", "running_var"):
            shapes[f"bn{i}.{suffix}"] = (c_out,)
        c_in = c_out
    return shapes
