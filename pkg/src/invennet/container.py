"""Named-tensor container used for checkpoints, feature-extractor weights and NIQE models.

Layout (all integers little-endian u32)::

    b"IVEN" | version | record count
    per record: name length | name (UTF-8) | rank | dims... | float32 LE payload
    config length | UTF-8 "key=value" lines, keys sorted

Writing the same content always yields the same bytes.
"""

from __future__ import annotations

import io
import struct
from collections import OrderedDict
from pathlib import Path

import numpy as np

from .errors import FormatError, ImageIOError

MAGIC = b"IVEN"
VERSION = 1


def encode(tensors, meta=None) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<II", VERSION, len(tensors)))
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype="<f4")
        raw_name = name.encode("utf-8")
        buf.write(struct.pack("<I", len(raw_name)))
        buf.write(raw_name)
        buf.write(struct.pack("<I", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(np.ascontiguousarray(arr).tobytes())
    lines = []
    for key in sorted(meta or {}):
        value = str(meta[key])
        if "\n" in value or "=" in key:
            raise FormatError(f"config entry {key!r} cannot be serialised")
        lines.append(f"{key}={value}\n")
    block = "".join(lines).encode("utf-8")
    buf.write(struct.pack("<I", len(block)))
    buf.write(block)
    return buf.getvalue()


def decode(data: bytes, source="<bytes>"):
    view = memoryview(data)
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(view):
            raise FormatError(f"{source}: truncated container at byte {pos}")
        chunk = view[pos:pos + n]
        pos += n
        return chunk

    if bytes(take(4)) != MAGIC:
        raise FormatError(f"{source}: not an IVEN container (bad magic)")
    version, count = struct.unpack("<II", take(8))
    if version != VERSION:
        raise FormatError(f"{source}: container version {version} unsupported")
    tensors = OrderedDict()
    for _ in range(count):
        (name_len,) = struct.unpack("<I", take(4))
        name = bytes(take(name_len)).decode("utf-8")
        (rank,) = struct.unpack("<I", take(4))
        dims = struct.unpack(f"<{rank}I", take(4 * rank))
        size = int(np.prod(dims, dtype=np.int64)) if rank else 1
        arr = np.frombuffer(bytes(take(4 * size)), dtype="<f4").reshape(dims)
        tensors[name] = arr.astype(np.float32)
    (block_len,) = struct.unpack("<I", take(4))
    meta = OrderedDict()
    for line in bytes(take(block_len)).decode("utf-8").splitlines():
        key, sep, value = line.partition("=")
        if not sep:
            raise FormatError(f"{source}: malformed config line {line!r}")
        meta[key] = value
    if pos != len(view):
        raise FormatError(f"{source}: {len(view) - pos} trailing bytes")
    return tensors, meta


def save(path, tensors, meta=None):
    path = Path(path)
    data = encode(tensors, meta)
    try:
        path.write_bytes(data)
    except OSError as exc:
        raise ImageIOError(f"{path}: cannot write ({exc.strerror or exc})") from None


def load(path):
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise ImageIOError(f"{path}: cannot read ({exc.strerror or exc})") from None
    return decode(data, source=str(path))
