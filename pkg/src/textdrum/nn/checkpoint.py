"""Binary checkpoint container shared by every trained model.

Layout::

    8 bytes   magic  b"TXDRMCKP"
    u32 LE    format version
    u32 LE    header length n
    n bytes   UTF-8 JSON header: {"kind", "meta", "tensors": [{name, shape, offset}]}
    ...       little-endian float32 payloads, offsets relative to payload start

The header is written with sorted keys so identical contents give identical
bytes.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from ..errors import CheckpointError, CheckpointVersionError

MAGIC = b"TXDRMCKP"
VERSION = 1


def atomic_write(path: Path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def encode_checkpoint(kind: str, tensors: dict[str, np.ndarray], meta: dict | None = None) -> bytes:
    directory = []
    chunks = []
    offset = 0
    for name in sorted(tensors):
        arr = np.asarray(tensors[name], dtype="<f4").copy(order="C")
        if not np.all(np.isfinite(arr)):
            raise CheckpointError(f"tensor {name!r} has non-finite values")
        directory.append({"name": name, "shape": list(arr.shape), "offset": offset})
        raw = arr.tobytes()
        chunks.append(raw)
        offset += len(raw)
    header = json.dumps(
        {"kind": kind, "meta": meta or {}, "tensors": directory},
        sort_keys=True,
        separators=(",", ":"),
    ).encode("utf-8")
    return MAGIC + struct.pack("<II", VERSION, len(header)) + header + b"".join(chunks)


def decode_checkpoint(data: bytes):
    """Returns (kind, tensors, meta)."""
    if data[:8] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    if len(data) < 16:
        raise CheckpointError("checkpoint truncated")
    version, hlen = struct.unpack("<II", data[8:16])
    if version != VERSION:
        raise CheckpointVersionError(f"checkpoint version {version}, expected {VERSION}")
    try:
        header = json.loads(data[16 : 16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint header: {exc}") from None
    base = 16 + hlen
    tensors = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape, dtype=np.int64))
        start = base + entry["offset"]
        if start + 4 * count > len(data):
            raise CheckpointError(f"tensor {entry['name']!r} extends past end of file")
        arr = np.frombuffer(data, dtype="<f4", count=count, offset=start)
        tensors[entry["name"]] = arr.reshape(shape).astype(np.float32)
    return header["kind"], tensors, header["meta"]


def save_checkpoint(path, kind: str, tensors: dict[str, np.ndarray], meta: dict | None = None) -> None:
    atomic_write(Path(path), encode_checkpoint(kind, tensors, meta))


def load_checkpoint(path, expect_kind: str | None = None):
    data = Path(path).read_bytes()
    kind, tensors, meta = decode_checkpoint(data)
    if expect_kind is not None and kind != expect_kind:
        raise CheckpointError(f"{path}: expected a {expect_kind!r} checkpoint, found {kind!r}")
    return kind, tensors, meta
