"""Embedding matrices and the EMB1 on-disk store.

EMB1 layout (all integers little-endian):

    magic   4 bytes  b"EMB1"
    version u32      currently 1
    count   u64      number of records
    then per record:
        key_len    u32
        key        key_len bytes, UTF-8
        kind       u8    (0 global image, 1 global text, 2 patch seq, 3 token seq)
        rows       u64
        dim        u64
        normalized u8
        data       rows*dim float32

Float payloads survive a write/read round trip bit-exactly.
"""

from __future__ import annotations

import enum
import hashlib
import struct
from dataclasses import dataclass, replace

import numpy as np

from .errors import (
    DegenerateInputError,
    StoreCorruptionError,
    StoreFormatError,
    StoreWriteError,
)

MAGIC = b"EMB1"
VERSION = 1


class RecordKind(enum.IntEnum):
    GLOBAL_IMAGE = 0
    GLOBAL_TEXT = 1
    PATCH_SEQUENCE = 2
    TOKEN_SEQUENCE = 3


@dataclass(frozen=True)
class EmbeddingMatrix:
    rows: int
    dim: int
    data: np.ndarray  # (rows, dim) float32
    normalized: bool = False

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float32)
        if arr.shape != (self.rows, self.dim):
            raise DegenerateInputError(
                f"embedding data shape {arr.shape} != ({self.rows}, {self.dim})"
            )
        if not np.all(np.isfinite(arr)):
            raise DegenerateInputError("embedding matrix contains non-finite values")
        object.__setattr__(self, "data", arr)
        if self.normalized:
            norms = np.linalg.norm(arr, axis=1)
            if arr.size and not np.allclose(norms, 1.0, atol=1e-3):
                raise DegenerateInputError("normalized flag set but row norms differ from 1")

    @classmethod
    def from_array(cls, arr, normalized: bool = False) -> "EmbeddingMatrix":
        arr = np.atleast_2d(np.asarray(arr, dtype=np.float32))
        return cls(rows=arr.shape[0], dim=arr.shape[1], data=arr, normalized=normalized)


@dataclass(frozen=True)
class EmbeddingRecord:
    key: str
    kind: RecordKind
    matrix: EmbeddingMatrix

    def __post_init__(self):
        if self.kind in (RecordKind.GLOBAL_IMAGE, RecordKind.GLOBAL_TEXT) and self.matrix.rows != 1:
            raise StoreWriteError(f"global record {self.key!r} must have exactly one row")


def l2_normalize(matrix: EmbeddingMatrix) -> EmbeddingMatrix:
    """Divide every row by its L2 norm. Zero-norm rows are an error."""
    norms = np.linalg.norm(matrix.data.astype(np.float64), axis=1)
    if np.any(norms == 0.0):
        raise DegenerateInputError("cannot normalize zero-norm row")
    data = (matrix.data.astype(np.float64) / norms[:, None]).astype(np.float32)
    return replace(matrix, data=data, normalized=True)


def store_write(path, records) -> None:
    """Write records to an EMB1 file; byte-identical output for equal inputs."""
    records = list(records)
    seen = set()
    for rec in records:
        if rec.key in seen:
            raise StoreWriteError(f"duplicate key {rec.key!r}")
        seen.add(rec.key)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<Q", len(records)))
        for rec in records:
            key = rec.key.encode("utf-8")
            fh.write(struct.pack("<I", len(key)))
            fh.write(key)
            fh.write(struct.pack("<B", int(rec.kind)))
            fh.write(struct.pack("<QQ", rec.matrix.rows, rec.matrix.dim))
            fh.write(struct.pack("<B", 1 if rec.matrix.normalized else 0))
            fh.write(np.ascontiguousarray(rec.matrix.data, dtype="<f4").tobytes())


def store_read(path) -> dict[str, EmbeddingRecord]:
    """Read an EMB1 file into a key-indexed record dict."""
    with open(path, "rb") as fh:
        blob = fh.read()

    def take(n: int, what: str) -> bytes:
        nonlocal off
        if off + n > len(blob):
            raise StoreCorruptionError(f"truncated store file while reading {what}")
        chunk = blob[off : off + n]
        off += n
        return chunk

    off = 0
    if take(4, "magic") != MAGIC:
        raise StoreFormatError(f"{path}: bad magic, not an EMB1 file")
    (version,) = struct.unpack("<I", take(4, "version"))
    if version != VERSION:
        raise StoreFormatError(f"{path}: unsupported version {version}")
    (count,) = struct.unpack("<Q", take(8, "record count"))

    records: dict[str, EmbeddingRecord] = {}
    for i in range(count):
        (key_len,) = struct.unpack("<I", take(4, f"record {i} key length"))
        key = take(key_len, f"record {i} key").decode("utf-8")
        (kind,) = struct.unpack("<B", take(1, f"record {i} kind"))
        rows, dim = struct.unpack("<QQ", take(16, f"record {i} shape"))
        (normalized,) = struct.unpack("<B", take(1, f"record {i} flag"))
        payload = take(rows * dim * 4, f"record {i} payload")
        data = np.frombuffer(payload, dtype="<f4").reshape(rows, dim).copy()
        if key in records:
            raise StoreCorruptionError(f"duplicate key {key!r} in store")
        records[key] = EmbeddingRecord(
            key=key,
            kind=RecordKind(kind),
            matrix=EmbeddingMatrix(rows=rows, dim=dim, data=data, normalized=bool(normalized)),
        )
    if off != len(blob):
        raise StoreCorruptionError(f"{len(blob) - off} trailing bytes after last record")
    return records


# --- key scheme -------------------------------------------------------------
#
# Stores and services agree on these keys; evaluation code looks embeddings up
# by them, so every producer must use the same helpers.


def text_sha(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


def image_key(image_id: str) -> str:
    return f"img:{image_id}"


def crop_key(image_id: str, x: int, y: int, w: int, h: int) -> str:
    return f"img:{image_id}/crop:{x},{y},{w},{h}"


def crop_key_prefix(image_id: str) -> str:
    return f"img:{image_id}/crop:"


def patches_key(image_id: str) -> str:
    return f"img:{image_id}/patches"


def text_key(text: str) -> str:
    return f"txt:{text_sha(text)}"


def tokens_key(text: str) -> str:
    return f"txt:{text_sha(text)}/tokens"
