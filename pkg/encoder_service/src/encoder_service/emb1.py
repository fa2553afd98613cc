"""Minimal EMB1 reader/writer (the store format is the integration contract).

Layout, little-endian throughout: magic b"EMB1", version u32, record count
u64, then per record: key length u32 + UTF-8 key, kind u8, rows u64, dim
u64, normalized u8, rows*dim float32.

Key scheme shared with consumers:
    img:<id>                     global image embedding
    img:<id>/crop:<x>,<y>,<w>,<h>  one crop's global embedding
    img:<id>/patches             patch sequence
    txt:<sha256[:16] of text>    global text embedding
    txt:<sha>/tokens             token sequence
"""

from __future__ import annotations

import hashlib
import struct

import numpy as np

MAGIC = b"EMB1"
VERSION = 1

KIND_GLOBAL_IMAGE = 0
KIND_GLOBAL_TEXT = 1
KIND_PATCH_SEQUENCE = 2
KIND_TOKEN_SEQUENCE = 3


def text_sha(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


def text_key(text: str) -> str:
    return f"txt:{text_sha(text)}"


def tokens_key(text: str) -> str:
    return f"txt:{text_sha(text)}/tokens"


def image_key(image_id: str) -> str:
    return f"img:{image_id}"


def patches_key(image_id: str) -> str:
    return f"img:{image_id}/patches"


def crop_key(image_id: str, x: int, y: int, w: int, h: int) -> str:
    return f"img:{image_id}/crop:{x},{y},{w},{h}"


def write_store(path, records: list[tuple[str, int, np.ndarray]]) -> None:
    """records: (key, kind, 2-D float32 array). Keys must be unique."""
    seen = set()
    for key, _, _ in records:
        if key in seen:
            raise ValueError(f"duplicate key {key!r}")
        seen.add(key)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<Q", len(records)))
        for key, kind, arr in records:
            arr = np.atleast_2d(np.asarray(arr, dtype="<f4"))
            raw = key.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<B", kind))
            fh.write(struct.pack("<QQ", arr.shape[0], arr.shape[1]))
            fh.write(struct.pack("<B", 0))
            fh.write(arr.tobytes())


def read_store(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        blob = fh.read()
    off = 0

    def take(n):
        nonlocal off
        if off + n > len(blob):
            raise ValueError("truncated store")
        out = blob[off : off + n]
        off += n
        return out

    if take(4) != MAGIC:
        raise ValueError("not an EMB1 file")
    (version,) = struct.unpack("<I", take(4))
    if version != VERSION:
        raise ValueError(f"unsupported version {version}")
    (count,) = struct.unpack("<Q", take(8))
    out = {}
    for _ in range(count):
        (key_len,) = struct.unpack("<I", take(4))
        key = take(key_len).decode("utf-8")
        take(1)  # kind
        rows, dim = struct.unpack("<QQ", take(16))
        take(1)  # normalized flag
        out[key] = np.frombuffer(take(rows * dim * 4), dtype="<f4").reshape(rows, dim).copy()
    return out
