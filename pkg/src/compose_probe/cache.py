"""Disk-backed embedding cache keyed by (model descriptor, content key).

One EMB1 file per descriptor under the cache directory. Population is
idempotent: identical keys always map to identical vectors, so concurrent
refills can only agree.
"""

from __future__ import annotations

import re
from pathlib import Path

from .embeddings import EmbeddingRecord, store_read, store_write


def _slug(text: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]+", "_", text)


class EmbeddingCache:
    def __init__(self, directory, descriptor):
        self.path = Path(directory) / f"{_slug(descriptor.model_name)}__{descriptor.layer}.emb1"
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._records: dict[str, EmbeddingRecord] = (
            store_read(self.path) if self.path.exists() else {}
        )
        self._dirty = False

    def __len__(self) -> int:
        return len(self._records)

    def get(self, key: str) -> EmbeddingRecord | None:
        return self._records.get(key)

    def put_many(self, records) -> None:
        for rec in records:
            if rec.key not in self._records:
                self._records[rec.key] = rec
                self._dirty = True

    def save(self) -> None:
        if self._dirty:
            store_write(self.path, list(self._records.values()))
            self._dirty = False


class CachingEncoder:
    """Wraps a live encoder; global text/image requests hit the cache first.

    Only global-mode requests are cached (sequence records are large and
    cheap to regenerate relative to their size).
    """

    def __init__(self, encoder, cache: EmbeddingCache, keys_for):
        self.encoder = encoder
        self.cache = cache
        self.keys_for = keys_for  # callable(items, is_text) -> list of cache keys

    def descriptor(self):
        return self.encoder.descriptor()

    def _cached_call(self, items, mode, is_text):
        from .embeddings import EmbeddingRecord, RecordKind

        if mode != "global":
            return (self.encoder.encode_text_batch if is_text else self.encoder.encode_image_batch)(
                items, mode=mode
            )
        keys = self.keys_for(items, is_text)
        misses = [i for i, k in enumerate(keys) if self.cache.get(k) is None]
        if misses:
            raw = (self.encoder.encode_text_batch if is_text else self.encoder.encode_image_batch)(
                [items[i] for i in misses], mode="global"
            )
            kind = RecordKind.GLOBAL_TEXT if is_text else RecordKind.GLOBAL_IMAGE
            self.cache.put_many(
                EmbeddingRecord(key=keys[i], kind=kind, matrix=m)
                for i, m in zip(misses, raw)
            )
        return [self.cache.get(k).matrix for k in keys]

    def encode_text_batch(self, texts, mode="global"):
        return self._cached_call(list(texts), mode, is_text=True)

    def encode_image_batch(self, images, mode="global"):
        return self._cached_call(list(images), mode, is_text=False)
