"""HTTP client for the encoder wire protocol.

Endpoints (JSON bodies):

    GET  /v1/descriptor          -> {"model_name", "embedding_dim", "layer", "input_side"}
    POST /v1/encode/text         {"texts": [...], "mode": "global"|"tokens"}
    POST /v1/encode/image        {"images_b64": [...], "mode": "global"|"patches"}

Encode responses carry {"embeddings": [[...], ...], "rows_per_item": [...]}:
a flat row list plus the number of rows belonging to each input, in order.
Transport failures and 503 (model not loaded) are retried; contract
violations (wrong dims, malformed bodies) are not.
"""

from __future__ import annotations

import base64
import concurrent.futures
import time
from dataclasses import dataclass

import numpy as np
import requests

from .embeddings import (
    EmbeddingMatrix,
    EmbeddingRecord,
    RecordKind,
    image_key,
    patches_key,
    text_key,
    tokens_key,
)
from .errors import ConfigurationError, ProtocolError, TransportError
from .raster import ImageRaster, raster_to_png_bytes


@dataclass(frozen=True)
class EncoderDescriptor:
    model_name: str
    embedding_dim: int
    layer: str  # "last" | "penultimate"
    input_side: int

    def __post_init__(self):
        if self.embedding_dim <= 0:
            raise ProtocolError(f"descriptor embedding_dim {self.embedding_dim} invalid")
        if self.layer not in ("last", "penultimate"):
            raise ProtocolError(f"descriptor layer {self.layer!r} invalid")


class RemoteEncoder:
    """Talks to one encoder service; safe for concurrent batch issuance."""

    def __init__(self, base_url: str, retries: int = 2, backoff: float = 0.5,
                 timeout: float = 120.0, max_in_flight: int = 4,
                 batch_limit: int = 64):
        self.base_url = base_url.rstrip("/")
        self.retries = retries
        self.backoff = backoff
        self.timeout = timeout
        self.max_in_flight = max_in_flight
        self.batch_limit = batch_limit
        self._session = requests.Session()
        self._descriptor: EncoderDescriptor | None = None

    # -- plumbing --------------------------------------------------------

    def _request(self, method: str, path: str, payload=None) -> dict:
        url = self.base_url + path
        last_exc: Exception | None = None
        for attempt in range(self.retries + 1):
            try:
                resp = self._session.request(method, url, json=payload, timeout=self.timeout)
            except requests.RequestException as exc:
                last_exc = exc
                if attempt < self.retries:
                    time.sleep(self.backoff * (attempt + 1))
                continue
            if resp.status_code == 503:
                last_exc = TransportError("service reports model not loaded (503)")
                if attempt < self.retries:
                    time.sleep(self.backoff * (attempt + 1))
                continue
            if resp.status_code == 400:
                try:
                    message = resp.json().get("error", resp.text)
                except ValueError:
                    message = resp.text
                raise ProtocolError(f"{path}: {message}")
            if resp.status_code != 200:
                raise ProtocolError(f"{path}: unexpected status {resp.status_code}")
            try:
                return resp.json()
            except ValueError as exc:
                raise ProtocolError(f"{path}: non-JSON response") from exc
        raise TransportError(f"{method} {url} failed after {self.retries + 1} attempts: {last_exc}")

    def descriptor(self) -> EncoderDescriptor:
        if self._descriptor is None:
            d = self._request("GET", "/v1/descriptor")
            try:
                self._descriptor = EncoderDescriptor(
                    model_name=d["model_name"],
                    embedding_dim=int(d["embedding_dim"]),
                    layer=d["layer"],
                    input_side=int(d["input_side"]),
                )
            except KeyError as exc:
                raise ProtocolError(f"descriptor missing field {exc}") from exc
        return self._descriptor

    def _split_rows(self, body: dict, n_items: int, what: str) -> list[EmbeddingMatrix]:
        try:
            rows = body["embeddings"]
            rows_per_item = body["rows_per_item"]
        except KeyError as exc:
            raise ProtocolError(f"{what}: response missing field {exc}") from exc
        if len(rows_per_item) != n_items:
            raise ProtocolError(
                f"{what}: {len(rows_per_item)} row counts for {n_items} inputs"
            )
        if sum(rows_per_item) != len(rows):
            raise ProtocolError(f"{what}: rows_per_item does not sum to row count")
        dim = self.descriptor().embedding_dim
        mats = []
        offset = 0
        for count in rows_per_item:
            chunk = np.asarray(rows[offset : offset + count], dtype=np.float32)
            if chunk.ndim != 2 or chunk.shape[1] != dim:
                raise ProtocolError(
                    f"{what}: embedding dim {chunk.shape} != descriptor dim {dim}"
                )
            mats.append(EmbeddingMatrix.from_array(chunk))
            offset += count
        return mats

    def _encode_chunked(self, path: str, key: str, items: list, mode: str) -> list[EmbeddingMatrix]:
        if not items:
            raise ConfigurationError("encode batch may not be empty")
        chunks = [items[i : i + self.batch_limit] for i in range(0, len(items), self.batch_limit)]
        if len(chunks) == 1:
            return self._split_rows(
                self._request("POST", path, {key: chunks[0], "mode": mode}),
                len(chunks[0]), path,
            )
        results: list[list[EmbeddingMatrix]] = [None] * len(chunks)  # type: ignore[list-item]
        with concurrent.futures.ThreadPoolExecutor(max_workers=self.max_in_flight) as pool:
            futures = {
                pool.submit(
                    self._request, "POST", path, {key: chunk, "mode": mode}
                ): idx
                for idx, chunk in enumerate(chunks)
            }
            for fut in concurrent.futures.as_completed(futures):
                idx = futures[fut]
                results[idx] = self._split_rows(fut.result(), len(chunks[idx]), path)
        return [m for chunk in results for m in chunk]

    # -- public API ------------------------------------------------------

    def encode_text_batch(self, texts: list[str], mode: str = "global") -> list[EmbeddingMatrix]:
        return self._encode_chunked("/v1/encode/text", "texts", list(texts), mode)

    def encode_image_batch(self, images, mode: str = "global") -> list[EmbeddingMatrix]:
        payload = []
        for img in images:
            data = raster_to_png_bytes(img) if isinstance(img, ImageRaster) else bytes(img)
            payload.append(base64.b64encode(data).decode("ascii"))
        return self._encode_chunked("/v1/encode/image", "images_b64", payload, mode)


def encode_remote(client: RemoteEncoder, inputs, kind: RecordKind) -> list[EmbeddingRecord]:
    """Encode a batch into keyed records, order preserved.

    Text kinds take a list of strings; image kinds take (image_id, raster)
    pairs so keys can be assigned.
    """
    if not inputs:
        raise ConfigurationError("encode batch may not be empty")
    if kind is RecordKind.GLOBAL_TEXT:
        mats = client.encode_text_batch(list(inputs), mode="global")
        keys = [text_key(t) for t in inputs]
    elif kind is RecordKind.TOKEN_SEQUENCE:
        mats = client.encode_text_batch(list(inputs), mode="tokens")
        keys = [tokens_key(t) for t in inputs]
    elif kind is RecordKind.GLOBAL_IMAGE:
        ids, rasters = zip(*inputs)
        mats = client.encode_image_batch(list(rasters), mode="global")
        keys = [image_key(i) for i in ids]
    elif kind is RecordKind.PATCH_SEQUENCE:
        ids, rasters = zip(*inputs)
        mats = client.encode_image_batch(list(rasters), mode="patches")
        keys = [patches_key(i) for i in ids]
    else:
        raise ConfigurationError(f"unsupported record kind {kind}")
    return [EmbeddingRecord(key=k, kind=kind, matrix=m) for k, m in zip(keys, mats)]
