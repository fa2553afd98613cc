"""FastAPI application implementing the encoder wire protocol."""

from __future__ import annotations

import base64
import binascii
import io
import threading

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse
from PIL import Image, UnidentifiedImageError

TEXT_MODES = ("global", "tokens")
IMAGE_MODES = ("global", "patches")


def _bad_request(message: str) -> JSONResponse:
    return JSONResponse(status_code=400, content={"error": message})


def _not_loaded() -> JSONResponse:
    return JSONResponse(status_code=503, content={"error": "model not loaded"})


def create_app(backend=None, max_batch: int = 64) -> FastAPI:
    """Build the service around one backend; backend=None serves only 503s."""
    app = FastAPI(title="encoder-service")
    app.state.backend = backend
    app.state.max_batch = max_batch
    # model access is serialized: responses stay deterministic under
    # concurrent clients and backends need not be thread-safe
    app.state.lock = threading.Lock()

    @app.get("/v1/descriptor")
    def descriptor():
        if app.state.backend is None:
            return _not_loaded()
        return app.state.backend.descriptor()

    async def _parse(request: Request, field: str, modes):
        try:
            body = await request.json()
        except Exception:
            return None, _bad_request("body is not valid JSON")
        if not isinstance(body, dict):
            return None, _bad_request("body must be a JSON object")
        items = body.get(field)
        if not isinstance(items, list) or not items:
            return None, _bad_request(f"{field} missing or empty")
        if len(items) > app.state.max_batch:
            return None, _bad_request(
                f"batch of {len(items)} exceeds max batch {app.state.max_batch}"
            )
        mode = body.get("mode", "global")
        if mode not in modes:
            return None, _bad_request(f"mode must be one of {list(modes)}")
        return (items, mode), None

    @app.post("/v1/encode/text")
    async def encode_text(request: Request):
        if app.state.backend is None:
            return _not_loaded()
        parsed, err = await _parse(request, "texts", TEXT_MODES)
        if err is not None:
            return err
        texts, mode = parsed
        if not all(isinstance(t, str) and t.strip() for t in texts):
            return _bad_request("texts must be non-empty strings")
        with app.state.lock:
            rows, counts = app.state.backend.encode_text(texts, mode)
        return {"embeddings": rows.tolist(), "rows_per_item": counts}

    @app.post("/v1/encode/image")
    async def encode_image(request: Request):
        if app.state.backend is None:
            return _not_loaded()
        parsed, err = await _parse(request, "images_b64", IMAGE_MODES)
        if err is not None:
            return err
        blobs, mode = parsed
        images = []
        for i, b64 in enumerate(blobs):
            if not isinstance(b64, str):
                return _bad_request(f"images_b64[{i}] is not a string")
            try:
                raw = base64.b64decode(b64, validate=True)
                img = Image.open(io.BytesIO(raw))
                img.load()
            except (binascii.Error, UnidentifiedImageError, OSError, ValueError):
                return _bad_request(f"images_b64[{i}] is not a decodable image")
            images.append(img)
        with app.state.lock:
            rows, counts = app.state.backend.encode_image(images, mode)
        return {"embeddings": rows.tolist(), "rows_per_item": counts}

    return app
