"""Batch dumper: encode a manifest of texts/images into an EMB1 store.

Manifest rows (JSON Lines):

    {"type": "text", "content": "...", "mode": "global"|"tokens"}
    {"type": "image", "path": "...", "id": "...", "mode": "global"|"patches",
     "crop": [x, y, w, h]?, "canvas": side?}

Image rows may name a crop rect, applied after an optional shorter-side
resize + center crop to ``canvas``; the record key then carries the rect so
stores line up with crop-level consumers. Unreadable rows are skipped and
listed; the dump still completes but the exit status reports the skips.
"""

from __future__ import annotations

import json
from pathlib import Path

from PIL import Image

from . import emb1


def _preprocess_canvas(img: Image.Image, side: int) -> Image.Image:
    w, h = img.size
    if w <= h:
        new_w, new_h = side, max(side, round(h * side / w))
    else:
        new_w, new_h = max(side, round(w * side / h)), side
    img = img.resize((new_w, new_h), Image.BILINEAR)
    left, top = (new_w - side) // 2, (new_h - side) // 2
    return img.crop((left, top, left + side, top + side))


def _image_record_key(row: dict) -> str:
    image_id = row.get("id") or Path(row["path"]).stem
    if "crop" in row:
        x, y, w, h = row["crop"]
        return emb1.crop_key(image_id, x, y, w, h)
    if row.get("mode") == "patches":
        return emb1.patches_key(image_id)
    return emb1.image_key(image_id)


def dump_store(backend, manifest_path, out_path, batch: int = 32):
    """Returns (record count, skipped row descriptions)."""
    rows = []
    with open(manifest_path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if line.strip():
                rows.append((line_no, json.loads(line)))

    records: list[tuple[str, int, object]] = []
    skipped: list[str] = []
    seen_keys: set[str] = set()

    text_batch: list[tuple[str, str, str]] = []  # (key, content, mode)
    image_batch: list[tuple[str, Image.Image, str]] = []

    def flush_texts():
        for mode in ("global", "tokens"):
            group = [(k, c) for k, c, m in text_batch if m == mode]
            for start in range(0, len(group), batch):
                chunk = group[start : start + batch]
                rows_arr, counts = backend.encode_text([c for _, c in chunk], mode)
                offset = 0
                for (key, _), count in zip(chunk, counts):
                    kind = emb1.KIND_GLOBAL_TEXT if mode == "global" else emb1.KIND_TOKEN_SEQUENCE
                    records.append((key, kind, rows_arr[offset : offset + count]))
                    offset += count
        text_batch.clear()

    def flush_images():
        for mode in ("global", "patches"):
            group = [(k, i) for k, i, m in image_batch if m == mode]
            for start in range(0, len(group), batch):
                chunk = group[start : start + batch]
                rows_arr, counts = backend.encode_image([i for _, i in chunk], mode)
                offset = 0
                for (key, _), count in zip(chunk, counts):
                    kind = emb1.KIND_GLOBAL_IMAGE if mode == "global" else emb1.KIND_PATCH_SEQUENCE
                    records.append((key, kind, rows_arr[offset : offset + count]))
                    offset += count
        image_batch.clear()

    for line_no, row in rows:
        try:
            kind = row["type"]
            mode = row.get("mode", "global")
            if kind == "text":
                key = emb1.text_key(row["content"]) if mode == "global" else emb1.tokens_key(row["content"])
                if key in seen_keys:
                    continue
                seen_keys.add(key)
                text_batch.append((key, row["content"], mode))
            elif kind == "image":
                key = _image_record_key(row)
                if key in seen_keys:
                    continue
                img = Image.open(row["path"])
                img.load()
                img = img.convert("RGB")
                if "canvas" in row:
                    img = _preprocess_canvas(img, int(row["canvas"]))
                if "crop" in row:
                    x, y, w, h = row["crop"]
                    if x < 0 or y < 0 or w <= 0 or h <= 0 or x + w > img.width or y + h > img.height:
                        raise ValueError(f"crop {row['crop']} outside image {img.size}")
                    img = img.crop((x, y, x + w, y + h))
                seen_keys.add(key)
                image_batch.append((key, img, mode))
            else:
                raise ValueError(f"unknown row type {kind!r}")
        except Exception as exc:
            skipped.append(f"line {line_no}: {exc}")

    flush_texts()
    flush_images()
    emb1.write_store(out_path, records)
    return len(records), skipped
