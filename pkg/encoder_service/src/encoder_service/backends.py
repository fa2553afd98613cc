"""Encoder backends behind one small interface.

A backend reports a descriptor and encodes batches:

    encode_text(texts, mode)  -> (rows, rows_per_item)   mode: global | tokens
    encode_image(images, mode) -> (rows, rows_per_item)  mode: global | patches

``rows`` is a single (sum(rows_per_item), dim) float32 array. Backends are
frozen: ``param_checksum()`` must not change across requests.

``toy`` is a dependency-light deterministic backend for tests and protocol
work; ``hf-clip`` wraps a transformers CLIP-style dual encoder with the
sequence layer (last or penultimate) selected by a forward hook.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ServiceConfig:
    backend: str = "toy"
    model_name: str = "openai/clip-vit-base-patch32"
    layer: str = "penultimate"  # sequence embeddings: "last" | "penultimate"
    device: str = "cpu"
    max_batch: int = 64
    port: int = 8763
    toy_dim: int = 32
    toy_seed: int = 0

    def __post_init__(self):
        if self.layer not in ("last", "penultimate"):
            raise ValueError(f"layer must be last/penultimate, got {self.layer!r}")
        if self.max_batch < 1:
            raise ValueError("max_batch must be positive")


class ToyBackend:
    """Deterministic random-feature encoder; no model weights involved.

    Text tokens are whitespace words plus two sentinel positions; image
    patches are a 4x4 grid. Every vector is a seeded hash of its content,
    so identical inputs give identical embeddings forever.
    """

    input_side = 64
    patch_grid = 4

    def __init__(self, dim: int = 32, seed: int = 0, layer: str = "penultimate"):
        self.dim = dim
        self.seed = seed
        self.layer = layer
        self.model_name = f"toy/deterministic-{dim}"

    def _vec(self, tag: str, payload: bytes) -> np.ndarray:
        digest = hashlib.sha256(f"{self.seed}:{self.layer}:{tag}:".encode() + payload).digest()
        rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
        v = rng.normal(size=self.dim)
        return (v / np.linalg.norm(v)).astype(np.float32)

    def descriptor(self) -> dict:
        return {
            "model_name": self.model_name,
            "embedding_dim": self.dim,
            "layer": self.layer,
            "input_side": self.input_side,
        }

    def encode_text(self, texts: list[str], mode: str):
        rows, counts = [], []
        for text in texts:
            if mode == "global":
                rows.append(self._vec("txt", text.encode()))
                counts.append(1)
            else:
                words = ["<start>", *text.split(), "<end>"]
                for pos, word in enumerate(words):
                    rows.append(self._vec("tok", f"{text}\x1f{pos}\x1f{word}".encode()))
                counts.append(len(words))
        return np.vstack(rows), counts

    def encode_image(self, images, mode: str):
        rows, counts = [], []
        for img in images:
            small = img.convert("RGB").resize((self.input_side, self.input_side))
            raw = small.tobytes()
            if mode == "global":
                rows.append(self._vec("img", raw))
                counts.append(1)
            else:
                arr = np.asarray(small)
                step = self.input_side // self.patch_grid
                n = 0
                for gy in range(self.patch_grid):
                    for gx in range(self.patch_grid):
                        patch = arr[gy * step:(gy + 1) * step, gx * step:(gx + 1) * step]
                        rows.append(self._vec("patch", patch.tobytes()))
                        n += 1
                counts.append(n)
        return np.vstack(rows), counts

    def param_checksum(self) -> str:
        return hashlib.sha256(f"{self.seed}:{self.dim}".encode()).hexdigest()


class HfClipBackend:
    """CLIP-style dual encoder from transformers, weights frozen.

    Global modes use the model's projected pooled features (the vectors
    standard cosine scoring uses). Sequence modes return per-position hidden
    states from the configured layer; "penultimate" is captured by a forward
    hook on the second-to-last encoder block of each tower.
    """

    def __init__(self, model_name: str, layer: str = "penultimate", device: str = "cpu"):
        import torch
        from transformers import AutoProcessor, CLIPModel

        self.torch = torch
        self.model_name = model_name
        self.layer = layer
        self.device = device
        self.model = CLIPModel.from_pretrained(model_name).to(device)
        self.model.eval()
        for p in self.model.parameters():
            p.requires_grad_(False)
        self.processor = AutoProcessor.from_pretrained(model_name)
        self._captured: dict[str, object] = {}
        if layer == "penultimate":
            self.model.text_model.encoder.layers[-2].register_forward_hook(
                self._capture("text")
            )
            self.model.vision_model.encoder.layers[-2].register_forward_hook(
                self._capture("vision")
            )

    def _capture(self, tower: str):
        def hook(module, inputs, output):
            hidden = output[0] if isinstance(output, tuple) else output
            self._captured[tower] = hidden.detach()

        return hook

    def descriptor(self) -> dict:
        return {
            "model_name": self.model_name,
            "embedding_dim": int(self.model.config.projection_dim),
            "layer": self.layer,
            "input_side": int(self.model.config.vision_config.image_size),
        }

    def _sequence_hidden(self, tower: str, last_hidden):
        if self.layer == "penultimate":
            return self._captured[tower]
        return last_hidden

    def encode_text(self, texts: list[str], mode: str):
        torch = self.torch
        inputs = self.processor(
            text=texts, return_tensors="pt", padding=True, truncation=True
        ).to(self.device)
        with torch.no_grad():
            if mode == "global":
                feats = self.model.get_text_features(**inputs)
                return feats.cpu().numpy().astype(np.float32), [1] * len(texts)
            out = self.model.text_model(**inputs)
            hidden = self._sequence_hidden("text", out.last_hidden_state)
        mask = inputs["attention_mask"].bool().cpu().numpy()
        hidden = hidden.cpu().numpy().astype(np.float32)
        rows, counts = [], []
        for i in range(len(texts)):
            item = hidden[i][mask[i]]
            rows.append(item)
            counts.append(item.shape[0])
        return np.vstack(rows), counts

    def encode_image(self, images, mode: str):
        torch = self.torch
        inputs = self.processor(images=list(images), return_tensors="pt").to(self.device)
        with torch.no_grad():
            if mode == "global":
                feats = self.model.get_image_features(**inputs)
                return feats.cpu().numpy().astype(np.float32), [1] * len(images)
            out = self.model.vision_model(**inputs)
            hidden = self._sequence_hidden("vision", out.last_hidden_state)
        hidden = hidden.cpu().numpy().astype(np.float32)
        rows = [hidden[i] for i in range(len(images))]
        return np.vstack(rows), [r.shape[0] for r in rows]

    def param_checksum(self) -> str:
        digest = hashlib.sha256()
        for name, tensor in sorted(self.model.state_dict().items()):
            digest.update(name.encode())
            digest.update(tensor.cpu().numpy().tobytes())
        return digest.hexdigest()


def load_backend(config: ServiceConfig):
    """Instantiate the configured backend; raises if the model cannot load."""
    if config.backend == "toy":
        return ToyBackend(dim=config.toy_dim, seed=config.toy_seed, layer=config.layer)
    if config.backend == "hf-clip":
        return HfClipBackend(config.model_name, layer=config.layer, device=config.device)
    raise ValueError(f"unknown backend {config.backend!r}")
