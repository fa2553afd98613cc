"""Scorer implementations plugged into the retrieval evaluator.

A scorer maps (image reference, caption, optional annotation) to one float.
Store-backed scorers resolve references against an EMB1 store using the
shared key scheme; live scorers read image files and call a remote encoder.
"""

from __future__ import annotations

from pathlib import Path

from .raster import read_image
from .rng import Pcg32, stream_for
from .sgi import SgiConfig, global_score, sgi_score


class GlobalStoreScorer:
    """Cosine of pooled embeddings looked up from a store."""

    name = "global-store"

    def __init__(self, store: dict):
        self.store = store

    def score(self, image_ref: str, caption: str, annotation=None) -> float:
        return global_score(image_ref, caption, self.store)


class SgiStoreScorer:
    """Crop/segment matching over precomputed crop embeddings."""

    name = "sgi-store"

    def __init__(self, store: dict, cfg: SgiConfig | None = None):
        self.store = store
        self.cfg = cfg or SgiConfig()

    def score(self, image_ref: str, caption: str, annotation=None) -> float:
        return sgi_score(image_ref, caption, self.store, self.cfg, annotation)


class GlobalLiveScorer:
    """Cosine of pooled embeddings from a live encoder; image refs are files."""

    name = "global-live"

    def __init__(self, encoder, image_root, canvas_side: int = 224):
        self.encoder = encoder
        self.image_root = Path(image_root)
        self.canvas_side = canvas_side

    def _load(self, image_ref: str):
        path = self.image_root / image_ref
        if not path.suffix:
            path = path.with_suffix(".png")
        return read_image(path)

    def score(self, image_ref: str, caption: str, annotation=None) -> float:
        return global_score(self._load(image_ref), caption, self.encoder, self.canvas_side)


class SgiLiveScorer(GlobalLiveScorer):
    name = "sgi-live"

    def __init__(self, encoder, image_root, cfg: SgiConfig | None = None):
        super().__init__(encoder, image_root)
        self.cfg = cfg or SgiConfig()

    def score(self, image_ref: str, caption: str, annotation=None) -> float:
        return sgi_score(self._load(image_ref), caption, self.encoder, self.cfg, annotation)


class RandomScorer:
    """Uniform [0,1) score per (image, caption) pair, deterministic in the seed.

    Streams keyed by the pair make the score independent of evaluation order.
    """

    name = "random"

    def __init__(self, seed: int = 0):
        self.seed = seed

    def score(self, image_ref: str, caption: str, annotation=None) -> float:
        return Pcg32(self.seed, stream_for(f"{image_ref}\x1f{caption}")).random()
