"""Crop/segment matching: similarity matrix, per-segment argmax, aggregation.

The score of an (image, caption) pair is the mean, over caption segments, of
each segment's best cosine similarity against the image's crop embeddings.
The baseline global score is the degenerate case of one full-image crop and
one full-caption segment.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .crops import CropConfig, CropRect, extract_and_resize, plan_crops
from .embeddings import (
    EmbeddingMatrix,
    crop_key_prefix,
    image_key,
    l2_normalize,
    text_key,
)
from .errors import CacheMissError, DegenerateInputError
from .raster import preprocess_input
from .segments import (
    CaptionSegments,
    Granularity,
    Lexicon,
    SegmentAnnotation,
    segment_automatic,
    segment_structured,
)


@dataclass(frozen=True)
class SimilarityMatrix:
    n_crops: int
    n_segments: int
    values: np.ndarray  # (n_crops, n_segments)

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.shape != (self.n_crops, self.n_segments):
            raise DegenerateInputError(
                f"similarity values shape {vals.shape} != ({self.n_crops}, {self.n_segments})"
            )
        if vals.size and not np.all(np.isfinite(vals)):
            raise DegenerateInputError("similarity matrix contains non-finite values")
        if vals.size and (vals.min() < -1 - 1e-6 or vals.max() > 1 + 1e-6):
            raise DegenerateInputError("cosine similarities outside [-1, 1]")
        object.__setattr__(self, "values", vals)


@dataclass(frozen=True)
class MatchSet:
    """One (crop, similarity) entry per segment: (segment idx, crop idx, sim)."""

    entries: tuple[tuple[int, int, float], ...]

    def similarities(self) -> list[float]:
        return [sim for _, _, sim in self.entries]


def sim_matrix(crop_embs: EmbeddingMatrix, seg_embs: EmbeddingMatrix) -> SimilarityMatrix:
    """Pairwise cosine similarity, crops as rows and segments as columns.

    Rows are L2-normalized first so the matrix is a single dot product.
    """
    if crop_embs.dim != seg_embs.dim:
        raise DegenerateInputError(
            f"embedding dims differ: crops {crop_embs.dim} vs segments {seg_embs.dim}"
        )
    if crop_embs.rows == 0 or seg_embs.rows == 0:
        raise DegenerateInputError("similarity matrix needs at least one crop and one segment")
    v = l2_normalize(crop_embs).data.astype(np.float64)
    t = l2_normalize(seg_embs).data.astype(np.float64)
    values = v @ t.T
    np.clip(values, -1.0, 1.0, out=values)
    return SimilarityMatrix(n_crops=crop_embs.rows, n_segments=seg_embs.rows, values=values)


def match_segments(matrix: SimilarityMatrix) -> MatchSet:
    """Pick the best crop per segment; ties go to the lowest crop index."""
    if matrix.n_crops < 1 or matrix.n_segments < 1:
        raise DegenerateInputError("cannot match over an empty similarity matrix")
    best = np.argmax(matrix.values, axis=0)  # first occurrence wins ties
    entries = tuple(
        (j, int(best[j]), float(matrix.values[best[j], j]))
        for j in range(matrix.n_segments)
    )
    return MatchSet(entries=entries)


def aggregate(matches: MatchSet) -> float:
    if not matches.entries:
        raise DegenerateInputError("cannot aggregate an empty match set")
    sims = matches.similarities()
    return float(sum(sims) / len(sims))


@dataclass(frozen=True)
class SgiConfig:
    crop_config: CropConfig = field(default_factory=CropConfig)
    granularity: Granularity = Granularity.COARSE
    canvas_side: int = 224
    lexicon: Lexicon | None = None


def caption_segments(
    caption: str,
    annotation: SegmentAnnotation | None,
    cfg: SgiConfig,
) -> CaptionSegments:
    if annotation is not None:
        return segment_structured(annotation, caption, cfg.granularity)
    return segment_automatic(caption, cfg.lexicon)


def _stack_single_rows(mats: list[EmbeddingMatrix]) -> EmbeddingMatrix:
    data = np.vstack([m.data for m in mats])
    return EmbeddingMatrix.from_array(data)


def _store_lookup_texts(store: dict, texts: list[str]) -> EmbeddingMatrix:
    keys = [text_key(t) for t in texts]
    missing = [k for k in keys if k not in store]
    if missing:
        raise CacheMissError(missing)
    return _stack_single_rows([store[k].matrix for k in keys])


def sgi_score(image, caption: str, encoder, cfg: SgiConfig | None = None,
              annotation: SegmentAnnotation | None = None) -> float:
    """Full pipeline score for one (image, caption) pair.

    ``encoder`` is either a live encoder (descriptor / encode_image_batch /
    encode_text_batch) with ``image`` an ImageRaster, or an EMB1 store dict
    with ``image`` an image id whose crop embeddings were precomputed.
    """
    cfg = cfg or SgiConfig()
    segs = caption_segments(caption, annotation, cfg)

    if isinstance(encoder, dict):
        prefix = crop_key_prefix(str(image))
        crop_keys = sorted(k for k in encoder if k.startswith(prefix))
        if not crop_keys:
            raise CacheMissError([prefix + "*"])
        crop_embs = _stack_single_rows([encoder[k].matrix for k in crop_keys])
        seg_embs = _store_lookup_texts(encoder, list(segs.segments))
    else:
        canvas = preprocess_input(image, cfg.canvas_side)
        rects = plan_crops(canvas.width, canvas.height, cfg.crop_config)
        side = encoder.descriptor().input_side
        crops = [extract_and_resize(canvas, r, (side, side)) for r in rects]
        crop_embs = _stack_single_rows(encoder.encode_image_batch(crops, mode="global"))
        seg_embs = _stack_single_rows(
            encoder.encode_text_batch(list(segs.segments), mode="global")
        )

    matrix = sim_matrix(crop_embs, seg_embs)
    return aggregate(match_segments(matrix))


def global_score(image, caption: str, encoder, canvas_side: int = 224) -> float:
    """Cosine between the pooled image and caption embeddings."""
    if isinstance(encoder, dict):
        img_key = image_key(str(image))
        txt_key = text_key(caption)
        missing = [k for k in (img_key, txt_key) if k not in encoder]
        if missing:
            raise CacheMissError(missing)
        crop_embs = encoder[img_key].matrix
        seg_embs = encoder[txt_key].matrix
    else:
        canvas = preprocess_input(image, canvas_side)
        side = encoder.descriptor().input_side
        full = extract_and_resize(canvas, CropRect(0, 0, canvas.width, canvas.height), (side, side))
        crop_embs = encoder.encode_image_batch([full], mode="global")[0]
        seg_embs = encoder.encode_text_batch([caption], mode="global")[0]
    matrix = sim_matrix(crop_embs, seg_embs)
    return aggregate(match_segments(matrix))
