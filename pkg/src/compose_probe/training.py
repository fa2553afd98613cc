"""Contrastive training of the alignment transformer.

The objective is symmetric InfoNCE over the batch score matrix: cross-entropy
of each positive row against its matching column and vice versa, averaged.
Scores are divided by a temperature first; by default the inverse temperature
is the learnable ``logit_scale`` parameter (initialized to 1/0.07). Batches
with hard negatives append the negative images/captions as extra rows and
columns that carry no target of their own.

Optimization is decoupled-weight-decay Adam with bias correction under a
linear-warmup cosine schedule. Gradients are accumulated in float64 so the
summation order cannot change results.
"""

from __future__ import annotations

import copy
import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .embeddings import (
    EmbeddingMatrix,
    EmbeddingRecord,
    RecordKind,
    image_key,
    patches_key,
    store_read,
    store_write,
    text_key,
    tokens_key,
)
from .errors import CacheMissError, ConfigurationError, NumericError
from .rng import Pcg32, stream_for
from .transformer import (
    SequenceBatch,
    TransformerConfig,
    Variant,
    backward_batch,
    forward_batch,
    init_params,
    pack_sequences,
    param_count,
)

__all__ = [
    "TrainConfig",
    "PairData",
    "TrainingBatch",
    "contrastive_loss",
    "grad",
    "loss_and_grad",
    "score_matrix",
    "forward_pair",
    "adamw_step",
    "adam_init",
    "cosine_schedule",
    "train",
    "TrainResult",
    "batch_accuracy",
    "param_count",
    "save_checkpoint",
    "load_checkpoint",
    "write_history_csv",
    "TransformerScorer",
    "make_separable_pairs",
    "pairs_from_store",
]


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.95
    eps: float = 1e-8
    weight_decay: float = 1e-7
    warmup_frac: float = 0.10
    batch_size: int = 50
    epochs: int = 5
    temperature: float | None = None  # None: use the learnable logit_scale
    pair_chunk: int = 512

    def __post_init__(self):
        if not (0.0 < self.warmup_frac < 1.0):
            raise ConfigurationError("warmup fraction must be in (0, 1)")
        if self.batch_size < 2:
            raise ConfigurationError("contrastive batches need at least 2 items")
        if self.batch_size > 64:
            # pair scoring is O(batch^2) forwards; keep it bounded
            raise ConfigurationError("batch size capped at 64")
        if self.temperature is not None and self.temperature <= 0:
            raise ConfigurationError("temperature must be positive")


@dataclass
class PairData:
    """Aligned frozen inputs: item i's image sequence matches its text sequence.

    Optional hard negatives are aligned too: ``neg_visual[i]``/``neg_textual[i]``
    belong to positive pair i.
    """

    visual: list[np.ndarray]
    textual: list[np.ndarray]
    neg_visual: list[np.ndarray] | None = None
    neg_textual: list[np.ndarray] | None = None

    def __post_init__(self):
        if len(self.visual) != len(self.textual):
            raise ConfigurationError("visual/textual pair counts differ")
        if (self.neg_visual is None) != (self.neg_textual is None):
            raise ConfigurationError("hard negatives need both images and captions")
        if self.neg_visual is not None and (
            len(self.neg_visual) != len(self.visual)
            or len(self.neg_textual) != len(self.visual)
        ):
            raise ConfigurationError("hard negatives must align with positives")

    def __len__(self) -> int:
        return len(self.visual)

    @property
    def has_negatives(self) -> bool:
        return self.neg_visual is not None


@dataclass
class TrainingBatch:
    """Cross-scoring inputs: every image row against every text column."""

    images: list[np.ndarray]
    texts: list[np.ndarray]
    n_positive: int

    def __post_init__(self):
        if self.n_positive < 1 or self.n_positive > min(len(self.images), len(self.texts)):
            raise ConfigurationError("n_positive out of range")


def _softmax_ce(scaled: np.ndarray, n_positive: int) -> tuple[float, np.ndarray]:
    """Symmetric cross-entropy and its gradient wrt the scaled scores."""
    r, c = scaled.shape
    dscaled = np.zeros_like(scaled, dtype=np.float64)
    s = scaled.astype(np.float64)

    # rows: positive image i should pick text i among all columns
    row = s[:n_positive]
    row_max = row.max(axis=1, keepdims=True)
    row_lse = row_max[:, 0] + np.log(np.exp(row - row_max).sum(axis=1))
    row_ce = row_lse - row[np.arange(n_positive), np.arange(n_positive)]
    prow = np.exp(row - row_lse[:, None])
    drow = prow.copy()
    drow[np.arange(n_positive), np.arange(n_positive)] -= 1.0

    # columns: positive text j should pick image j among all rows
    col = s[:, :n_positive]
    col_max = col.max(axis=0, keepdims=True)
    col_lse = col_max[0] + np.log(np.exp(col - col_max).sum(axis=0))
    col_ce = col_lse - col[np.arange(n_positive), np.arange(n_positive)]
    pcol = np.exp(col - col_lse[None, :])
    dcol = pcol.copy()
    dcol[np.arange(n_positive), np.arange(n_positive)] -= 1.0

    loss = 0.5 * (row_ce.mean() + col_ce.mean())
    dscaled[:n_positive] += drow / (2.0 * n_positive)
    dscaled[:, :n_positive] += dcol / (2.0 * n_positive)
    return float(loss), dscaled


def contrastive_loss(scores: np.ndarray, temperature: float = 1.0,
                     n_positive: int | None = None) -> float:
    """Symmetric InfoNCE value for a score matrix (targets on the diagonal)."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 2:
        raise ConfigurationError("score matrix must be 2-D")
    if temperature <= 0:
        raise ConfigurationError("temperature must be positive")
    if n_positive is None:
        if scores.shape[0] != scores.shape[1]:
            raise ConfigurationError(
                f"symmetric loss needs a square matrix, got {scores.shape}"
            )
        n_positive = scores.shape[0]
    if not np.all(np.isfinite(scores)):
        raise NumericError("non-finite scores in loss")
    loss, _ = _softmax_ce(scores / temperature, n_positive)
    return loss


def forward_pair(params, cfg: TransformerConfig, patches: np.ndarray, tokens: np.ndarray) -> float:
    """Score one (image, text) pair from unpadded (len, dim) sequences."""
    dtype = params["cls"].dtype
    p, pm = pack_sequences([np.atleast_2d(patches)], cfg.visual_dim, dtype)
    t, tm = pack_sequences([np.atleast_2d(tokens)], cfg.text_dim, dtype)
    scores, _ = forward_batch(params, cfg, SequenceBatch(p, pm, t, tm))
    return float(scores[0])


def _cross_batches(images, texts, cfg, dtype, chunk):
    """Yield (row slice, SequenceBatch) covering the full image x text grid."""
    r, c = len(images), len(texts)
    pairs = [(i, j) for i in range(r) for j in range(c)]
    for start in range(0, len(pairs), chunk):
        part = pairs[start : start + chunk]
        pv, pm = pack_sequences([np.atleast_2d(images[i]) for i, _ in part], cfg.visual_dim, dtype)
        tv, tm = pack_sequences([np.atleast_2d(texts[j]) for _, j in part], cfg.text_dim, dtype)
        yield part, SequenceBatch(pv, pm, tv, tm)


def score_matrix(params, cfg: TransformerConfig, batch: TrainingBatch,
                 chunk: int = 512) -> np.ndarray:
    """Forward every (image, text) pair; rows follow image order, columns text."""
    dtype = params["cls"].dtype
    out = np.zeros((len(batch.images), len(batch.texts)), dtype=np.float64)
    for part, seqs in _cross_batches(batch.images, batch.texts, cfg, dtype, chunk):
        scores, _ = forward_batch(params, cfg, seqs)
        for (i, j), s in zip(part, scores):
            out[i, j] = s
    return out


def loss_and_grad(params, cfg: TransformerConfig, batch: TrainingBatch,
                  temperature: float | None = None, chunk: int = 512):
    """Loss plus exact gradients for every parameter tensor.

    ``temperature`` pins a fixed temperature; None uses exp(logit_scale) and
    produces its gradient too. Gradients accumulate in float64.
    """
    scores = score_matrix(params, cfg, batch, chunk)
    if temperature is None and "logit_scale" in params:
        inv_t = float(np.exp(params["logit_scale"]))
        learn_t = True
    else:
        inv_t = 1.0 / (temperature if temperature is not None else 1.0)
        learn_t = False
    loss, dscaled = _softmax_ce(scores * inv_t, batch.n_positive)
    dscores = dscaled * inv_t

    grads = {k: np.zeros(v.shape, dtype=np.float64) for k, v in params.items()}
    dtype = params["cls"].dtype
    for part, seqs in _cross_batches(batch.images, batch.texts, cfg, dtype, chunk):
        _, cache = forward_batch(params, cfg, seqs, with_cache=True)
        dvec = np.array([dscores[i, j] for i, j in part])
        part_grads = backward_batch(params, cfg, cache, dvec)
        for k, g in part_grads.items():
            grads[k] += g.astype(np.float64)
    if learn_t:
        grads["logit_scale"] = np.asarray(float((dscaled * scores).sum()) * inv_t)
    return loss, grads


def grad(params, cfg: TransformerConfig, batch: TrainingBatch,
         temperature: float | None = None, chunk: int = 512):
    _, grads = loss_and_grad(params, cfg, batch, temperature, chunk)
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient in {name}")
    return grads


def cosine_schedule(step: int, total_steps: int, warmup_frac: float = 0.10) -> float:
    """Linear warmup to 1.0, then cosine decay to 0.0 at total_steps."""
    if total_steps <= 0:
        raise ConfigurationError("total_steps must be positive")
    warmup = warmup_frac * total_steps
    if step >= total_steps:
        return 0.0
    if step < warmup:
        return step / warmup
    progress = (step - warmup) / (total_steps - warmup)
    return 0.5 * (1.0 + math.cos(math.pi * progress))


def adam_init(params) -> dict:
    return {
        "m": {k: np.zeros(v.shape, dtype=np.float64) for k, v in params.items()},
        "v": {k: np.zeros(v.shape, dtype=np.float64) for k, v in params.items()},
    }


def adamw_step(params, grads, state, step: int, cfg: TrainConfig,
               lr_multiplier: float = 1.0):
    """One decoupled-weight-decay Adam update; ``step`` is 1-based."""
    if step < 1:
        raise ConfigurationError("adamw step count is 1-based")
    lr = cfg.lr * lr_multiplier
    bc1 = 1.0 - cfg.beta1 ** step
    bc2 = 1.0 - cfg.beta2 ** step
    new_params = {}
    for name, p in params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        m = state["m"][name] = cfg.beta1 * state["m"][name] + (1 - cfg.beta1) * g
        v = state["v"][name] = cfg.beta2 * state["v"][name] + (1 - cfg.beta2) * g * g
        update = (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)
        decayed = p.astype(np.float64) * (1.0 - lr * cfg.weight_decay)
        new_params[name] = (decayed - lr * update).astype(p.dtype)
    return new_params, state


def batch_accuracy(params, cfg: TransformerConfig, pairs: PairData,
                   limit: int | None = None, chunk: int = 512) -> float:
    """Fraction of rows whose diagonal score strictly beats the rest of the row."""
    n = len(pairs) if limit is None else min(limit, len(pairs))
    if n < 1:
        raise ConfigurationError("accuracy needs at least one pair")
    batch = TrainingBatch(images=pairs.visual[:n], texts=pairs.textual[:n], n_positive=n)
    scores = score_matrix(params, cfg, batch, chunk)
    hits = 0
    for i in range(n):
        off = np.delete(scores[i], i)
        if off.size == 0 or scores[i, i] > off.max():
            hits += 1
    return hits / n


@dataclass
class TrainResult:
    params: dict[str, np.ndarray]  # best-validation checkpoint
    final_params: dict[str, np.ndarray]
    history: list[dict]
    best_val_accuracy: float
    best_epoch: int


def _make_batch(pairs: PairData, idxs: list[int]) -> TrainingBatch:
    images = [pairs.visual[i] for i in idxs]
    texts = [pairs.textual[i] for i in idxs]
    n_pos = len(idxs)
    if pairs.has_negatives:
        images += [pairs.neg_visual[i] for i in idxs]
        texts += [pairs.neg_textual[i] for i in idxs]
    return TrainingBatch(images=images, texts=texts, n_positive=n_pos)


def train(train_cfg: TrainConfig, model_cfg: TransformerConfig, data: PairData,
          seed: int, val_data: PairData | None = None) -> TrainResult:
    """Epoch loop with seeded shuffling and best-validation checkpointing.

    ``val_data`` defaults to the training pairs (overfit-style runs); the
    validation metric is batch accuracy over the first ``batch_size`` pairs.
    """
    if len(data) < train_cfg.batch_size:
        raise ConfigurationError(
            f"{len(data)} pairs cannot fill a batch of {train_cfg.batch_size}"
        )
    val = val_data if val_data is not None else data
    params = init_params(model_cfg, seed=seed)
    state = adam_init(params)
    steps_per_epoch = len(data) // train_cfg.batch_size
    total_steps = steps_per_epoch * train_cfg.epochs

    history: list[dict] = []
    best_params = copy.deepcopy(params)
    best_acc = -1.0
    best_epoch = -1
    step = 0
    for epoch in range(train_cfg.epochs):
        order = list(range(len(data)))
        Pcg32(seed, stream_for(f"epoch-{epoch}")).shuffle(order)
        for b in range(steps_per_epoch):
            idxs = order[b * train_cfg.batch_size : (b + 1) * train_cfg.batch_size]
            batch = _make_batch(data, idxs)
            mult = cosine_schedule(step, total_steps, train_cfg.warmup_frac)
            loss, grads = loss_and_grad(
                params, model_cfg, batch, train_cfg.temperature, train_cfg.pair_chunk
            )
            params, state = adamw_step(params, grads, state, step + 1, train_cfg, mult)
            step += 1
            history.append(
                {"step": step, "epoch": epoch, "lr": train_cfg.lr * mult,
                 "loss": loss, "val_accuracy": None}
            )
        acc = batch_accuracy(params, model_cfg, val, limit=train_cfg.batch_size,
                             chunk=train_cfg.pair_chunk)
        history[-1]["val_accuracy"] = acc
        if acc > best_acc:
            best_acc = acc
            best_epoch = epoch
            best_params = copy.deepcopy(params)
    return TrainResult(
        params=best_params,
        final_params=params,
        history=history,
        best_val_accuracy=best_acc,
        best_epoch=best_epoch,
    )


def write_history_csv(history, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "epoch", "lr", "loss", "val_accuracy"])
        for row in history:
            writer.writerow(
                [row["step"], row["epoch"], f"{row['lr']:.8g}", f"{row['loss']:.8g}",
                 "" if row["val_accuracy"] is None else f"{row['val_accuracy']:.6f}"]
            )


# --- checkpoints -------------------------------------------------------------


def save_checkpoint(prefix, params, cfg: TransformerConfig) -> None:
    """Write <prefix>.emb1 (tensors, float32) and <prefix>.json (config/shapes)."""
    prefix = Path(prefix)
    records = []
    shapes = {}
    for name, tensor in params.items():
        shapes[name] = list(tensor.shape)
        flat = np.asarray(tensor, dtype=np.float32).reshape(1, -1) if tensor.ndim != 2 \
            else np.asarray(tensor, dtype=np.float32)
        records.append(
            EmbeddingRecord(
                key=name,
                kind=RecordKind.PATCH_SEQUENCE,
                matrix=EmbeddingMatrix.from_array(flat),
            )
        )
    store_write(prefix.with_suffix(".emb1"), records)
    with open(prefix.with_suffix(".json"), "w", encoding="utf-8") as fh:
        json.dump({"config": cfg.to_dict(), "tensors": shapes}, fh, indent=2, sort_keys=True)


def load_checkpoint(prefix) -> tuple[dict[str, np.ndarray], TransformerConfig]:
    prefix = Path(prefix)
    with open(prefix.with_suffix(".json"), "r", encoding="utf-8") as fh:
        meta = json.load(fh)
    cfg = TransformerConfig.from_dict(meta["config"])
    records = store_read(prefix.with_suffix(".emb1"))
    params = {}
    for name, shape in meta["tensors"].items():
        params[name] = records[name].matrix.data.reshape(shape)
    return params, cfg


# --- evaluation adapter ------------------------------------------------------


class TransformerScorer:
    """Exposes a trained model as a retrieval scorer over an embedding store.

    Local models read patch/token sequence records, global models the pooled
    records, using the standard key scheme.
    """

    def __init__(self, params, cfg: TransformerConfig, store: dict):
        self.params = params
        self.cfg = cfg
        self.store = store
        self.name = f"transformer-{cfg.variant.value}"

    def _lookup(self, key: str) -> np.ndarray:
        if key not in self.store:
            raise CacheMissError([key])
        return self.store[key].matrix.data

    def score(self, image_ref: str, caption: str, annotation=None) -> float:
        if self.cfg.variant is Variant.LOCAL:
            patches = self._lookup(patches_key(image_ref))
            tokens = self._lookup(tokens_key(caption))
        else:
            patches = self._lookup(image_key(image_ref))
            tokens = self._lookup(text_key(caption))
        return forward_pair(self.params, self.cfg, patches, tokens)


def as_scorer(params, cfg: TransformerConfig, store: dict) -> TransformerScorer:
    return TransformerScorer(params, cfg, store)


# --- synthetic data ----------------------------------------------------------


def make_separable_pairs(n: int, cfg: TransformerConfig, seed: int = 0,
                         n_patches: int = 2, n_tokens: int = 2,
                         noise: float = 0.01) -> PairData:
    """Frozen-input pairs where pair i lives on its own basis direction."""
    if n > min(cfg.visual_dim, cfg.text_dim):
        raise ConfigurationError("need input dims >= n for separable construction")
    rng = np.random.default_rng(seed)
    visual, textual = [], []
    for i in range(n):
        v = np.zeros((n_patches, cfg.visual_dim), dtype=np.float32)
        v[:, i] = 1.0
        t = np.zeros((n_tokens, cfg.text_dim), dtype=np.float32)
        t[:, i] = 1.0
        visual.append(v + rng.normal(0, noise, v.shape).astype(np.float32))
        textual.append(t + rng.normal(0, noise, t.shape).astype(np.float32))
    return PairData(visual=visual, textual=textual)


def pairs_from_store(store: dict, items: list[tuple[str, str]],
                     variant: Variant) -> PairData:
    """Assemble training pairs from (image_id, caption) rows of a store."""
    visual, textual = [], []
    missing = []
    for image_id, caption in items:
        ik = patches_key(image_id) if variant is Variant.LOCAL else image_key(image_id)
        tk = tokens_key(caption) if variant is Variant.LOCAL else text_key(caption)
        for key in (ik, tk):
            if key not in store:
                missing.append(key)
        if missing:
            continue
        visual.append(store[ik].matrix.data)
        textual.append(store[tk].matrix.data)
    if missing:
        raise CacheMissError(missing)
    return PairData(visual=visual, textual=textual)
