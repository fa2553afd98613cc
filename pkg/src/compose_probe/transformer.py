"""Cross-modal alignment transformer over frozen patch/token embeddings.

A pre-normalization transformer encoder scores one (image, text) pair at a
time: both modalities are projected to the model width, given learned
positional and modality embeddings, concatenated behind a learned [CLS]
vector, and self-attended; a linear head on the final [CLS] state yields the
scalar matching score. The "local" variant consumes patch/token sequences,
the "global" variant the two pooled vectors (length-1 sequences).

Forward and backward are explicit numpy; the backward pass returns exact
reverse-mode gradients for every parameter tensor and nothing else (inputs
are frozen by construction). Dtype follows the parameter dict, so the same
code runs float32 for training and float64 for gradient checking.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy.special import erf

from .errors import ConfigurationError, NumericError

LN_EPS = 1e-5
_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


class Variant(enum.Enum):
    LOCAL = "local"
    GLOBAL = "global"


@dataclass(frozen=True)
class TransformerConfig:
    variant: Variant = Variant.LOCAL
    layers: int = 4
    model_dim: int = 512
    heads: int = 8
    ff_dim: int = 2048
    max_patches: int = 50
    max_tokens: int = 77
    visual_dim: int = 768
    text_dim: int = 512
    learnable_temperature: bool = True

    def __post_init__(self):
        if self.layers < 1:
            raise ConfigurationError("layers must be >= 1")
        if self.model_dim % self.heads != 0:
            raise ConfigurationError(
                f"model_dim {self.model_dim} not divisible by heads {self.heads}"
            )
        if min(self.max_patches, self.max_tokens, self.visual_dim, self.text_dim) < 1:
            raise ConfigurationError("sequence and input dims must be positive")

    @classmethod
    def global_variant(cls, embed_dim: int, **kwargs) -> "TransformerConfig":
        kwargs.setdefault("max_patches", 1)
        kwargs.setdefault("max_tokens", 1)
        return cls(variant=Variant.GLOBAL, visual_dim=embed_dim, text_dim=embed_dim, **kwargs)

    def to_dict(self) -> dict:
        return {
            "variant": self.variant.value,
            "layers": self.layers,
            "model_dim": self.model_dim,
            "heads": self.heads,
            "ff_dim": self.ff_dim,
            "max_patches": self.max_patches,
            "max_tokens": self.max_tokens,
            "visual_dim": self.visual_dim,
            "text_dim": self.text_dim,
            "learnable_temperature": self.learnable_temperature,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TransformerConfig":
        d = dict(d)
        d["variant"] = Variant(d["variant"])
        return cls(**d)


# initial inverse-temperature, exp(logit_scale) = 1/0.07
INIT_LOGIT_SCALE = float(np.log(1.0 / 0.07))


def init_params(cfg: TransformerConfig, seed: int = 0, dtype=np.float32) -> dict[str, np.ndarray]:
    """Fresh parameter dict; insertion order is the canonical tensor order."""
    rng = np.random.default_rng(seed)
    d = cfg.model_dim

    def normal(*shape):
        return rng.normal(0.0, 0.02, size=shape).astype(dtype)

    p: dict[str, np.ndarray] = {}
    p["vis_proj.w"] = normal(cfg.visual_dim, d)
    p["vis_proj.b"] = np.zeros(d, dtype=dtype)
    p["txt_proj.w"] = normal(cfg.text_dim, d)
    p["txt_proj.b"] = np.zeros(d, dtype=dtype)
    p["pos_vis"] = normal(cfg.max_patches, d)
    p["pos_txt"] = normal(cfg.max_tokens, d)
    p["modality"] = normal(2, d)
    p["cls"] = normal(d)
    for i in range(cfg.layers):
        pre = f"layer{i}"
        p[f"{pre}.ln1.g"] = np.ones(d, dtype=dtype)
        p[f"{pre}.ln1.b"] = np.zeros(d, dtype=dtype)
        for name in ("wq", "wk", "wv", "wo"):
            p[f"{pre}.attn.{name}"] = normal(d, d)
        for name in ("bq", "bk", "bv", "bo"):
            p[f"{pre}.attn.{name}"] = np.zeros(d, dtype=dtype)
        p[f"{pre}.ln2.g"] = np.ones(d, dtype=dtype)
        p[f"{pre}.ln2.b"] = np.zeros(d, dtype=dtype)
        p[f"{pre}.ff.w1"] = normal(d, cfg.ff_dim)
        p[f"{pre}.ff.b1"] = np.zeros(cfg.ff_dim, dtype=dtype)
        p[f"{pre}.ff.w2"] = normal(cfg.ff_dim, d)
        p[f"{pre}.ff.b2"] = np.zeros(d, dtype=dtype)
    p["ln_f.g"] = np.ones(d, dtype=dtype)
    p["ln_f.b"] = np.zeros(d, dtype=dtype)
    p["head.w"] = normal(d)
    p["head.b"] = np.zeros((), dtype=dtype)
    if cfg.learnable_temperature:
        p["logit_scale"] = np.asarray(INIT_LOGIT_SCALE, dtype=dtype)
    return p


def param_count(params: dict[str, np.ndarray]) -> int:
    return int(sum(t.size for t in params.values()))


@dataclass
class SequenceBatch:
    """Padded per-pair inputs. Masks mark real positions; padding is ignored."""

    patches: np.ndarray  # (B, Np, Dv)
    patch_mask: np.ndarray  # (B, Np) bool
    tokens: np.ndarray  # (B, Nt, Dt)
    token_mask: np.ndarray  # (B, Nt) bool

    def __post_init__(self):
        if self.patches.ndim != 3 or self.tokens.ndim != 3:
            raise ConfigurationError("sequence inputs must be (B, seq, dim)")
        if self.patch_mask.shape != self.patches.shape[:2]:
            raise ConfigurationError("patch mask shape mismatch")
        if self.token_mask.shape != self.tokens.shape[:2]:
            raise ConfigurationError("token mask shape mismatch")
        if self.patches.shape[0] != self.tokens.shape[0]:
            raise ConfigurationError("visual/text batch sizes differ")

    @property
    def size(self) -> int:
        return self.patches.shape[0]


def pack_sequences(items: list[np.ndarray], width: int, dtype) -> tuple[np.ndarray, np.ndarray]:
    """Stack variable-length (len_i, dim) arrays into a padded batch + mask."""
    if not items:
        raise ConfigurationError("cannot pack an empty list")
    max_len = max(a.shape[0] for a in items)
    out = np.zeros((len(items), max_len, width), dtype=dtype)
    mask = np.zeros((len(items), max_len), dtype=bool)
    for i, a in enumerate(items):
        if a.ndim != 2 or a.shape[1] != width:
            raise ConfigurationError(f"item {i} has shape {a.shape}, expected (*, {width})")
        out[i, : a.shape[0]] = a
        mask[i, : a.shape[0]] = True
    return out, mask


def _layernorm_forward(x, g, b):
    mean = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + LN_EPS)
    xhat = (x - mean) * inv_std
    return xhat * g + b, (xhat, inv_std)


def _layernorm_backward(dy, cache, g):
    xhat, inv_std = cache
    dg = (dy * xhat).sum(axis=tuple(range(dy.ndim - 1)))
    db = dy.sum(axis=tuple(range(dy.ndim - 1)))
    dxhat = dy * g
    m1 = dxhat.mean(axis=-1, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
    dx = (dxhat - m1 - xhat * m2) * inv_std
    return dx, dg, db


def _gelu(x):
    return 0.5 * x * (1.0 + erf(x / _SQRT2))


def _gelu_grad(x):
    cdf = 0.5 * (1.0 + erf(x / _SQRT2))
    pdf = np.exp(-0.5 * x * x) * _INV_SQRT_2PI
    return cdf + x * pdf


def _split_heads(x, heads):
    b, s, d = x.shape
    return x.reshape(b, s, heads, d // heads).transpose(0, 2, 1, 3)


def _merge_heads(x):
    b, h, s, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, s, h * dh)


def forward_batch(
    params: dict[str, np.ndarray],
    cfg: TransformerConfig,
    batch: SequenceBatch,
    with_cache: bool = False,
):
    """Scores for a batch of (image, text) pairs; optionally keeps the
    intermediates needed by :func:`backward_batch`."""
    dtype = params["cls"].dtype
    np_, nt = batch.patches.shape[1], batch.tokens.shape[1]
    if np_ > cfg.max_patches or nt > cfg.max_tokens:
        raise ConfigurationError(
            f"sequence ({np_} patches, {nt} tokens) exceeds configured maxima"
        )
    if batch.patches.shape[2] != cfg.visual_dim or batch.tokens.shape[2] != cfg.text_dim:
        raise ConfigurationError("input embedding dims do not match config")
    b = batch.size
    patches = batch.patches.astype(dtype, copy=False)
    tokens = batch.tokens.astype(dtype, copy=False)

    v = patches @ params["vis_proj.w"] + params["vis_proj.b"]
    v = v + params["pos_vis"][:np_] + params["modality"][0]
    t = tokens @ params["txt_proj.w"] + params["txt_proj.b"]
    t = t + params["pos_txt"][:nt] + params["modality"][1]

    cls = np.broadcast_to(params["cls"], (b, 1, cfg.model_dim))
    x = np.concatenate([cls, v, t], axis=1)
    key_mask = np.concatenate(
        [np.ones((b, 1), dtype=bool), batch.patch_mask, batch.token_mask], axis=1
    )

    scale = 1.0 / np.sqrt(cfg.model_dim // cfg.heads)
    neg_inf = np.array(-np.inf, dtype=dtype)
    layer_caches = []
    for i in range(cfg.layers):
        pre = f"layer{i}"
        h, ln1_cache = _layernorm_forward(x, params[f"{pre}.ln1.g"], params[f"{pre}.ln1.b"])
        q = h @ params[f"{pre}.attn.wq"] + params[f"{pre}.attn.bq"]
        k = h @ params[f"{pre}.attn.wk"] + params[f"{pre}.attn.bk"]
        vv = h @ params[f"{pre}.attn.wv"] + params[f"{pre}.attn.bv"]
        qh, kh, vh = (_split_heads(a, cfg.heads) for a in (q, k, vv))
        logits = np.einsum("bhid,bhjd->bhij", qh, kh) * scale
        logits = np.where(key_mask[:, None, None, :], logits, neg_inf)
        logits_max = logits.max(axis=-1, keepdims=True)
        expl = np.exp(logits - logits_max)
        p = expl / expl.sum(axis=-1, keepdims=True)
        ctx = np.einsum("bhij,bhjd->bhid", p, vh)
        ctx_m = _merge_heads(ctx)
        attn_out = ctx_m @ params[f"{pre}.attn.wo"] + params[f"{pre}.attn.bo"]
        x2 = x + attn_out
        h2, ln2_cache = _layernorm_forward(x2, params[f"{pre}.ln2.g"], params[f"{pre}.ln2.b"])
        f1 = h2 @ params[f"{pre}.ff.w1"] + params[f"{pre}.ff.b1"]
        gact = _gelu(f1)
        f2 = gact @ params[f"{pre}.ff.w2"] + params[f"{pre}.ff.b2"]
        x_out = x2 + f2
        if not np.all(np.isfinite(x_out)):
            raise NumericError(f"non-finite activations in layer {i}")
        if with_cache:
            layer_caches.append((x, h, ln1_cache, qh, kh, vh, p, ctx_m, x2, h2, ln2_cache, f1, gact))
        x = x_out

    xf, lnf_cache = _layernorm_forward(x, params["ln_f.g"], params["ln_f.b"])
    scores = xf[:, 0, :] @ params["head.w"] + params["head.b"]
    if not np.all(np.isfinite(scores)):
        raise NumericError("non-finite scores at head")
    if not with_cache:
        return scores, None
    cache = {
        "batch": batch,
        "np": np_,
        "nt": nt,
        "patches": patches,
        "tokens": tokens,
        "layers": layer_caches,
        "x_last": x,
        "xf": xf,
        "lnf_cache": lnf_cache,
        "key_mask": key_mask,
        "scale": scale,
    }
    return scores, cache


def backward_batch(
    params: dict[str, np.ndarray],
    cfg: TransformerConfig,
    cache: dict,
    dscores: np.ndarray,
) -> dict[str, np.ndarray]:
    """Gradients of sum(dscores * scores) for every parameter tensor."""
    dtype = params["cls"].dtype
    dscores = dscores.astype(dtype, copy=False)
    np_, nt = cache["np"], cache["nt"]
    b = dscores.shape[0]
    grads = {k: np.zeros_like(v) for k, v in params.items()}

    xf = cache["xf"]
    grads["head.w"] += dscores @ xf[:, 0, :]
    grads["head.b"] += dscores.sum()
    dxf = np.zeros_like(xf)
    dxf[:, 0, :] = dscores[:, None] * params["head.w"]
    dx, dg, db = _layernorm_backward(dxf, cache["lnf_cache"], params["ln_f.g"])
    grads["ln_f.g"] += dg
    grads["ln_f.b"] += db

    scale = cache["scale"]
    for i in reversed(range(cfg.layers)):
        pre = f"layer{i}"
        x, h, ln1_cache, qh, kh, vh, p, ctx_m, x2, h2, ln2_cache, f1, gact = cache["layers"][i]

        # feed-forward branch
        df2 = dx
        grads[f"{pre}.ff.w2"] += np.einsum("bsf,bsd->fd", gact, df2)
        grads[f"{pre}.ff.b2"] += df2.sum(axis=(0, 1))
        dgact = df2 @ params[f"{pre}.ff.w2"].T
        df1 = dgact * _gelu_grad(f1)
        grads[f"{pre}.ff.w1"] += np.einsum("bsd,bsf->df", h2, df1)
        grads[f"{pre}.ff.b1"] += df1.sum(axis=(0, 1))
        dh2 = df1 @ params[f"{pre}.ff.w1"].T
        dx2_ln, dg2, db2 = _layernorm_backward(dh2, ln2_cache, params[f"{pre}.ln2.g"])
        grads[f"{pre}.ln2.g"] += dg2
        grads[f"{pre}.ln2.b"] += db2
        dx2 = dx2_ln + dx  # residual

        # attention branch
        dattn_out = dx2
        grads[f"{pre}.attn.wo"] += np.einsum("bsd,bse->de", ctx_m, dattn_out)
        grads[f"{pre}.attn.bo"] += dattn_out.sum(axis=(0, 1))
        dctx = _split_heads(dattn_out @ params[f"{pre}.attn.wo"].T, cfg.heads)
        dp = np.einsum("bhid,bhjd->bhij", dctx, vh)
        dvh = np.einsum("bhij,bhid->bhjd", p, dctx)
        dlogits = p * (dp - (dp * p).sum(axis=-1, keepdims=True))
        dqh = np.einsum("bhij,bhjd->bhid", dlogits, kh) * scale
        dkh = np.einsum("bhij,bhid->bhjd", dlogits, qh) * scale
        dq, dk, dv = (_merge_heads(a) for a in (dqh, dkh, dvh))
        grads[f"{pre}.attn.wq"] += np.einsum("bsd,bse->de", h, dq)
        grads[f"{pre}.attn.bq"] += dq.sum(axis=(0, 1))
        grads[f"{pre}.attn.wk"] += np.einsum("bsd,bse->de", h, dk)
        grads[f"{pre}.attn.bk"] += dk.sum(axis=(0, 1))
        grads[f"{pre}.attn.wv"] += np.einsum("bsd,bse->de", h, dv)
        grads[f"{pre}.attn.bv"] += dv.sum(axis=(0, 1))
        dh = (
            dq @ params[f"{pre}.attn.wq"].T
            + dk @ params[f"{pre}.attn.wk"].T
            + dv @ params[f"{pre}.attn.wv"].T
        )
        dx_ln, dg1, db1 = _layernorm_backward(dh, ln1_cache, params[f"{pre}.ln1.g"])
        grads[f"{pre}.ln1.g"] += dg1
        grads[f"{pre}.ln1.b"] += db1
        dx = dx_ln + dx2  # residual into previous layer

    # split the sequence gradient back into cls / visual / textual slices
    grads["cls"] += dx[:, 0, :].sum(axis=0)
    dv_in = dx[:, 1 : 1 + np_, :]
    dt_in = dx[:, 1 + np_ :, :]

    grads["pos_vis"][:np_] += dv_in.sum(axis=0)
    grads["pos_txt"][:nt] += dt_in.sum(axis=0)
    grads["modality"][0] += dv_in.sum(axis=(0, 1))
    grads["modality"][1] += dt_in.sum(axis=(0, 1))

    patches, tokens = cache["patches"], cache["tokens"]
    grads["vis_proj.w"] += np.einsum("bsv,bsd->vd", patches, dv_in)
    grads["vis_proj.b"] += dv_in.sum(axis=(0, 1))
    grads["txt_proj.w"] += np.einsum("bst,bsd->td", tokens, dt_in)
    grads["txt_proj.b"] += dt_in.sum(axis=(0, 1))

    if "logit_scale" in grads:
        # the loss handles the temperature parameter itself; the per-pair
        # forward does not consume it
        grads["logit_scale"] = np.zeros_like(params["logit_scale"])
    return grads
