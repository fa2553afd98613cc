"""Acceptance suite: one test per release criterion, each printing a
PASS/FAIL line with its measured value so a run reads as a checklist.

Run with `pytest tests/test_acceptance.py -v -s`.
"""

import itertools
import json
import time
from pathlib import Path

import numpy as np
import pytest

from compose_probe.biscor import SwapCategory, build_split
from compose_probe.crops import CropConfig, Placement, per_size_counts, plan_crops
from compose_probe.embeddings import (
    EmbeddingMatrix,
    EmbeddingRecord,
    RecordKind,
    crop_key,
    text_key,
)
from compose_probe.metrics import (
    RetrievalInstance,
    ScoreQuad,
    evaluate,
    group,
    i2t,
    t2i,
)
from compose_probe.scenes import SourceSplit, synthesize_scenes
from compose_probe.scoring import RandomScorer
from compose_probe.segments import Granularity, segment_automatic, segment_structured
from compose_probe.sgi import SgiConfig, global_score, sgi_score
from compose_probe.training import (
    TrainConfig,
    TrainingBatch,
    make_separable_pairs,
    param_count,
    train,
)
from compose_probe.transformer import (
    SequenceBatch,
    TransformerConfig,
    Variant,
    forward_batch,
    init_params,
)

from conftest import FakeEncoder, random_raster
from test_training import conditioned_params, gradcheck

DATA = Path(__file__).parent / "data"


def report(name: str, ok: bool, detail: str) -> None:
    print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
    assert ok, f"{name}: {detail}"


# ---------------------------------------------------------------- criterion 1


def test_crop_count_reproduction():
    t0 = time.time()
    grid = plan_crops(224, 224, CropConfig(placement=Placement.GRID))
    over = plan_crops(224, 224, CropConfig(placement=Placement.OVERLAP))

    def brute(dim, size, stride):
        return sum(1 for x in range(dim) if x % stride == 0 and x + size <= dim)

    per_size_ok = True
    for placement, plan_total in ((Placement.GRID, len(grid)), (Placement.OVERLAP, len(over))):
        counts = per_size_counts(224, 224, CropConfig(placement=placement))
        for (w, h), count in counts.items():
            sx, sy = (w, h) if placement is Placement.GRID else (w // 2, h // 2)
            per_size_ok &= count == brute(224, w, sx) * brute(224, h, sy)
        per_size_ok &= sum(counts.values()) == plan_total
    elapsed = time.time() - t0
    report(
        "crop-count reproduction",
        len(grid) == 86 and len(over) == 270 and per_size_ok and elapsed < 1.0,
        f"grid={len(grid)} overlap={len(over)} per-size-oracle={per_size_ok} ({elapsed:.2f}s)",
    )


# ---------------------------------------------------------------- criterion 2


@pytest.fixture(scope="module")
def dev_scenes():
    return synthesize_scenes(600, SourceSplit.TRAIN, seed=21)


def test_segmentation_golden(dev_scenes):
    t0 = time.time()
    pair = segment_automatic("a black cat and a white dog")
    pair_ok = pair.segments == ("black cat", "white dog", "a black cat and a white dog")

    entries = json.loads((DATA / "golden_segments.json").read_text())
    golden_ok = len(entries) == 50
    for entry in entries:
        expected = []
        for seg in entry["chunks"] + [entry["caption"]]:
            if seg not in expected:
                expected.append(seg)
        golden_ok &= segment_automatic(entry["caption"]).segments == tuple(expected)

    total = agree = 0
    for category in SwapCategory:
        for rec in build_split(dev_scenes, category, 40, seed=2):
            for caption, ann in (
                (rec.caption, rec.annotation_pos),
                (rec.negative_caption, rec.annotation_neg),
            ):
                structured = set(segment_structured(ann, caption, Granularity.COARSE).segments)
                automatic = set(segment_automatic(caption).segments)
                agree += structured == automatic
                total += 1
    elapsed = time.time() - t0
    report(
        "segmentation golden",
        pair_ok and golden_ok and agree == total and elapsed < 5.0,
        f"pair-example={pair_ok} golden-50={golden_ok} "
        f"structured-vs-automatic={agree}/{total} ({elapsed:.2f}s)",
    )


# ---------------------------------------------------------------- criterion 3


def test_metric_oracle():
    t0 = time.time()
    wins = [0, 0, 0]
    for perm in itertools.permutations((0.1, 0.2, 0.3, 0.4)):
        quad = ScoreQuad(*perm)
        wins[0] += i2t(quad)
        wins[1] += t2i(quad)
        wins[2] += group(quad)
    exhaustive_ok = wins == [6, 6, 4]

    instances = [
        RetrievalInstance(f"mc{k}", "synthetic", f"a{k}", f"b{k}", f"p {k}", f"n {k}")
        for k in range(100_000)
    ]
    cat = evaluate(instances, RandomScorer(seed=2026)).categories[0]
    mc_ok = (
        abs(cat.i2t_pct - 25.0) < 0.5
        and abs(cat.t2i_pct - 25.0) < 0.5
        and abs(cat.group_pct - 100.0 / 6.0) < 0.5
    )
    elapsed = time.time() - t0
    report(
        "metric oracle",
        exhaustive_ok and mc_ok and elapsed < 30.0,
        f"orderings={wins} monte-carlo i2t={cat.i2t_pct:.2f} t2i={cat.t2i_pct:.2f} "
        f"group={cat.group_pct:.2f} ({elapsed:.1f}s)",
    )


# ---------------------------------------------------------------- criterion 4


def test_sgi_pipeline_equivalence():
    t0 = time.time()
    rng = np.random.default_rng(404)
    max_err = 0.0
    for k in range(200):
        n_crops = int(rng.integers(1, 30))
        caption_words = [f"w{j}" for j in range(rng.integers(1, 5))]
        caption = " ".join(caption_words)
        segments = segment_automatic(caption).segments
        dim = int(rng.integers(3, 12))
        store = {}
        crop_vecs = rng.normal(size=(n_crops, dim)).astype(np.float32)
        for idx in range(n_crops):
            key = crop_key(f"img{k}", idx, 0, 8, 8)
            store[key] = EmbeddingRecord(
                key, RecordKind.GLOBAL_IMAGE, EmbeddingMatrix.from_array(crop_vecs[idx][None])
            )
        seg_vecs = rng.normal(size=(len(segments), dim)).astype(np.float32)
        for j, seg in enumerate(segments):
            store[text_key(seg)] = EmbeddingRecord(
                text_key(seg), RecordKind.GLOBAL_TEXT,
                EmbeddingMatrix.from_array(seg_vecs[j][None]),
            )
        got = sgi_score(f"img{k}", caption, store)

        # independent naive pipeline: double-loop cosine, column max, mean
        sims = np.zeros((n_crops, len(segments)))
        ordered = sorted(range(n_crops), key=lambda i: crop_key(f"img{k}", i, 0, 8, 8))
        for row, i in enumerate(ordered):
            for j in range(len(segments)):
                v, t = crop_vecs[i].astype(np.float64), seg_vecs[j].astype(np.float64)
                sims[row, j] = np.dot(v, t) / (np.linalg.norm(v) * np.linalg.norm(t))
        expected = float(np.mean([sims[:, j].max() for j in range(len(segments))]))
        max_err = max(max_err, abs(got - expected))

    enc = FakeEncoder()
    img = random_raster(64, 64, seed=8)
    cfg = SgiConfig(crop_config=CropConfig(sizes=((32, 32),), placement=Placement.GRID),
                    canvas_side=32)
    degenerate_equal = sgi_score(img, "hello", enc, cfg) == global_score(
        img, "hello", enc, canvas_side=32
    )
    elapsed = time.time() - t0
    report(
        "sgi pipeline equivalence",
        max_err < 1e-6 and degenerate_equal and elapsed < 30.0,
        f"max|sgi-naive|={max_err:.2e} over 200 instances, "
        f"degenerate==global: {degenerate_equal} ({elapsed:.1f}s)",
    )


# ---------------------------------------------------------------- criterion 5


def test_dataset_invariants():
    t0 = time.time()
    fixture = synthesize_scenes(800, SourceSplit.VAL, seed=31)
    token_ok = diff_ok = True
    for category in SwapCategory:
        for rec in build_split(fixture, category, 60, seed=5):
            token_ok &= sorted(rec.caption.lower().split()) == sorted(
                rec.negative_caption.lower().split()
            )
            if category is SwapCategory.QUANTITY:
                g1, g2 = rec.selection.groups
                from collections import Counter

                sigs = Counter(o.signature() for o in rec.negative_scene.objects)
                diff_ok &= sigs[(g1.color, g1.shape)] == g2.count
                diff_ok &= sigs[(g2.color, g2.shape)] == g1.count
                survivors = set(rec.negative_scene.objects) & set(rec.scene.objects)
                diff_ok &= len(survivors) >= len(rec.scene.objects) - abs(g1.count - g2.count)
            else:
                attr = rec.category.value
                sel = rec.selection
                for idx, (a, b) in enumerate(zip(rec.scene.objects, rec.negative_scene.objects)):
                    if idx in (sel.first, sel.second):
                        diff_ok &= getattr(a, attr) != getattr(b, attr)
                    else:
                        diff_ok &= a == b

    dev = build_split(synthesize_scenes(300, SourceSplit.TRAIN, seed=32),
                      SwapCategory.COLOR, 50, seed=6)
    test = build_split(fixture, SwapCategory.COLOR, 50, seed=6)
    disjoint_ok = not ({r.scene.scene_id for r in dev} & {r.scene.scene_id for r in test})

    import io

    def rendered(records):
        buf = io.StringIO()
        for r in records:
            buf.write(json.dumps(r.to_retrieval_instance().to_json(), sort_keys=True) + "\n")
        return buf.getvalue()

    determinism_ok = rendered(
        build_split(fixture, SwapCategory.SIZE, 40, seed=9)
    ) == rendered(build_split(fixture, SwapCategory.SIZE, 40, seed=9))

    # scale check on a full CLEVR-val-sized scene file
    full = synthesize_scenes(15_000, SourceSplit.VAL, seed=33)
    scale_ok = True
    for category in SwapCategory:
        scale_ok &= len(build_split(full, category, 1000, seed=7)) == 1000
    elapsed = time.time() - t0
    report(
        "dataset invariants",
        token_ok and diff_ok and disjoint_ok and determinism_ok and scale_ok and elapsed < 120.0,
        f"tokens={token_ok} scene-diff={diff_ok} disjoint={disjoint_ok} "
        f"deterministic={determinism_ok} 1000-per-category={scale_ok} ({elapsed:.1f}s)",
    )


# ---------------------------------------------------------------- criterion 6


def test_gradient_check():
    t0 = time.time()
    cfg = TransformerConfig(
        variant=Variant.LOCAL, layers=2, model_dim=8, heads=2, ff_dim=16,
        max_patches=3, max_tokens=3, visual_dim=5, text_dim=5,
    )
    params = conditioned_params(cfg)
    rng = np.random.default_rng(0)
    batch = TrainingBatch(
        images=[rng.normal(size=(3, 5)) for _ in range(3)],
        texts=[rng.normal(size=(2, 5)) for _ in range(3)],
        n_positive=3,
    )
    worst = gradcheck(params, cfg, batch, temperature=None, eps=1e-3)
    max_rel = max(worst.values())
    elapsed = time.time() - t0
    report(
        "gradient check",
        max_rel < 1e-4 and elapsed < 60.0,
        f"max relative error {max_rel:.2e} over {len(worst)} tensors "
        f"(worst: {max(worst, key=worst.get)}) ({elapsed:.1f}s)",
    )


# ---------------------------------------------------------------- criterion 7


def test_overfit_contract():
    t0 = time.time()
    cfg = TransformerConfig(
        variant=Variant.LOCAL, layers=4, model_dim=32, heads=4, ff_dim=64,
        max_patches=4, max_tokens=4, visual_dim=16, text_dim=16,
    )
    train_cfg = TrainConfig(
        lr=1e-4, beta1=0.9, beta2=0.95, eps=1e-8, weight_decay=1e-7,
        warmup_frac=0.10, batch_size=8, epochs=500,
    )
    data = make_separable_pairs(8, cfg, seed=0)
    result = train(train_cfg, cfg, data, seed=0)
    first_perfect = next(
        (h["step"] for h in result.history if h["val_accuracy"] == 1.0), None
    )
    elapsed = time.time() - t0
    report(
        "overfit contract",
        first_perfect is not None and first_perfect <= 500 and elapsed < 120.0,
        f"validation accuracy 1.0 first reached at step {first_perfect} "
        f"of 500 ({elapsed:.1f}s)",
    )


# ---------------------------------------------------------------- criterion 8


def test_capacity_calibration():
    n = param_count(init_params(TransformerConfig(), seed=0))
    rel = abs(n - 13_300_000) / 13_300_000
    report(
        "capacity calibration",
        rel < 0.10,
        f"default local config has {n / 1e6:.2f}M parameters "
        f"({100 * rel:.1f}% from 13.3M)",
    )


# ---------------------------------------------------------------- criterion 9


def test_mask_correctness():
    t0 = time.time()
    cfg = TransformerConfig(
        variant=Variant.LOCAL, layers=2, model_dim=16, heads=4, ff_dim=32,
        max_patches=8, max_tokens=8, visual_dim=6, text_dim=6,
    )
    params = init_params(cfg, seed=3, dtype=np.float32)
    rng = np.random.default_rng(12)
    max_delta = 0.0
    for _ in range(100):
        np_real = int(rng.integers(1, 5))
        nt_real = int(rng.integers(1, 5))
        patches = rng.normal(size=(np_real, 6)).astype(np.float32)
        tokens = rng.normal(size=(nt_real, 6)).astype(np.float32)

        def run(pad_p, pad_t):
            pv = np.zeros((1, np_real + pad_p, 6), dtype=np.float32)
            pv[0, :np_real] = patches
            pv[0, np_real:] = rng.normal(size=(pad_p, 6))
            pm = np.zeros((1, np_real + pad_p), dtype=bool)
            pm[0, :np_real] = True
            tv = np.zeros((1, nt_real + pad_t, 6), dtype=np.float32)
            tv[0, :nt_real] = tokens
            tv[0, nt_real:] = rng.normal(size=(pad_t, 6))
            tm = np.zeros((1, nt_real + pad_t), dtype=bool)
            tm[0, :nt_real] = True
            scores, _ = forward_batch(params, cfg, SequenceBatch(pv, pm, tv, tm))
            return float(scores[0])

        base = run(0, 0)
        padded = run(int(rng.integers(1, 4)), int(rng.integers(1, 4)))
        max_delta = max(max_delta, abs(padded - base))
    elapsed = time.time() - t0
    report(
        "mask correctness",
        max_delta <= 1e-6 and elapsed < 30.0,
        f"max |padded - unpadded| = {max_delta:.2e} over 100 cases ({elapsed:.1f}s)",
    )
