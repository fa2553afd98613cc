"""Bidirectional retrieval metrics and the dataset evaluator.

An instance is two images and two captions. All three indicators use strict
inequalities, so tied scores count as failures:

    i2t = 1  iff  s(C0,I0) > s(C1,I0)  and  s(C1,I1) > s(C0,I1)
    t2i = 1  iff  s(C0,I0) > s(C0,I1)  and  s(C1,I1) > s(C1,I0)
    group = i2t and t2i

Chance level is 25% for i2t/t2i and 1/6 for group (top two of four scores
must land on the two matched pairs).
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass

from .errors import ConsistencyError, DataFormatError, ScorerError
from .segments import SegmentAnnotation

RANDOM_BASELINE = {"i2t": 25.0, "t2i": 25.0, "group": 100.0 / 6.0}


@dataclass(frozen=True)
class ScoreQuad:
    """The four pairwise scores; first index caption, second index image."""

    s00: float  # s(C0, I0)
    s10: float  # s(C1, I0)
    s01: float  # s(C0, I1)
    s11: float  # s(C1, I1)

    def __post_init__(self):
        for name in ("s00", "s10", "s01", "s11"):
            if not math.isfinite(getattr(self, name)):
                raise ScorerError(f"non-finite score {name}")


def i2t(quad: ScoreQuad) -> int:
    return int(quad.s00 > quad.s10 and quad.s11 > quad.s01)


def t2i(quad: ScoreQuad) -> int:
    return int(quad.s00 > quad.s01 and quad.s11 > quad.s10)


def group(quad: ScoreQuad) -> int:
    return int(i2t(quad) and t2i(quad))


@dataclass(frozen=True)
class RetrievalInstance:
    instance_id: str
    category: str
    image_pos: str
    image_neg: str
    caption_pos: str
    caption_neg: str
    annotation_pos: SegmentAnnotation | None = None
    annotation_neg: SegmentAnnotation | None = None

    def __post_init__(self):
        if self.caption_pos == self.caption_neg:
            raise ConsistencyError(f"{self.instance_id}: captions identical")
        if self.image_pos == self.image_neg:
            raise ConsistencyError(f"{self.instance_id}: images identical")

    @classmethod
    def from_json(cls, d: dict) -> "RetrievalInstance":
        ann = d.get("annotation") or {}
        ann_pos = SegmentAnnotation.from_dict(ann["caption"]) if "caption" in ann else None
        ann_neg = (
            SegmentAnnotation.from_dict(ann["negative_caption"])
            if "negative_caption" in ann
            else None
        )
        return cls(
            instance_id=str(d["id"]),
            category=d["category"],
            image_pos=d["image"],
            image_neg=d["negative_image"],
            caption_pos=d["caption"],
            caption_neg=d["negative_caption"],
            annotation_pos=ann_pos,
            annotation_neg=ann_neg,
        )

    def to_json(self) -> dict:
        out = {
            "id": self.instance_id,
            "category": self.category,
            "image": self.image_pos,
            "caption": self.caption_pos,
            "negative_image": self.image_neg,
            "negative_caption": self.caption_neg,
        }
        if self.annotation_pos or self.annotation_neg:
            ann = {}
            if self.annotation_pos:
                ann["caption"] = self.annotation_pos.to_dict()
            if self.annotation_neg:
                ann["negative_caption"] = self.annotation_neg.to_dict()
            out["annotation"] = ann
        return out


def load_instances(path) -> list[RetrievalInstance]:
    instances = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                instances.append(RetrievalInstance.from_json(json.loads(line)))
            except (KeyError, json.JSONDecodeError) as exc:
                raise DataFormatError(f"{path}:{line_no}: bad instance: {exc}") from exc
    return instances


def dump_instances(instances, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for inst in instances:
            fh.write(json.dumps(inst.to_json(), sort_keys=True) + "\n")


@dataclass(frozen=True)
class CategoryScores:
    category: str
    n: int
    i2t_pct: float
    t2i_pct: float
    group_pct: float


@dataclass(frozen=True)
class EvalReport:
    scorer: str
    categories: tuple[CategoryScores, ...]
    n_instances: int
    n_skipped: int = 0

    @property
    def average(self) -> CategoryScores:
        """Macro average over categories."""
        cats = self.categories
        if not cats:
            return CategoryScores("average", 0, 0.0, 0.0, 0.0)
        return CategoryScores(
            category="average",
            n=sum(c.n for c in cats),
            i2t_pct=sum(c.i2t_pct for c in cats) / len(cats),
            t2i_pct=sum(c.t2i_pct for c in cats) / len(cats),
            group_pct=sum(c.group_pct for c in cats) / len(cats),
        )

    def to_dict(self) -> dict:
        rows = [
            {
                "category": c.category,
                "n": c.n,
                "i2t": c.i2t_pct,
                "t2i": c.t2i_pct,
                "group": c.group_pct,
            }
            for c in self.categories
        ]
        avg = self.average
        return {
            "scorer": self.scorer,
            "random_baseline": {
                "i2t": RANDOM_BASELINE["i2t"],
                "t2i": RANDOM_BASELINE["t2i"],
                "group": round(RANDOM_BASELINE["group"], 1),
            },
            "categories": rows,
            "average": {
                "n": avg.n,
                "i2t": avg.i2t_pct,
                "t2i": avg.t2i_pct,
                "group": avg.group_pct,
            },
            "n_instances": self.n_instances,
            "n_skipped": self.n_skipped,
        }

    def write_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["category", "n", "i2t", "t2i", "group"])
            writer.writerow(
                ["random", "", RANDOM_BASELINE["i2t"], RANDOM_BASELINE["t2i"],
                 round(RANDOM_BASELINE["group"], 1)]
            )
            for c in self.categories:
                writer.writerow([c.category, c.n, f"{c.i2t_pct:.4f}", f"{c.t2i_pct:.4f}", f"{c.group_pct:.4f}"])
            avg = self.average
            writer.writerow(
                ["average", avg.n, f"{avg.i2t_pct:.4f}", f"{avg.t2i_pct:.4f}", f"{avg.group_pct:.4f}"]
            )


def quad_for(instance: RetrievalInstance, scorer) -> ScoreQuad:
    """Score all four (caption, image) pairings of one instance."""
    return ScoreQuad(
        s00=scorer.score(instance.image_pos, instance.caption_pos, instance.annotation_pos),
        s10=scorer.score(instance.image_pos, instance.caption_neg, instance.annotation_neg),
        s01=scorer.score(instance.image_neg, instance.caption_pos, instance.annotation_pos),
        s11=scorer.score(instance.image_neg, instance.caption_neg, instance.annotation_neg),
    )


def evaluate(instances, scorer, lenient: bool = False) -> EvalReport:
    """Aggregate i2t/t2i/group percentages per category.

    A scorer failure aborts the run (ScorerError naming the instance) unless
    ``lenient`` is set, in which case the instance is skipped and counted.
    """
    by_cat: dict[str, list[tuple[int, int, int]]] = {}
    skipped = 0
    for inst in instances:
        try:
            quad = quad_for(inst, scorer)
        except Exception as exc:
            if lenient:
                skipped += 1
                continue
            raise ScorerError(f"scorer failed on instance {inst.instance_id}: {exc}") from exc
        by_cat.setdefault(inst.category, []).append((i2t(quad), t2i(quad), group(quad)))

    categories = []
    for cat in sorted(by_cat):
        outcomes = by_cat[cat]
        n = len(outcomes)
        categories.append(
            CategoryScores(
                category=cat,
                n=n,
                i2t_pct=100.0 * sum(o[0] for o in outcomes) / n,
                t2i_pct=100.0 * sum(o[1] for o in outcomes) / n,
                group_pct=100.0 * sum(o[2] for o in outcomes) / n,
            )
        )
    scorer_name = getattr(scorer, "name", type(scorer).__name__)
    return EvalReport(
        scorer=scorer_name,
        categories=tuple(categories),
        n_instances=sum(c.n for c in categories),
        n_skipped=skipped,
    )
