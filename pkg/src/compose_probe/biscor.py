"""Controlled swap-instance construction from CLEVR scene graphs.

Each instance pairs a template caption with a hard negative obtained by
swapping attribute bindings (color/size/material) between two objects, or by
exchanging the counts of two object groups (quantity). The negative caption
and a matching negative scene are produced together, so captions and scenes
stay in lockstep: both captions contain exactly the same tokens, and the
scenes differ only in the swapped bindings.

Caption templates are overridable via ``CaptionTemplates.from_json``; the
defaults are this package's own wording.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, replace
from pathlib import Path

from .errors import ConsistencyError, ExhaustionError, PlacementError
from .metrics import RetrievalInstance
from .rng import Pcg32, stream_for
from .scenes import (
    RELATIONS,
    SceneGraph,
    SceneObject,
    SourceSplit,
    compute_relationships,
    place_object,
)
from .segments import SegmentAnnotation

NUMBER_WORDS = {
    1: "one", 2: "two", 3: "three", 4: "four", 5: "five", 6: "six",
    7: "seven", 8: "eight", 9: "nine", 10: "ten", 11: "eleven", 12: "twelve",
}

QUANTITY_GROUP_MIN = 2
QUANTITY_GROUP_MAX = 5


class SwapCategory(enum.Enum):
    COLOR = "color"
    SIZE = "size"
    MATERIAL = "material"
    QUANTITY = "quantity"


class DatasetSplit(enum.Enum):
    DEV = "dev"
    TEST = "test"


@dataclass(frozen=True)
class CaptionTemplates:
    attribute: str = (
        "A {size1} {color1} {material1} {shape1} {relation} "
        "a {size2} {color2} {material2} {shape2}"
    )
    quantity: str = (
        "There are {count1} {color1} {shape1}s and {count2} {color2} {shape2}s"
    )
    relations: tuple[tuple[str, str], ...] = (
        ("left", "left of"),
        ("right", "right of"),
        ("front", "in front of"),
        ("behind", "behind"),
    )

    def relation_phrase(self, relation: str) -> str:
        for key, phrase in self.relations:
            if key == relation:
                return phrase
        raise ConsistencyError(f"no phrase for relation {relation!r}")

    @classmethod
    def from_json(cls, path) -> "CaptionTemplates":
        with open(path, "r", encoding="utf-8") as fh:
            d = json.load(fh)
        kwargs = {}
        if "attribute" in d:
            kwargs["attribute"] = d["attribute"]
        if "quantity" in d:
            kwargs["quantity"] = d["quantity"]
        if "relations" in d:
            kwargs["relations"] = tuple((k, v) for k, v in d["relations"].items())
        return cls(**kwargs)


DEFAULT_TEMPLATES = CaptionTemplates()


@dataclass(frozen=True)
class AttributeSelection:
    category: SwapCategory
    first: int
    second: int
    relation: str

    def __post_init__(self):
        if self.category is SwapCategory.QUANTITY:
            raise ConsistencyError("attribute selection cannot be quantity")
        if self.first == self.second:
            raise ConsistencyError("selection must pick two distinct objects")
        if self.relation not in RELATIONS:
            raise ConsistencyError(f"unknown relation {self.relation!r}")


@dataclass(frozen=True)
class QuantityGroup:
    color: str
    shape: str
    members: tuple[int, ...]

    @property
    def count(self) -> int:
        return len(self.members)


@dataclass(frozen=True)
class QuantitySelection:
    groups: tuple[QuantityGroup, QuantityGroup]
    category: SwapCategory = SwapCategory.QUANTITY

    def __post_init__(self):
        g1, g2 = self.groups
        if (g1.color, g1.shape) == (g2.color, g2.shape):
            raise ConsistencyError("quantity groups must have distinct signatures")
        if g1.count == g2.count:
            raise ConsistencyError("quantity groups must have different counts")


ObjectSelection = AttributeSelection | QuantitySelection


def _attr_value(obj: SceneObject, category: SwapCategory) -> str:
    return getattr(obj, category.value)


def attribute_pairs(scene: SceneGraph, category: SwapCategory) -> list[tuple[int, int, tuple[str, ...]]]:
    """All valid ordered (subject, object) pairs with their holding relations."""
    pairs = []
    for i, a in enumerate(scene.objects):
        for j, b in enumerate(scene.objects):
            if i == j:
                continue
            if _attr_value(a, category) == _attr_value(b, category):
                continue
            if a.shape == b.shape:
                continue
            rels = tuple(scene.relations_between(i, j))
            if rels:
                pairs.append((i, j, rels))
    return pairs


def quantity_group_pairs(scene: SceneGraph) -> list[tuple[QuantityGroup, QuantityGroup]]:
    """Ordered pairs of maximal (color, shape) groups with contrasting counts."""
    by_sig: dict[tuple[str, str], list[int]] = {}
    for idx, obj in enumerate(scene.objects):
        by_sig.setdefault(obj.signature(), []).append(idx)
    groups = [
        QuantityGroup(color=sig[0], shape=sig[1], members=tuple(members))
        for sig, members in sorted(by_sig.items())
        if QUANTITY_GROUP_MIN <= len(members) <= QUANTITY_GROUP_MAX
    ]
    pairs = []
    for g1 in groups:
        for g2 in groups:
            if g1 is g2 or g1.count == g2.count:
                continue
            pairs.append((g1, g2))
    return pairs


def select_objects(scene: SceneGraph, category: SwapCategory, rng: Pcg32) -> ObjectSelection | None:
    """Uniform draw over the scene's valid selections; None when there are none."""
    if category is SwapCategory.QUANTITY:
        pairs = quantity_group_pairs(scene)
        if not pairs:
            return None
        g1, g2 = pairs[rng.randrange(len(pairs))]
        return QuantitySelection(groups=(g1, g2))
    pairs = attribute_pairs(scene, category)
    if not pairs:
        return None
    i, j, rels = pairs[rng.randrange(len(pairs))]
    relation = rels[rng.randrange(len(rels))]
    return AttributeSelection(category=category, first=i, second=j, relation=relation)


def _object_words(obj: SceneObject) -> dict[str, str]:
    return {"size": obj.size, "color": obj.color, "material": obj.material, "shape": obj.shape}


def generate_caption(
    selection: ObjectSelection,
    scene: SceneGraph,
    templates: CaptionTemplates = DEFAULT_TEMPLATES,
) -> str:
    if isinstance(selection, QuantitySelection):
        g1, g2 = selection.groups
        return templates.quantity.format(
            count1=NUMBER_WORDS[g1.count], color1=g1.color, shape1=g1.shape,
            count2=NUMBER_WORDS[g2.count], color2=g2.color, shape2=g2.shape,
        )
    if not scene.related(selection.relation, selection.first, selection.second):
        raise ConsistencyError(
            f"objects {selection.first},{selection.second} have no recorded "
            f"{selection.relation!r} relation"
        )
    a = scene.objects[selection.first]
    b = scene.objects[selection.second]
    return templates.attribute.format(
        relation=templates.relation_phrase(selection.relation),
        **{k + "1": v for k, v in _object_words(a).items()},
        **{k + "2": v for k, v in _object_words(b).items()},
    )


def annotation_for(
    selection: ObjectSelection,
    scene: SceneGraph,
    templates: CaptionTemplates = DEFAULT_TEMPLATES,
) -> SegmentAnnotation:
    """Ground-truth segment material for the caption of this selection."""
    if isinstance(selection, QuantitySelection):
        g1, g2 = selection.groups
        return SegmentAnnotation(
            objects=(f"{g1.shape}s", f"{g2.shape}s"),
            phrases=(
                f"{NUMBER_WORDS[g1.count]} {g1.color} {g1.shape}s",
                f"{NUMBER_WORDS[g2.count]} {g2.color} {g2.shape}s",
            ),
        )
    a = scene.objects[selection.first]
    b = scene.objects[selection.second]
    return SegmentAnnotation(
        objects=(a.shape, b.shape),
        phrases=(
            f"{a.size} {a.color} {a.material} {a.shape}",
            f"{b.size} {b.color} {b.material} {b.shape}",
        ),
        relation=templates.relation_phrase(selection.relation),
    )


def _swap_attribute_scene(selection: AttributeSelection, scene: SceneGraph) -> SceneGraph:
    attr = selection.category.value
    objs = list(scene.objects)
    a, b = objs[selection.first], objs[selection.second]
    objs[selection.first] = replace(a, **{attr: getattr(b, attr)})
    objs[selection.second] = replace(b, **{attr: getattr(a, attr)})
    return replace(scene, objects=tuple(objs))


def _swap_quantity_scene(
    selection: QuantitySelection, scene: SceneGraph, rng: Pcg32
) -> tuple[SceneGraph, QuantitySelection]:
    g1, g2 = selection.groups
    if g1.count > g2.count:
        larger, smaller = g1, g2
    else:
        larger, smaller = g2, g1
    delta = larger.count - smaller.count

    remove_order = list(larger.members)
    rng.shuffle(remove_order)
    removed = set(remove_order[:delta])

    survivors = [obj for idx, obj in enumerate(scene.objects) if idx not in removed]
    additions = []
    for _ in range(delta):
        template_obj = scene.objects[smaller.members[rng.randrange(len(smaller.members))]]
        spot = place_object(survivors + additions, template_obj.size, rng)
        if spot is None:
            raise PlacementError(
                f"no free spot for duplicated {template_obj.color} {template_obj.shape}"
            )
        additions.append(replace(template_obj, coords=spot, rotation=rng.uniform(0.0, 360.0),
                                 pixel_coords=None))
    new_objects = tuple(survivors + additions)
    negative_scene = replace(
        scene,
        objects=new_objects,
        relationships=compute_relationships(new_objects, scene.directions),
    )

    def regrouped(sig_color, sig_shape):
        members = tuple(
            idx for idx, obj in enumerate(new_objects)
            if obj.signature() == (sig_color, sig_shape)
        )
        return QuantityGroup(color=sig_color, shape=sig_shape, members=members)

    new_selection = QuantitySelection(
        groups=(regrouped(g1.color, g1.shape), regrouped(g2.color, g2.shape))
    )
    return negative_scene, new_selection


def make_swap_negative(
    selection: ObjectSelection,
    scene: SceneGraph,
    rng: Pcg32 | None = None,
    templates: CaptionTemplates = DEFAULT_TEMPLATES,
) -> tuple[str, SceneGraph]:
    """Produce the swapped caption and the matching negative scene.

    Attribute swaps are deterministic involutions. Quantity swaps draw the
    removed members and new placements from ``rng`` (seeded from the scene id
    when omitted) and may raise PlacementError when no free spot exists.
    """
    if isinstance(selection, AttributeSelection):
        negative_scene = _swap_attribute_scene(selection, scene)
        return generate_caption(selection, negative_scene, templates), negative_scene
    if rng is None:
        rng = Pcg32(0, stream_for(f"negative:{scene.scene_id}"))
    negative_scene, new_selection = _swap_quantity_scene(selection, scene, rng)
    return generate_caption(new_selection, negative_scene, templates), negative_scene


def negative_annotation_for(
    selection: ObjectSelection,
    negative_scene: SceneGraph,
    templates: CaptionTemplates = DEFAULT_TEMPLATES,
) -> SegmentAnnotation:
    if isinstance(selection, QuantitySelection):
        g1, g2 = selection.groups
        return SegmentAnnotation(
            objects=(f"{g1.shape}s", f"{g2.shape}s"),
            phrases=(
                f"{NUMBER_WORDS[g2.count]} {g1.color} {g1.shape}s",
                f"{NUMBER_WORDS[g1.count]} {g2.color} {g2.shape}s",
            ),
        )
    return annotation_for(selection, negative_scene, templates)


@dataclass(frozen=True)
class InstanceRecord:
    instance_id: str
    category: SwapCategory
    split: DatasetSplit
    caption: str
    negative_caption: str
    scene: SceneGraph
    negative_scene: SceneGraph
    selection: ObjectSelection
    annotation_pos: SegmentAnnotation
    annotation_neg: SegmentAnnotation

    def image_ids(self) -> tuple[str, str]:
        return (f"{self.instance_id}_pos", f"{self.instance_id}_neg")

    def to_retrieval_instance(self) -> RetrievalInstance:
        pos, neg = self.image_ids()
        return RetrievalInstance(
            instance_id=self.instance_id,
            category=self.category.value,
            image_pos=pos,
            image_neg=neg,
            caption_pos=self.caption,
            caption_neg=self.negative_caption,
            annotation_pos=self.annotation_pos,
            annotation_neg=self.annotation_neg,
        )


def build_split(
    scenes,
    category: SwapCategory,
    n: int,
    seed: int,
    templates: CaptionTemplates = DEFAULT_TEMPLATES,
) -> list[InstanceRecord]:
    """Assemble exactly n instances from one CLEVR split's scenes.

    Deterministic in (scenes, category, n, seed): scenes are visited in a
    seeded shuffle of scene-id order, each contributing at most one instance
    from its own seeded RNG stream, so the output is independent of input
    file ordering.
    """
    if n < 1:
        raise ConsistencyError("n must be >= 1")
    scenes = list(scenes)
    if not scenes:
        raise ExhaustionError(n, 0)
    splits = {s.source_split for s in scenes}
    if len(splits) > 1:
        raise ConsistencyError("build_split needs scenes from a single CLEVR split")
    target_split = DatasetSplit.DEV if splits.pop() is SourceSplit.TRAIN else DatasetSplit.TEST

    ordered = sorted(scenes, key=lambda s: s.scene_id)
    order_rng = Pcg32(seed, stream_for(f"assembly:{category.value}"))
    order_rng.shuffle(ordered)

    records: list[InstanceRecord] = []
    used_ids: set[str] = set()
    for scene in ordered:
        if len(records) == n:
            break
        if scene.scene_id in used_ids:
            continue
        rng = Pcg32(seed, stream_for(f"{category.value}:{scene.scene_id}"))
        selection = select_objects(scene, category, rng)
        if selection is None:
            continue
        caption = generate_caption(selection, scene, templates)
        try:
            negative_caption, negative_scene = make_swap_negative(selection, scene, rng, templates)
        except PlacementError:
            continue
        used_ids.add(scene.scene_id)
        records.append(
            InstanceRecord(
                instance_id=f"{category.value}_{target_split.value}_{scene.scene_id}",
                category=category,
                split=target_split,
                caption=caption,
                negative_caption=negative_caption,
                scene=scene,
                negative_scene=negative_scene,
                selection=selection,
                annotation_pos=annotation_for(selection, scene, templates),
                annotation_neg=negative_annotation_for(selection, negative_scene, templates),
            )
        )
    if len(records) < n:
        raise ExhaustionError(n, len(records))
    return records


def emit_render_jobs(records, out_dir) -> Path:
    """Write positive/negative scene files plus a renderer job manifest."""
    out_dir = Path(out_dir)
    scene_dir = out_dir / "scenes"
    scene_dir.mkdir(parents=True, exist_ok=True)
    manifest_path = out_dir / "render_manifest.jsonl"
    with open(manifest_path, "w", encoding="utf-8") as manifest:
        for rec in records:
            pos_id, neg_id = rec.image_ids()
            entries = []
            for scene, sid in ((rec.scene, pos_id), (rec.negative_scene, neg_id)):
                doc = scene.to_clevr_dict()
                doc["image_filename"] = f"{sid}.png"
                path = scene_dir / f"{sid}.json"
                with open(path, "w", encoding="utf-8") as fh:
                    json.dump(doc, fh, indent=1)
                entries.append(str(path.relative_to(out_dir)))
            manifest.write(
                json.dumps(
                    {
                        "instance_id": rec.instance_id,
                        "category": rec.category.value,
                        "positive_scene": entries[0],
                        "negative_scene": entries[1],
                        "positive_image": f"{pos_id}.png",
                        "negative_image": f"{neg_id}.png",
                    },
                    sort_keys=True,
                )
                + "\n"
            )
    return manifest_path
