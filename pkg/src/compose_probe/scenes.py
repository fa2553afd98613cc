"""CLEVR-style scene graphs: parsing, validation, synthesis.

Scenes follow the published CLEVR scenes-JSON schema: a top-level
``{"info": ..., "scenes": [...]}`` document whose scenes carry attributed
objects (shape/color/size/material, 3d coords, rotation) and per-relation
adjacency lists (``relationships[rel][i]`` lists the objects that stand in
``rel`` to object i, e.g. the objects left of object i).

``synthesize_scenes`` generates schema-identical scenes for fixtures and
scale tests; it is not a substitute for the real dataset, just for its shape.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field

from .errors import SceneParseError
from .rng import Pcg32, stream_for

SHAPES = ("cube", "sphere", "cylinder")
COLORS = ("gray", "red", "blue", "green", "brown", "purple", "cyan", "yellow")
SIZES = ("small", "large")
MATERIALS = ("rubber", "metal")
RELATIONS = ("left", "right", "front", "behind")

# physical footprint radii used for collision checks, as in CLEVR
SIZE_RADIUS = {"small": 0.35, "large": 0.7}

DEFAULT_DIRECTIONS = {
    "left": (-1.0, 0.0, 0.0),
    "right": (1.0, 0.0, 0.0),
    "front": (0.0, -1.0, 0.0),
    "behind": (0.0, 1.0, 0.0),
}

RELATION_EPS = 0.2


class SourceSplit(enum.Enum):
    TRAIN = "train"
    VAL = "val"


@dataclass(frozen=True)
class SceneObject:
    shape: str
    color: str
    size: str
    material: str
    coords: tuple[float, float, float]
    rotation: float = 0.0
    pixel_coords: tuple[float, float, float] | None = None

    def signature(self) -> tuple[str, str]:
        return (self.color, self.shape)

    def to_dict(self) -> dict:
        d = {
            "shape": self.shape,
            "color": self.color,
            "size": self.size,
            "material": self.material,
            "rotation": self.rotation,
            "3d_coords": list(self.coords),
        }
        if self.pixel_coords is not None:
            d["pixel_coords"] = list(self.pixel_coords)
        return d


@dataclass(frozen=True)
class SceneGraph:
    scene_id: str
    source_split: SourceSplit
    objects: tuple[SceneObject, ...]
    relationships: dict[str, tuple[tuple[int, ...], ...]]
    directions: dict[str, tuple[float, float, float]] = field(
        default_factory=lambda: dict(DEFAULT_DIRECTIONS)
    )
    image_index: int = 0
    image_filename: str = ""

    def related(self, relation: str, subject: int, obj: int) -> bool:
        """True iff ``subject`` stands in ``relation`` to ``obj``."""
        return subject in self.relationships[relation][obj]

    def relations_between(self, subject: int, obj: int) -> list[str]:
        return [r for r in RELATIONS if self.related(r, subject, obj)]

    def to_clevr_dict(self) -> dict:
        return {
            "split": self.source_split.value,
            "image_index": self.image_index,
            "image_filename": self.image_filename or f"{self.scene_id}.png",
            "objects": [o.to_dict() for o in self.objects],
            "relationships": {r: [list(adj) for adj in lists] for r, lists in self.relationships.items()},
            "directions": {k: list(v) for k, v in self.directions.items()},
        }


def compute_relationships(
    objects, directions=None, eps: float = RELATION_EPS
) -> dict[str, tuple[tuple[int, ...], ...]]:
    """Spatial adjacency from 3d coords, one list per object per relation."""
    directions = directions or DEFAULT_DIRECTIONS
    out = {}
    for rel in RELATIONS:
        vec = directions[rel]
        lists = []
        for i, a in enumerate(objects):
            related = []
            for j, b in enumerate(objects):
                if i == j:
                    continue
                diff = (b.coords[0] - a.coords[0], b.coords[1] - a.coords[1], b.coords[2] - a.coords[2])
                if diff[0] * vec[0] + diff[1] * vec[1] + diff[2] * vec[2] > eps:
                    related.append(j)
            lists.append(tuple(sorted(related)))
        out[rel] = tuple(lists)
    return out


def _parse_object(d: dict, scene_index: int) -> SceneObject:
    try:
        coords = d["3d_coords"]
        obj = SceneObject(
            shape=d["shape"],
            color=d["color"],
            size=d["size"],
            material=d["material"],
            coords=(float(coords[0]), float(coords[1]), float(coords[2])),
            rotation=float(d.get("rotation", 0.0)),
            pixel_coords=tuple(d["pixel_coords"]) if "pixel_coords" in d else None,
        )
    except (KeyError, TypeError, IndexError) as exc:
        raise SceneParseError(f"malformed object: {exc}", scene_index) from exc
    if obj.shape not in SHAPES:
        raise SceneParseError(f"unknown shape {obj.shape!r}", scene_index)
    if obj.color not in COLORS:
        raise SceneParseError(f"unknown color {obj.color!r}", scene_index)
    if obj.size not in SIZES:
        raise SceneParseError(f"unknown size {obj.size!r}", scene_index)
    if obj.material not in MATERIALS:
        raise SceneParseError(f"unknown material {obj.material!r}", scene_index)
    return obj


def _validate_adjacency(scene: SceneGraph, scene_index: int) -> None:
    n = len(scene.objects)
    for rel in RELATIONS:
        lists = scene.relationships.get(rel)
        if lists is None or len(lists) != n:
            raise SceneParseError(f"relation {rel!r} missing or wrong length", scene_index)
        for i, adj in enumerate(lists):
            for j in adj:
                if not (0 <= j < n) or j == i:
                    raise SceneParseError(
                        f"relation {rel!r} entry {i} references invalid object {j}", scene_index
                    )
    for a, b in (("left", "right"), ("front", "behind")):
        for i in range(n):
            for j in scene.relationships[a][i]:
                if i not in scene.relationships[b][j]:
                    raise SceneParseError(
                        f"inconsistent {a}/{b} lists: {j} {a} of {i} "
                        f"but {i} not {b} of {j}", scene_index
                    )


def parse_scene(d: dict, scene_index: int = 0) -> SceneGraph:
    try:
        split = SourceSplit(d.get("split", "val"))
    except ValueError as exc:
        raise SceneParseError(f"unknown split {d.get('split')!r}", scene_index) from exc
    objects = tuple(_parse_object(o, scene_index) for o in d.get("objects", []))
    if not objects:
        raise SceneParseError("scene has no objects", scene_index)
    rels_raw = d.get("relationships")
    if not isinstance(rels_raw, dict):
        raise SceneParseError("missing relationships dict", scene_index)
    relationships = {}
    for rel in RELATIONS:
        if rel not in rels_raw:
            raise SceneParseError(f"missing relation {rel!r}", scene_index)
        relationships[rel] = tuple(tuple(int(j) for j in adj) for adj in rels_raw[rel])
    directions = {
        k: tuple(float(x) for x in v)
        for k, v in d.get("directions", {}).items()
        if k in RELATIONS
    } or dict(DEFAULT_DIRECTIONS)
    image_index = int(d.get("image_index", scene_index))
    image_filename = d.get("image_filename", "")
    scene_id = image_filename.rsplit(".", 1)[0] if image_filename else f"{split.value}_{image_index:06d}"
    scene = SceneGraph(
        scene_id=scene_id,
        source_split=split,
        objects=objects,
        relationships=relationships,
        directions=directions,
        image_index=image_index,
        image_filename=image_filename,
    )
    _validate_adjacency(scene, scene_index)
    return scene


def load_clevr_scenes(path) -> list[SceneGraph]:
    """Parse a CLEVR scenes-JSON file (wrapper document or bare scene list)."""
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    raw_scenes = doc["scenes"] if isinstance(doc, dict) else doc
    if not isinstance(raw_scenes, list):
        raise SceneParseError("document has no scene list")
    return [parse_scene(s, i) for i, s in enumerate(raw_scenes)]


def write_clevr_scenes(scenes, path, info: dict | None = None) -> None:
    doc = {
        "info": info or {"split": scenes[0].source_split.value if scenes else "val"},
        "scenes": [s.to_clevr_dict() for s in scenes],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)


def place_object(existing, size: str, rng: Pcg32, bounds: float = 2.8,
                 margin: float = 0.15, max_tries: int = 100):
    """Find a non-overlapping table position for a new object, or None."""
    radius = SIZE_RADIUS[size]
    for _ in range(max_tries):
        x = rng.uniform(-bounds, bounds)
        y = rng.uniform(-bounds, bounds)
        ok = True
        for other in existing:
            dx = x - other.coords[0]
            dy = y - other.coords[1]
            min_dist = radius + SIZE_RADIUS[other.size] + margin
            if dx * dx + dy * dy < min_dist * min_dist:
                ok = False
                break
        if ok:
            return (x, y, radius)
    return None


def synthesize_scenes(
    n_scenes: int,
    split: SourceSplit,
    seed: int,
    min_objects: int = 3,
    max_objects: int = 10,
) -> list[SceneGraph]:
    """Generate random valid scenes in the CLEVR schema.

    Each scene draws its palette from a small per-scene pool of colors and
    shapes so that repeated (color, shape) signatures - the raw material for
    counting contrasts - occur often.
    """
    scenes = []
    for idx in range(n_scenes):
        rng = Pcg32(seed, stream_for(f"scene-{split.value}-{idx}"))
        n_objects = min_objects + rng.randrange(max_objects - min_objects + 1)
        palette_colors = [COLORS[i] for i in rng.sample_indices(len(COLORS), 1 + rng.randrange(3))]
        palette_shapes = [SHAPES[i] for i in rng.sample_indices(len(SHAPES), 1 + rng.randrange(2))]
        objects: list[SceneObject] = []
        for _ in range(n_objects):
            size = rng.choice(SIZES)
            spot = place_object(objects, size, rng)
            if spot is None:
                break
            objects.append(
                SceneObject(
                    shape=rng.choice(palette_shapes),
                    color=rng.choice(palette_colors),
                    size=size,
                    material=rng.choice(MATERIALS),
                    coords=spot,
                    rotation=rng.uniform(0.0, 360.0),
                )
            )
        if len(objects) < min_objects:
            continue
        objs = tuple(objects)
        scenes.append(
            SceneGraph(
                scene_id=f"SYN_{split.value}_{idx:06d}",
                source_split=split,
                objects=objs,
                relationships=compute_relationships(objs),
                image_index=idx,
                image_filename=f"SYN_{split.value}_{idx:06d}.png",
            )
        )
    return scenes
