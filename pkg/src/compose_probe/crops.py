"""Deterministic multi-scale, multi-aspect crop planning.

A crop plan tiles each configured (w, h) size over the image, either edge to
edge (grid) or with half-size strides (overlap). Positions start at 0 and
partial tiles at the right/bottom edge are dropped, which reproduces the
86-crop grid / 270-crop overlap plans on a 224x224 canvas. Sizes larger than
the image on either axis are skipped.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

from .errors import BoundsError, ConfigurationError
from .raster import ImageRaster, bilinear_resize, crop_raster

DEFAULT_CROP_SIZES: tuple[tuple[int, int], ...] = (
    (32, 32),
    (56, 56),
    (112, 112),
    (224, 224),
    (56, 112),
    (112, 56),
)


class Placement(enum.Enum):
    GRID = "grid"
    OVERLAP = "overlap"


@dataclass(frozen=True)
class CropRect:
    x: int
    y: int
    w: int
    h: int

    def __post_init__(self):
        if self.x < 0 or self.y < 0 or self.w <= 0 or self.h <= 0:
            raise BoundsError(f"invalid crop rect {self}")

    def key_suffix(self) -> str:
        return f"{self.x},{self.y},{self.w},{self.h}"


@dataclass(frozen=True)
class CropConfig:
    sizes: tuple[tuple[int, int], ...] = DEFAULT_CROP_SIZES
    placement: Placement = Placement.GRID
    include_full_image: bool = True

    def __post_init__(self):
        if not self.sizes:
            raise ConfigurationError("crop config needs at least one size")
        for w, h in self.sizes:
            if w <= 0 or h <= 0:
                raise ConfigurationError(f"invalid crop size ({w},{h})")


def _positions(dim: int, size: int, stride: int) -> list[int]:
    if size > dim:
        return []
    return list(range(0, dim - size + 1, stride))


def plan_crops(width: int, height: int, config: CropConfig) -> list[CropRect]:
    """Enumerate crop rects for an image of the given dims.

    Order is deterministic: sizes in config order, then row-major positions
    within each size. The full-image rect, when requested and not already
    produced by some size, is appended last.
    """
    if width <= 0 or height <= 0:
        raise ConfigurationError(f"invalid image dims {width}x{height}")
    rects: list[CropRect] = []
    for w, h in config.sizes:
        if config.placement is Placement.GRID:
            sx, sy = w, h
        else:
            sx, sy = max(1, w // 2), max(1, h // 2)
        for y in _positions(height, h, sy):
            for x in _positions(width, w, sx):
                rects.append(CropRect(x, y, w, h))
    if config.include_full_image:
        full = CropRect(0, 0, width, height)
        if full not in rects:
            rects.append(full)
    return rects


def per_size_counts(width: int, height: int, config: CropConfig) -> dict[tuple[int, int], int]:
    """Crop count contributed by each configured size (full-image extra excluded)."""
    counts: dict[tuple[int, int], int] = {}
    for w, h in config.sizes:
        if config.placement is Placement.GRID:
            sx, sy = w, h
        else:
            sx, sy = max(1, w // 2), max(1, h // 2)
        counts[(w, h)] = len(_positions(height, h, sy)) * len(_positions(width, w, sx))
    return counts


def extract_and_resize(image: ImageRaster, rect: CropRect, target: tuple[int, int]) -> ImageRaster:
    """Cut ``rect`` out of ``image`` and bilinearly resample it to ``target``."""
    sub = crop_raster(image, rect.x, rect.y, rect.w, rect.h)
    return bilinear_resize(sub, target[0], target[1])
