"""Raw RGB rasters, bilinear resampling, and the resize/center-crop preprocessor.

Everything in here is deterministic pure-numpy; PNG/JPEG codecs live only at
the file boundary (``read_image``/``write_image``).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BoundsError, RasterError


@dataclass(frozen=True)
class ImageRaster:
    """Row-major RGB image, 8-bit per channel."""

    width: int
    height: int
    pixels: bytes

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise RasterError(f"invalid raster dims {self.width}x{self.height}")
        if len(self.pixels) != self.width * self.height * 3:
            raise RasterError(
                f"pixel buffer has {len(self.pixels)} bytes, "
                f"expected {self.width * self.height * 3}"
            )

    def to_array(self) -> np.ndarray:
        """(height, width, 3) uint8 view of the pixel data."""
        return np.frombuffer(self.pixels, dtype=np.uint8).reshape(
            self.height, self.width, 3
        )

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "ImageRaster":
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise RasterError(f"expected (H, W, 3) array, got {arr.shape}")
        arr = np.ascontiguousarray(arr, dtype=np.uint8)
        return cls(width=arr.shape[1], height=arr.shape[0], pixels=arr.tobytes())


def bilinear_resize(image: ImageRaster, target_w: int, target_h: int) -> ImageRaster:
    """Resample to (target_w, target_h) with bilinear interpolation.

    Sample positions use the half-pixel-center convention
    (src = (dst + 0.5) * scale - 0.5), edges clamped. Arithmetic is float64
    and rounding is half-up, so results are identical across platforms.
    """
    if target_w <= 0 or target_h <= 0:
        raise RasterError(f"invalid target size {target_w}x{target_h}")
    src = image.to_array().astype(np.float64)
    if target_w == image.width and target_h == image.height:
        return image

    def axis_coords(target: int, source: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        pos = (np.arange(target, dtype=np.float64) + 0.5) * (source / target) - 0.5
        pos = np.clip(pos, 0.0, source - 1.0)
        lo = np.floor(pos).astype(np.int64)
        hi = np.minimum(lo + 1, source - 1)
        frac = pos - lo
        return lo, hi, frac

    x0, x1, fx = axis_coords(target_w, image.width)
    y0, y1, fy = axis_coords(target_h, image.height)

    top = src[y0][:, x0] * (1 - fx)[None, :, None] + src[y0][:, x1] * fx[None, :, None]
    bot = src[y1][:, x0] * (1 - fx)[None, :, None] + src[y1][:, x1] * fx[None, :, None]
    out = top * (1 - fy)[:, None, None] + bot * fy[:, None, None]
    out = np.clip(np.floor(out + 0.5), 0, 255).astype(np.uint8)
    return ImageRaster.from_array(out)


def crop_raster(image: ImageRaster, x: int, y: int, w: int, h: int) -> ImageRaster:
    """Extract a sub-raster; the rect must lie fully inside the image."""
    if x < 0 or y < 0 or w <= 0 or h <= 0:
        raise BoundsError(f"invalid crop rect ({x},{y},{w},{h})")
    if x + w > image.width or y + h > image.height:
        raise BoundsError(
            f"crop rect ({x},{y},{w},{h}) exceeds image {image.width}x{image.height}"
        )
    arr = image.to_array()[y : y + h, x : x + w]
    return ImageRaster.from_array(arr)


def preprocess_input(image: ImageRaster, side: int) -> ImageRaster:
    """Scale the shorter side to ``side`` (aspect preserved), center-crop to side^2."""
    if side <= 0:
        raise RasterError(f"invalid preprocess side {side}")
    if image.width <= image.height:
        new_w = side
        new_h = int(np.floor(image.height * side / image.width + 0.5))
    else:
        new_h = side
        new_w = int(np.floor(image.width * side / image.height + 0.5))
    resized = bilinear_resize(image, new_w, new_h)
    left = (new_w - side) // 2
    top = (new_h - side) // 2
    return crop_raster(resized, left, top, side, side)


def read_image(path) -> ImageRaster:
    """Decode a PNG/JPEG file into a raster."""
    from PIL import Image

    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
    return ImageRaster.from_array(arr)


def write_image(image: ImageRaster, path) -> None:
    from PIL import Image

    Image.fromarray(image.to_array()).save(path)


def raster_to_png_bytes(image: ImageRaster) -> bytes:
    """Lossless PNG encoding, used for wire payloads."""
    import io

    from PIL import Image

    buf = io.BytesIO()
    Image.fromarray(image.to_array()).save(buf, format="PNG")
    return buf.getvalue()


def raster_from_png_bytes(data: bytes) -> ImageRaster:
    import io

    from PIL import Image

    with Image.open(io.BytesIO(data)) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
    return ImageRaster.from_array(arr)
