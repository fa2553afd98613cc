import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from compose_probe.crops import (
    CropConfig,
    CropRect,
    DEFAULT_CROP_SIZES,
    Placement,
    extract_and_resize,
    per_size_counts,
    plan_crops,
)
from compose_probe.errors import BoundsError, ConfigurationError
from compose_probe.raster import ImageRaster, bilinear_resize, preprocess_input

from conftest import flat_raster, random_raster


def brute_force_positions(dim, size, stride):
    """Independent enumeration: every start whose crop stays inside."""
    return [x for x in range(dim) if x % stride == 0 and x + size <= dim]


def brute_force_count(width, height, sizes, placement):
    total = 0
    for w, h in sizes:
        sx, sy = (w, h) if placement is Placement.GRID else (max(1, w // 2), max(1, h // 2))
        total += len(brute_force_positions(width, w, sx)) * len(brute_force_positions(height, h, sy))
    return total


def test_grid_plan_on_224_canvas_has_86_crops():
    rects = plan_crops(224, 224, CropConfig(placement=Placement.GRID))
    assert len(rects) == 86


def test_overlap_plan_on_224_canvas_has_270_crops():
    rects = plan_crops(224, 224, CropConfig(placement=Placement.OVERLAP))
    assert len(rects) == 270


def test_per_size_grid_counts_match_brute_force():
    counts = per_size_counts(224, 224, CropConfig(placement=Placement.GRID))
    assert counts == {
        (32, 32): 49, (56, 56): 16, (112, 112): 4, (224, 224): 1,
        (56, 112): 8, (112, 56): 8,
    }
    for (w, h), count in counts.items():
        expected = len(brute_force_positions(224, w, w)) * len(brute_force_positions(224, h, h))
        assert count == expected


def test_small_image_keeps_only_fitting_sizes():
    rects = plan_crops(32, 32, CropConfig(placement=Placement.GRID))
    assert rects == [CropRect(0, 0, 32, 32)]


def test_empty_sizes_is_a_configuration_error():
    with pytest.raises(ConfigurationError):
        CropConfig(sizes=())


def test_full_image_rect_appended_when_missing():
    cfg = CropConfig(sizes=((32, 32),), placement=Placement.GRID, include_full_image=True)
    rects = plan_crops(64, 64, cfg)
    assert rects[-1] == CropRect(0, 0, 64, 64)
    assert len(rects) == 5


@settings(max_examples=60)
@given(
    width=st.integers(8, 300),
    height=st.integers(8, 300),
    placement=st.sampled_from(list(Placement)),
)
def test_counts_match_brute_force_and_rects_stay_inside(width, height, placement):
    cfg = CropConfig(placement=placement, include_full_image=False)
    rects = plan_crops(width, height, cfg)
    assert len(rects) == brute_force_count(width, height, DEFAULT_CROP_SIZES, placement)
    for r in rects:
        assert r.x >= 0 and r.y >= 0
        assert r.x + r.w <= width and r.y + r.h <= height
    assert rects == plan_crops(width, height, cfg)  # pure function


def test_count_formula_per_axis():
    # count per axis = floor((dim - size)/stride) + 1 when size <= dim, else 0
    for dim in (17, 64, 224, 300):
        for size in (8, 32, 56, 300):
            for stride in (size, max(1, size // 2)):
                expected = (dim - size) // stride + 1 if size <= dim else 0
                assert len(brute_force_positions(dim, size, stride)) == expected


def test_identity_resize_returns_equal_raster():
    img = random_raster(17, 13, seed=5)
    out = extract_and_resize(img, CropRect(0, 0, 17, 13), (17, 13))
    assert out == img


def test_checkerboard_upsample_matches_hand_computed_bilinear():
    # 2x2 checker: hand-computed with half-pixel centers and half-up rounding
    arr = np.zeros((2, 2, 3), dtype=np.uint8)
    arr[0, 1] = arr[1, 0] = 255
    img = ImageRaster.from_array(arr)
    out = bilinear_resize(img, 4, 4).to_array()
    expected = np.array(
        [
            [0, 64, 191, 255],
            [64, 96, 159, 191],
            [191, 159, 96, 64],
            [255, 191, 64, 0],
        ],
        dtype=np.uint8,
    )
    for c in range(3):
        assert np.array_equal(out[:, :, c], expected)


def test_out_of_bounds_rect_raises():
    img = flat_raster(10, 10)
    with pytest.raises(BoundsError):
        extract_and_resize(img, CropRect(4, 4, 10, 10), (8, 8))


def test_preprocess_square_input_is_identity():
    img = random_raster(224, 224, seed=1)
    assert preprocess_input(img, 224) == img


def test_preprocess_wide_input_takes_center_width():
    img = random_raster(448, 224, seed=2)
    out = preprocess_input(img, 224)
    assert (out.width, out.height) == (224, 224)
    expected = img.to_array()[:, 112:336, :]
    assert np.array_equal(out.to_array(), expected)


def test_preprocess_tall_input_scales_then_center_crops():
    img = random_raster(100, 300, seed=3)
    out = preprocess_input(img, 224)
    assert (out.width, out.height) == (224, 224)
    # shorter side 100 -> 224 means the long side becomes round(300*2.24) = 672,
    # and the center crop starts at (672-224)//2 = 224
    resized = bilinear_resize(img, 224, 672)
    assert np.array_equal(out.to_array(), resized.to_array()[224:448, :, :])
