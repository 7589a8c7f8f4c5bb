import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from dalbt.augmentations import (
    AugmentationConfig,
    color_jitter,
    crop_resize,
    gaussian_blur,
    gaussian_kernel,
    horizontal_flip,
    make_view_batch,
    make_views,
    random_crop_resize,
    solarize,
    to_grayscale,
)
from dalbt.errors import DegenerateInputError

images = arrays(np.float64, (5, 4, 3), elements=st.floats(0, 1))


def test_full_window_crop_is_identity():
    img = np.random.default_rng(0).random((6, 5, 2))
    out = random_crop_resize(img, (1.0, 1.0), np.random.default_rng(1))
    np.testing.assert_allclose(out, img, atol=1e-15)


def test_constant_image_survives_crop():
    img = np.full((7, 7, 1), 0.37)
    out = random_crop_resize(img, (0.3, 0.6), np.random.default_rng(2))
    np.testing.assert_allclose(out, 0.37, atol=1e-15)


def test_ramp_upscale_matches_hand_bilinear():
    # 4x4 image with value 0.1 * (row + col); window rows 1..2, cols 0..1, resized to 4x4.
    # half-pixel source coordinate for output i is (i + 0.5) / 2 - 0.5, clamped to [0, 1]:
    # i = 0..3 -> 0, 0.25, 0.75, 1 inside the window
    img = (0.1 * (np.arange(4)[:, None] + np.arange(4)[None, :]))[..., None]
    src = np.array([0.0, 0.25, 0.75, 1.0])
    expected = 0.1 * ((1 + src)[:, None] + (0 + src)[None, :])  # bilinear is exact on a linear ramp
    np.testing.assert_allclose(crop_resize(img, 1, 0, 2, 2)[..., 0], expected, atol=1e-15)


def test_crop_rejects_tiny_images():
    with pytest.raises(DegenerateInputError):
        random_crop_resize(np.zeros((1, 5, 1)), (0.5, 1.0), np.random.default_rng(0))


@settings(max_examples=40, deadline=None)
@given(images)
def test_flip_is_involution(img):
    np.testing.assert_array_equal(horizontal_flip(horizontal_flip(img)), img)


def test_flip_row_and_symmetric():
    row = np.array([[0.1, 0.2, 0.3]])[..., None]
    np.testing.assert_array_equal(horizontal_flip(row)[0, :, 0], [0.3, 0.2, 0.1])
    sym = np.array([[0.4, 0.9, 0.4]])[..., None]
    np.testing.assert_array_equal(horizontal_flip(sym), sym)


def test_solarize_points():
    assert solarize(np.array([0.8]), 0.5)[0] == pytest.approx(0.2)
    np.testing.assert_array_equal(solarize(np.array([0.3, 0.99, 1.0]), 1.0), [0.3, 0.99, 0.0])


@settings(max_examples=40, deadline=None)
@given(images)
def test_solarize_zero_threshold_inverts_twice(img):
    np.testing.assert_allclose(solarize(img, 0.0), 1.0 - img)
    np.testing.assert_allclose(solarize(solarize(img, 0.0), 0.0), img, atol=1e-15)


def test_grayscale_of_gray_is_unchanged():
    g = np.random.default_rng(3).random((4, 4, 1))
    img = np.repeat(g, 3, axis=2)
    np.testing.assert_allclose(to_grayscale(img), img, atol=1e-15)
    np.testing.assert_array_equal(to_grayscale(g), g)  # single channel passes through


def test_jitter_zero_strength_is_identity():
    img = np.random.default_rng(4).random((4, 4, 3))
    np.testing.assert_array_equal(color_jitter(img, (0, 0, 0, 0), np.random.default_rng(0)), img)


def test_blur_constant_and_mean():
    np.testing.assert_allclose(gaussian_blur(np.full((9, 9, 3), 0.6), 1.3), 0.6, atol=1e-15)
    # away from the borders the normalized kernel conserves mass, so the mean is unchanged
    img = np.zeros((41, 41, 1))
    img[18:23, 18:23] = 0.5
    np.testing.assert_allclose(gaussian_blur(img, 1.0).mean(), img.mean(), rtol=1e-12)
    k = gaussian_kernel(0.7)
    assert len(k) == 2 * 3 + 1
    assert k.sum() == pytest.approx(1.0)


def test_identity_config_keeps_input():
    img = np.random.default_rng(5).random((6, 6, 1))
    v1, v2 = make_views(img, AugmentationConfig.identity(), np.random.default_rng(0))
    np.testing.assert_allclose(v1, img, atol=1e-15)
    np.testing.assert_allclose(v2, img, atol=1e-15)


def test_flip_only_config_flips_both_views():
    img = np.random.default_rng(6).random((5, 5, 1))
    cfg = AugmentationConfig(crop_scale_range=(1.0, 1.0), flip_prob=1.0, jitter_prob=0.0, grayscale_prob=0.0,
                             blur_prob=0.0, solarize_prob_view1=0.0, solarize_prob_view2=0.0)
    v1, v2 = make_views(img, cfg, np.random.default_rng(0))
    np.testing.assert_allclose(v1, horizontal_flip(img), atol=1e-15)
    np.testing.assert_allclose(v2, horizontal_flip(img), atol=1e-15)


def test_views_are_deterministic_and_in_range():
    img = np.random.default_rng(7).random((8, 8, 3))
    a = make_views(img, AugmentationConfig(), np.random.default_rng(11))
    b = make_views(img, AugmentationConfig(), np.random.default_rng(11))
    for u, v in zip(a, b):
        np.testing.assert_array_equal(u, v)
        assert u.shape == img.shape
        assert u.min() >= 0.0 and u.max() <= 1.0


def test_view_batch_independent_of_batch_order():
    x = np.random.default_rng(8).random((4, 6, 6, 1))
    ids = [10, 11, 12, 13]
    v1, v2 = make_view_batch(x, ids, AugmentationConfig(), seed=3, epoch=2)
    r1, r2 = make_view_batch(x[::-1], ids[::-1], AugmentationConfig(), seed=3, epoch=2)
    np.testing.assert_array_equal(v1, r1[::-1])
    np.testing.assert_array_equal(v2, r2[::-1])


def test_vector_inputs_skip_spatial_transforms():
    x = np.random.default_rng(9).random((1, 1, 6))
    v1, v2 = make_views(x, AugmentationConfig(), np.random.default_rng(0))
    assert v1.shape == x.shape and v2.shape == x.shape


def test_config_validation():
    with pytest.raises(ValueError):
        AugmentationConfig(crop_scale_range=(0.0, 1.0))
    with pytest.raises(ValueError):
        AugmentationConfig(flip_prob=1.5)
