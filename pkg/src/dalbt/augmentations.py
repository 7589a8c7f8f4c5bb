"""Stochastic image distortions producing two views per input.

All transforms take and return H x W x C float arrays in [0, 1].
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import correlate1d

from .errors import DegenerateInputError

LUMA = np.array([0.299, 0.587, 0.114])

_RGB_TO_YIQ = np.array([
    [0.299, 0.587, 0.114],
    [0.596, -0.274, -0.322],
    [0.211, -0.523, 0.312],
])
_YIQ_TO_RGB = np.linalg.inv(_RGB_TO_YIQ)


@dataclass(frozen=True)
class AugmentationConfig:
    crop_scale_range: tuple[float, float] = (0.6, 1.0)
    flip_prob: float = 0.5
    jitter_strengths: tuple[float, float, float, float] = (0.4, 0.4, 0.2, 0.1)  # brightness, contrast, saturation, hue
    jitter_prob: float = 0.8
    grayscale_prob: float = 0.2
    blur_prob: float = 0.5
    blur_sigma_range: tuple[float, float] = (0.1, 2.0)
    solarize_prob_view1: float = 0.0
    solarize_prob_view2: float = 0.2
    solarize_threshold: float = 0.5

    def __post_init__(self):
        lo, hi = self.crop_scale_range
        if not 0 < lo <= hi <= 1:
            raise ValueError(f"crop_scale_range must satisfy 0 < lo <= hi <= 1, got {self.crop_scale_range}")
        for name in ("flip_prob", "jitter_prob", "grayscale_prob", "blur_prob",
                     "solarize_prob_view1", "solarize_prob_view2", "solarize_threshold"):
            v = getattr(self, name)
            if not 0 <= v <= 1:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if any(s < 0 for s in self.jitter_strengths) or len(self.jitter_strengths) != 4:
            raise ValueError("jitter_strengths must be four nonnegative numbers")
        slo, shi = self.blur_sigma_range
        if not 0 < slo <= shi:
            raise ValueError(f"blur_sigma_range must satisfy 0 < lo <= hi, got {self.blur_sigma_range}")

    @classmethod
    def identity(cls) -> "AugmentationConfig":
        return cls(crop_scale_range=(1.0, 1.0), flip_prob=0.0, jitter_prob=0.0, grayscale_prob=0.0,
                   blur_prob=0.0, solarize_prob_view1=0.0, solarize_prob_view2=0.0)


def _is_spatial(img) -> bool:
    return img.shape[0] >= 2 and img.shape[1] >= 2


def crop_resize(img, top, left, height, width):
    """Bilinear resize of a crop window back to the full image size.

    Uses half-pixel centres: output pixel ``i`` samples the window at
    ``(i + 0.5) * height / H - 0.5``, clamped to the window.
    """
    img = np.asarray(img, dtype=np.float64)
    H, W = img.shape[:2]

    def axis(n_out, start, length):
        src = (np.arange(n_out) + 0.5) * (length / n_out) - 0.5
        src = np.clip(src, 0.0, length - 1)
        i0 = np.floor(src).astype(np.int64)
        i1 = np.minimum(i0 + 1, length - 1)
        return start + i0, start + i1, src - i0

    y0, y1, wy = axis(H, top, height)
    x0, x1, wx = axis(W, left, width)
    wy = wy[:, None, None]
    wx = wx[None, :, None]
    top_row = img[y0][:, x0] * (1 - wx) + img[y0][:, x1] * wx
    bottom_row = img[y1][:, x0] * (1 - wx) + img[y1][:, x1] * wx
    return np.clip(top_row * (1 - wy) + bottom_row * wy, 0.0, 1.0)


def random_crop_resize(img, scale_range, rng):
    H, W = img.shape[:2]
    if H < 2 or W < 2:
        raise DegenerateInputError(f"cannot crop a {H}x{W} image")
    area = rng.uniform(*scale_range)
    side = math.sqrt(area)
    h = min(H, max(1, int(round(side * H))))
    w = min(W, max(1, int(round(side * W))))
    top = int(rng.integers(0, H - h + 1))
    left = int(rng.integers(0, W - w + 1))
    return crop_resize(img, top, left, h, w)


def horizontal_flip(img):
    return np.asarray(img)[:, ::-1, :].copy()


def solarize(img, threshold):
    img = np.asarray(img, dtype=np.float64)
    return np.where(img >= threshold, 1.0 - img, img)


def to_grayscale(img):
    """Luma grayscale replicated over the RGB channels.

    Only three-channel images have a colour to remove; others pass through.
    """
    img = np.asarray(img, dtype=np.float64)
    if img.shape[2] != 3:
        return img.copy()
    gray = img @ LUMA
    return np.clip(np.repeat(gray[..., None], 3, axis=2), 0.0, 1.0)


def _gray(img):
    return img @ LUMA if img.shape[2] == 3 else img.mean(axis=2)


def color_jitter(img, strengths, rng):
    """Brightness, contrast, saturation and hue perturbations, in that order.

    Saturation and hue only act on three-channel images.
    """
    img = np.asarray(img, dtype=np.float64)
    b, c, s, h = strengths
    out = img
    if b > 0:
        out = np.clip(out * rng.uniform(max(0.0, 1 - b), 1 + b), 0.0, 1.0)
    if c > 0:
        mean = _gray(out).mean()
        out = np.clip((out - mean) * rng.uniform(max(0.0, 1 - c), 1 + c) + mean, 0.0, 1.0)
    if img.shape[2] == 3:
        if s > 0:
            gray = _gray(out)[..., None]
            out = np.clip((out - gray) * rng.uniform(max(0.0, 1 - s), 1 + s) + gray, 0.0, 1.0)
        if h > 0:
            theta = 2 * np.pi * rng.uniform(-h, h)
            cos, sin = np.cos(theta), np.sin(theta)
            rot = np.array([[1, 0, 0], [0, cos, -sin], [0, sin, cos]])
            out = np.clip(out @ (_YIQ_TO_RGB @ rot @ _RGB_TO_YIQ).T, 0.0, 1.0)
    return out


def gaussian_kernel(sigma):
    radius = int(math.ceil(3 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def gaussian_blur(img, sigma):
    """Separable Gaussian blur, radius ceil(3 sigma), edge-clamped borders."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    k = gaussian_kernel(sigma)
    out = correlate1d(np.asarray(img, dtype=np.float64), k, axis=0, mode="nearest")
    out = correlate1d(out, k, axis=1, mode="nearest")
    return np.clip(out, 0.0, 1.0)


def _one_view(img, cfg: AugmentationConfig, solarize_prob, rng):
    # a uniform is drawn for every gate so the stream stays aligned whatever the probabilities
    out = img
    spatial = _is_spatial(img)
    if spatial:
        out = random_crop_resize(out, cfg.crop_scale_range, rng)
    if rng.random() < cfg.blur_prob and spatial:
        out = gaussian_blur(out, rng.uniform(*cfg.blur_sigma_range))
    if rng.random() < cfg.jitter_prob:
        out = color_jitter(out, cfg.jitter_strengths, rng)
    if rng.random() < cfg.grayscale_prob:
        out = to_grayscale(out)
    if rng.random() < cfg.flip_prob and spatial:
        out = horizontal_flip(out)
    if rng.random() < solarize_prob:
        out = solarize(out, cfg.solarize_threshold)
    return np.array(out, dtype=np.float64)


def make_views(img, cfg: AugmentationConfig, rng):
    """Two independently distorted views of one image.

    Crop + resize always runs on images of at least 2x2 pixels; 1x1
    (vector-like) inputs skip the spatial transforms.
    """
    img = np.asarray(img, dtype=np.float64)
    v1 = _one_view(img, cfg, cfg.solarize_prob_view1, rng)
    v2 = _one_view(img, cfg, cfg.solarize_prob_view2, rng)
    return v1, v2


def make_view_batch(x, ids, cfg: AugmentationConfig, seed, epoch):
    """Views for a batch; each sample draws from its own (seed, epoch, id) stream."""
    v1 = np.empty_like(x, dtype=np.float64)
    v2 = np.empty_like(x, dtype=np.float64)
    for n, (img, sid) in enumerate(zip(x, ids)):
        rng = np.random.default_rng([seed, epoch, int(sid)])
        v1[n], v2[n] = make_views(img, cfg, rng)
    return v1, v2
