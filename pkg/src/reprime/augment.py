"""Stochastic two-view augmentation over [3,H,W] float images in [0,1].

Fixed application order: random square area crop -> bilinear resize ->
horizontal flip -> optional 90-degree rotation -> color jitter (brightness
adds, contrast scales around the mean luma, saturation interpolates toward
per-pixel gray) -> grayscale -> clamp. Every call consumes the same number
of random draws, so a given rng stream always yields the same view.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

__all__ = [
    "AugmentPolicy",
    "default_local_policy",
    "augment_view",
    "augment_pair",
    "multi_crop",
    "sample_rng",
]

LUMA = np.array([0.299, 0.587, 0.114], dtype=np.float32)


@dataclass(frozen=True)
class AugmentPolicy:
    crop_scale: tuple = (0.3, 1.0)
    out_size: int = 32
    flip_prob: float = 0.5
    brightness: float = 0.4
    contrast: float = 0.4
    saturation: float = 0.4
    grayscale_prob: float = 0.2
    rotate90_prob: float = 0.0

    def __post_init__(self):
        lo, hi = self.crop_scale
        if not (0 < lo <= hi <= 1):
            raise ValueError(f"crop scale range must sit inside (0,1], got {self.crop_scale}")
        for nm in ("flip_prob", "grayscale_prob", "rotate90_prob"):
            p = getattr(self, nm)
            if not 0 <= p <= 1:
                raise ValueError(f"{nm} must lie in [0,1], got {p}")
        if self.out_size < 8:
            raise ValueError(f"output size must be >= 8, got {self.out_size}")
        for nm in ("brightness", "contrast", "saturation"):
            if getattr(self, nm) < 0:
                raise ValueError(f"{nm} strength must be non-negative")


def default_local_policy(policy: AugmentPolicy) -> AugmentPolicy:
    """Small-crop variant used for SwaV-style local views."""
    return replace(policy, out_size=16, crop_scale=(0.1, 0.5))


def sample_rng(seed, *key) -> np.random.Generator:
    """Deterministic per-(seed, key...) stream, independent of worker layout."""
    return np.random.default_rng(np.random.SeedSequence((int(seed), *map(int, key))))


def bilinear_resize(img: np.ndarray, out_size: int) -> np.ndarray:
    """Resize [3,h,w] -> [3,out,out]; exact copy when sizes already match."""
    _, h, w = img.shape
    ys = ((np.arange(out_size) + 0.5) * (h / out_size) - 0.5).astype(np.float32)
    xs = ((np.arange(out_size) + 0.5) * (w / out_size) - 0.5).astype(np.float32)
    y0 = np.clip(np.floor(ys), 0, h - 1).astype(np.intp)
    x0 = np.clip(np.floor(xs), 0, w - 1).astype(np.intp)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = np.clip(ys - y0, 0.0, 1.0).astype(np.float32)
    wx = np.clip(xs - x0, 0.0, 1.0).astype(np.float32)
    rows0 = img[:, y0, :] * (1 - wy)[None, :, None] + img[:, y1, :] * wy[None, :, None]
    return rows0[:, :, x0] * (1 - wx)[None, None, :] + rows0[:, :, x1] * wx[None, None, :]


def augment_view(image: np.ndarray, policy: AugmentPolicy, rng: np.random.Generator) -> np.ndarray:
    img = np.asarray(image, dtype=np.float32)
    if img.ndim != 3 or img.shape[0] != 3:
        raise ValueError(f"expected a [3,H,W] image, got {img.shape}")
    _, h, w = img.shape

    lo, hi = policy.crop_scale
    min_side = int(np.sqrt(lo * h * w))
    if min_side < 2:
        raise ValueError(f"image {h}x{w} smaller than the minimal crop at scale {lo}")

    area_frac = rng.uniform(lo, hi)
    side = min(int(np.sqrt(area_frac * h * w)), h, w)
    top = int(rng.integers(0, h - side + 1))
    left = int(rng.integers(0, w - side + 1))
    flip = rng.uniform() < policy.flip_prob
    quarter_turns = int(rng.integers(0, 4))
    rotate = rng.uniform() < policy.rotate90_prob
    delta_b = rng.uniform(-policy.brightness, policy.brightness)
    factor_c = rng.uniform(1 - policy.contrast, 1 + policy.contrast)
    factor_s = rng.uniform(1 - policy.saturation, 1 + policy.saturation)
    to_gray = rng.uniform() < policy.grayscale_prob

    out = bilinear_resize(img[:, top : top + side, left : left + side], policy.out_size)
    if flip:
        out = out[:, :, ::-1]
    if rotate and quarter_turns:
        out = np.rot90(out, k=quarter_turns, axes=(1, 2))
    if policy.brightness:
        out = out + np.float32(delta_b)
    if policy.contrast:
        mean = np.float32((out * LUMA[:, None, None]).sum(axis=0).mean())
        out = mean + np.float32(factor_c) * (out - mean)
    gray = (out * LUMA[:, None, None]).sum(axis=0, keepdims=True)
    if policy.saturation:
        out = gray + np.float32(factor_s) * (out - gray)
        gray = (out * LUMA[:, None, None]).sum(axis=0, keepdims=True)
    if to_gray:
        out = np.repeat(gray, 3, axis=0)
    return np.clip(out, 0.0, 1.0, out=np.ascontiguousarray(out))


def augment_pair(image, policy: AugmentPolicy, rng: np.random.Generator):
    """Two independent views of one image, from disjoint child streams."""
    stream_a, stream_b = rng.spawn(2)
    return augment_view(image, policy, stream_a), augment_view(image, policy, stream_b)


def multi_crop(image, global_policy: AugmentPolicy, local_policy=None, n_local=0, rng=None):
    """Two global views plus ``n_local`` small views."""
    if n_local < 0:
        raise ValueError(f"n_local must be >= 0, got {n_local}")
    if rng is None:
        rng = np.random.default_rng()
    if local_policy is None:
        local_policy = default_local_policy(global_policy)
    streams = rng.spawn(2 + n_local)
    views = [augment_view(image, global_policy, streams[i]) for i in range(2)]
    views.extend(augment_view(image, local_policy, streams[2 + i]) for i in range(n_local))
    return views
