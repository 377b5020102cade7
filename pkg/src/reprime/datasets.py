"""Synthetic labeled image datasets and dataset-archive IO.

Classes are sinusoidal textures: each class owns a frequency, an orientation
and a base color; each image adds a random phase, a brightness offset and
Gaussian noise. The source and target presets live in disjoint frequency
bands with different palettes, standing in for the source-domain /
target-domain gap. Archives store "images" [N,3,H,W] and "labels" [N]
(labels as f32 integers) in the tensor-archive format.
"""

from __future__ import annotations

import colorsys
from dataclasses import dataclass

import numpy as np

from .archive import read_archive, write_archive

__all__ = [
    "SyntheticSpec",
    "Dataset",
    "generate_synthetic",
    "source_preset",
    "target_preset",
    "split_fraction",
    "train_test_split",
    "save_dataset",
    "load_dataset",
]


@dataclass(frozen=True)
class SyntheticSpec:
    n_classes: int = 4
    n_images: int = 500
    image_size: int = 32
    freq_band: tuple = (2.0, 8.0)
    orientation_offset: float = 0.0
    hue_offset: float = 0.0
    n_hues: int | None = None  # classes share hues when fewer than n_classes
    noise: float = 0.05
    phase_jitter: float = 1.0  # fraction of a full period
    offset_jitter: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.n_classes < 2:
            raise ValueError("need at least 2 classes")
        if self.n_images % self.n_classes:
            raise ValueError("n_images must divide evenly across classes")
        if self.n_images // self.n_classes < 2:
            raise ValueError("need at least 2 images per class")
        if self.image_size < 8:
            raise ValueError("image_size must be >= 8")
        if self.n_hues is not None and self.n_hues < 1:
            raise ValueError("n_hues must be positive")
        if self.noise < 0 or self.phase_jitter < 0 or self.offset_jitter < 0:
            raise ValueError("jitter magnitudes must be non-negative")


@dataclass
class Dataset:
    images: np.ndarray  # [N,3,H,W] float32 in [0,1]
    labels: np.ndarray  # [N] int64

    def __post_init__(self):
        if self.images.ndim != 4 or self.images.shape[1] != 3:
            raise ValueError(f"images must be [N,3,H,W], got {self.images.shape}")
        if self.labels.shape != (self.images.shape[0],):
            raise ValueError("labels must align with images")

    def __len__(self):
        return self.images.shape[0]

    @property
    def n_classes(self):
        return int(self.labels.max()) + 1

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices)
        return Dataset(self.images[idx], self.labels[idx])


def _class_palette(n_classes, hue_offset, n_hues=None):
    n_hues = n_classes if n_hues is None else n_hues
    colors = []
    for c in range(n_classes):
        hue = (hue_offset + (c % n_hues) / n_hues) % 1.0
        colors.append(colorsys.hsv_to_rgb(hue, 0.65, 0.85))
    return np.asarray(colors, dtype=np.float32)


def generate_synthetic(spec: SyntheticSpec) -> Dataset:
    """Deterministic labeled dataset; identical spec -> identical arrays."""
    rng = np.random.default_rng(spec.seed)
    size = spec.image_size
    per_class = spec.n_images // spec.n_classes
    freqs = np.linspace(spec.freq_band[0], spec.freq_band[1], spec.n_classes)
    palette = _class_palette(spec.n_classes, spec.hue_offset, spec.n_hues)
    yy, xx = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")

    images = np.empty((spec.n_images, 3, size, size), dtype=np.float32)
    labels = np.empty(spec.n_images, dtype=np.int64)
    i = 0
    for c in range(spec.n_classes):
        theta = spec.orientation_offset + c * np.pi / spec.n_classes
        wave = (np.cos(theta) * xx + np.sin(theta) * yy) / size
        for _ in range(per_class):
            phase = rng.uniform(0.0, 2 * np.pi) * spec.phase_jitter
            offset = rng.uniform(-spec.offset_jitter, spec.offset_jitter)
            pattern = np.sin(2 * np.pi * freqs[c] * wave + phase)
            base = palette[c][:, None, None] * (0.55 + 0.35 * pattern)[None]
            img = base + offset
            if spec.noise:
                img = img + rng.normal(0.0, spec.noise, size=img.shape)
            images[i] = np.clip(img, 0.0, 1.0)
            labels[i] = c
            i += 1
    return Dataset(images, labels)


def source_preset(seed: int = 0) -> SyntheticSpec:
    """Source-domain proxy: 8 classes x 250 images, low-frequency textures."""
    return SyntheticSpec(
        n_classes=8,
        n_images=2000,
        image_size=32,
        freq_band=(2.0, 8.0),
        orientation_offset=0.0,
        hue_offset=0.0,
        noise=0.08,
        seed=seed,
    )


def target_preset(seed: int = 1) -> SyntheticSpec:
    """Target-domain proxy: 4 classes x 125 images, disjoint frequency band.

    Classes share hues in pairs, so color narrows a sample to two candidate
    classes and only texture (frequency/orientation) separates them; a probe
    on raw pixels clears chance through color while leaving headroom for
    learned texture features.
    """
    return SyntheticSpec(
        n_classes=4,
        n_images=500,
        image_size=32,
        freq_band=(10.0, 15.0),
        orientation_offset=np.pi / 7,
        hue_offset=0.1,
        n_hues=2,
        noise=0.10,
        seed=seed,
    )


def split_fraction(labels, fraction: float, run_index: int = 0, seed: int = 0) -> np.ndarray:
    """Class-stratified subset indices, disjoint across run_index when possible.

    Every run shuffles each class identically (from ``seed``) and takes the
    run's consecutive slice, wrapping around only when the requested slices
    no longer fit; runs 0..floor(1/fraction)-1 are therefore pairwise
    disjoint.
    """
    if not 0 < fraction <= 1:
        raise ValueError(f"fraction must lie in (0,1], got {fraction}")
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    picks = []
    for c in np.unique(labels):
        members = np.flatnonzero(labels == c)
        perm = members[rng.permutation(members.size)]
        k = int(round(fraction * members.size))
        if k < 1:
            raise ValueError(
                f"fraction {fraction} yields no samples for class {c} ({members.size} available)"
            )
        start = (run_index * k) % members.size
        rolled = np.roll(perm, -start)
        picks.append(rolled[:k])
    return np.sort(np.concatenate(picks))


def train_test_split(labels, test_fraction: float = 0.2, seed: int = 0):
    """Stratified (train_idx, test_idx); deterministic per seed."""
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    train, test = [], []
    for c in np.unique(labels):
        members = np.flatnonzero(labels == c)
        perm = members[rng.permutation(members.size)]
        n_test = max(1, int(round(test_fraction * members.size)))
        test.append(perm[:n_test])
        train.append(perm[n_test:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(test))


def save_dataset(dataset: Dataset, path):
    write_archive(
        {
            "images": dataset.images,
            "labels": dataset.labels.astype(np.float32),
        },
        path,
    )


def load_dataset(path) -> Dataset:
    tensors = read_archive(path)
    if "images" not in tensors or "labels" not in tensors:
        raise ValueError(f"{path}: dataset archives need 'images' and 'labels'")
    labels_f = tensors["labels"]
    labels = labels_f.astype(np.int64)
    if not np.array_equal(labels_f, labels.astype(np.float32)):
        raise ValueError(f"{path}: labels must be integral")
    return Dataset(tensors["images"], labels)
