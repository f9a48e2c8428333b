"""Seeded synthetic corpus: Voronoi color mosaics with pixel noise.

Stands in for a real segmentation corpus at desk scale. Each image is a
Voronoi partition of the canvas around randomly placed seed pixels, one flat
random color per region plus additive Gaussian noise; the ground truth is
the region id map.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class SyntheticSpec:
    width: int = 96
    height: int = 96
    regions_min: int = 5
    regions_max: int = 12
    noise_sigma: float = 8.0
    count: int = 20
    seed: int = 0

    def __post_init__(self) -> None:
        if self.width < 1 or self.height < 1:
            raise ValueError("canvas must be at least 1x1")
        if not 1 <= self.regions_min <= self.regions_max:
            raise ValueError("need 1 <= regions_min <= regions_max")
        if self.regions_max > self.width * self.height:
            raise ValueError("more regions than pixels")
        if self.noise_sigma < 0:
            raise ValueError("noise sigma must be non-negative")


def generate_item(rng: np.random.Generator, width: int, height: int,
                  n_regions: int, noise_sigma: float):
    """One (image, label) pair. Every region is non-empty: seeds sit on
    distinct pixels and each seed owns at least its own pixel."""
    n = width * height
    seed_pix = rng.choice(n, size=n_regions, replace=False)
    sx = seed_pix % width
    sy = seed_pix // width
    colors = rng.integers(0, 256, size=(n_regions, 3))
    xs = np.arange(width)
    ys = np.arange(height)
    d2 = (
        (xs[None, :, None] - sx[None, None, :]) ** 2
        + (ys[:, None, None] - sy[None, None, :]) ** 2
    )
    # ties go to the lowest region id
    gt = d2.argmin(axis=2)
    img = colors[gt].astype(np.float64)
    if noise_sigma > 0:
        img += rng.normal(0.0, noise_sigma, size=img.shape)
    img = np.clip(np.round(img), 0, 255).astype(np.uint8)
    return img, gt


def generate_corpus(spec: SyntheticSpec):
    """List of (name, image, label2d) triples, deterministic in the seed."""
    rng = np.random.default_rng(spec.seed)
    out = []
    for i in range(spec.count):
        n_regions = int(rng.integers(spec.regions_min, spec.regions_max + 1))
        img, gt = generate_item(rng, spec.width, spec.height, n_regions,
                                spec.noise_sigma)
        out.append((f"synth_{i:03d}", img, gt))
    return out
