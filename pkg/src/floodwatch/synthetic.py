"""Synthetic colour-coded land-cover patches for desk-scale training.

Each class has its own dominant RGB channel (background has none), painted
as random rectangles and perturbed with Gaussian noise.
"""
from __future__ import annotations

import numpy as np

from floodwatch.raster import NUM_CLASSES

CLASS_COLORS = np.array([
    [70, 70, 70],    # background: no dominant channel
    [190, 70, 70],   # buildings: red
    [70, 190, 70],   # woodlands: green
    [70, 70, 190],   # water: blue
], dtype=np.float64)


def random_layout(rng: np.random.Generator, size: int, n_rects: int = 4) -> np.ndarray:
    mask = np.zeros((size, size), dtype=np.uint8)
    for _ in range(n_rects):
        cls = rng.integers(0, NUM_CLASSES)
        y0, x0 = rng.integers(0, size, 2)
        h, w = rng.integers(size // 4, size // 2 + 1, 2)
        mask[y0:y0 + h, x0:x0 + w] = cls
    return mask


def paint(mask: np.ndarray, rng: np.random.Generator, noise: float = 25.0) -> np.ndarray:
    img = CLASS_COLORS[mask] + rng.normal(0.0, noise, size=mask.shape + (3,))
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def make_dataset(n: int, size: int = 32, seed: int = 0, noise: float = 25.0
                 ) -> tuple[np.ndarray, np.ndarray]:
    """``n`` image patches ``(n, size, size, 3)`` and their masks ``(n, size, size)``."""
    rng = np.random.default_rng(seed)
    masks = np.stack([random_layout(rng, size) for _ in range(n)])
    images = np.stack([paint(m, rng, noise) for m in masks])
    return images, masks
