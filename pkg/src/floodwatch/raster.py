"""Raster and label-mask handling: cropping, patch tiling, filtering, splitting.

Images are ``(height, width, 3)`` uint8 arrays and label masks are
``(height, width)`` uint8 arrays of class ids in ``[0, NUM_CLASSES)``.
"""
from __future__ import annotations

import json
import random
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image

from floodwatch.errors import DimensionMismatch, DimensionTooSmall, EmptyDataset

NUM_CLASSES = 4
CLASS_NAMES = ("background", "buildings", "woodlands", "water")
DEFAULT_PATCH_SIZE = 256
DEFAULT_MIN_LABELED_FRACTION = 0.05

_PATCH_NAME = re.compile(r"^(?P<stem>.+)_r(?P<row>\d+)_c(?P<col>\d+)\.png$")


def as_image(data) -> np.ndarray:
    """Validate and return an RGB raster as a ``(H, W, 3)`` uint8 array."""
    arr = np.asarray(data)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise DimensionMismatch(f"expected (H, W, 3) RGB raster, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise DimensionTooSmall(f"raster must be at least 1x1, got {arr.shape[:2]}")
    return arr.astype(np.uint8, copy=False)


def as_mask(data, num_classes: int = NUM_CLASSES) -> np.ndarray:
    """Validate and return a label mask as a ``(H, W)`` uint8 array."""
    arr = np.asarray(data)
    if arr.ndim != 2:
        raise DimensionMismatch(f"expected (H, W) label mask, got shape {arr.shape}")
    if arr.size and (arr.min() < 0 or arr.max() >= num_classes):
        raise ValueError(f"mask values must lie in [0, {num_classes})")
    return arr.astype(np.uint8, copy=False)


@dataclass(frozen=True)
class PatchGrid:
    patch_size: int
    rows: int
    cols: int

    @property
    def origins(self) -> list[tuple[int, int]]:
        """(y, x) offset of every patch in row-major order."""
        return [(r * self.patch_size, c * self.patch_size)
                for r in range(self.rows) for c in range(self.cols)]

    @property
    def shape(self) -> tuple[int, int]:
        return self.rows * self.patch_size, self.cols * self.patch_size


@dataclass
class DatasetSplit:
    train: list
    val: list
    ratio: float
    seed: int

    def to_json(self) -> str:
        return json.dumps({"seed": self.seed, "ratio": self.ratio,
                           "train": list(self.train), "val": list(self.val)})

    @classmethod
    def from_json(cls, text: str) -> "DatasetSplit":
        obj = json.loads(text)
        return cls(train=list(obj["train"]), val=list(obj["val"]),
                   ratio=float(obj["ratio"]), seed=int(obj["seed"]))

    def save(self, path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "DatasetSplit":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


def crop_to_multiple(image: np.ndarray, unit: int = DEFAULT_PATCH_SIZE) -> np.ndarray:
    """Crop the top-left ``floor(dim / unit) * unit`` sub-rectangle.

    Works for RGB rasters and label masks alike.
    """
    arr = np.asarray(image)
    h, w = arr.shape[:2]
    if h < unit or w < unit:
        raise DimensionTooSmall(f"{w}x{h} raster is smaller than crop unit {unit}")
    return arr[: (h // unit) * unit, : (w // unit) * unit]


def patchify(image: np.ndarray, patch_size: int = DEFAULT_PATCH_SIZE
             ) -> tuple[list[np.ndarray], PatchGrid]:
    arr = np.asarray(image)
    h, w = arr.shape[:2]
    if h % patch_size or w % patch_size:
        raise DimensionMismatch(
            f"{w}x{h} is not a multiple of patch size {patch_size}; crop first")
    grid = PatchGrid(patch_size, h // patch_size, w // patch_size)
    patches = [arr[y:y + patch_size, x:x + patch_size].copy() for y, x in grid.origins]
    return patches, grid


def reassemble(patches: Sequence[np.ndarray], grid: PatchGrid) -> np.ndarray:
    """Inverse of :func:`patchify`."""
    if len(patches) != grid.rows * grid.cols:
        raise DimensionMismatch(f"grid expects {grid.rows * grid.cols} patches, got {len(patches)}")
    rows = [np.concatenate(patches[r * grid.cols:(r + 1) * grid.cols], axis=1)
            for r in range(grid.rows)]
    return np.concatenate(rows, axis=0)


def labeled_fraction(mask: np.ndarray) -> float:
    mask = np.asarray(mask)
    return float(np.count_nonzero(mask)) / mask.size if mask.size else 0.0


def filter_useful(masks: Sequence[np.ndarray],
                  min_labeled_fraction: float = DEFAULT_MIN_LABELED_FRACTION) -> list[int]:
    """Indices of masks whose non-background fraction reaches the threshold."""
    if not 0.0 <= min_labeled_fraction <= 1.0:
        raise ValueError("min_labeled_fraction must lie in [0, 1]")
    return [i for i, m in enumerate(masks) if labeled_fraction(m) >= min_labeled_fraction]


def split_dataset(ids: Sequence, ratio: float = 0.75, seed: int = 0) -> DatasetSplit:
    """Shuffle ``ids`` with a seeded RNG and cut at ``round(ratio * n)``."""
    if not 0.0 < ratio < 1.0:
        raise ValueError("ratio must lie strictly between 0 and 1")
    ids = list(ids)
    if not ids:
        raise EmptyDataset("cannot split an empty id list")
    order = ids[:]
    random.Random(seed).shuffle(order)
    n_train = int(round(ratio * len(order)))
    return DatasetSplit(train=order[:n_train], val=order[n_train:], ratio=ratio, seed=seed)


# -- file IO ---------------------------------------------------------------

def read_image(path) -> np.ndarray:
    with Image.open(path) as im:
        return as_image(np.array(im.convert("RGB")))


def read_mask(path) -> np.ndarray:
    with Image.open(path) as im:
        if im.mode not in ("L", "P", "1"):
            raise ValueError(f"{path}: label masks must be single-channel, got mode {im.mode}")
        return as_mask(np.array(im.convert("L")))


def write_image(path, image: np.ndarray) -> None:
    Image.fromarray(as_image(image), mode="RGB").save(path, format="PNG")


def write_mask(path, mask: np.ndarray) -> None:
    Image.fromarray(np.ascontiguousarray(mask, dtype=np.uint8), mode="L").save(path, format="PNG")


def patch_filename(stem: str, row: int, col: int) -> str:
    return f"{stem}_r{row}_c{col}.png"


def parse_patch_filename(name: str) -> tuple[str, int, int]:
    m = _PATCH_NAME.match(Path(name).name)
    if m is None:
        raise ValueError(f"not a patch file name: {name}")
    return m["stem"], int(m["row"]), int(m["col"])


def write_patches(out_dir, stem: str, patches: Sequence[np.ndarray], grid: PatchGrid,
                  is_mask: bool = False) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    writer = write_mask if is_mask else write_image
    paths = []
    for k, patch in enumerate(patches):
        r, c = divmod(k, grid.cols)
        p = out_dir / patch_filename(stem, r, c)
        writer(p, patch)
        paths.append(p)
    return paths
