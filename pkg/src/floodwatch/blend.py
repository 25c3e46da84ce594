"""Overlapping-window inference merged with spline weights.

Large rasters are mirror-padded, cut into windows at a fixed step, each
window is predicted (optionally averaged over the eight dihedral views),
and the window predictions are blended with a separable spline weight whose
half-step translates sum to one.
"""
from __future__ import annotations

from typing import Callable

import numpy as np

from floodwatch.errors import InvalidSize, InvalidWindow, MarginTooLarge, NonSquarePatch

PredictFn = Callable[[np.ndarray], np.ndarray]

DIHEDRAL = tuple(range(8))


def _triangle(size: int) -> np.ndarray:
    # Midpoint-sampled triangle: t[i] + t[i + size/2] == 1 exactly.
    half = size / 2
    centers = np.arange(size) + 0.5
    return 1.0 - np.abs(centers - half) / half


def spline_profile(size: int, power: float = 2.0) -> np.ndarray:
    """1-D window profile built from a triangle bump ``t``.

    Outer half: ``(2t)**power / 2``; inner half: ``1 - (2(1-t))**power / 2``.
    Since ``f(t) + f(1 - t) == 1``, copies shifted by ``size/2`` sum to one.
    """
    if size < 4 or size % 2:
        raise InvalidSize(f"window size must be even and >= 4, got {size}")
    if power <= 0:
        raise InvalidSize("power must be positive")
    t = _triangle(size)
    outer = (2.0 * t) ** power / 2.0
    inner = 1.0 - (2.0 * (1.0 - t)) ** power / 2.0
    return np.where(t <= 0.5, outer, inner)


def make_spline_window(size: int, power: float = 2.0) -> np.ndarray:
    """Separable 2-D blending window ``(size, size)``."""
    p = spline_profile(size, power)
    return np.outer(p, p)


def mirror_pad(image: np.ndarray, margin: int) -> np.ndarray:
    """Reflect-pad both spatial axes by ``margin``; edge pixels are not repeated."""
    arr = np.asarray(image)
    if margin < 0:
        raise ValueError("margin must be non-negative")
    if margin >= min(arr.shape[:2]):
        raise MarginTooLarge(f"margin {margin} must be smaller than {min(arr.shape[:2])}")
    return _reflect(arr, margin, margin, margin, margin)


def _reflect(arr, top, bottom, left, right):
    pad = [(top, bottom), (left, right)] + [(0, 0)] * (arr.ndim - 2)
    return np.pad(arr, pad, mode="reflect")


def dihedral_apply(patch: np.ndarray, t: int) -> np.ndarray:
    """Element ``t`` of the dihedral group: ``t % 4`` quarter turns, then a
    left-right mirror when ``t >= 4``."""
    patch = np.asarray(patch)
    if patch.shape[0] != patch.shape[1]:
        raise NonSquarePatch(f"dihedral transforms need a square patch, got {patch.shape[:2]}")
    if t not in DIHEDRAL:
        raise ValueError(f"dihedral element must be in 0..7, got {t}")
    out = np.rot90(patch, t % 4, axes=(0, 1))
    if t >= 4:
        out = out[:, ::-1]
    return out


def dihedral_invert(patch: np.ndarray, t: int) -> np.ndarray:
    patch = np.asarray(patch)
    if patch.shape[0] != patch.shape[1]:
        raise NonSquarePatch(f"dihedral transforms need a square patch, got {patch.shape[:2]}")
    if t not in DIHEDRAL:
        raise ValueError(f"dihedral element must be in 0..7, got {t}")
    if t >= 4:
        patch = patch[:, ::-1]
    return np.rot90(patch, -(t % 4), axes=(0, 1))


def _predict_window(patch, predict_fn, use_augmentation):
    if not use_augmentation:
        return np.asarray(predict_fn(patch), dtype=np.float64)
    acc = None
    for t in DIHEDRAL:
        pred = dihedral_invert(np.asarray(predict_fn(dihedral_apply(patch, t)), dtype=np.float64), t)
        acc = pred if acc is None else acc + pred
    return acc / len(DIHEDRAL)


def _origins(length: int, window: int, step: int) -> list[int]:
    return list(range(0, length - window + 1, step))


def predict_smooth(image: np.ndarray, window_size: int, predict_fn: PredictFn,
                   subdivisions: int = 2, use_augmentation: bool = True,
                   power: float = 2.0) -> np.ndarray:
    """Blend overlapping window predictions over the whole raster.

    ``predict_fn`` maps an ``(w, w, C)`` patch to ``(w, w, K)`` class
    probabilities. Returns ``(H, W, K)`` probabilities for ``image``.
    """
    image = np.asarray(image)
    if window_size < 4 or window_size % 2:
        raise InvalidWindow(f"window size must be even and >= 4, got {window_size}")
    if subdivisions < 1 or window_size % subdivisions:
        raise InvalidWindow(f"{subdivisions} subdivisions do not divide window {window_size}")
    h, w = image.shape[:2]
    step = window_size // subdivisions
    margin = window_size // 2
    # Extra bottom/right padding makes the padded extent land on the step grid.
    extra_h = (-(h + 2 * margin - window_size)) % step
    extra_w = (-(w + 2 * margin - window_size)) % step
    padded = _reflect(image, margin, margin + extra_h, margin, margin + extra_w)
    ph, pw = padded.shape[:2]

    weights = make_spline_window(window_size, power)
    acc = None
    wsum = np.zeros((ph, pw))
    for y in _origins(ph, window_size, step):
        for x in _origins(pw, window_size, step):
            pred = _predict_window(padded[y:y + window_size, x:x + window_size],
                                   predict_fn, use_augmentation)
            if pred.shape[:2] != (window_size, window_size):
                raise InvalidWindow(f"predict_fn returned {pred.shape}, expected spatial "
                                    f"{(window_size, window_size)}")
            if acc is None:
                acc = np.zeros((ph, pw, pred.shape[-1]))
            acc[y:y + window_size, x:x + window_size] += pred * weights[..., None]
            wsum[y:y + window_size, x:x + window_size] += weights

    out = (acc / wsum[..., None])[margin:margin + h, margin:margin + w]
    return out / out.sum(axis=-1, keepdims=True)


def argmax_labels(probs: np.ndarray) -> np.ndarray:
    """Per-pixel argmax; ties go to the lowest class id."""
    return np.argmax(np.asarray(probs), axis=-1).astype(np.uint8)
