"""Land-cover change between pre- and post-event label masks."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import ndimage

from floodwatch.errors import DimensionMismatch, ZeroBaseline
from floodwatch.raster import CLASS_NAMES, NUM_CLASSES

log = logging.getLogger(__name__)

DEFAULT_MIN_AREA = 64
RATIO_TOLERANCE = 1e-4
RATIO_DECIMALS = 4
UNNAMED = "unnamed"
_EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)


@dataclass
class RegionAnnotation:
    name: str
    bbox: tuple[int, int, int, int]  # x0, y0, x1, y1; half-open

    def overlaps(self, other: Sequence[int]) -> bool:
        ax0, ay0, ax1, ay1 = self.bbox
        bx0, by0, bx1, by1 = other
        return ax0 < bx1 and bx0 < ax1 and ay0 < by1 and by0 < ay1


@dataclass
class NamedRegion:
    label: int
    area: int
    bbox: tuple[int, int, int, int]
    names: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"label": self.label, "area": self.area, "bbox": list(self.bbox),
                "names": list(self.names)}

    @classmethod
    def from_dict(cls, d: dict) -> "NamedRegion":
        return cls(int(d["label"]), int(d["area"]), tuple(d["bbox"]), list(d.get("names", [])))


def count_class_pixels(mask: np.ndarray, num_classes: int = NUM_CLASSES) -> np.ndarray:
    """Exact per-class histogram, length ``num_classes``."""
    return np.bincount(np.asarray(mask).ravel(), minlength=num_classes).astype(np.int64)


@dataclass
class RatioRow:
    label: int
    predicted: int
    actual: int
    ratio: float | None
    printed: float | None = None

    @property
    def display(self) -> float | None:
        """Ratio truncated (not rounded) to 4 decimals, in exact integer arithmetic."""
        if self.ratio is None:
            return None
        return (self.predicted * 10 ** RATIO_DECIMALS // self.actual) / 10 ** RATIO_DECIMALS

    @property
    def contradicts_printed(self) -> bool:
        if self.printed is None or self.ratio is None:
            return False
        return abs(self.display - self.printed) > RATIO_TOLERANCE + 1e-12


def pixel_ratio(predicted: Sequence[int], actual: Sequence[int],
                printed: Sequence[float | None] | None = None) -> list[RatioRow]:
    """Predicted/actual pixel-count ratio per class.

    A class with zero actual pixels gets ``ratio=None`` and a warning. When
    ``printed`` reference ratios are given, rows whose recomputed ratio
    differs from them by more than 1e-4 report ``contradicts_printed``.
    ``RatioRow.display`` gives the 4-decimal truncated value.
    """
    rows = []
    for c, (p, a) in enumerate(zip(predicted, actual)):
        ref = printed[c] if printed is not None else None
        if a == 0:
            log.warning("class %d has no reference pixels; ratio omitted", c)
            rows.append(RatioRow(c, int(p), int(a), None, ref))
        else:
            rows.append(RatioRow(c, int(p), int(a), p / a, ref))
    return rows


def percent_change(pre: Sequence[int], post: Sequence[int], class_id: int) -> float:
    base = pre[class_id]
    if base == 0:
        raise ZeroBaseline(f"class {class_id} has no pixels before the event")
    return (post[class_id] - base) / base * 100.0


def format_percent(value: float | None) -> str:
    return "n/a" if value is None else f"{value:+.4f}%"


def change_mask(pre: np.ndarray, post: np.ndarray) -> np.ndarray:
    pre, post = np.asarray(pre), np.asarray(post)
    if pre.shape != post.shape:
        raise DimensionMismatch(f"pre {pre.shape} and post {post.shape} masks differ in shape")
    return pre != post


def extract_regions(mask: np.ndarray, post: np.ndarray, min_area: int = DEFAULT_MIN_AREA
                    ) -> list[NamedRegion]:
    """8-connected components of ``mask`` with at least ``min_area`` pixels.

    Each region records its dominant post-event class; the list is sorted by
    area, largest first (ties by bbox for determinism).
    """
    mask = np.asarray(mask, dtype=bool)
    post = np.asarray(post)
    if mask.shape != post.shape:
        raise DimensionMismatch("change mask and post mask differ in shape")
    labels, n = ndimage.label(mask, structure=_EIGHT_CONNECTED)
    if n == 0:
        return []
    areas = np.bincount(labels.ravel(), minlength=n + 1)
    regions = []
    for idx, sl in enumerate(ndimage.find_objects(labels), start=1):
        if areas[idx] < min_area:
            continue
        inside = labels[sl] == idx
        dominant = int(np.argmax(np.bincount(post[sl][inside], minlength=NUM_CLASSES)))
        bbox = (sl[1].start, sl[0].start, sl[1].stop, sl[0].stop)
        regions.append(NamedRegion(label=dominant, area=int(areas[idx]), bbox=bbox))
    regions.sort(key=lambda r: (-r.area, r.bbox[1], r.bbox[0]))
    return regions


def name_regions(regions: Sequence[NamedRegion], annotations: Sequence[RegionAnnotation]
                 ) -> list[NamedRegion]:
    """Tag each region with every annotation whose bbox overlaps it, in annotation order."""
    out = []
    for r in regions:
        names = [a.name for a in annotations if a.overlaps(r.bbox)]
        out.append(NamedRegion(r.label, r.area, r.bbox, names or [UNNAMED]))
    return out


def load_annotations(path) -> list[RegionAnnotation]:
    """Annotation file: JSON array of ``{"name": str, "bbox": [x0, y0, x1, y1]}``."""
    items = json.loads(Path(path).read_text(encoding="utf-8"))
    return [RegionAnnotation(str(it["name"]), tuple(int(v) for v in it["bbox"])) for it in items]


def check_annotations(annotations: Sequence[RegionAnnotation], shape: tuple[int, int]) -> None:
    h, w = shape
    for a in annotations:
        x0, y0, x1, y1 = a.bbox
        if not (0 <= x0 < x1 <= w and 0 <= y0 < y1 <= h):
            raise ValueError(f"annotation {a.name!r} bbox {a.bbox} outside {w}x{h} mask")


@dataclass
class ChangeReport:
    pre_counts: list[int]
    post_counts: list[int]
    percent_change: list[float | None]
    changed_pixels: int
    subthreshold_pixels: int
    regions: list[NamedRegion]
    min_area: int = DEFAULT_MIN_AREA
    run_id: str | None = None
    change_mask: np.ndarray | None = field(default=None, repr=False, compare=False)

    def to_dict(self) -> dict:
        return {
            "run_id": self.run_id,
            "classes": list(CLASS_NAMES),
            "pre_counts": list(self.pre_counts),
            "post_counts": list(self.post_counts),
            "percent_change": list(self.percent_change),
            "percent_change_display": [format_percent(p) for p in self.percent_change],
            "changed_pixels": self.changed_pixels,
            "subthreshold_pixels": self.subthreshold_pixels,
            "min_area": self.min_area,
            "regions": [r.to_dict() for r in self.regions],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ChangeReport":
        return cls(pre_counts=list(d["pre_counts"]), post_counts=list(d["post_counts"]),
                   percent_change=list(d["percent_change"]),
                   changed_pixels=int(d["changed_pixels"]),
                   subthreshold_pixels=int(d["subthreshold_pixels"]),
                   regions=[NamedRegion.from_dict(r) for r in d["regions"]],
                   min_area=int(d.get("min_area", DEFAULT_MIN_AREA)), run_id=d.get("run_id"))

    @classmethod
    def empty(cls, run_id: str | None = None) -> "ChangeReport":
        zeros = [0] * NUM_CLASSES
        return cls(zeros, zeros[:], [None] * NUM_CLASSES, 0, 0, [], run_id=run_id)


def analyze_change(pre: np.ndarray, post: np.ndarray,
                   annotations: Sequence[RegionAnnotation] = (),
                   min_area: int = DEFAULT_MIN_AREA, run_id: str | None = None) -> ChangeReport:
    pre_counts = count_class_pixels(pre)
    post_counts = count_class_pixels(post)
    changes = [percent_change(pre_counts, post_counts, c) if pre_counts[c] else None
               for c in range(NUM_CLASSES)]
    if annotations:
        check_annotations(annotations, np.shape(pre))
    mask = change_mask(pre, post)
    regions = name_regions(extract_regions(mask, post, min_area), annotations)
    changed = int(mask.sum())
    return ChangeReport(
        pre_counts=pre_counts.tolist(), post_counts=post_counts.tolist(),
        percent_change=changes, changed_pixels=changed,
        subthreshold_pixels=changed - sum(r.area for r in regions),
        regions=regions, min_area=min_area, run_id=run_id, change_mask=mask)


def write_change_overlay(path, mask: np.ndarray) -> None:
    from PIL import Image

    Image.fromarray(np.asarray(mask, dtype=bool)).convert("1").save(path, format="PNG")
