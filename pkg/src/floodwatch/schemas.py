"""Request and response models for the HTTP service."""
from typing import Dict, List, Optional

from pydantic import BaseModel, Field, field_validator


class Tweet(BaseModel):
    text: Optional[str] = None
    date: str = ""
    user: str = ""
    id: Optional[str] = None


class SummarizeRequest(BaseModel):
    tweets: List[Tweet]
    budget: int = Field(250, ge=0)
    exact_cap: int = Field(24, ge=0)
    node_cap: int = Field(10 ** 6, ge=1)
    stoplist: Optional[List[str]] = None


class ContentWordOut(BaseModel):
    term: str
    score: float
    doc_freq: int


class SolutionOut(BaseModel):
    x: List[int]
    y: List[int]
    objective: float
    proven_optimal: bool


class SummarizeResponse(BaseModel):
    summary: List[str]
    solution: SolutionOut
    token_length: int
    dropped: int
    content_words: List[ContentWordOut]


class Window(BaseModel):
    start: str
    end: str


class FrequencyRequest(BaseModel):
    tweets: List[Tweet]
    keywords: List[str] = Field(min_length=1)
    window_pre: Window
    window_post: Window


class FrequencyResponse(BaseModel):
    keywords: List[str]
    pre_counts: Dict[str, int]
    post_counts: Dict[str, int]
    total_pre: int
    total_post: int
    percent_change: Optional[float]
    percent_change_display: str
    run_id: Optional[str] = None


class ProportionRequest(BaseModel):
    tweets: List[Tweet] = Field(min_length=1)
    regions: Dict[str, List[str]]


class Annotation(BaseModel):
    name: str
    bbox: List[int] = Field(min_length=4, max_length=4)


class ChangeRequest(BaseModel):
    pre_mask: List[List[int]]
    post_mask: List[List[int]]
    annotations: List[Annotation] = []
    min_area: int = Field(64, ge=0)
    run_id: Optional[str] = None

    @field_validator("pre_mask", "post_mask")
    @classmethod
    def _rectangular(cls, rows):
        if not rows or any(len(r) != len(rows[0]) for r in rows):
            raise ValueError("mask must be a non-empty rectangular grid")
        return rows


class RegionOut(BaseModel):
    label: int
    area: int
    bbox: List[int]
    names: List[str]


class ChangeResponse(BaseModel):
    run_id: Optional[str] = None
    classes: List[str]
    pre_counts: List[int]
    post_counts: List[int]
    percent_change: List[Optional[float]]
    percent_change_display: List[str]
    changed_pixels: int
    subthreshold_pixels: int
    min_area: int
    regions: List[RegionOut]


class SegmentRequest(BaseModel):
    image_png_base64: str
    window_size: int = Field(256, ge=4)
    subdivisions: int = Field(2, ge=1)
    augmentation: bool = True


class SegmentResponse(BaseModel):
    width: int
    height: int
    mask_png_base64: str
    class_counts: List[int]


class ReportRequest(BaseModel):
    change: ChangeRequest
    tweets: List[Tweet] = []
    budget: int = Field(250, ge=0)
    keywords: List[str] = []
    window_pre: Optional[Window] = None
    window_post: Optional[Window] = None
    regions: Dict[str, List[str]] = {}
    generated_at: Optional[str] = None
