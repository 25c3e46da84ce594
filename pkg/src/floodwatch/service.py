"""HTTP service exposing the analysis steps.

Run with ``floodwatch serve`` or ``uvicorn floodwatch.service:app``. The
segmentation endpoint loads its network from the checkpoint named by the
``FLOODWATCH_CHECKPOINT`` environment variable.
"""
import base64
import io
import os
from functools import lru_cache

import numpy as np
from fastapi import FastAPI, HTTPException
from fastapi.responses import JSONResponse
from PIL import Image

from floodwatch import change, pipeline, raster, report, segnet, tweets
from floodwatch.errors import FloodwatchError
from floodwatch.schemas import (
    ChangeRequest,
    ChangeResponse,
    FrequencyRequest,
    FrequencyResponse,
    ProportionRequest,
    ReportRequest,
    SegmentRequest,
    SegmentResponse,
    SummarizeRequest,
    SummarizeResponse,
)

CHECKPOINT_ENV = "FLOODWATCH_CHECKPOINT"

app = FastAPI(title="floodwatch", version="0.1.0")


def _records(items):
    out = []
    for i, t in enumerate(items):
        if t.text is None:
            continue
        rec = tweets.make_record(t.model_dump(exclude_none=True), i)
        if rec is not None:
            out.append(rec)
    return out


def _change(req: ChangeRequest) -> change.ChangeReport:
    pre = raster.as_mask(np.array(req.pre_mask))
    post = raster.as_mask(np.array(req.post_mask))
    anns = [change.RegionAnnotation(a.name, tuple(a.bbox)) for a in req.annotations]
    return change.analyze_change(pre, post, anns, min_area=req.min_area, run_id=req.run_id)


@lru_cache(maxsize=1)
def _network(path: str) -> segnet.ToySegNet:
    return segnet.load_network(path)


@app.exception_handler(FloodwatchError)
async def _domain_error(request, exc: FloodwatchError):
    return JSONResponse(status_code=422, content={"detail": str(exc), "error": type(exc).__name__})


@app.exception_handler(ValueError)
async def _bad_value(request, exc: ValueError):
    # domain-level input checks (window overlap, bbox bounds, mask range)
    return JSONResponse(status_code=422, content={"detail": str(exc), "error": type(exc).__name__})


@app.get("/health")
def health():
    return {"status": "ok"}


@app.post("/summarize", response_model=SummarizeResponse)
def summarize(req: SummarizeRequest):
    records = _records(req.tweets)
    if not records:
        raise HTTPException(status_code=422, detail="no usable tweets after cleaning")
    stop = frozenset(w.lower() for w in req.stoplist) if req.stoplist is not None else None
    res = pipeline.summarize(records, req.budget, req.exact_cap, req.node_cap, stop)
    return SummarizeResponse(
        summary=res.lines, solution=res.solution.to_dict(), token_length=res.token_length,
        dropped=len(req.tweets) - len(records),
        content_words=[{"term": w.term, "score": w.score, "doc_freq": len(w.tweets)}
                       for w in sorted(res.words, key=lambda w: (-w.score, w.term))])


@app.post("/frequency", response_model=FrequencyResponse)
def frequency(req: FrequencyRequest):
    query = pipeline.make_query(req.keywords, (req.window_pre.start, req.window_pre.end),
                                (req.window_post.start, req.window_post.end))
    return report.keyword_frequency(_records(req.tweets), query).to_dict()


@app.post("/proportions")
def proportions(req: ProportionRequest):
    records = _records(req.tweets)
    if not records:
        raise HTTPException(status_code=422, detail="no usable tweets after cleaning")
    return report.region_tweet_proportion(records, req.regions)


@app.post("/change", response_model=ChangeResponse)
def change_endpoint(req: ChangeRequest):
    return _change(req).to_dict()


@app.post("/segment", response_model=SegmentResponse)
def segment(req: SegmentRequest):
    path = os.environ.get(CHECKPOINT_ENV)
    if not path:
        raise HTTPException(status_code=503, detail=f"{CHECKPOINT_ENV} is not set")
    try:
        with Image.open(io.BytesIO(base64.b64decode(req.image_png_base64))) as im:
            image = raster.as_image(np.array(im.convert("RGB")))
    except (ValueError, OSError) as exc:
        raise HTTPException(status_code=422, detail=f"bad image: {exc}")
    _, labels = pipeline.segment(image, _network(path), req.window_size, req.subdivisions,
                                 req.augmentation)
    buf = io.BytesIO()
    Image.fromarray(labels, mode="L").save(buf, format="PNG")
    return SegmentResponse(width=labels.shape[1], height=labels.shape[0],
                           mask_png_base64=base64.b64encode(buf.getvalue()).decode("ascii"),
                           class_counts=change.count_class_pixels(labels).tolist())


@app.post("/report")
def full_report(req: ReportRequest):
    ch = _change(req.change)
    records = _records(req.tweets)
    lines, freq, props = [], report.FrequencyReport.empty(ch.run_id), {}
    if records:
        lines = pipeline.summarize(records, req.budget).lines
        if req.keywords and req.window_pre and req.window_post:
            query = pipeline.make_query(req.keywords, (req.window_pre.start, req.window_pre.end),
                                        (req.window_post.start, req.window_post.end))
            freq = report.keyword_frequency(records, query, ch.run_id)
        if req.regions:
            props = report.region_tweet_proportion(records, req.regions)
    rep = report.generate_report(ch, lines, freq, props, generated_at=req.generated_at)
    return rep.to_dict()
