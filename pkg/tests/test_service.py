import base64
import io
import json

import numpy as np
import pytest
from fastapi.testclient import TestClient
from PIL import Image

from floodwatch import service
from conftest import KERALA_60

client = TestClient(service.app)

WINDOWS = {"window_pre": {"start": "2018-08-01T00:00:00", "end": "2018-08-15T00:00:00"},
           "window_post": {"start": "2018-08-15T00:00:00", "end": "2018-08-30T00:00:00"}}


def corpus():
    return [json.loads(line) for line in KERALA_60.read_text().splitlines()]


def masks():
    pre = np.zeros((20, 20), int)
    post = pre.copy()
    post[2:12, 2:12] = 3
    return pre.tolist(), post.tolist()


def test_health():
    assert client.get("/health").json() == {"status": "ok"}


def test_summarize():
    r = client.post("/summarize", json={"tweets": corpus(), "budget": 250})
    assert r.status_code == 200
    body = r.json()
    assert body["token_length"] <= 250
    assert len(body["summary"]) == sum(body["solution"]["x"])
    assert body["content_words"][0]["score"] >= body["content_words"][-1]["score"]


def test_summarize_small_exact():
    tweets = [{"text": "boats needed at aluva"}, {"text": "pray for kerala"}, {"text": None}]
    body = client.post("/summarize", json={"tweets": tweets, "budget": 4}).json()
    assert body["solution"]["proven_optimal"] and body["dropped"] == 1
    assert body["summary"] == ["boats needed at aluva"]


def test_summarize_nothing_usable():
    r = client.post("/summarize", json={"tweets": [{"text": "#tag @user"}]})
    assert r.status_code == 422


def test_summarize_bad_budget():
    assert client.post("/summarize", json={"tweets": [], "budget": -1}).status_code == 422


def test_frequency():
    tweets = [{"text": "flood at #kochi", "date": "2018-08-16T00:00:00"},
              {"text": "kochi calm", "date": "2018-08-02T00:00:00"},
              {"text": "kochi again", "date": "2018-08-20T00:00:00"}]
    body = client.post("/frequency", json={"tweets": tweets, "keywords": ["kochi"],
                                           **WINDOWS}).json()
    assert (body["total_pre"], body["total_post"]) == (1, 2)
    assert body["percent_change_display"] == "100.00%"


def test_frequency_overlapping_windows():
    bad = {"window_pre": WINDOWS["window_pre"], "window_post": WINDOWS["window_pre"]}
    r = client.post("/frequency", json={"tweets": [], "keywords": ["x"], **bad})
    assert r.status_code == 422 and "overlap" in r.json()["detail"]


def test_proportions():
    tweets = [{"text": "Kochi flooded"}, {"text": "Aluva and Kochi"}, {"text": "calm"},
              {"text": "kochi"}]
    body = client.post("/proportions", json={"tweets": tweets,
                                             "regions": {"Kochi": ["kochi"]}}).json()
    assert body == {"Kochi": 0.75}


def test_change():
    pre, post = masks()
    r = client.post("/change", json={"pre_mask": pre, "post_mask": post, "min_area": 10,
                                     "annotations": [{"name": "Kochi", "bbox": [0, 0, 5, 5]}]})
    body = r.json()
    assert body["changed_pixels"] == 100
    assert body["regions"][0]["names"] == ["Kochi"]
    assert body["percent_change_display"][3] == "n/a"


def test_change_ragged():
    r = client.post("/change", json={"pre_mask": [[0, 1], [0]], "post_mask": [[0, 1], [0, 1]]})
    assert r.status_code == 422


def test_change_shape_mismatch_is_422():
    r = client.post("/change", json={"pre_mask": [[0, 1]], "post_mask": [[0], [1]]})
    assert r.status_code == 422 and r.json()["error"] == "DimensionMismatch"


def test_segment(checkpoint, monkeypatch):
    monkeypatch.setenv(service.CHECKPOINT_ENV, str(checkpoint))
    img = np.random.default_rng(0).integers(0, 256, (12, 16, 3), dtype=np.uint8)
    buf = io.BytesIO()
    Image.fromarray(img).save(buf, format="PNG")
    r = client.post("/segment", json={"image_png_base64": base64.b64encode(buf.getvalue()).decode(),
                                      "window_size": 8, "augmentation": False})
    assert r.status_code == 200
    body = r.json()
    mask = np.array(Image.open(io.BytesIO(base64.b64decode(body["mask_png_base64"]))))
    assert mask.shape == (12, 16) and sum(body["class_counts"]) == 192
    assert mask.max() < 4


def test_segment_without_checkpoint(monkeypatch):
    monkeypatch.delenv(service.CHECKPOINT_ENV, raising=False)
    assert client.post("/segment", json={"image_png_base64": ""}).status_code == 503


def test_segment_bad_image(checkpoint, monkeypatch):
    monkeypatch.setenv(service.CHECKPOINT_ENV, str(checkpoint))
    r = client.post("/segment", json={"image_png_base64": base64.b64encode(b"nope").decode()})
    assert r.status_code == 422


def test_report_deterministic():
    pre, post = masks()
    req = {"change": {"pre_mask": pre, "post_mask": post, "min_area": 10, "run_id": "k1",
                      "annotations": [{"name": "Kochi", "bbox": [0, 0, 5, 5]}]},
           "tweets": corpus(), "keywords": ["kochi"], "regions": {"Kochi": ["kochi"]},
           "generated_at": "2018-08-21T00:00:00+00:00", **WINDOWS}
    a, b = client.post("/report", json=req).json(), client.post("/report", json=req).json()
    assert a == b
    assert a["run_id"] == "k1" and a["regions"][0]["name"] == "Kochi"
    assert a["frequency"]["run_id"] == "k1"
    assert 0 < a["proportions"]["Kochi"] < 1
    assert a["summary"]


@pytest.mark.parametrize("path", ["/summarize", "/change", "/report"])
def test_validation_errors(path):
    assert client.post(path, json={}).status_code == 422
