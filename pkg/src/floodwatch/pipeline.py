"""End-to-end steps shared by the CLI and the HTTP service."""
from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from floodwatch import blend, change, cowts, raster, report, segnet, synthetic, tweets

log = logging.getLogger(__name__)

DATA_DIR_ENV = "FLOODWATCH_DATA_DIR"


def data_dir() -> Path:
    return Path(os.environ.get(DATA_DIR_ENV, "."))


def resolve(path) -> Path:
    """Relative paths are taken against the data directory."""
    p = Path(path)
    return p if p.is_absolute() else data_dir() / p


def segment(image: np.ndarray, net: segnet.ToySegNet, window_size: int = 256,
            subdivisions: int = 2, use_augmentation: bool = True
            ) -> tuple[np.ndarray, np.ndarray]:
    probs = blend.predict_smooth(image, window_size, segnet.predictor(net),
                                 subdivisions=subdivisions, use_augmentation=use_augmentation)
    return probs, blend.argmax_labels(probs)


@dataclass
class SummaryResult:
    instance: cowts.IlpInstance
    solution: cowts.IlpSolution
    words: list[tweets.ContentWord]
    lines: list[str]

    @property
    def token_length(self) -> int:
        return sum(l for l, xi in zip(self.instance.lengths, self.solution.x) if xi)


def summarize(records: Sequence[tweets.TweetRecord], budget: int = cowts.DEFAULT_BUDGET,
              exact_cap: int = cowts.DEFAULT_EXACT_CAP, node_cap: int = cowts.DEFAULT_NODE_CAP,
              stoplist: frozenset[str] | None = None) -> SummaryResult:
    stoplist = tweets.load_stoplist() if stoplist is None else stoplist
    words = tweets.score_content_words(records, stoplist)
    inst = cowts.build_instance(records, words, budget)
    sol = cowts.solve_exact(inst, exact_cap=exact_cap, node_cap=node_cap)
    return SummaryResult(inst, sol, words, cowts.render_summary(sol, records, inst))


def make_query(keywords: Sequence[str], pre: Sequence[str], post: Sequence[str]
               ) -> report.KeywordQuery:
    return report.KeywordQuery(list(keywords), report.TimeWindow(*pre), report.TimeWindow(*post))


def train_synthetic(n_patches: int = 64, size: int = 32, epochs: int = 5, seed: int = 0,
                    learning_rate: float = 1e-2) -> segnet.TrainState:
    images, masks = synthetic.make_dataset(n_patches, size, seed=seed)
    split = raster.split_dataset(range(n_patches), 0.75, seed=seed)
    config = segnet.TrainConfig(epochs=epochs, learning_rate=learning_rate, seed=seed)
    return segnet.train(images, masks, split, config)


def _network(cfg: Mapping[str, Any], seed: int) -> segnet.ToySegNet:
    if cfg.get("checkpoint"):
        return segnet.load_network(resolve(cfg["checkpoint"]))
    log.info("no checkpoint configured; training on synthetic patches (seed %d)", seed)
    return train_synthetic(int(cfg.get("train_patches", 64)), epochs=int(cfg.get("train_epochs", 5)),
                           seed=seed).net


def run_report(cfg: Mapping[str, Any], seed: int = 0) -> report.EmergencyReport:
    """Full pipeline driven by a config mapping.

    Label masks come from ``pre_mask``/``post_mask`` files, or are predicted
    from ``pre_image``/``post_image`` with the network in ``checkpoint``.
    Without a checkpoint a network is trained on synthetic patches with
    ``seed``. The tweet side needs ``corpus``; ``keywords`` with ``window_pre`` and
    ``window_post`` enable the frequency section and ``region_keywords`` the
    proportions table.
    """
    run_id = cfg.get("run_id")
    if "pre_mask" in cfg:
        pre = raster.read_mask(resolve(cfg["pre_mask"]))
        post = raster.read_mask(resolve(cfg["post_mask"]))
    elif "pre_image" in cfg:
        net = _network(cfg, seed)
        opts = dict(window_size=int(cfg.get("window_size", 256)),
                    subdivisions=int(cfg.get("subdivisions", 2)),
                    use_augmentation=bool(cfg.get("augmentation", True)))
        _, pre = segment(raster.read_image(resolve(cfg["pre_image"])), net, **opts)
        _, post = segment(raster.read_image(resolve(cfg["post_image"])), net, **opts)
    else:
        pre = post = None

    annotations = (change.load_annotations(resolve(cfg["annotations"]))
                   if cfg.get("annotations") else [])
    if pre is not None:
        ch = change.analyze_change(pre, post, annotations,
                                   min_area=int(cfg.get("min_area", change.DEFAULT_MIN_AREA)),
                                   run_id=run_id)
    else:
        ch = change.ChangeReport.empty(run_id)

    records = tweets.load_corpus(resolve(cfg["corpus"])) if cfg.get("corpus") else []
    lines: list[str] = []
    freq = report.FrequencyReport.empty(run_id)
    props: dict[str, float] = {}
    if records:
        stop = tweets.load_stoplist(resolve(cfg["stoplist"]) if cfg.get("stoplist") else None)
        lines = summarize(records, int(cfg.get("budget", cowts.DEFAULT_BUDGET)),
                          int(cfg.get("exact_cap", cowts.DEFAULT_EXACT_CAP)),
                          int(cfg.get("node_cap", cowts.DEFAULT_NODE_CAP)), stop).lines
        if cfg.get("keywords"):
            freq = report.keyword_frequency(
                records, make_query(cfg["keywords"], cfg["window_pre"], cfg["window_post"]), run_id)
        if cfg.get("region_keywords"):
            props = report.region_tweet_proportion(records, cfg["region_keywords"])
    return report.generate_report(ch, lines, freq, props,
                                  generated_at=cfg.get("generated_at"), run_id=run_id)


def load_json(path) -> Any:
    return json.loads(Path(path).read_text(encoding="utf-8"))
