"""Desk-scale pixel segmenter trained with focal + soft-Jaccard loss.

Everything is plain numpy in float64 with hand-written backpropagation, so
gradients can be checked against finite differences without a framework.
Arrays are channels-last: images ``(N, H, W, 3)``, probabilities
``(N, H, W, K)``.
"""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from floodwatch.errors import (
    DimensionMismatch,
    EmptyBatch,
    EmptyDataset,
    NonFiniteInput,
    ShapeMismatch,
)
from floodwatch.raster import NUM_CLASSES

log = logging.getLogger(__name__)

PROB_CLAMP = 1e-12
CHECKPOINT_VERSION = 1
PARAM_NAMES = ("w1", "b1", "w2", "b2", "w3", "b3")


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 16
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    gamma: float = 2.0
    loss_weights: tuple[float, float] = (1.0, 1.0)
    seed: int = 0
    width: int = 16

    def __post_init__(self):
        self.loss_weights = tuple(float(w) for w in self.loss_weights)
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")
        if len(self.loss_weights) != 2 or min(self.loss_weights) < 0 or sum(self.loss_weights) == 0:
            raise ValueError("loss_weights must be two non-negative numbers, not both zero")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["loss_weights"] = list(self.loss_weights)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        return cls(**known)


# -- probabilities, losses, metrics ------------------------------------------

def softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise NonFiniteInput("logits contain NaN or infinity")
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _check_pair(probs: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels)
    if probs.shape[:-1] != labels.shape:
        raise DimensionMismatch(f"probabilities {probs.shape} do not match labels {labels.shape}")
    return probs, labels.astype(np.intp, copy=False)


def _label_probs(probs: np.ndarray, labels: np.ndarray) -> np.ndarray:
    return np.take_along_axis(probs, labels[..., None], axis=-1)[..., 0]


def _batched(probs, labels):
    """View single maps as a batch of one so per-example reductions are uniform."""
    if labels.ndim == 2:
        return probs[None], labels[None]
    return probs, labels


def focal_loss(probs, labels, gamma: float = 2.0) -> float:
    """Mean over pixels of ``-(1 - p_y)**gamma * log(p_y)``; batches are averaged per example."""
    probs, labels = _batched(*_check_pair(probs, labels))
    return float(np.mean(_focal_per_example(probs, labels, gamma)))


def _focal_per_example(probs, labels, gamma):
    p = np.clip(_label_probs(probs, labels), PROB_CLAMP, 1.0)
    terms = -((1.0 - p) ** gamma) * np.log(p)
    return terms.reshape(len(terms), -1).mean(axis=1)


def _focal_grad(probs, labels, gamma):
    """d(per-example focal loss)/d probs, shape of ``probs``."""
    raw = _label_probs(probs, labels)
    p = np.clip(raw, PROB_CLAMP, 1.0)
    q = 1.0 - p
    with np.errstate(divide="ignore", invalid="ignore"):
        focus = np.where(q > 0, gamma * q ** (gamma - 1.0), 0.0) if gamma > 0 else 0.0
    d = focus * np.log(p) - q ** gamma / p
    d = np.where(raw < PROB_CLAMP, 0.0, d)
    n_pix = labels[0].size
    grad = np.zeros_like(probs)
    np.put_along_axis(grad, labels[..., None], (d / n_pix)[..., None], axis=-1)
    return grad


def _jaccard_parts(probs, labels):
    k = probs.shape[-1]
    onehot = np.eye(k)[labels]
    axes = tuple(range(1, probs.ndim - 1))
    inter = (probs * onehot).sum(axis=axes)
    union = probs.sum(axis=axes) + onehot.sum(axis=axes) - inter
    return onehot, inter, union


def jaccard_loss(probs, labels) -> float:
    """``1 - mean_c J_c`` with the soft index ``J_c = sum(p*g) / (sum p + sum g - sum(p*g))``.

    A class with no prediction mass and no ground-truth pixels counts as J = 1.
    """
    probs, labels = _batched(*_check_pair(probs, labels))
    return float(np.mean(_jaccard_per_example(probs, labels)))


def _jaccard_per_example(probs, labels):
    _, inter, union = _jaccard_parts(probs, labels)
    with np.errstate(divide="ignore", invalid="ignore"):
        j = np.where(union > 0, inter / union, 1.0)
    return 1.0 - j.mean(axis=-1)


def _jaccard_grad(probs, labels):
    onehot, inter, union = _jaccard_parts(probs, labels)
    k = probs.shape[-1]
    safe = np.where(union > 0, union, 1.0)
    shape = (len(probs),) + (1,) * (probs.ndim - 2) + (k,)
    inter, union, safe = inter.reshape(shape), union.reshape(shape), safe.reshape(shape)
    dj = (onehot * union - inter * (1.0 - onehot)) / safe ** 2
    return np.where(union > 0, -dj / k, 0.0)


def combined_loss(probs, labels, config: TrainConfig) -> float:
    w_focal, w_jacc = config.loss_weights
    probs, labels = _batched(*_check_pair(probs, labels))
    per_example = (w_focal * _focal_per_example(probs, labels, config.gamma)
                   + w_jacc * _jaccard_per_example(probs, labels))
    return float(np.mean(per_example))


def _combined_grad(probs, labels, config):
    """Gradient of the batch-mean combined loss with respect to probs."""
    w_focal, w_jacc = config.loss_weights
    g = np.zeros_like(probs)
    if w_focal:
        g += w_focal * _focal_grad(probs, labels, config.gamma)
    if w_jacc:
        g += w_jacc * _jaccard_grad(probs, labels)
    return g / len(probs)


@dataclass
class ConfusionCounts:
    tp: np.ndarray
    fp: np.ndarray
    fn: np.ndarray

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)


def confusion(pred, truth, num_classes: int = NUM_CLASSES) -> ConfusionCounts:
    if np.shape(pred) != np.shape(truth):
        raise DimensionMismatch("prediction and ground-truth masks differ in shape")
    pred = np.asarray(pred).astype(np.intp).ravel()
    truth = np.asarray(truth).astype(np.intp).ravel()
    joint = np.bincount(truth * num_classes + pred, minlength=num_classes ** 2)
    table = joint.reshape(num_classes, num_classes)  # rows: truth, cols: pred
    tp = np.diag(table).astype(np.int64)
    fp = table.sum(axis=0) - tp
    fn = table.sum(axis=1) - tp
    return ConfusionCounts(tp, fp.astype(np.int64), fn.astype(np.int64))


def iou(counts: ConfusionCounts) -> tuple[np.ndarray, float]:
    """Per-class IoU and their mean.

    Classes with TP = FP = FN = 0 get NaN and are left out of the mean.
    """
    denom = counts.tp + counts.fp + counts.fn
    with np.errstate(divide="ignore", invalid="ignore"):
        per_class = np.where(denom > 0, counts.tp / np.maximum(denom, 1), np.nan)
    present = denom > 0
    mean = float(per_class[present].mean()) if present.any() else float("nan")
    return per_class, mean


# -- network -----------------------------------------------------------------

def _conv3x3(x, w, b):
    """'Same' 3x3 convolution. Returns output and the im2col matrix."""
    n, h, wd, c = x.shape
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    cols = sliding_window_view(xp, (3, 3), axis=(1, 2))  # (n, h, w, c, 3, 3)
    cols = cols.transpose(0, 1, 2, 4, 5, 3).reshape(n, h, wd, 9 * c)
    return cols @ w.reshape(9 * c, -1) + b, cols


def _conv3x3_backward(dout, cols, w, in_shape):
    n, h, wd, c = in_shape
    f = w.shape[-1]
    dw = (cols.reshape(-1, 9 * c).T @ dout.reshape(-1, f)).reshape(w.shape)
    db = dout.sum(axis=(0, 1, 2))
    dcols = (dout @ w.reshape(9 * c, f).T).reshape(n, h, wd, 3, 3, c)
    dxp = np.zeros((n, h + 2, wd + 2, c))
    for i in range(3):
        for j in range(3):
            dxp[:, i:i + h, j:j + wd] += dcols[:, :, :, i, j]
    return dxp[:, 1:-1, 1:-1], dw, db


def _avgpool2(x):
    n, h, w, c = x.shape
    return x.reshape(n, h // 2, 2, w // 2, 2, c).mean(axis=(2, 4))


def _avgpool2_backward(d):
    return np.repeat(np.repeat(d, 2, axis=1), 2, axis=2) / 4.0


def _upsample2(x):
    return np.repeat(np.repeat(x, 2, axis=1), 2, axis=2)


def _upsample2_backward(d):
    n, h, w, c = d.shape
    return d.reshape(n, h // 2, 2, w // 2, 2, c).sum(axis=(2, 4))


class ToySegNet:
    """Two-level encoder-decoder: conv-tanh, 2x average pool, conv-tanh,
    2x nearest upsample, skip concatenation, 1x1 conv to class logits."""

    def __init__(self, params: dict[str, np.ndarray]):
        self.params = {k: np.asarray(params[k], dtype=np.float64) for k in PARAM_NAMES}
        self.width = self.params["w1"].shape[-1]
        self.num_classes = self.params["w3"].shape[-1]

    @classmethod
    def init(cls, seed: int = 0, width: int = 16, in_channels: int = 3,
             num_classes: int = NUM_CLASSES, zero_head: bool = False) -> "ToySegNet":
        rng = np.random.default_rng(seed)

        def glorot(fan_in, fan_out, shape):
            return rng.normal(0.0, np.sqrt(2.0 / (fan_in + fan_out)), size=shape)

        w3 = (np.zeros((2 * width, num_classes)) if zero_head
              else glorot(2 * width, num_classes, (2 * width, num_classes)))
        return cls({
            "w1": glorot(9 * in_channels, width, (3, 3, in_channels, width)),
            "b1": np.zeros(width),
            "w2": glorot(9 * width, width, (3, 3, width, width)),
            "b2": np.zeros(width),
            "w3": w3,
            "b3": np.zeros(num_classes),
        })

    def copy(self) -> "ToySegNet":
        return ToySegNet({k: v.copy() for k, v in self.params.items()})

    @property
    def num_parameters(self) -> int:
        return sum(v.size for v in self.params.values())

    def logits(self, x: np.ndarray):
        """Forward pass on a float batch ``(N, H, W, C)``; returns logits and a backprop cache."""
        p = self.params
        if x.ndim != 4 or x.shape[1] % 2 or x.shape[2] % 2:
            raise DimensionMismatch(f"input batch must be (N, H, W, C) with even H, W; got {x.shape}")
        z1, cols1 = _conv3x3(x, p["w1"], p["b1"])
        a1 = np.tanh(z1)
        d = _avgpool2(a1)
        z2, cols2 = _conv3x3(d, p["w2"], p["b2"])
        a2 = np.tanh(z2)
        cat = np.concatenate([a1, _upsample2(a2)], axis=-1)
        out = cat @ p["w3"] + p["b3"]
        cache = (x.shape, cols1, a1, d.shape, cols2, a2, cat)
        return out, cache

    def backward(self, cache, dlogits) -> dict[str, np.ndarray]:
        p = self.params
        x_shape, cols1, a1, d_shape, cols2, a2, cat = cache
        f = self.width
        grads = {
            "w3": cat.reshape(-1, cat.shape[-1]).T @ dlogits.reshape(-1, dlogits.shape[-1]),
            "b3": dlogits.sum(axis=(0, 1, 2)),
        }
        dcat = dlogits @ p["w3"].T
        da1 = dcat[..., :f]
        da2 = _upsample2_backward(dcat[..., f:])
        dz2 = da2 * (1.0 - a2 ** 2)
        dd, grads["w2"], grads["b2"] = _conv3x3_backward(dz2, cols2, p["w2"], d_shape)
        da1 = da1 + _avgpool2_backward(dd)
        dz1 = da1 * (1.0 - a1 ** 2)
        _, grads["w1"], grads["b1"] = _conv3x3_backward(dz1, cols1, p["w1"], x_shape)
        return grads


def to_input(images) -> np.ndarray:
    """uint8 RGB (single or batch) to a centered float64 batch."""
    x = np.asarray(images)
    if x.ndim == 3:
        x = x[None]
    if x.dtype == np.uint8:
        return x.astype(np.float64) / 255.0 - 0.5
    return x.astype(np.float64)


def forward(net: ToySegNet, patch) -> np.ndarray:
    """Class probabilities ``(H, W, K)`` for one patch (or ``(N, H, W, K)`` for a batch)."""
    single = np.ndim(patch) == 3
    logits, _ = net.logits(to_input(patch))
    probs = softmax(logits)
    return probs[0] if single else probs


def predictor(net: ToySegNet):
    """Patch -> probability-map callable for tiled inference."""
    return lambda patch: forward(net, patch)


def gradients(net: ToySegNet, images, masks, config: TrainConfig
              ) -> tuple[float, dict[str, np.ndarray]]:
    """Batch-mean combined loss and its parameter gradients."""
    x = to_input(images)
    y = np.asarray(masks)
    if y.ndim == 2:
        y = y[None]
    if len(x) == 0:
        raise EmptyBatch("gradient of an empty batch")
    if x.shape[:3] != y.shape:
        raise DimensionMismatch(f"images {x.shape} and masks {y.shape} disagree")
    y = y.astype(np.intp)
    logits, cache = net.logits(x)
    probs = softmax(logits)
    loss = combined_loss(probs, y, config)
    dp = _combined_grad(probs, y, config)
    dlogits = probs * (dp - (dp * probs).sum(axis=-1, keepdims=True))
    return loss, net.backward(cache, dlogits)


# -- optimizer ---------------------------------------------------------------

def init_moments(params: dict[str, np.ndarray]) -> dict[str, dict[str, np.ndarray]]:
    return {"m": {k: np.zeros_like(v) for k, v in params.items()},
            "v": {k: np.zeros_like(v) for k, v in params.items()}}


def adam_step(params, grads, moments, config: TrainConfig, t: int):
    """One bias-corrected Adam update; ``t`` counts from 1. Returns new params and moments."""
    if t < 1:
        raise ValueError("Adam step index starts at 1")
    b1, b2 = config.beta1, config.beta2
    new_params, new_m, new_v = {}, {}, {}
    for k, w in params.items():
        g = grads[k]
        if g.shape != w.shape or moments["m"][k].shape != w.shape:
            raise ShapeMismatch(f"parameter {k}: {w.shape} vs gradient {g.shape}")
        m = b1 * moments["m"][k] + (1.0 - b1) * g
        v = b2 * moments["v"][k] + (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        new_params[k] = w - config.learning_rate * m_hat / (np.sqrt(v_hat) + config.epsilon)
        new_m[k], new_v[k] = m, v
    return new_params, {"m": new_m, "v": new_v}


# -- training ----------------------------------------------------------------

@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_miou: float
    val_loss: float
    val_miou: float


@dataclass
class TrainState:
    net: ToySegNet
    moments: dict
    step: int
    epoch: int
    rng: np.random.Generator
    history: list[EpochRecord] = field(default_factory=list)


def evaluate(net: ToySegNet, images, masks, config: TrainConfig,
             batch_size: int | None = None) -> tuple[float, float]:
    """Mean combined loss and mIoU (from pooled confusion counts)."""
    images, masks = np.asarray(images), np.asarray(masks)
    if len(images) == 0:
        return float("nan"), float("nan")
    bs = batch_size or config.batch_size
    total, counts = 0.0, None
    for s in range(0, len(images), bs):
        probs = forward(net, images[s:s + bs])
        y = masks[s:s + bs].astype(np.intp)
        total += combined_loss(probs, y, config) * len(y)
        c = confusion(probs.argmax(axis=-1), y, net.num_classes)
        counts = c if counts is None else counts + c
    return total / len(images), iou(counts)[1]


def save_checkpoint(path, state: TrainState, config: TrainConfig) -> None:
    meta = {
        "version": CHECKPOINT_VERSION,
        "config": config.to_dict(),
        "epoch": state.epoch,
        "step": state.step,
        "rng_state": state.rng.bit_generator.state,
        "history": [asdict(h) for h in state.history],
    }
    arrays = {f"param_{k}": v for k, v in state.net.params.items()}
    arrays.update({f"adam_m_{k}": v for k, v in state.moments["m"].items()})
    arrays.update({f"adam_v_{k}": v for k, v in state.moments["v"].items()})
    with open(path, "wb") as fh:
        np.savez(fh, meta=np.array(json.dumps(meta)), **arrays)


def load_checkpoint(path) -> tuple[TrainState, TrainConfig]:
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["meta"]))
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta.get('version')}")
        params = {k: data[f"param_{k}"] for k in PARAM_NAMES}
        moments = {"m": {k: data[f"adam_m_{k}"] for k in PARAM_NAMES},
                   "v": {k: data[f"adam_v_{k}"] for k in PARAM_NAMES}}
    rng = np.random.default_rng()
    rng.bit_generator.state = meta["rng_state"]
    state = TrainState(net=ToySegNet(params), moments=moments, step=meta["step"],
                       epoch=meta["epoch"], rng=rng,
                       history=[EpochRecord(**h) for h in meta["history"]])
    return state, TrainConfig.from_dict(meta["config"])


def load_network(path) -> ToySegNet:
    return load_checkpoint(path)[0].net


def checkpoint_path(directory, epoch: int) -> Path:
    return Path(directory) / f"epoch_{epoch:03d}.npz"


def train(images, masks, split, config: TrainConfig, checkpoint_dir=None,
          resume: TrainState | None = None, net: ToySegNet | None = None) -> TrainState:
    """Mini-batch Adam training over ``split.train``; validation on ``split.val``.

    ``images``/``masks`` are indexable by the ids stored in ``split``. A
    checkpoint is written after every epoch when ``checkpoint_dir`` is given.
    Passing ``resume`` continues from a loaded checkpoint state.
    """
    images, masks = np.asarray(images), np.asarray(masks)
    train_ids = np.asarray(split.train, dtype=np.intp)
    val_ids = np.asarray(split.val, dtype=np.intp)
    if len(train_ids) == 0:
        raise EmptyDataset("no training patches")
    if resume is not None:
        state = resume
    else:
        start = net.copy() if net is not None else ToySegNet.init(config.seed, config.width)
        state = TrainState(net=start, moments=init_moments(start.params), step=0, epoch=0,
                           rng=np.random.default_rng(config.seed))
    if checkpoint_dir is not None:
        Path(checkpoint_dir).mkdir(parents=True, exist_ok=True)

    while state.epoch < config.epochs:
        order = train_ids[state.rng.permutation(len(train_ids))]
        losses = []
        for s in range(0, len(order), config.batch_size):
            batch = order[s:s + config.batch_size]
            loss, grads = gradients(state.net, images[batch], masks[batch], config)
            state.step += 1
            params, state.moments = adam_step(state.net.params, grads, state.moments,
                                              config, state.step)
            state.net = ToySegNet(params)
            losses.append(loss * len(batch))
        state.epoch += 1
        tr_loss, tr_miou = evaluate(state.net, images[train_ids], masks[train_ids], config)
        va_loss, va_miou = evaluate(state.net, images[val_ids], masks[val_ids], config)
        state.history.append(EpochRecord(state.epoch, tr_loss, tr_miou, va_loss, va_miou))
        log.info("epoch %d: batch loss %.4f, train mIoU %.4f, val loss %.4f, val mIoU %.4f",
                 state.epoch, sum(losses) / len(order), tr_miou, va_loss, va_miou)
        if checkpoint_dir is not None:
            save_checkpoint(checkpoint_path(checkpoint_dir, state.epoch), state, config)
    return state


def write_history_csv(path, history: Iterable[EpochRecord]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "split", "loss", "miou"])
        for h in history:
            w.writerow([h.epoch, "train", repr(h.train_loss), repr(h.train_miou)])
            w.writerow([h.epoch, "val", repr(h.val_loss), repr(h.val_miou)])
