"""Minimal STBP trainer for the desk-scale victims."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from ..losses import ce_loss
from ..snn import LifParams, NetworkModel, build_preset, forward
from ..stbp import stbp_backward
from ..surrogate import SurrogateSpec
from .datasets import Dataset

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 10
    lr: float = 0.05
    momentum: float = 0.9
    batch_size: int = 32
    seed: int = 0
    timesteps: int = 4
    sg: SurrogateSpec = field(default_factory=SurrogateSpec.atan)
    lif: LifParams = field(default_factory=LifParams)

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.lr < 0:
            raise ValueError("lr must be >= 0")


@dataclass
class TrainResult:
    model: NetworkModel
    train_accuracy: float
    test_accuracy: float | None
    epoch_losses: list


def _batch_input(ds: Dataset, idx, T):
    xb = ds.x[idx]
    if ds.kind == "image":
        return np.repeat(xb[None], T, axis=0)  # direct coding
    return np.moveaxis(xb, 0, 1)  # (B, T, ...) -> (T, B, ...)


def accuracy(m: NetworkModel, ds: Dataset, batch_size=256):
    if len(ds) == 0:
        return float("nan")
    hits = 0
    for start in range(0, len(ds), batch_size):
        idx = np.arange(start, min(start + batch_size, len(ds)))
        z = forward(m, _batch_input(ds, idx, m.timesteps), batched=True).logits
        hits += int(np.sum(np.argmax(z, axis=1) == ds.y[idx]))
    return hits / len(ds)


def train_minimal(arch, train: Dataset, cfg: TrainConfig | None = None, test: Dataset | None = None):
    """SGD with momentum on the time-mean cross-entropy.

    ``arch`` is a preset name (see :func:`build_preset`) or an initial
    :class:`NetworkModel`. Fully deterministic for a fixed ``cfg.seed``.
    """
    cfg = cfg or TrainConfig()
    feat = train.x.shape[1:] if train.kind == "image" else train.x.shape[2:]
    T = cfg.timesteps if train.kind == "image" else train.x.shape[1]
    n_classes = int(train.y.max()) + 1
    if isinstance(arch, NetworkModel):
        m = arch.astype(arch.dtype)  # train a copy
    else:
        m = build_preset(arch, feat, max(n_classes, 2), T, seed=cfg.seed, lif=cfg.lif)
    m = replace(m, coding="direct" if train.kind == "image" else "frames")
    rng = np.random.default_rng(cfg.seed)
    velocity = [{n: np.zeros_like(getattr(l, n)) for n in l.params} for l in m.layers]
    epoch_losses = []
    with np.errstate(over="ignore", invalid="ignore"):
        _fit(m, train, cfg, T, rng, velocity, epoch_losses)
    return TrainResult(m, accuracy(m, train), accuracy(m, test) if test is not None else None, epoch_losses)


def _fit(m, train, cfg, T, rng, velocity, epoch_losses):
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(train))
        total = 0.0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            rec = forward(m, _batch_input(train, idx, T), batched=True)
            lv = ce_loss(rec.logits, train.y[idx])
            loss = float(np.mean(lv.loss))
            if not np.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss in epoch {epoch}")
            total += loss * len(idx)
            res = stbp_backward(m, rec, cfg.sg, lv.grad / len(idx), want_params=True)
            for layer, grads, vel in zip(m.layers, res.param_grads, velocity):
                if not grads:
                    continue
                for name, g in grads.items():
                    vel[name] *= cfg.momentum
                    vel[name] += g
                    param = getattr(layer, name)
                    param -= (cfg.lr * vel[name]).astype(param.dtype)
        if not all(np.all(np.isfinite(getattr(l, n))) for l in m.layers for n in l.params):
            raise TrainingDiverged(f"non-finite parameters after epoch {epoch}")
        epoch_losses.append(total / len(train))
        log.info("epoch %d loss %.4f", epoch, epoch_losses[-1])
