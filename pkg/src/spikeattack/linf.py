"""Sign-gradient attacks under an l-infinity budget (FGSM and PGD)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .losses import get_loss
from .results import AttackResult
from .snn import NetworkModel, forward
from .stbp import input_gradient
from .surrogate import SurrogateSpec
from .tensor import clamp, l0_norm, linf_project, sign


@dataclass
class AttackConfig:
    eps: float = 8 / 255
    alpha: float | None = None  # defaults to eps / 4
    steps: int = 10
    loss: str = "ce"
    sg: SurrogateSpec = field(default_factory=SurrogateSpec.pdsg)
    lo: float = 0.0
    hi: float = 1.0
    track_best: bool = True
    random_start: bool = False
    seed: int = 0
    shared_time: bool | None = None  # None: follow the model's coding tag

    def __post_init__(self):
        if self.alpha is None:
            self.alpha = self.eps / 4
        if self.eps < 0:
            raise ValueError("eps must be >= 0")
        if self.alpha <= 0 and self.eps > 0:
            raise ValueError("alpha must be > 0")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if not self.lo < self.hi:
            raise ValueError("clip domain needs lo < hi")
        get_loss(self.loss)


def _check_domain(x, cfg):
    if x.min() < cfg.lo or x.max() > cfg.hi:
        raise ValueError(f"input outside the clip domain [{cfg.lo}, {cfg.hi}]")


def _direction(m, x, y, cfg):
    """Ascent direction of the attack objective at ``x``.

    Under direct coding every timestep carries the same image, so the
    gradient is summed over time and one perturbation is shared by all steps.
    """
    g = _ascent_sign(cfg.loss) * input_gradient(m, x, y, cfg.loss, cfg.sg).grad
    shared = cfg.shared_time if cfg.shared_time is not None else m.coding == "direct"
    if shared:
        g = np.broadcast_to(g.sum(axis=0, keepdims=True), g.shape)
    return g


def _ascent_sign(loss_kind):
    # CE is maximized; the margin loss falls to zero on success, so it is descended
    return -1.0 if loss_kind == "cw" else 1.0


def _objective_and_pred(m, x, y, loss_kind):
    z = forward(m, x).logits[0]
    return _ascent_sign(loss_kind) * get_loss(loss_kind)(z, y).loss, int(np.argmax(z))


def _linf(x_adv, x):
    return float(np.abs(x_adv.astype(np.float64) - x.astype(np.float64)).max(initial=0.0))


def fgsm(m: NetworkModel, x, y, cfg: AttackConfig) -> AttackResult:
    x = np.asarray(x)
    _check_domain(x, cfg)
    g = _direction(m, x, y, cfg)
    # the projection only guards against float rounding past eps
    x_adv = clamp(linf_project(x + cfg.eps * sign(g), x, cfg.eps), cfg.lo, cfg.hi).astype(x.dtype, copy=False)
    loss, pred = _objective_and_pred(m, x_adv, y, cfg.loss)
    delta = x_adv - x
    return AttackResult(x_adv, pred != y, 1, l0_norm(delta), _linf(x_adv, x),
                        forwards=1, gradient_calls=1, loss_trace=[loss])


def pgd(m: NetworkModel, x, y, cfg: AttackConfig) -> AttackResult:
    """Iterated sign steps projected back onto the eps-ball and the domain.

    With ``track_best`` the returned example is the best post-step iterate:
    any misclassified iterate beats a correctly classified one, ties broken
    by the higher objective. ``loss_trace`` holds the raw per-step
    objective (CE, or the negated margin for ``loss="cw"``).
    """
    x = np.asarray(x)
    _check_domain(x, cfg)
    xk = x.copy()
    if cfg.random_start:
        rng = np.random.default_rng(cfg.seed)
        noise = rng.uniform(-cfg.eps, cfg.eps, x.shape)
        if cfg.shared_time if cfg.shared_time is not None else m.coding == "direct":
            noise = np.broadcast_to(noise[:1], x.shape)
        xk = clamp(x + noise, cfg.lo, cfg.hi).astype(x.dtype)
    trace, best_trace = [], []
    best, best_key = None, None
    forwards = 0
    for _ in range(cfg.steps):
        g = _direction(m, xk, y, cfg)
        xk = clamp(linf_project(xk + cfg.alpha * sign(g), x, cfg.eps), cfg.lo, cfg.hi).astype(x.dtype, copy=False)
        loss, pred = _objective_and_pred(m, xk, y, cfg.loss)
        forwards += 1
        trace.append(loss)
        key = (pred != y, loss)
        if best is None or not cfg.track_best or key > best_key:
            best, best_key = xk, key
        best_trace.append(best_key[1])
    success = bool(best_key[0])
    delta = best - x
    return AttackResult(best, success, cfg.steps, l0_norm(delta), _linf(best, x),
                        forwards=forwards, gradient_calls=cfg.steps, loss_trace=trace,
                        best_trace=best_trace)
