"""Sparse dynamic attack on binary inputs: generation, then reduction.

Generation grows a perturbation mask. Each iteration takes the input
gradient of the margin loss, keeps the pixels whose forced flip direction
opposes the gradient, sends the top-k of those to exact finite differences,
and admits the ones whose loss change is non-positive. Reduction then
un-flips the admitted pixels with the smallest recorded finite differences,
using binary search over the prefix length.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .losses import cw_loss
from .results import AttackResult
from .snn import NetworkModel, forward
from .stbp import input_gradient
from .surrogate import SurrogateSpec
from .tensor import argtopk, l0_norm

FD_CHUNK = 512


class PreconditionError(ValueError):
    """The clean sample is not classified as its label."""


@dataclass
class SdaConfig:
    k_init: int = 10
    max_iters: int = 500
    sg: SurrogateSpec = field(default_factory=SurrogateSpec.pdsg)
    incremental: bool = True  # False keeps k == k_init every iteration
    reduce: bool = True

    def __post_init__(self):
        if self.k_init < 1 or self.max_iters < 1:
            raise ValueError("k_init and max_iters must be >= 1")


@dataclass(frozen=True)
class FdRecord:
    index: int  # flat index into the (T, C, H, W) volume
    delta: int  # +1 for a 0 -> 1 flip, -1 for 1 -> 0
    fd: float
    iteration: int


@dataclass
class PerturbationMask:
    bits: np.ndarray
    records: list = field(default_factory=list)

    @classmethod
    def empty(cls, shape):
        return cls(np.zeros(shape, dtype=np.float32))

    def add(self, rec: FdRecord):
        if self.bits.flat[rec.index]:
            raise ValueError(f"index {rec.index} already perturbed")
        self.bits.flat[rec.index] = 1
        self.records.append(rec)

    def __len__(self):
        return len(self.records)

    def apply(self, x):
        """``x xor mask``."""
        return np.abs(x - self.bits).astype(x.dtype, copy=False)


def contributing_gradients(g, x, mask_bits):
    """Zero every gradient whose sign agrees with its pixel's only possible flip."""
    g = np.asarray(g)
    keep = ((1 - 2 * np.asarray(x)) * g <= 0) & (np.asarray(mask_bits) == 0)
    return np.where(keep, g, 0).astype(g.dtype, copy=False)


def topk_candidates(gc, n, k_init, incremental=True):
    k = (n + 1) * k_init if incremental else k_init
    mag = np.abs(gc).ravel()
    idxs = argtopk(mag, k)
    return [i for i in idxs if mag[i] > 0]


def finite_difference_batch(m: NetworkModel, x, y, idxs, iteration=0):
    """Exact margin-loss change per unit input change for single-pixel flips.

    Returns ``(records, forwards)``. The clean baseline rides in the same
    batched forward as the flips, so a pixel the model ignores gets an FD of
    exactly zero; ``forwards`` is ``len(idxs) + 1``.
    """
    x = np.asarray(x)
    idxs = [int(i) for i in idxs]
    deltas = 1 - 2 * x.ravel()[idxs] if idxs else np.zeros(0)
    losses = []
    rows = [None] + idxs
    for start in range(0, len(rows), FD_CHUNK):
        chunk = rows[start : start + FD_CHUNK]
        batch = np.repeat(x[:, None], len(chunk), axis=1)
        for b, i in enumerate(chunk):
            if i is not None:
                t = np.unravel_index(i, x.shape)
                batch[(t[0], b) + t[1:]] = 1 - batch[(t[0], b) + t[1:]]
        z = forward(m, batch, batched=True).logits
        losses.append(cw_loss(z, np.full(len(chunk), y)).loss)
    losses = np.concatenate(losses) if losses else np.zeros(1)
    base = losses[0]
    records = [
        FdRecord(i, int(d), float((losses[j + 1] - base) / d), iteration)
        for j, (i, d) in enumerate(zip(idxs, deltas))
    ]
    return records, len(idxs) + 1


def contributing_fds(fds, x):
    xf = np.asarray(x).ravel()
    return [r for r in fds if (1 - 2 * xf[r.index]) * r.fd <= 0]


def _is_adversarial(m, x, y):
    return int(np.argmax(forward(m, x).logits[0])) != y


@dataclass
class Generation:
    success: bool
    x_adv: np.ndarray | None
    mask: PerturbationMask
    iterations: int
    forwards: int
    gradient_calls: int
    reason: str | None = None
    log: list = field(default_factory=list)


def generate(m: NetworkModel, x, y, cfg: SdaConfig | None = None) -> Generation:
    """Grow the perturbation mask until the sample is misclassified.

    Per iteration: one gradient call, ``|top-k| + 1`` finite-difference
    forwards and one forward to test the perturbed input. One extra forward
    up front checks the clean sample.
    """
    cfg = cfg or SdaConfig()
    x = np.asarray(x)
    if not np.all((x == 0) | (x == 1)):
        raise ValueError("sparse attack needs a binary input")
    if _is_adversarial(m, x, y):
        raise PreconditionError("sample is already misclassified")
    forwards, grad_calls = 1, 0
    mask = PerturbationMask.empty(x.shape)
    xn = x.copy()
    log = []
    for n in range(cfg.max_iters):
        g = input_gradient(m, xn, y, "cw", cfg.sg).grad
        grad_calls += 1
        gc = contributing_gradients(g, xn, mask.bits)
        if not np.any(gc):
            return Generation(False, None, mask, n + 1, forwards, grad_calls, "no_contributing_gradients", log)
        idxs = topk_candidates(gc, n, cfg.k_init, cfg.incremental)
        fds, used = finite_difference_batch(m, xn, y, idxs, iteration=n)
        forwards += used
        admitted = contributing_fds(fds, xn)
        log.append({"iteration": n, "candidates": idxs, "gc": gc.ravel()[idxs].tolist(),
                    "x": xn.ravel()[idxs].tolist(), "fds": fds, "admitted": [r.index for r in admitted]})
        for rec in admitted:
            mask.add(rec)
        xn = mask.apply(x)
        forwards += 1
        if _is_adversarial(m, xn, y):
            return Generation(True, xn, mask, n + 1, forwards, grad_calls, None, log)
    return Generation(False, None, mask, cfg.max_iters, forwards, grad_calls, "max_iters", log)


def reduction_order(records):
    """Ascending |FD|, then admission iteration, then flat index."""
    return [r.index for r in sorted(records, key=lambda r: (abs(r.fd), r.iteration, r.index))]


def search_removable_prefix(n, still_adversarial):
    """Binary search for how many leading perturbations can be removed.

    ``still_adversarial(j)`` tests the example with the first ``j + 1``
    perturbations removed. Returns ``(count, last_passing_j, evaluations)``
    where ``count`` is the removable prefix length (0 if none).
    """
    lo, hi = 0, n - 1
    best = -1
    evals = 0
    while lo <= hi:
        j = (lo + hi) // 2
        evals += 1
        if still_adversarial(j):
            best = j
            lo = j + 1
        else:
            hi = j - 1
    return best + 1, best, evals


def reduce(m: NetworkModel, x, y, x_adv, mask: PerturbationMask):
    """Remove redundant perturbations; returns ``(x_final, forwards)``."""
    order = reduction_order(mask.records)
    n = len(order)
    if n == 0:
        raise ValueError("reduction needs a non-empty mask")
    flat = np.asarray(x_adv).ravel()

    def undo(j):
        cand = flat.copy()
        sel = order[: j + 1]
        cand[sel] = 1 - cand[sel]
        return cand.reshape(x_adv.shape)

    def still_adversarial(j):
        ok = _is_adversarial(m, undo(j), y)
        if ok and j == n - 1:
            raise AssertionError("removing every perturbation stayed adversarial; clean input was misclassified")
        return ok

    count, j, evals = search_removable_prefix(n, still_adversarial)
    x_final = undo(j) if count else np.array(x_adv, copy=True)
    return x_final, evals


def sda_attack(m: NetworkModel, x, y, cfg: SdaConfig | None = None) -> AttackResult:
    cfg = cfg or SdaConfig()
    x = np.asarray(x)
    gen = generate(m, x, y, cfg)
    details = {"mask": gen.mask, "log": gen.log}
    if not gen.success:
        return AttackResult(x.copy(), False, gen.iterations, 0, 0.0, gen.forwards, gen.gradient_calls,
                            l0_before=len(gen.mask), reason=gen.reason, details=details)
    x_final, red = (reduce(m, x, y, gen.x_adv, gen.mask) if cfg.reduce else (gen.x_adv, 0))
    l0_after = l0_norm(x_final - x)
    return AttackResult(
        x_final, True, gen.iterations, l0_after, 1.0 if l0_after else 0.0,
        forwards=gen.forwards + red, gradient_calls=gen.gradient_calls,
        l0_before=l0_norm(gen.x_adv - x), reduction_forwards=red, details=details,
    )
