"""Independent reference checks.

These deliberately avoid the loss and surrogate code they are used to test:
the gradient check does its own cross-entropy and central differences, the
Monte-Carlo oracle samples the two-point estimator directly, and the sparse
oracle enumerates flip sets with plain forward passes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from ..snn import NetworkModel, forward, forward_soft
from ..stbp import stbp_backward
from ..surrogate import SurrogateSpec

BRUTEFORCE_GUARD = 200_000


def _xent(z, y):
    z = z - z.max()
    return math.log(np.exp(z).sum()) - z[y]


def _xent_grad(z, y):
    p = np.exp(z - z.max())
    p /= p.sum()
    p[y] -= 1
    return p


@dataclass
class GradcheckReport:
    max_rel_error: float
    coords: int
    analytic: np.ndarray
    numeric: np.ndarray


def gradcheck_oracle(m: NetworkModel, x, temp=0.1, h=1e-3, n_coords=None, seed=0, y=0,
                     mutate_reset=False, detach_reset=False, loss="ce"):
    """Central differences of a soft-forward loss against the STBP input gradient.

    Runs in float64. The error is ``max|fd - g| / max|fd|`` over the checked
    coordinates, which stays meaningful when individual entries are near zero.
    ``n_coords=None`` checks every coordinate. ``mutate_reset`` flips the sign of
    the reset-gate term in the backward sweep and should be caught.
    ``loss="linear"`` uses a fixed random projection of the logits instead of
    cross-entropy, so a model without LIF layers is checked to rounding level.
    """
    m = m.astype(np.float64)
    x = np.asarray(x, dtype=np.float64)
    rng = np.random.default_rng(seed)
    if loss == "ce":
        objective, objective_grad = (lambda z: _xent(z, y)), (lambda z: _xent_grad(z, y))
    elif loss == "linear":
        c = rng.standard_normal(m.num_classes)
        objective, objective_grad = (lambda z: float(c @ z)), (lambda z: c.copy())
    else:
        raise ValueError(f"unknown gradcheck loss {loss!r}")
    rec = forward_soft(m, x, temp)
    z = rec.logits[0]
    res = stbp_backward(m, rec, SurrogateSpec.sigmoid(temp), objective_grad(z),
                        detach_reset=detach_reset, _reset_gain=-1.0 if mutate_reset else None)
    g = res.grad.ravel()
    if n_coords is None or n_coords >= x.size:
        coords = np.arange(x.size)
    else:
        coords = np.sort(rng.choice(x.size, n_coords, replace=False))
    fd = np.empty(len(coords))
    flat = x.ravel()
    for j, i in enumerate(coords):
        xp, xm = flat.copy(), flat.copy()
        xp[i] += h
        xm[i] -= h
        lp = objective(forward_soft(m, xp.reshape(x.shape), temp).logits[0])
        lm = objective(forward_soft(m, xm.reshape(x.shape), temp).logits[0])
        fd[j] = (lp - lm) / (2 * h)
    scale = max(np.abs(fd).max(), 1e-12)
    err = float(np.abs(fd - g[coords]).max() / scale)
    return GradcheckReport(err, len(coords), g[coords], fd)


@dataclass
class McEstimate:
    u: float
    estimate: float
    stderr: float
    closed_form: float

    @property
    def z_score(self):
        return abs(self.estimate - self.closed_form) / self.stderr if self.stderr > 0 else math.inf


def mc_zeroth_order_oracle(u_values, sigma, samples=1_000_000, seed=0, v_th=1.0):
    """Monte-Carlo mean of the two-point estimator ``|z|/(2 sigma) * [|u - v_th| < |z sigma|]``.

    Compared against the centred Gaussian density of width ``sigma`` at ``u - v_th``.
    """
    if samples < 10_000:
        raise ValueError("need at least 1e4 samples")
    if sigma <= 0:
        raise ValueError("sigma must be > 0")
    rng = np.random.default_rng(seed)
    out = []
    for u in u_values:
        z = rng.standard_normal(samples)
        g = np.where(abs(u - v_th) < np.abs(z * sigma), np.abs(z) / (2 * sigma), 0.0)
        d = (u - v_th) / sigma
        closed = math.exp(-0.5 * d * d) / (math.sqrt(2 * math.pi) * sigma)
        out.append(McEstimate(float(u), float(g.mean()), float(g.std(ddof=1) / math.sqrt(samples)), closed))
    return out


class GuardExceeded(RuntimeError):
    pass


def bruteforce_sparse_oracle(m: NetworkModel, x, y, max_flips=3, guard=BRUTEFORCE_GUARD, batch=1024):
    """Smallest number of binary flips that changes the prediction, or None.

    Enumerates every flip set of size 1..max_flips. Refuses with
    :class:`GuardExceeded` when that would take more than ``guard`` forwards.
    """
    x = np.asarray(x)
    n = x.size
    total = sum(math.comb(n, k) for k in range(1, max_flips + 1))
    if total > guard:
        raise GuardExceeded(f"{total} candidate flip sets exceed the guard of {guard}")
    flat = x.ravel()
    for k in range(1, max_flips + 1):
        sets = list(combinations(range(n), k))
        for start in range(0, len(sets), batch):
            chunk = sets[start : start + batch]
            cand = np.repeat(flat[None], len(chunk), axis=0)
            for row, idx in enumerate(chunk):
                cand[row, list(idx)] = 1 - cand[row, list(idx)]
            xb = np.moveaxis(cand.reshape((len(chunk),) + x.shape), 0, 1)
            pred = np.argmax(forward(m, xb, batched=True).logits, axis=1)
            if np.any(pred != y):
                return k
    return None
