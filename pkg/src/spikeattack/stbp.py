"""Spatial-temporal backpropagation through a recorded LIF forward pass."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .losses import get_loss
from .snn import ForwardRecord, Lif, NetworkModel, forward
from .surrogate import SurrogateSpec, compute_sigma, expand_sigma, surrogate_eval


@dataclass
class GradResult:
    grad: np.ndarray  # dL/dx, shaped like the input
    loss: float | np.ndarray | None = None
    logits: np.ndarray | None = None
    sigma: dict | None = None
    param_grads: list | None = None  # one dict per layer when requested


def _lif_backward(u, s, g_spike, sg_values, tau, reset_gain):
    """Reverse time sweep for one LIF layer.

    ``g_spike[t]`` holds the spatial term dL/ds[t] arriving from the layer
    above. The temporal term flows through u[t+1], which depends on u[t]
    via the leak (tau * (1 - s[t])) and on s[t] via the reset gate
    (-tau * u[t]). Returns dL/d(current).
    """
    T = u.shape[0]
    g_current = np.empty_like(g_spike)
    g_u_next = np.zeros_like(u[0])
    for t in range(T - 1, -1, -1):
        g_s = g_spike[t] - reset_gain * tau * u[t] * g_u_next
        g_u = g_s * sg_values[t] + tau * (1 - s[t]) * g_u_next
        g_current[t] = g_u
        g_u_next = g_u
    return g_current


def stbp_backward(
    m: NetworkModel,
    rec: ForwardRecord,
    sg: SurrogateSpec,
    loss_grad,
    sigma=None,
    detach_reset=False,
    want_params=False,
    _reset_gain=None,
):
    """Backpropagate dL/dlogits through the recorded run to the input.

    ``loss_grad`` is ``(K,)`` for an unbatched record or ``(B, K)``. For the
    pdsg surrogate, ``sigma`` defaults to :func:`compute_sigma` of ``rec``.
    ``detach_reset`` drops the reset-gate path from the temporal term.
    """
    if len(rec.inputs) != len(m.layers):
        raise ValueError("record was not produced by this model")
    g = np.asarray(loss_grad, dtype=rec.logits.dtype)
    if not rec.batched:
        g = g[None]
    if g.shape != rec.logits.shape:
        raise ValueError(f"loss gradient shape {g.shape} does not match logits {rec.logits.shape}")
    if sg.needs_sigma and sigma is None:
        sigma = compute_sigma(rec)
    reset_gain = 0.0 if detach_reset else 1.0
    if _reset_gain is not None:
        reset_gain = _reset_gain

    T = rec.head_pre.shape[0]
    h = np.broadcast_to(g / T, (T,) + g.shape)  # time-mean readout
    param_grads = [None] * len(m.layers)
    for i in range(len(m.layers) - 1, -1, -1):
        layer = m.layers[i]
        x_in = rec.inputs[i]
        if isinstance(layer, Lif):
            u, s = rec.u[i], rec.s[i]
            sig = None if sigma is None or i not in sigma else expand_sigma(sigma[i], u.ndim).astype(u.dtype)
            sg_values = surrogate_eval(sg, u, m.lif.v_th, sig).astype(u.dtype, copy=False)
            h = _lif_backward(u, s, h, sg_values, m.lif.tau, reset_gain)
        else:
            TB = x_in.shape[0] * x_in.shape[1]
            flat_in = x_in.reshape((TB,) + x_in.shape[2:])
            flat_g = np.ascontiguousarray(h).reshape((TB,) + h.shape[2:])
            gx, pg = layer.backward(flat_in, flat_g)
            h = gx.reshape(x_in.shape)
            if want_params:
                param_grads[i] = pg
    grad = h if rec.batched else h[:, 0]
    return GradResult(grad=np.ascontiguousarray(grad), sigma=sigma,
                      param_grads=param_grads if want_params else None)


def input_gradient(m: NetworkModel, x, y, loss_kind="ce", sg: SurrogateSpec | None = None,
                   detach_reset=False, batched=False):
    """Forward, loss, run-time sigma (for pdsg) and backward in one call."""
    sg = sg or SurrogateSpec.pdsg()
    rec = forward(m, x, batched=batched)
    lv = get_loss(loss_kind)(rec.logits if batched else rec.logits[0], y)
    sigma = compute_sigma(rec) if sg.needs_sigma else None
    res = stbp_backward(m, rec, sg, lv.grad, sigma=sigma, detach_reset=detach_reset)
    res.loss = lv.loss
    res.logits = rec.logits if batched else rec.logits[0]
    return res
