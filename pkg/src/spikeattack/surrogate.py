"""Surrogate derivatives of the spike function with respect to the potential."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .tensor import channelwise_std

_DEFAULTS = {"rectangular": 1.0, "triangle": 1.0, "atan": 2.0, "pdsg": 0.5, "sigmoid": 0.1}
_PARAM_NAMES = {"rectangular": "w", "triangle": "gamma", "atan": "alpha", "pdsg": "b_coeff", "sigmoid": "temp"}


@dataclass(frozen=True)
class SurrogateSpec:
    """Which backward function to use and its single shape parameter.

    ``rectangular(w)``, ``triangle(gamma)`` and ``atan(alpha)`` are fixed
    shapes. ``pdsg(b_coeff)`` is the Gaussian whose width is the run-time
    per-channel potential std, shifted right by ``b_coeff * sigma``.
    ``sigmoid(temp)`` is the exact derivative of the soft spike used for
    gradient checking.
    """

    kind: str
    param: float

    def __post_init__(self):
        if self.kind not in _DEFAULTS:
            raise ValueError(f"unknown surrogate kind {self.kind!r}")
        if self.kind == "pdsg":
            if self.param < 0:
                raise ValueError("b_coeff must be >= 0")
        elif self.param <= 0:
            raise ValueError(f"{_PARAM_NAMES[self.kind]} must be > 0")

    @classmethod
    def rectangular(cls, w=1.0):
        return cls("rectangular", w)

    @classmethod
    def triangle(cls, gamma=1.0):
        return cls("triangle", gamma)

    @classmethod
    def atan(cls, alpha=2.0):
        return cls("atan", alpha)

    @classmethod
    def pdsg(cls, b_coeff=0.5):
        return cls("pdsg", b_coeff)

    @classmethod
    def sigmoid(cls, temp):
        return cls("sigmoid", temp)

    @classmethod
    def parse(cls, text):
        """Parse ``"pdsg"``, ``"atan:3"`` or ``"pdsg,b_coeff=0"`` style strings."""
        text = text.strip()
        for sep in (":", ","):
            if sep in text:
                kind, rest = text.split(sep, 1)
                value = rest.split("=", 1)[-1]
                return cls(kind.strip(), float(value))
        return cls(text, _DEFAULTS.get(text, 1.0))

    @property
    def needs_sigma(self):
        return self.kind == "pdsg"

    def to_dict(self):
        return {"kind": self.kind, _PARAM_NAMES[self.kind]: self.param}

    def __str__(self):
        return f"{self.kind}({_PARAM_NAMES[self.kind]}={self.param:g})"


def surrogate_eval(spec: SurrogateSpec, u, v_th, sigma=None):
    """Elementwise ds/du at potentials ``u``.

    ``sigma`` must broadcast against ``u`` (see :func:`expand_sigma`) and is
    required for the pdsg kind.
    """
    d = np.asarray(u) - v_th
    kind, p = spec.kind, spec.param
    if kind == "rectangular":
        return np.where(np.abs(d) < p, 1.0 / (2 * p), 0.0).astype(d.dtype)
    if kind == "triangle":
        return np.maximum(0.0, p - np.abs(d)) / (p * p)
    if kind == "atan":
        return p / (2 * (1 + (math.pi / 2 * p * d) ** 2))
    if kind == "sigmoid":
        s = 0.5 * (1.0 + np.tanh(0.5 * d / p))
        return s * (1 - s) / p
    if sigma is None:
        raise ValueError("pdsg surrogate needs per-channel sigma")
    sigma = np.asarray(sigma, dtype=d.dtype)
    z = (d - p * sigma) / sigma
    return np.exp(-0.5 * z * z) / (math.sqrt(2 * math.pi) * sigma)


def expand_sigma(sigma, ndim):
    """Reshape per-(batch, channel) sigma ``(B, C)`` to broadcast over ``(T, B, C, ...)``."""
    sigma = np.asarray(sigma)
    return sigma.reshape((1,) + sigma.shape + (1,) * (ndim - 1 - sigma.ndim))


def compute_sigma(rec):
    """Per LIF layer, per sample, per channel std of the recorded potentials.

    Returns a dict mapping the LIF layer index to an array of shape ``(B, C)``.
    Each sample gets its own statistic pooled over time and space.
    """
    out = {}
    for idx, u in rec.u.items():
        # (T, B, C, ...) -> per sample (T, C, ...)
        out[idx] = np.stack([channelwise_std(u[:, b], channel_axis=1) for b in range(u.shape[1])])
    return out
