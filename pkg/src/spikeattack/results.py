from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AttackResult:
    """Outcome of one attack on one sample.

    ``forwards`` counts single-sample forward passes outside gradient calls;
    ``gradient_calls`` counts forward+backward passes. For sparse attacks
    ``l0_before`` is the perturbation size before reduction.
    """

    x_adv: np.ndarray
    success: bool
    iterations: int
    l0: int
    linf: float
    forwards: int = 0
    gradient_calls: int = 0
    l0_before: int | None = None
    loss_trace: list = field(default_factory=list)
    reason: str | None = None
    reduction_forwards: int = 0
    best_trace: list = field(default_factory=list)
    details: dict = field(default_factory=dict, repr=False)

    def record(self, sample_id=None):
        """Plain-data summary, suitable for JSON lines."""
        out = {
            "sample": sample_id,
            "success": bool(self.success),
            "l0": int(self.l0),
            "linf": float(self.linf),
            "iterations": int(self.iterations),
            "forwards": int(self.forwards),
            "gradient_calls": int(self.gradient_calls),
            "loss_trace": [float(v) for v in self.loss_trace],
        }
        if self.l0_before is not None:
            out["l0_before"] = int(self.l0_before)
            out["l0_after"] = int(self.l0)
        if self.reason:
            out["reason"] = self.reason
        return out
