"""Attack evaluation protocol and report aggregation.

ASR is taken over the attacked samples, which are the correctly classified
ones. l0 and iteration statistics cover successful attacks only. A success
that needed more iterations than the cap counts as a failure.
"""

from __future__ import annotations

import json
import os
import statistics
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..linf import AttackConfig, fgsm, pgd
from ..sda import SdaConfig, sda_attack
from ..snn import NetworkModel, predict
from .datasets import Dataset, model_input

ITERATION_CAP = 500
THREADS_ENV = "SPIKEATTACK_THREADS"


@dataclass
class AttackSpec:
    method: str  # "fgsm", "pgd" or "sda"
    linf: AttackConfig = field(default_factory=AttackConfig)
    sparse: SdaConfig = field(default_factory=SdaConfig)

    def run(self, m, x, y):
        if self.method == "fgsm":
            return fgsm(m, x, y, self.linf)
        if self.method == "pgd":
            return pgd(m, x, y, self.linf)
        if self.method == "sda":
            return sda_attack(m, x, y, self.sparse)
        raise ValueError(f"unknown attack method {self.method!r}")


@dataclass
class EvalReport:
    attacked: int
    successes: int
    asr: float  # percent
    mean_l0: float | None
    median_l0: float | None
    mean_iterations: float | None
    bounded_asr: dict  # threshold -> percent of attacked with success and l0 < threshold
    records: list
    seconds_per_sample: float | None = None

    def summary(self, include_timing=False):
        out = {
            "attacked": self.attacked,
            "successes": self.successes,
            "asr": self.asr,
            "mean_l0": self.mean_l0,
            "median_l0": self.median_l0,
            "mean_iterations": self.mean_iterations,
            "bounded_asr": {str(k): v for k, v in self.bounded_asr.items()},
        }
        if include_timing:
            out["seconds_per_sample"] = self.seconds_per_sample
        return out

    def to_json(self, include_timing=False):
        return json.dumps(self.summary(include_timing), sort_keys=True)

    def table(self):
        def fmt(v):
            return "-" if v is None else f"{v:.2f}"

        rows = [("attacked", str(self.attacked)), ("ASR (%)", fmt(self.asr)),
                ("mean l0", fmt(self.mean_l0)), ("median l0", fmt(self.median_l0)),
                ("mean iterations", fmt(self.mean_iterations))]
        rows += [(f"ASR l0<{k} (%)", fmt(v)) for k, v in self.bounded_asr.items()]
        width = max(len(r[0]) for r in rows)
        return "\n".join(f"{k:<{width}}  {v}" for k, v in rows)


def summarize(records, thresholds=(), iteration_cap=ITERATION_CAP):
    """Aggregate per-sample records (dicts with success, l0, iterations)."""
    ok = [r for r in records if r.get("success") and r.get("iterations", 0) <= iteration_cap]
    n = len(records)
    l0s = [r["l0"] for r in ok]
    iters = [r["iterations"] for r in ok]
    asr = 100.0 * len(ok) / n if n else 0.0
    bounded = {t: (100.0 * sum(1 for v in l0s if v < t) / n if n else 0.0) for t in thresholds}
    return EvalReport(
        attacked=n,
        successes=len(ok),
        asr=asr,
        mean_l0=float(np.mean(l0s)) if l0s else None,
        median_l0=float(statistics.median(l0s)) if l0s else None,
        mean_iterations=float(np.mean(iters)) if iters else None,
        bounded_asr=bounded,
        records=list(records),
    )


def select_correct(m: NetworkModel, ds: Dataset, budget, seed=0):
    """Indices of up to ``budget`` correctly classified samples, in a seeded random order."""
    order = np.random.default_rng(seed).permutation(len(ds))
    picked = []
    for i in order:
        if predict(m, model_input(ds.x[i], m.timesteps)) == ds.y[i]:
            picked.append(int(i))
            if len(picked) == budget:
                break
    return picked


def _threads():
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def evaluate_attack(m: NetworkModel, ds: Dataset, attack: AttackSpec, budget=100, seed=0,
                    thresholds=(), iteration_cap=ITERATION_CAP, workers=None):
    picked = select_correct(m, ds, budget, seed)

    def one(i):
        x = model_input(ds.x[i], m.timesteps)
        start = time.perf_counter()
        try:
            rec = attack.run(m, x, int(ds.y[i])).record(sample_id=i)
        except Exception as exc:  # recorded per sample, not fatal
            rec = {"sample": i, "success": False, "l0": 0, "iterations": 0, "error": repr(exc)}
        return rec, time.perf_counter() - start

    workers = workers or _threads()
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(one, picked))
    else:
        results = [one(i) for i in picked]
    report = summarize([r for r, _ in results], thresholds, iteration_cap)
    if results:
        report.seconds_per_sample = sum(t for _, t in results) / len(results)
    return report
