"""Synthetic desk-scale datasets.

``blobs``: two-class 8x8 grayscale images, a faint blob on the left or right
half over noisy background. Kept deliberately low-contrast so that small
l-infinity budgets can move samples across the boundary.

``bars``: two-class DVS-style event streams of a vertical bar sweeping
right or left across a 16x16 sensor, aggregated into binary frames.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from ..coding import EventStream, aggregate_events, binarize_frames, encode_direct
from ..tensor import load_tensor, save_tensor


@dataclass
class Dataset:
    x: np.ndarray  # (N, ...) samples; images are (C, H, W), frames (T, C, H, W)
    y: np.ndarray  # (N,) int64 labels
    kind: str = "image"  # "image" or "frames"

    def __len__(self):
        return len(self.y)

    def split(self, n_train):
        return (Dataset(self.x[:n_train], self.y[:n_train], self.kind),
                Dataset(self.x[n_train:], self.y[n_train:], self.kind))


def make_blobs(n, seed=0, size=8, amplitude=0.08, noise=0.04):
    rng = np.random.default_rng(seed)
    y = rng.integers(0, 2, n)
    yy, xx = np.mgrid[0:size, 0:size]
    x = np.empty((n, 1, size, size), dtype=np.float32)
    for i in range(n):
        cx = rng.uniform(1.5, size / 2 - 1.5) + (size / 2 if y[i] else 0)
        cy = rng.uniform(1.5, size - 2.5)
        blob = amplitude * np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * 1.2**2))
        img = 0.5 + blob + noise * rng.standard_normal((size, size))
        x[i, 0] = np.clip(img, 0, 1)
    return Dataset(x, y.astype(np.int64), "image")


def bar_events(direction, rng, size=16, duration=100_000, noise_events=20):
    """Events of a vertical bar sweeping across the sensor.

    The leading edge emits ON (p=1) events, the trailing edge OFF (p=0).
    ``direction`` is +1 (rightwards) or -1 (leftwards).
    """
    width = int(rng.integers(2, 4))
    y0 = int(rng.integers(0, size // 4))
    y1 = int(rng.integers(3 * size // 4, size))
    steps = size - width
    t, xs, ys, ps = [], [], [], []
    for k in range(steps):
        left = k if direction > 0 else size - width - k
        lead, trail = (left + width - 1, left - 1) if direction > 0 else (left, left + width)
        ts = int(k * duration / steps)
        for row in range(y0, y1):
            if rng.random() < 0.8:
                t.append(ts), xs.append(lead), ys.append(row), ps.append(1)
            if 0 <= trail < size and rng.random() < 0.8:
                t.append(ts), xs.append(trail), ys.append(row), ps.append(0)
    for _ in range(noise_events):
        t.append(int(rng.integers(0, duration)))
        xs.append(int(rng.integers(0, size)))
        ys.append(int(rng.integers(0, size)))
        ps.append(int(rng.integers(0, 2)))
    order = np.argsort(np.asarray(t), kind="stable")
    arr = [np.asarray(a)[order] for a in (t, xs, ys, ps)]
    return EventStream.from_arrays(*arr, height=size, width=size)


def make_bars(n, T=5, seed=0, size=16):
    rng = np.random.default_rng(seed)
    y = rng.integers(0, 2, n)
    x = np.empty((n, T, 2, size, size), dtype=np.float32)
    for i in range(n):
        ev = bar_events(1 if y[i] == 0 else -1, rng, size=size)
        x[i] = binarize_frames(aggregate_events(ev, T))
    return Dataset(x, y.astype(np.int64), "frames")


def make_dataset(name, n, seed=0, T=5):
    if name == "blobs":
        return make_blobs(n, seed)
    if name == "bars":
        return make_bars(n, T, seed)
    raise ValueError(f"unknown synthetic dataset {name!r}")


def model_input(sample, T):
    """Direct-code a static image; frames pass through unchanged."""
    sample = np.asarray(sample)
    if sample.ndim == 3:
        return encode_direct(sample, T)
    return sample


def save_dataset(ds: Dataset, directory):
    os.makedirs(directory, exist_ok=True)
    save_tensor(ds.x.astype(np.float32), os.path.join(directory, "x.snnt"))
    save_tensor(ds.y.astype(np.float32), os.path.join(directory, "y.snnt"))


def load_dataset(directory):
    x = load_tensor(os.path.join(directory, "x.snnt")).astype(np.float32)
    y = load_tensor(os.path.join(directory, "y.snnt")).astype(np.int64)
    return Dataset(x, y, "frames" if x.ndim == 5 else "image")
