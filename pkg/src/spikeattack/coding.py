"""Input coding for static images and DVS event streams.

Event file layout (little-endian): magic ``SNNE``, u16 H, u16 W, u64 record
count, then 10-byte records ``(u32 t, u16 x, u16 y, u8 p, u8 pad)``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .tensor import FormatError

EVENT_DTYPE = np.dtype([("t", "<u4"), ("x", "<u2"), ("y", "<u2"), ("p", "u1"), ("pad", "u1")])
_EVENT_MAGIC = b"SNNE"
_HEADER = struct.Struct("<4sHHQ")


@dataclass
class EventStream:
    events: np.ndarray  # structured array of EVENT_DTYPE
    height: int
    width: int

    def __post_init__(self):
        self.events = np.asarray(self.events, dtype=EVENT_DTYPE)
        ev = self.events
        if ev.size:
            if np.any(np.diff(ev["t"].astype(np.int64)) < 0):
                raise ValueError("timestamps must be non-decreasing")
            if ev["x"].max() >= self.width or ev["y"].max() >= self.height:
                raise ValueError("event coordinate outside the sensor")
            if ev["p"].max() > 1:
                raise ValueError("polarity must be 0 or 1")

    @classmethod
    def from_arrays(cls, t, x, y, p, height, width):
        ev = np.zeros(len(t), dtype=EVENT_DTYPE)
        ev["t"], ev["x"], ev["y"], ev["p"] = t, x, y, p
        return cls(ev, height, width)

    def __len__(self):
        return int(self.events.size)

    def shifted(self, dt):
        ev = self.events.copy()
        ev["t"] = ev["t"] + dt
        return EventStream(ev, self.height, self.width)


def _check_unit_range(img):
    img = np.asarray(img)
    if img.size and (img.min() < 0 or img.max() > 1):
        raise ValueError("image values must lie in [0, 1]")
    return img


def encode_direct(img, T):
    """Repeat the image at every timestep: (C, H, W) -> (T, C, H, W)."""
    img = _check_unit_range(img)
    return np.repeat(img[None], T, axis=0)


def encode_poisson(img, T, seed):
    """Bernoulli spikes: a pixel fires at step t iff its value exceeds r ~ U[0, 1)."""
    img = _check_unit_range(img)
    r = np.random.default_rng(seed).random((T,) + img.shape)
    return (img[None] > r).astype(img.dtype if img.dtype.kind == "f" else np.float32)


def aggregate_events(ev: EventStream, T, mode="duration"):
    """Count events into ``(T, 2, H, W)`` frames over equal-duration slices.

    The span ``[t_first, t_last]`` is cut into ``T`` slices, the last one
    closed on the right. Counts are held in float32.
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    if len(ev) == 0:
        raise ValueError("cannot aggregate an empty event stream")
    if mode != "duration":
        raise ValueError(f"unsupported slicing mode {mode!r}")
    t = ev.events["t"].astype(np.int64)
    span = int(t[-1] - t[0])
    if span == 0:
        slot = np.full(t.shape, T - 1, dtype=np.int64)
    else:
        slot = np.minimum((t - t[0]) * T // span, T - 1)
    frames = np.zeros((T, 2, ev.height, ev.width), dtype=np.float32)
    np.add.at(frames, (slot, ev.events["p"].astype(np.int64), ev.events["y"].astype(np.int64),
                       ev.events["x"].astype(np.int64)), 1.0)
    return frames


def binarize_frames(frames):
    return np.minimum(np.asarray(frames), 1).astype(np.float32)


def normalize_counts(frames):
    """Scale integer frames by their max count into [0, 1]; returns (frames, scale)."""
    frames = np.asarray(frames, dtype=np.float32)
    scale = float(frames.max()) if frames.size and frames.max() > 0 else 1.0
    return frames / scale, scale


def write_events(ev: EventStream, path):
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_EVENT_MAGIC, ev.height, ev.width, len(ev)))
        fh.write(ev.events.tobytes())


def read_events(path) -> EventStream:
    with open(path, "rb") as fh:
        buf = fh.read()
    return decode_events(buf)


def decode_events(buf) -> EventStream:
    if len(buf) < _HEADER.size:
        raise FormatError("truncated SNNE header", len(buf))
    magic, h, w, n = _HEADER.unpack_from(buf, 0)
    if magic != _EVENT_MAGIC:
        raise FormatError("bad magic, expected SNNE", 0)
    body = len(buf) - _HEADER.size
    if body != n * EVENT_DTYPE.itemsize:
        raise FormatError(f"header declares {n} records but payload holds {body} bytes", _HEADER.size)
    ev = np.frombuffer(buf, dtype=EVENT_DTYPE, count=n, offset=_HEADER.size).copy()
    for name, limit in (("x", w), ("y", h), ("p", 2)):
        bad = np.flatnonzero(ev[name] >= limit)
        if bad.size:
            off = _HEADER.size + int(bad[0]) * EVENT_DTYPE.itemsize + EVENT_DTYPE.fields[name][1]
            raise FormatError(f"record {int(bad[0])}: field {name}={int(ev[name][bad[0]])} out of range", off)
    bad = np.flatnonzero(np.diff(ev["t"].astype(np.int64)) < 0)
    if bad.size:
        raise FormatError(f"record {int(bad[0]) + 1}: timestamp goes backwards",
                          _HEADER.size + (int(bad[0]) + 1) * EVENT_DTYPE.itemsize)
    return EventStream(ev, h, w)
