"""Dense tensor helpers shared by the whole toolkit.

Tensors are plain numpy arrays. The time axis, when present, is axis 0 and
flat indices are row-major, which fixes tie-breaking in :func:`argtopk` and
the on-disk layout of the SNNT format.
"""

import struct

import numpy as np

SIGMA_FLOOR = 1e-5

DEFAULT_DTYPE = np.float32
ORACLE_DTYPE = np.float64

_MAGIC = b"SNNT"
_DTYPE_CODES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("u1")}


class FormatError(ValueError):
    """Malformed binary file. ``offset`` is the byte position of the problem."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


def sign(t):
    return np.sign(t)


def clamp(t, lo, hi):
    if lo > hi:
        raise ValueError(f"clamp bounds inverted: lo={lo} > hi={hi}")
    return np.clip(t, lo, hi)


def linf_project(x, center, eps):
    """Clip ``x`` elementwise into the box ``[center - eps, center + eps]``."""
    x = np.asarray(x)
    center = np.asarray(center)
    if x.shape != center.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {center.shape}")
    if eps < 0:
        raise ValueError("eps must be non-negative")
    if eps == 0:
        return center.copy()
    out = np.clip(x, center - eps, center + eps)
    # center +/- eps can round outward; step those entries one ulp inward
    while True:
        bad = np.abs(out.astype(np.float64) - center.astype(np.float64)) > eps
        if not np.any(bad):
            return out
        out = np.where(bad, np.nextafter(out, center), out)


def argtopk(t, k):
    """Flat indices of the ``k`` largest entries of ``t``.

    Ordered by descending value; equal values keep ascending flat index.
    """
    if k < 0:
        raise ValueError("k must be non-negative")
    flat = np.asarray(t).ravel()
    # stable sort on the negated values keeps lower indices first among ties
    order = np.argsort(-flat, kind="stable")
    return order[: min(k, flat.size)].tolist()


def l0_norm(delta):
    return int(np.count_nonzero(delta))


def channelwise_std(u_all, channel_axis=1):
    """Population std per channel, pooling every non-channel axis.

    ``u_all`` is laid out as (time, channel, spatial...). Results are floored
    at :data:`SIGMA_FLOOR` so that a constant channel still yields a finite
    surrogate.
    """
    u_all = np.asarray(u_all, dtype=np.float64)
    if u_all.ndim < 2:
        raise ValueError("expected at least (time, channel) axes")
    moved = np.moveaxis(u_all, channel_axis, 0)
    per_channel = moved.reshape(moved.shape[0], -1)
    if per_channel.shape[0] == 0 or per_channel.shape[1] == 0:
        raise ValueError("channel has no samples")
    return np.maximum(per_channel.std(axis=1), SIGMA_FLOOR)


def save_tensor(t, path):
    """Write ``t`` in the SNNT format (float32, float64 or binary uint8)."""
    t = np.asarray(t)
    if t.dtype == np.float32:
        code = 0
    elif t.dtype == np.float64:
        code = 1
    elif t.dtype in (np.uint8, np.bool_):
        code = 2
        if t.size and t.max() > 1:
            raise ValueError("binary tensor must hold only 0/1 values")
    else:
        raise ValueError(f"unsupported dtype {t.dtype}")
    header = _MAGIC + struct.pack("<BB", code, t.ndim)
    header += struct.pack(f"<{t.ndim}I", *t.shape)
    payload = np.ascontiguousarray(t, dtype=_DTYPE_CODES[code]).tobytes()
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)


def load_tensor(path):
    with open(path, "rb") as fh:
        buf = fh.read()
    return decode_tensor(buf)


def decode_tensor(buf):
    if len(buf) < 6:
        raise FormatError("truncated SNNT header", len(buf))
    if buf[:4] != _MAGIC:
        raise FormatError("bad magic, expected SNNT", 0)
    code, rank = struct.unpack_from("<BB", buf, 4)
    if code not in _DTYPE_CODES:
        raise FormatError(f"unknown dtype code {code}", 4)
    off = 6
    if len(buf) < off + 4 * rank:
        raise FormatError("truncated dimension table", len(buf))
    shape = struct.unpack_from(f"<{rank}I", buf, off)
    off += 4 * rank
    dtype = _DTYPE_CODES[code]
    nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
    if len(buf) - off != nbytes:
        raise FormatError(
            f"payload size {len(buf) - off} does not match shape {shape}", off
        )
    data = np.frombuffer(buf, dtype=dtype, offset=off).reshape(shape).copy()
    if code == 2 and data.size and data.max() > 1:
        bad = int(np.argmax(data.ravel() > 1))
        raise FormatError("binary tensor holds a value above 1", off + bad)
    return data.astype(dtype.newbyteorder("="), copy=False)
