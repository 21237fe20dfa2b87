"""LIF network: layer definitions, forward execution and the model file.

Arrays inside the engine are laid out as ``(T, B, *features)``. Stateless
layers run on all timesteps at once by folding ``T`` into the batch; LIF
layers iterate over time. Public entry points accept a single sample shaped
``(T, *features)`` and add the batch axis themselves.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from .tensor import DEFAULT_DTYPE, FormatError


@dataclass(frozen=True)
class LifParams:
    tau: float = 0.5
    v_th: float = 1.0

    def __post_init__(self):
        # tau == 0 is accepted as the memoryless limit
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError(f"tau must lie in [0, 1], got {self.tau}")
        if self.v_th <= 0:
            raise ValueError(f"v_th must be positive, got {self.v_th}")


def lif_step(u_prev, s_prev, current, p: LifParams):
    """One LIF update. Returns the pre-reset potential and the spikes."""
    u_prev, s_prev, current = map(np.asarray, (u_prev, s_prev, current))
    if not (u_prev.shape == s_prev.shape == current.shape):
        raise ValueError("lif_step operands must share a shape")
    u = p.tau * u_prev * (1 - s_prev) + current
    s = (u >= p.v_th).astype(u.dtype)
    return u, s


def soft_spike(u, v_th, temp):
    # tanh form of the logistic function, stable for large |u - v_th| / temp
    return 0.5 * (1.0 + np.tanh(0.5 * (u - v_th) / temp))


# ---------------------------------------------------------------- layers


@dataclass
class Dense:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    kind = "dense"
    params = ("weight", "bias")

    def out_shape(self, in_shape):
        if len(in_shape) != 1 or in_shape[0] != self.weight.shape[1]:
            raise ValueError(f"dense expects ({self.weight.shape[1]},), got {in_shape}")
        return (self.weight.shape[0],)

    def forward(self, x):
        return x @ self.weight.T + self.bias

    def backward(self, x, g):
        return g @ self.weight, {"weight": g.T @ x, "bias": g.sum(axis=0)}

    def geometry(self):
        return {"in_features": self.weight.shape[1], "out_features": self.weight.shape[0]}


@dataclass
class OutputHead(Dense):
    """Non-spiking readout; logits are the time-mean of its pre-activations."""

    kind = "output-head"


def _windows(xp, k, stride):
    w = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))
    return w[:, :, ::stride, ::stride]


def _scatter_windows(gw, in_shape, k, stride, pad):
    """Adjoint of :func:`_windows`: accumulate window gradients onto the input."""
    n, c, h, w = in_shape
    ho, wo = gw.shape[2], gw.shape[3]
    gxp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=gw.dtype)
    for i in range(k):
        for j in range(k):
            gxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += gw[..., i, j]
    if pad:
        gxp = gxp[:, :, pad:-pad, pad:-pad]
    return gxp


@dataclass
class Conv2d:
    weight: np.ndarray  # (out_ch, in_ch, k, k)
    bias: np.ndarray  # (out_ch,)
    stride: int = 1
    padding: int = 0
    kind = "conv2d"
    params = ("weight", "bias")

    @property
    def kernel(self):
        return self.weight.shape[2]

    def out_shape(self, in_shape):
        if len(in_shape) != 3 or in_shape[0] != self.weight.shape[1]:
            raise ValueError(f"conv2d expects ({self.weight.shape[1]}, H, W), got {in_shape}")
        _, h, w = in_shape
        k, s, p = self.kernel, self.stride, self.padding
        ho, wo = (h + 2 * p - k) // s + 1, (w + 2 * p - k) // s + 1
        if ho < 1 or wo < 1:
            raise ValueError(f"conv2d kernel {k} does not fit input {in_shape}")
        return (self.weight.shape[0], ho, wo)

    def _pad(self, x):
        p = self.padding
        return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x

    def forward(self, x):
        win = _windows(self._pad(x), self.kernel, self.stride)
        out = np.tensordot(win, self.weight, axes=([1, 4, 5], [1, 2, 3]))
        return out.transpose(0, 3, 1, 2) + self.bias[:, None, None]

    def backward(self, x, g):
        win = _windows(self._pad(x), self.kernel, self.stride)
        gw = np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3]))
        gwin = np.tensordot(g, self.weight, axes=([1], [0]))  # (n, ho, wo, c, k, k)
        gwin = gwin.transpose(0, 3, 1, 2, 4, 5)
        gx = _scatter_windows(gwin, x.shape, self.kernel, self.stride, self.padding)
        return gx, {"weight": gw, "bias": g.sum(axis=(0, 2, 3))}

    def geometry(self):
        o, c, k, _ = self.weight.shape
        return {"in_channels": c, "out_channels": o, "kernel": k,
                "stride": self.stride, "padding": self.padding}


@dataclass
class AvgPool2d:
    kernel: int = 2
    stride: int | None = None
    kind = "avgpool2d"
    params = ()

    def __post_init__(self):
        if self.stride is None:
            self.stride = self.kernel

    def out_shape(self, in_shape):
        if len(in_shape) != 3:
            raise ValueError(f"avgpool2d expects (C, H, W), got {in_shape}")
        c, h, w = in_shape
        k, s = self.kernel, self.stride
        ho, wo = (h - k) // s + 1, (w - k) // s + 1
        if ho < 1 or wo < 1:
            raise ValueError(f"pool kernel {k} does not fit input {in_shape}")
        return (c, ho, wo)

    def forward(self, x):
        return _windows(x, self.kernel, self.stride).mean(axis=(4, 5))

    def backward(self, x, g):
        k = self.kernel
        gwin = np.broadcast_to((g / (k * k))[..., None, None], g.shape + (k, k))
        return _scatter_windows(gwin, x.shape, k, self.stride, 0), {}

    def geometry(self):
        return {"kernel": self.kernel, "stride": self.stride}


@dataclass
class Flatten:
    kind = "flatten"
    params = ()

    def out_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, x):
        return x.reshape(x.shape[0], -1)

    def backward(self, x, g):
        return g.reshape(x.shape), {}

    def geometry(self):
        return {}


@dataclass
class Lif:
    """Marker layer; dynamics come from the model's :class:`LifParams`."""

    kind = "lif"
    params = ()

    def out_shape(self, in_shape):
        return tuple(in_shape)

    def geometry(self):
        return {}


LAYER_KINDS = {
    "dense": Dense,
    "output-head": OutputHead,
    "conv2d": Conv2d,
    "avgpool2d": AvgPool2d,
    "flatten": Flatten,
    "lif": Lif,
}


class UnsupportedLayerError(ValueError):
    pass


# ---------------------------------------------------------------- model


@dataclass
class NetworkModel:
    layers: list
    input_shape: tuple  # per-timestep feature shape, e.g. (C, H, W)
    timesteps: int
    lif: LifParams = field(default_factory=LifParams)
    coding: str = "direct"
    strict: bool = True

    def __post_init__(self):
        self.input_shape = tuple(int(d) for d in self.input_shape)
        if self.timesteps < 1:
            raise ValueError("timesteps must be >= 1")
        if not self.layers or not isinstance(self.layers[-1], OutputHead):
            raise ValueError("the last layer must be an output-head")
        if any(isinstance(l, OutputHead) for l in self.layers[:-1]):
            raise ValueError("only the last layer may be an output-head")
        if self.strict and not any(isinstance(l, Lif) for l in self.layers):
            raise ValueError("a network needs at least one lif layer")
        self.layer_shapes()  # geometry check

    def layer_shapes(self):
        """Per-timestep input shape of every layer, plus the output shape."""
        shapes = [self.input_shape]
        for layer in self.layers:
            shapes.append(layer.out_shape(shapes[-1]))
        return shapes

    @property
    def num_classes(self):
        return self.layers[-1].weight.shape[0]

    @property
    def dtype(self):
        for layer in self.layers:
            if getattr(layer, "params", ()):
                return layer.weight.dtype
        return np.dtype(DEFAULT_DTYPE)

    def lif_indices(self):
        return [i for i, l in enumerate(self.layers) if isinstance(l, Lif)]

    def astype(self, dtype):
        """Copy of the model with every parameter cast to ``dtype``."""
        layers = []
        for layer in self.layers:
            if layer.params:
                layer = replace(layer, **{n: getattr(layer, n).astype(dtype) for n in layer.params})
            layers.append(layer)
        return replace(self, layers=layers)

    def with_lif(self, **kwargs):
        return replace(self, lif=replace(self.lif, **kwargs))


@dataclass
class ForwardRecord:
    """Everything the backward sweep needs from one forward run.

    ``inputs[i]`` is the input of layer ``i`` shaped ``(T, B, *features)``;
    for LIF layers it is the synaptic current. ``u``/``s`` map a LIF layer
    index to its pre-reset potentials and spikes.
    """

    inputs: list
    u: dict
    s: dict
    head_pre: np.ndarray  # (T, B, K)
    logits: np.ndarray  # (B, K)
    soft_temp: float | None = None
    batched: bool = False

    def lif_potentials(self):
        return [self.u[i] for i in sorted(self.u)]


def _check_input(m: NetworkModel, x):
    x = np.asarray(x)
    if x.ndim < 1 or x.shape[0] != m.timesteps:
        raise ValueError(f"expected time axis of length {m.timesteps}, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("input contains non-finite values")
    return x


def _run(m: NetworkModel, x, batched, temp=None):
    x = _check_input(m, x)
    if not batched:
        x = x[:, None]
    feat = x.shape[2:]
    if tuple(feat) != m.input_shape:
        raise ValueError(f"expected per-step shape {m.input_shape}, got {tuple(feat)}")
    h = x.astype(m.dtype, copy=False)
    T, B = h.shape[:2]
    inputs, us, ss = [], {}, {}
    for i, layer in enumerate(m.layers):
        inputs.append(h)
        if isinstance(layer, Lif):
            u_hist = np.empty_like(h)
            s_hist = np.empty_like(h)
            u = np.zeros_like(h[0])
            s = np.zeros_like(h[0])
            for t in range(T):
                u = m.lif.tau * u * (1 - s) + h[t]
                if temp is None:
                    s = (u >= m.lif.v_th).astype(h.dtype)
                else:
                    s = soft_spike(u, m.lif.v_th, temp)
                u_hist[t] = u
                s_hist[t] = s
            us[i], ss[i] = u_hist, s_hist
            h = s_hist
        else:
            out = layer.forward(h.reshape((T * B,) + h.shape[2:]))
            h = out.reshape((T, B) + out.shape[1:])
    logits = h.mean(axis=0)
    return ForwardRecord(inputs, us, ss, h, logits, soft_temp=temp, batched=batched)


def forward(m: NetworkModel, x, batched=False):
    """Hard-threshold forward pass. ``x`` is ``(T, *features)``.

    With ``batched=True`` the input is ``(T, B, *features)`` instead.
    """
    return _run(m, x, batched)


def forward_soft(m: NetworkModel, x, temp, batched=False):
    """Forward pass with sigmoid spikes of width ``temp``, reset gate included."""
    if temp <= 0:
        raise ValueError("temp must be positive")
    return _run(m, x, batched, temp=temp)


def logits(m: NetworkModel, x, batched=False):
    rec = forward(m, x, batched=batched)
    return rec.logits if batched else rec.logits[0]


def predict(m: NetworkModel, x, batched=False):
    out = logits(m, x, batched=batched)
    return np.argmax(out, axis=-1) if batched else int(np.argmax(out))


# ---------------------------------------------------------------- model file
#
# Layout: b"SNNM", u32 manifest length, UTF-8 JSON manifest, then the raw
# little-endian parameter blob. Each parameter entry in the manifest carries
# its byte offset (relative to the blob), shape and dtype.

FORMAT_VERSION = 1
_MODEL_MAGIC = b"SNNM"


def save_model(m: NetworkModel, path):
    blob = bytearray()
    layers = []
    for layer in m.layers:
        entry = {"kind": layer.kind, "geometry": layer.geometry(), "params": {}}
        for name in layer.params:
            arr = np.ascontiguousarray(getattr(layer, name))
            le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
            entry["params"][name] = {
                "offset": len(blob),
                "shape": list(arr.shape),
                "dtype": arr.dtype.name,
            }
            blob += le.tobytes()
        layers.append(entry)
    manifest = {
        "format_version": FORMAT_VERSION,
        "input_shape": list(m.input_shape),
        "timesteps": m.timesteps,
        "lif": {"tau": m.lif.tau, "v_th": m.lif.v_th},
        "coding": m.coding,
        "strict": m.strict,
        "layers": layers,
    }
    text = json.dumps(manifest, indent=1).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MODEL_MAGIC + struct.pack("<I", len(text)))
        fh.write(text)
        fh.write(bytes(blob))


def load_model(path) -> NetworkModel:
    with open(path, "rb") as fh:
        buf = fh.read()
    return decode_model(buf)


def decode_model(buf) -> NetworkModel:
    if len(buf) < 8:
        raise FormatError("truncated model header", len(buf))
    if buf[:4] != _MODEL_MAGIC:
        raise FormatError("bad magic, expected SNNM", 0)
    (mlen,) = struct.unpack_from("<I", buf, 4)
    if len(buf) < 8 + mlen:
        raise FormatError("truncated manifest", len(buf))
    try:
        manifest = json.loads(buf[8 : 8 + mlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"unreadable manifest: {exc}", 8) from None
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise FormatError(f"model format version {version!r} unsupported (expected {FORMAT_VERSION})", 8)
    blob_start = 8 + mlen
    blob = buf[blob_start:]
    layers = []
    for entry in manifest["layers"]:
        kind = entry.get("kind")
        if kind not in LAYER_KINDS:
            raise UnsupportedLayerError(f"unsupported layer kind {kind!r}")
        arrays = {}
        for name, meta in entry.get("params", {}).items():
            dtype = np.dtype(meta["dtype"]).newbyteorder("<")
            n = int(np.prod(meta["shape"], dtype=np.int64)) * dtype.itemsize
            off = meta["offset"]
            if off < 0 or off + n > len(blob):
                raise FormatError(f"parameter {kind}.{name} runs past end of file", blob_start + off)
            arr = np.frombuffer(blob, dtype=dtype, count=n // dtype.itemsize, offset=off)
            arrays[name] = arr.reshape(meta["shape"]).astype(dtype.newbyteorder("="))
        geo = entry.get("geometry", {})
        if kind in ("dense", "output-head"):
            layer = LAYER_KINDS[kind](arrays["weight"], arrays["bias"])
        elif kind == "conv2d":
            layer = Conv2d(arrays["weight"], arrays["bias"], geo["stride"], geo["padding"])
        elif kind == "avgpool2d":
            layer = AvgPool2d(geo["kernel"], geo["stride"])
        else:
            layer = LAYER_KINDS[kind]()
        layers.append(layer)
    return NetworkModel(
        layers,
        tuple(manifest["input_shape"]),
        manifest["timesteps"],
        LifParams(**manifest["lif"]),
        manifest.get("coding", "direct"),
        manifest.get("strict", True),
    )


# ---------------------------------------------------------------- builders


def _he(rng, shape, fan_in, dtype):
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


def dense(rng, n_in, n_out, dtype=DEFAULT_DTYPE, head=False):
    cls = OutputHead if head else Dense
    return cls(_he(rng, (n_out, n_in), n_in, dtype), np.zeros(n_out, dtype=dtype))


def conv(rng, c_in, c_out, k=3, stride=1, padding=1, dtype=DEFAULT_DTYPE):
    w = _he(rng, (c_out, c_in, k, k), c_in * k * k, dtype)
    return Conv2d(w, np.zeros(c_out, dtype=dtype), stride, padding)


def build_preset(name, input_shape, num_classes, timesteps, seed=0, lif=None):
    """Desk-scale victim architectures.

    ``dense``: flatten, dense-lif, head. ``conv``: two conv-lif-pool stages
    and a head, sized for ``(C, H, W)`` inputs with H, W divisible by 4.
    """
    rng = np.random.default_rng(seed)
    lif = lif or LifParams()
    c, *spatial = input_shape
    if name == "dense":
        n_in = int(np.prod(input_shape))
        layers = [Flatten(), dense(rng, n_in, 32), Lif(), dense(rng, 32, num_classes, head=True)]
    elif name == "conv":
        h, w = spatial
        layers = [
            conv(rng, c, 8), Lif(), AvgPool2d(2),
            conv(rng, 8, 16), Lif(), AvgPool2d(2),
            Flatten(), dense(rng, 16 * (h // 4) * (w // 4), num_classes, head=True),
        ]
    else:
        raise ValueError(f"unknown architecture preset {name!r}")
    return NetworkModel(layers, tuple(input_shape), timesteps, lif)
