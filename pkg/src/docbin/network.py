"""Multi-scale branching FCN: construction, forward/backward and model files.

Topology for depth ``L`` and ``S`` scales:

* trunk convs ``t1 .. t(S-1)`` at full resolution;
* the output of trunk conv ``i`` is average-pooled ``i`` times and opens
  branch ``i`` (scale ``1/2**i``), which then runs ``L-2-i`` convs;
* the full-resolution path continues after the trunk so that it also has
  ``L-2`` convs;
* branch outputs are upsampled (bilinear, align-corners) to the input size
  and concatenated after the full-resolution output;
* two fusion convs follow: ``S*D -> D`` with ReLU, then ``D -> 1`` with a
  sigmoid.

Every input-to-output path therefore crosses exactly ``L`` convs.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import numerics as nm
from .errors import FormatError, InvalidArgument, InvalidState
from .features import FeatureConfig

MAGIC = b"FCNB"
VERSION = 1
LAYOUT = "trunk-branch-v1"


@dataclass(frozen=True)
class NetworkSpec:
    depth: int = 9
    width: int = 64
    scales: int = 4
    kernel: int = 9
    in_channels: int = 4
    seed: int = 0

    def validate(self) -> None:
        if self.scales < 1:
            raise InvalidArgument(f"scales must be >= 1, got {self.scales}")
        if self.depth < self.scales + 2:
            raise InvalidArgument(
                f"depth {self.depth} too small for {self.scales} scales (need >= scales + 2)")
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise InvalidArgument(f"kernel must be odd, got {self.kernel}")
        if self.width < 1 or self.in_channels < 1:
            raise InvalidArgument("width and in_channels must be positive")

    @property
    def min_size(self) -> int:
        return 2 ** (self.scales - 1)


@dataclass
class ConvLayer:
    name: str
    W: np.ndarray
    b: np.ndarray


@dataclass
class ForwardCache:
    version: int
    acts: dict = field(default_factory=dict)


def layer_plan(spec: NetworkSpec) -> list[tuple[str, int, int]]:
    """``(name, in_channels, out_channels)`` for every conv, in parameter order."""
    spec.validate()
    L, D, S = spec.depth, spec.width, spec.scales
    plan = []
    prev = spec.in_channels
    for i in range(1, S):
        plan.append((f"trunk{i}", prev, D))
        prev = D
    for j in range(1, L - 2 - (S - 1) + 1):
        plan.append((f"main{j}", prev, D))
        prev = D
    for i in range(1, S):
        for j in range(1, L - 2 - i + 1):
            plan.append((f"branch{i}.{j}", D, D))
    plan.append(("fuse1", S * D, D))
    plan.append(("fuse2", D, 1))
    return plan


def parameter_count(spec: NetworkSpec) -> int:
    K = spec.kernel
    return sum(K * K * cin * cout + cout for _, cin, cout in layer_plan(spec))


class Network:
    def __init__(self, spec: NetworkSpec, layers: list[ConvLayer],
                 features: Optional[FeatureConfig] = None):
        self.spec = spec
        self.layers = layers
        self.features = FeatureConfig() if features is None else features
        self.version = 0
        self._by_name = {l.name: l for l in layers}

    @property
    def dtype(self):
        return self.layers[0].W.dtype

    def params(self) -> list[np.ndarray]:
        out = []
        for l in self.layers:
            out += [l.W, l.b]
        return out

    def bias_mask(self) -> list[bool]:
        return [False, True] * len(self.layers)

    def set_params(self, params: list[np.ndarray]) -> None:
        if len(params) != 2 * len(self.layers):
            raise InvalidArgument(f"expected {2 * len(self.layers)} tensors, got {len(params)}")
        for l, W, b in zip(self.layers, params[0::2], params[1::2]):
            if W.shape != l.W.shape or b.shape != l.b.shape:
                raise InvalidArgument(f"shape mismatch for layer {l.name}")
            l.W = np.asarray(W, dtype=self.dtype)
            l.b = np.asarray(b, dtype=self.dtype)
        self.version += 1

    def copy(self) -> "Network":
        return Network(self.spec, [ConvLayer(l.name, l.W.copy(), l.b.copy()) for l in self.layers],
                       self.features)

    # -- forward / backward -------------------------------------------------

    def _conv(self, name, x, acts, relu=True):
        l = self._by_name[name]
        z = nm.conv2d(x, l.W, l.b)
        h = nm.relu(z) if relu else z
        if acts is not None:
            acts[name] = (x, h)
        return h

    def forward(self, x: np.ndarray, keep_cache: bool = True):
        """Foreground probabilities for ``(C,H,W)`` or ``(N,C,H,W)`` input.

        Returns ``(y, cache)``; ``y`` drops the channel axis. ``cache`` is
        ``None`` when ``keep_cache`` is false.
        """
        spec = self.spec
        x = np.asarray(x)
        single = x.ndim == 3
        xb = x[None] if single else x
        if xb.ndim != 4 or xb.shape[1] != spec.in_channels:
            raise InvalidArgument(
                f"network expects {spec.in_channels} input channels, got shape {x.shape}")
        H, W = xb.shape[-2:]
        if min(H, W) < spec.min_size:
            raise InvalidArgument(f"input {H}x{W} smaller than {spec.min_size} for {spec.scales} scales")
        xb = xb.astype(self.dtype, copy=False)
        acts = {} if keep_cache else None
        L, S = spec.depth, spec.scales
        h = xb
        trunk = []
        for i in range(1, S):
            h = self._conv(f"trunk{i}", h, acts)
            trunk.append(h)
        for j in range(1, L - 2 - (S - 1) + 1):
            h = self._conv(f"main{j}", h, acts)
        outs = [h]
        shapes = {}
        for i in range(1, S):
            p = trunk[i - 1]
            pshapes = []
            for _ in range(i):
                pshapes.append(p.shape)
                p = nm.avgpool2(p)
            shapes[i] = pshapes
            for j in range(1, L - 2 - i + 1):
                p = self._conv(f"branch{i}.{j}", p, acts)
            if acts is not None:
                acts[f"low{i}"] = p.shape[-2:]
            outs.append(nm.bilinear_upsample(p, H, W))
        cat = nm.concat_channels(outs)
        h = self._conv("fuse1", cat, acts)
        z = self._conv("fuse2", h, acts, relu=False)
        y = nm.sigmoid(z)[:, 0]
        cache = None
        if acts is not None:
            acts["y"] = y
            acts["pool_shapes"] = shapes
            acts["sizes"] = [o.shape[1] for o in outs]
            cache = ForwardCache(self.version, acts)
        return (y[0] if single else y), cache

    def predict(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x, keep_cache=False)[0]

    def _conv_back(self, name, g, acts, grads, relu=True, need_x=True):
        x, h = acts[name]
        if relu:
            g = nm.relu_backward(g, h)
        gx, gW, gb = nm.conv2d_backward(x, self._by_name[name].W, g, need_x=need_x)
        grads[name] = (gW, gb)
        return gx

    def backward(self, cache: ForwardCache, grad_y: np.ndarray) -> list[np.ndarray]:
        """Parameter gradients given ``d loss / d y``; same order as ``params()``."""
        if cache is None or cache.version != self.version:
            raise InvalidState("forward cache is missing or stale; run forward again")
        acts = cache.acts
        spec = self.spec
        L, S = spec.depth, spec.scales
        y = acts["y"]
        g = np.asarray(grad_y, dtype=self.dtype).reshape(y.shape)
        g = nm.sigmoid_backward(g, y)[:, None]
        grads: dict = {}
        g = self._conv_back("fuse2", g, acts, grads, relu=False)
        g = self._conv_back("fuse1", g, acts, grads)
        parts = nm.split_channels(g, acts["sizes"])
        g_trunk = [None] * S
        for i in range(1, S):
            gl = nm.bilinear_upsample_backward(parts[i], *acts[f"low{i}"])
            for j in range(L - 2 - i, 0, -1):
                gl = self._conv_back(f"branch{i}.{j}", gl, acts, grads)
            for shape in reversed(acts["pool_shapes"][i]):
                gl = nm.avgpool2_backward(gl, shape)
            g_trunk[i] = gl
        g = parts[0]
        n_main = L - 2 - (S - 1)
        for j in range(n_main, 0, -1):
            g = self._conv_back(f"main{j}", g, acts, grads, need_x=(j > 1 or S > 1))
        for i in range(S - 1, 0, -1):
            g = g + g_trunk[i]
            g = self._conv_back(f"trunk{i}", g, acts, grads, need_x=i > 1)
        out = []
        for l in self.layers:
            gW, gb = grads[l.name]
            out += [gW, gb]
        return out

    def receptive_radius(self) -> int:
        """Input radius that can influence an output pixel (single-scale nets)."""
        return self.spec.depth * (self.spec.kernel - 1) // 2


def build_network(spec: NetworkSpec, rng: Optional[np.random.Generator] = None,
                  features: Optional[FeatureConfig] = None, dtype=np.float32) -> Network:
    """He-normal weights (variance ``2 / (K^2 * fan_in)``) and zero biases."""
    spec.validate()
    if features is not None and features.channels != spec.in_channels:
        raise InvalidArgument(
            f"feature config yields {features.channels} channels but spec expects {spec.in_channels}")
    rng = np.random.default_rng(spec.seed) if rng is None else rng
    K = spec.kernel
    layers = []
    for name, cin, cout in layer_plan(spec):
        std = np.sqrt(2.0 / (K * K * cin))
        W = (rng.standard_normal((cout, K, K, cin)) * std).astype(dtype)
        layers.append(ConvLayer(name, W, np.zeros(cout, dtype=dtype)))
    return Network(spec, layers, features)


# -- model files --------------------------------------------------------------

def _header(net: Network) -> str:
    s = net.spec
    lines = [
        f"layout={LAYOUT}",
        f"depth={s.depth}",
        f"width={s.width}",
        f"scales={s.scales}",
        f"kernel={s.kernel}",
        f"in_channels={s.in_channels}",
        f"seed={s.seed}",
        f"features={net.features.encode() or 'none'}",
        f"params={parameter_count(s)}",
        "dtype=float32",
    ]
    return "\n".join(lines) + "\n"


def encode_model(net: Network) -> bytes:
    header = _header(net).encode("utf-8")
    body = bytearray(MAGIC + bytes([VERSION]) + struct.pack("<I", len(header)) + header)
    for p in net.params():
        body += np.ascontiguousarray(p, dtype="<f4").tobytes()
    body += struct.pack("<I", zlib.crc32(bytes(body)) & 0xFFFFFFFF)
    return bytes(body)


def save_model(net: Network, path) -> None:
    """Write the model; parameters are stored as float32."""
    with open(path, "wb") as f:
        f.write(encode_model(net))


def decode_model(data: bytes, expect_channels: Optional[int] = None,
                 expect_features: Optional[FeatureConfig] = None) -> Network:
    if len(data) < 13 or data[:4] != MAGIC:
        raise FormatError(f"not a model file (magic {data[:4]!r})")
    if data[4] != VERSION:
        raise FormatError(f"unsupported model version {data[4]}")
    stored = struct.unpack("<I", data[-4:])[0]
    if zlib.crc32(data[:-4]) & 0xFFFFFFFF != stored:
        raise FormatError("model checksum mismatch (file corrupted or truncated)")
    (hlen,) = struct.unpack("<I", data[5:9])
    if 9 + hlen > len(data) - 4:
        raise FormatError("model header runs past end of file")
    try:
        text = data[9:9 + hlen].decode("utf-8")
        kv = dict(line.split("=", 1) for line in text.splitlines() if line)
        if kv.get("layout") != LAYOUT:
            raise FormatError(f"unknown layout {kv.get('layout')!r}")
        spec = NetworkSpec(int(kv["depth"]), int(kv["width"]), int(kv["scales"]),
                           int(kv["kernel"]), int(kv["in_channels"]), int(kv["seed"]))
        features = FeatureConfig.parse(kv["features"])
    except (KeyError, ValueError, UnicodeDecodeError) as exc:
        if isinstance(exc, FormatError):
            raise
        raise FormatError(f"bad model header: {exc}") from None
    if features.channels != spec.in_channels:
        raise FormatError("model header features disagree with in_channels")
    if expect_channels is not None and spec.in_channels != expect_channels:
        raise FormatError(
            f"model expects {spec.in_channels} input channels, caller provides {expect_channels}")
    if expect_features is not None and features != expect_features:
        raise FormatError(
            f"model was trained with features {features.encode()!r}, "
            f"not {expect_features.encode()!r}")
    K = spec.kernel
    off = 9 + hlen
    layers = []
    for name, cin, cout in layer_plan(spec):
        tensors = []
        for shape in ((cout, K, K, cin), (cout,)):
            n = int(np.prod(shape))
            chunk = data[off:off + 4 * n]
            if len(chunk) != 4 * n:
                raise FormatError("model parameters truncated")
            tensors.append(np.frombuffer(chunk, "<f4").astype(np.float32).reshape(shape))
            off += 4 * n
        layers.append(ConvLayer(name, *tensors))
    if off != len(data) - 4:
        raise FormatError(f"{len(data) - 4 - off} unexpected trailing bytes in model file")
    return Network(spec, layers, features)


def load_model(path, expect_channels: Optional[int] = None,
               expect_features: Optional[FeatureConfig] = None) -> Network:
    with open(path, "rb") as f:
        data = f.read()
    return decode_model(data, expect_channels, expect_features)
