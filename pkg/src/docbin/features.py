"""Dense per-pixel input channels stacked in front of the network.

All window operations replicate edge pixels at the borders and every channel
lies in [0, 1].
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np
from scipy import ndimage

from .errors import InvalidArgument

RD_THRESHOLD = 10 / 255


def _check_window(window: int) -> None:
    if window < 1 or window % 2 == 0:
        raise InvalidArgument(f"window must be a positive odd integer, got {window}")


def relative_darkness(img: np.ndarray, window: int = 5,
                      threshold: float = RD_THRESHOLD) -> np.ndarray:
    """Fractions of window neighbours darker / similar / lighter than the centre.

    Returns ``(3, H, W)``. The centre pixel is excluded, so the three
    channels sum to one.
    """
    _check_window(window)
    if window == 1:
        raise InvalidArgument("relative darkness needs a window of at least 3")
    img = np.asarray(img, dtype=np.float64)
    H, W = img.shape
    r = window // 2
    padded = np.pad(img, r, mode="edge")
    counts = np.zeros((3, H, W))
    for i in range(window):
        for j in range(window):
            if i == r and j == r:
                continue
            diff = padded[i:i + H, j:j + W] - img
            darker = diff < -threshold
            lighter = diff > threshold
            counts[0] += darker
            counts[2] += lighter
            counts[1] += ~(darker | lighter)
    return counts / (window * window - 1)


def percentile_rank(p: float, n: int) -> int:
    """Lower rank index of the ``p``-th percentile among ``n`` sorted values."""
    return int(math.floor(p / 100.0 * (n - 1) + 1e-9))


def local_filter(img: np.ndarray, kind: str, window: int, p: Optional[float] = None) -> np.ndarray:
    """Windowed statistic: min, max, mean, median, std (population) or percentile."""
    _check_window(window)
    img = np.asarray(img, dtype=np.float64)
    n = window * window
    if kind == "percentile":
        if p is None or not 0 <= p <= 100:
            raise InvalidArgument(f"percentile must be in [0, 100], got {p}")
        return ndimage.rank_filter(img, percentile_rank(p, n), size=window, mode="nearest")
    if kind == "min":
        return ndimage.minimum_filter(img, size=window, mode="nearest")
    if kind == "max":
        return ndimage.maximum_filter(img, size=window, mode="nearest")
    if kind == "median":
        return ndimage.rank_filter(img, percentile_rank(50, n), size=window, mode="nearest")
    if kind in ("mean", "std"):
        # shift by the global mean so constant regions cancel exactly
        c = float(img.mean())
        x = img - c
        m = ndimage.uniform_filter(x, size=window, mode="nearest")
        if kind == "mean":
            return m + c
        var = ndimage.uniform_filter(x * x, size=window, mode="nearest") - m * m
        return np.sqrt(np.maximum(var, 0.0))
    raise InvalidArgument(f"unknown filter kind {kind!r}")


def _gaussian_kernel(sigma: float) -> np.ndarray:
    r = int(math.ceil(3 * sigma))
    x = np.arange(-r, r + 1, dtype=np.float64)
    k = np.exp(-x * x / (2 * sigma * sigma))
    return k / k.sum()


def gradient_magnitude(img: np.ndarray, sigma: float = 1.0):
    """Gaussian-smoothed Sobel gradients. Returns ``(magnitude, gx, gy)``."""
    img = np.asarray(img, dtype=np.float64)
    if sigma > 0:
        k = _gaussian_kernel(sigma)
        img = ndimage.correlate1d(img, k, axis=0, mode="nearest")
        img = ndimage.correlate1d(img, k, axis=1, mode="nearest")
    gx = ndimage.correlate(img, np.array([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]], float), mode="nearest")
    gy = ndimage.correlate(img, np.array([[-1, -2, -1], [0, 0, 0], [1, 2, 1]], float), mode="nearest")
    return np.hypot(gx, gy), gx, gy


# (drow, dcol) of the neighbour along each quantised gradient direction
_NMS_STEPS = [(0, 1), (1, 1), (1, 0), (1, -1)]


def canny(img: np.ndarray, sigma: float = 1.0, low: float = 0.1, high: float = 0.2) -> np.ndarray:
    """Canny edge map; thresholds apply to magnitude normalised by its maximum."""
    if not 0 <= low < high:
        raise InvalidArgument(f"need 0 <= low < high, got low={low} high={high}")
    mag, gx, gy = gradient_magnitude(img, sigma)
    peak = mag.max()
    H, W = mag.shape
    if peak <= 0:
        return np.zeros((H, W), np.uint8)
    mag = mag / peak
    angle = np.rad2deg(np.arctan2(gy, gx)) % 180.0
    sector = (np.floor((angle + 22.5) / 45.0).astype(int)) % 4
    padded = np.pad(mag, 1, mode="constant")
    keep = np.zeros((H, W), bool)
    for s, (dr, dc) in enumerate(_NMS_STEPS):
        sel = sector == s
        fwd = padded[1 + dr:1 + dr + H, 1 + dc:1 + dc + W]
        bwd = padded[1 - dr:1 - dr + H, 1 - dc:1 - dc + W]
        # >= behind, > ahead: a symmetric ridge keeps exactly one pixel
        keep |= sel & (mag >= bwd) & (mag > fwd)
    keep &= mag > 0
    weak = keep & (mag >= low)
    strong = keep & (mag >= high)
    labels, n = ndimage.label(weak, structure=np.ones((3, 3), int))
    if n == 0:
        return np.zeros((H, W), np.uint8)
    has_strong = np.zeros(n + 1, bool)
    has_strong[np.unique(labels[strong])] = True
    has_strong[0] = False
    return has_strong[labels].astype(np.uint8)


@dataclass(frozen=True)
class FeatureSpec:
    name: str
    params: tuple = ()

    @property
    def channels(self) -> int:
        return 3 if self.name == "rd" else 1

    def encode(self) -> str:
        return ":".join([self.name] + [repr(p) for p in self.params])

    @classmethod
    def parse(cls, token: str) -> "FeatureSpec":
        name, *raw = token.strip().split(":")
        if name not in _DEFAULT_PARAMS:
            raise InvalidArgument(f"unknown feature {name!r}")
        defaults = _DEFAULT_PARAMS[name]
        if len(raw) > len(defaults):
            raise InvalidArgument(f"too many parameters for {name!r}: {token!r}")
        params = []
        for i, d in enumerate(defaults):
            if i < len(raw):
                try:
                    params.append(type(d)(float(raw[i])) if isinstance(d, int) else float(raw[i]))
                except ValueError:
                    raise InvalidArgument(f"bad parameter in feature {token!r}") from None
            else:
                params.append(d)
        return cls(name, tuple(params))


_DEFAULT_PARAMS = {
    "rd": (5, RD_THRESHOLD),
    "min": (9,),
    "max": (3,),
    "mean": (39,),
    "median": (39,),
    "std": (3,),
    "percentile": (10.0, 3),
    "canny": (1.0, 0.1, 0.2),
    "otsu": (),
    "howe": (50.0,),
}


@dataclass(frozen=True)
class FeatureConfig:
    """Ordered list of extra channels computed after the gray channel."""
    features: tuple = field(default_factory=lambda: (FeatureSpec("rd", _DEFAULT_PARAMS["rd"]),))

    @property
    def channels(self) -> int:
        return 1 + sum(f.channels for f in self.features)

    def encode(self) -> str:
        return ",".join(f.encode() for f in self.features)

    @classmethod
    def parse(cls, text: str) -> "FeatureConfig":
        text = text.strip()
        if not text or text == "none":
            return cls(())
        return cls(tuple(FeatureSpec.parse(t) for t in text.split(",")))


def compute_feature(img: np.ndarray, spec: FeatureSpec) -> np.ndarray:
    """One feature as a ``(c, H, W)`` array."""
    name, p = spec.name, spec.params
    if name == "rd":
        return relative_darkness(img, int(p[0]), float(p[1]))
    if name in ("min", "max", "mean", "median", "std"):
        return local_filter(img, name, int(p[0]))[None]
    if name == "percentile":
        return local_filter(img, "percentile", int(p[1]), p=float(p[0]))[None]
    if name == "canny":
        return canny(img, *p)[None].astype(np.float64)
    if name == "otsu":
        from .baselines import otsu
        return otsu(img)[None].astype(np.float64)
    if name == "howe":
        from .baselines import howe
        return howe(img, c=float(p[0]))[None].astype(np.float64)
    raise InvalidArgument(f"unknown feature {name!r}")


def build_input_stack(img: np.ndarray, config: Optional[FeatureConfig] = None,
                      aux: Optional[Mapping[str, np.ndarray]] = None) -> np.ndarray:
    """Gray image followed by the configured feature channels, ``(D, H, W)``.

    ``aux`` maps feature names to precomputed channels (e.g. a Howe map) and
    takes precedence over recomputation.
    """
    config = FeatureConfig() if config is None else config
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise InvalidArgument(f"expected a 2-D gray image, got shape {img.shape}")
    chans = [img[None]]
    for spec in config.features:
        if aux is not None and spec.name in aux:
            a = np.asarray(aux[spec.name], dtype=np.float64)
            if a.ndim == 2:
                a = a[None]
            if a.shape != (spec.channels,) + img.shape:
                raise InvalidArgument(
                    f"aux channel {spec.name!r} has shape {a.shape}, expected "
                    f"{(spec.channels,) + img.shape}")
            chans.append(a)
        else:
            chans.append(compute_feature(img, spec))
    return np.concatenate(chans, axis=0)
