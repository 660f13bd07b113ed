"""Whole-image binarisation by overlapping crops, thresholding and ensemble voting."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from .errors import InvalidArgument
from .features import FeatureConfig, build_input_stack
from .imaging import crop_starts


@dataclass(frozen=True)
class StitchPlan:
    """Crops of ``size`` at ``stride``; each keeps the part nearest its centre.

    Neighbouring crops split their overlap at its midpoint, and border crops
    keep their outer margins, so kept regions tile the image exactly.
    """
    size: int = 256
    stride: int = 128

    def axis(self, length: int) -> list[tuple[int, int, int]]:
        """``(start, keep_lo, keep_hi)`` in image coordinates along one axis."""
        if length < 1:
            raise InvalidArgument(f"axis length must be positive, got {length}")
        if self.stride < 1 or self.stride > self.size:
            raise InvalidArgument(f"stride must be in [1, {self.size}], got {self.stride}")
        starts = crop_starts(length, self.size, self.stride)
        out = []
        for k, s in enumerate(starts):
            lo = 0 if k == 0 else (s + starts[k - 1] + self.size) // 2
            hi = length if k == len(starts) - 1 else (starts[k + 1] + s + self.size) // 2
            out.append((s, lo, hi))
        return out

    def tiles(self, H: int, W: int):
        return [(ys, xs) for ys in self.axis(H) for xs in self.axis(W)]


def _forward_crop(net, stack, ys, xs, size):
    (y0, ylo, yhi), (x0, xlo, xhi) = ys, xs
    crop = stack[:, y0:y0 + size, x0:x0 + size]
    ph, pw = size - crop.shape[1], size - crop.shape[2]
    if ph > 0 or pw > 0:
        crop = np.pad(crop, ((0, 0), (0, max(ph, 0)), (0, max(pw, 0))), mode="edge")
    y = net.predict(crop)
    return y[ylo - y0:yhi - y0, xlo - x0:xhi - x0]


def _check_features(net, features: Optional[FeatureConfig]) -> FeatureConfig:
    if features is not None and features != net.features:
        raise InvalidArgument(
            f"network was trained with features {net.features.encode()!r}, "
            f"got {features.encode()!r}")
    return net.features


def probability_map(net, image: np.ndarray, features: Optional[FeatureConfig] = None,
                    aux: Optional[Mapping[str, np.ndarray]] = None,
                    plan: StitchPlan = StitchPlan(), jobs: int = 1) -> np.ndarray:
    features = _check_features(net, features)
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2 or image.size == 0:
        raise InvalidArgument(f"expected a non-empty 2-D image, got shape {image.shape}")
    stack = build_input_stack(image, features, aux)
    H, W = image.shape
    tiles = plan.tiles(H, W)
    run = lambda t: _forward_crop(net, stack, t[0], t[1], plan.size)
    if jobs > 1 and len(tiles) > 1:
        with ThreadPoolExecutor(jobs) as ex:
            parts = list(ex.map(run, tiles))
    else:
        parts = [run(t) for t in tiles]
    out = np.empty((H, W), dtype=parts[0].dtype)
    for ((_, ylo, yhi), (_, xlo, xhi)), p in zip(tiles, parts):
        out[ylo:yhi, xlo:xhi] = p
    return out


def threshold(prob: np.ndarray, t: float = 0.5) -> np.ndarray:
    if not 0.0 <= t <= 1.0:
        raise InvalidArgument(f"threshold must lie in [0, 1], got {t}")
    return (np.asarray(prob) >= t).astype(np.uint8)


def binarize_image(net, image, features=None, aux=None, plan: StitchPlan = StitchPlan(),
                   jobs: int = 1):
    """Returns ``(probabilities, mask)`` with ink where the probability is at least 0.5."""
    prob = probability_map(net, image, features, aux, plan, jobs)
    return prob, threshold(prob)


def majority_vote(masks: Sequence[np.ndarray], probs: Sequence[np.ndarray]) -> np.ndarray:
    """Per-pixel majority; exact ties fall back to mean probability >= 0.5."""
    n = len(masks)
    if n == 0:
        raise InvalidArgument("need at least one vote")
    votes = np.sum([np.asarray(m, dtype=np.int32) for m in masks], axis=0)
    out = (2 * votes > n).astype(np.uint8)
    if n % 2 == 0:
        tie = 2 * votes == n
        if tie.any():
            mean_p = np.mean([np.asarray(p, dtype=np.float64) for p in probs], axis=0)
            out[tie] = (mean_p[tie] >= 0.5).astype(np.uint8)
    return out


def ensemble_binarize(nets: Sequence, image, features=None, aux=None,
                      plan: StitchPlan = StitchPlan(), jobs: int = 1) -> np.ndarray:
    if not nets:
        raise InvalidArgument("ensemble is empty")
    ref = nets[0].features
    for n in nets[1:]:
        if n.features != ref:
            raise InvalidArgument(
                f"ensemble mixes feature configs {ref.encode()!r} and {n.features.encode()!r}")
    probs, masks = [], []
    for n in nets:
        p, m = binarize_image(n, image, features, aux, plan, jobs)
        probs.append(p)
        masks.append(m)
    return majority_vote(masks, probs)
