"""Per-pixel recall and precision weights for the pseudo F-measure.

The scheme here ("contour-depth") keeps the behaviour the weighting is meant
to have without reproducing the official DIBCO weighting tool:

* recall: zero on the contour of thick strokes, rising linearly with depth
  inside each 8-connected component to one at its deepest pixels; strokes
  that are one pixel thick keep weight one everywhere;
* precision: one on ink, ``1 + exp(-d / s)`` on background at chessboard
  distance ``d`` from ink, where ``s`` is the mean stroke width, so false
  alarms between characters cost more than those far from any text.

Pixels outside the image count as background when measuring depth.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import DomainError
from .imaging import distance_transform

SCHEME = "contour-depth"
UNIFORM = "uniform"

_EIGHT = np.ones((3, 3), int)


@dataclass
class WeightMaps:
    recall: np.ndarray
    precision: np.ndarray
    scheme: str = SCHEME


def _require_foreground(gt: np.ndarray) -> np.ndarray:
    gt = np.asarray(gt)
    fg = gt.astype(bool)
    if not fg.any():
        raise DomainError("ground truth has no foreground pixels")
    return fg


def depth(gt: np.ndarray) -> np.ndarray:
    """Chessboard distance of each ink pixel to the nearest background (0 off ink)."""
    fg = _require_foreground(gt)
    padded = np.pad(fg, 1, constant_values=False).astype(np.uint8)
    return distance_transform(padded, 0)[1:-1, 1:-1]


def stroke_width(gt: np.ndarray) -> float:
    """Twice the mean ink depth."""
    fg = _require_foreground(gt)
    return 2.0 * float(depth(gt)[fg].mean())


def recall_weights(gt: np.ndarray) -> np.ndarray:
    fg = _require_foreground(gt)
    d = depth(gt).astype(np.float64)
    labels, n = ndimage.label(fg, structure=_EIGHT)
    peak = ndimage.maximum(d, labels, index=np.arange(n + 1))
    peak = np.asarray(peak, dtype=np.float64)
    m = peak[labels]
    w = np.zeros_like(d)
    thin = fg & (m <= 1)
    thick = fg & (m > 1)
    w[thin] = 1.0
    w[thick] = (d[thick] - 1.0) / (m[thick] - 1.0)
    return w


def precision_weights(gt: np.ndarray, s: float) -> np.ndarray:
    fg = _require_foreground(gt)
    if not s > 0:
        raise DomainError(f"stroke width must be positive, got {s}")
    d = distance_transform(fg.astype(np.uint8), 1).astype(np.float64)
    w = 1.0 + np.exp(-d / s)
    w[fg] = 1.0
    return w


def pseudo_weights(gt: np.ndarray) -> WeightMaps:
    return WeightMaps(recall_weights(gt), precision_weights(gt, stroke_width(gt)), SCHEME)


def uniform_weights(gt: np.ndarray) -> WeightMaps:
    """Weights under which the pseudo F-measure is the ordinary F-measure."""
    gt = np.asarray(gt)
    return WeightMaps(gt.astype(np.float64), np.ones(gt.shape), UNIFORM)
