"""Training objectives on foreground probability maps, each with its exact gradient.

F-style losses are ``1 - F`` so that minimising improves the measure. The
probability map is clamped to ``[EPS, 1 - EPS]`` before evaluation and the
gradient is taken at the clamped value.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import DomainError, InvalidArgument
from .weights import WeightMaps, uniform_weights

EPS = 1e-7
LOSSES = ("pfm", "fm", "pfm+fm", "ce")


@dataclass
class LossResult:
    value: float
    grad: np.ndarray


def _prep(B, G):
    B = np.asarray(B, dtype=np.float64)
    G = np.asarray(G, dtype=np.float64)
    if B.shape != G.shape:
        raise InvalidArgument(f"prediction {B.shape} and ground truth {G.shape} differ")
    return np.clip(B, EPS, 1 - EPS), G


def pseudo_f_components(B, G, Wm: WeightMaps):
    """Pseudo recall and precision and their per-pixel gradients."""
    B, G = _prep(B, G)
    Rw = np.asarray(Wm.recall, dtype=np.float64)
    Pw = np.asarray(Wm.precision, dtype=np.float64)
    recall_den = float(np.sum(G * Rw))
    if not recall_den > 0:
        raise DomainError("all-background ground truth: pseudo recall is undefined")
    BP = B * Pw
    prec_den = float(np.sum(BP))
    prec_num = float(np.sum(G * BP))
    R = float(np.sum(B * G * Rw)) / recall_den
    P = prec_num / prec_den
    dR = G * Rw / recall_den
    dP = Pw * (prec_den * G - prec_num) / prec_den ** 2
    return R, P, dR, dP


def pseudo_f_loss(B, G, Wm: WeightMaps) -> LossResult:
    R, P, dR, dP = pseudo_f_components(B, G, Wm)
    if R + P <= 0:
        return LossResult(1.0, np.zeros_like(dR))
    F = 2 * R * P / (R + P)
    dF = 2 * (dR * P * P + dP * R * R) / (P + R) ** 2
    return LossResult(1.0 - F, -dF)


def f_loss(B, G) -> LossResult:
    return pseudo_f_loss(B, G, uniform_weights(G))


def combined_loss(B, G, Wm: WeightMaps) -> LossResult:
    a = pseudo_f_loss(B, G, Wm)
    b = f_loss(B, G)
    return LossResult(a.value + b.value, a.grad + b.grad)


def cross_entropy_loss(B, G) -> LossResult:
    B, G = _prep(B, G)
    n = B.size
    value = -float(np.mean(G * np.log(B) + (1 - G) * np.log(1 - B)))
    return LossResult(value, (B - G) / (B * (1 - B) * n))


def compute_loss(kind: str, B, G, Wm: Optional[WeightMaps] = None) -> LossResult:
    """Dispatch on the selector token ``pfm``, ``fm``, ``pfm+fm`` or ``ce``."""
    if kind == "pfm":
        return pseudo_f_loss(B, G, Wm)
    if kind == "fm":
        return f_loss(B, G)
    if kind == "pfm+fm":
        return combined_loss(B, G, Wm)
    if kind == "ce":
        return cross_entropy_loss(B, G)
    raise InvalidArgument(f"unknown loss {kind!r}; expected one of {LOSSES}")


def batch_loss(kind: str, B: np.ndarray, G: np.ndarray,
               weights: Sequence[Optional[WeightMaps]]) -> LossResult:
    """Mean of per-crop losses over the leading batch axis."""
    n = B.shape[0]
    grads = np.zeros(B.shape, dtype=np.float64)
    total = 0.0
    for i in range(n):
        r = compute_loss(kind, B[i], G[i], weights[i])
        total += r.value
        grads[i] = r.grad
    return LossResult(total / n, grads / n)
