"""DIBCO-style evaluation of binary predictions: P-FM, FM, PSNR and DRD."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy import ndimage

from .errors import DomainError, InvalidArgument
from .weights import SCHEME, WeightMaps, pseudo_weights

DRD_BLOCK = 8


@dataclass
class MetricReport:
    pfm: float
    fm: float
    psnr: float
    drd: float
    scheme: str = SCHEME


def _binary_pair(B, G):
    B = np.asarray(B)
    G = np.asarray(G)
    if B.shape != G.shape:
        raise InvalidArgument(f"prediction {B.shape} and ground truth {G.shape} differ")
    return B.astype(bool), G.astype(bool)


def fm_metric(B, G) -> float:
    B, G = _binary_pair(B, G)
    if not G.any():
        raise DomainError("ground truth has no foreground")
    tp = int(np.count_nonzero(B & G))
    if tp == 0:
        return 0.0
    fp = int(np.count_nonzero(B & ~G))
    fn = int(np.count_nonzero(~B & G))
    p = tp / (tp + fp)
    r = tp / (tp + fn)
    return 100.0 * 2 * p * r / (p + r)


def pseudo_recall_precision(B, G, Wm: Optional[WeightMaps] = None) -> tuple[float, float]:
    """Weighted recall and precision of a binary prediction, as fractions."""
    B, G = _binary_pair(B, G)
    if not G.any():
        raise DomainError("ground truth has no foreground")
    if Wm is None:
        Wm = pseudo_weights(G)
    b = B.astype(np.float64)
    g = G.astype(np.float64)
    rw = np.asarray(Wm.recall, dtype=np.float64)
    pw = np.asarray(Wm.precision, dtype=np.float64)
    recall_den = float(np.sum(g * rw))
    if not recall_den > 0:
        raise DomainError("recall weights vanish on the ground truth")
    R = float(np.sum(b * g * rw)) / recall_den
    prec_den = float(np.sum(b * pw))
    P = float(np.sum(g * b * pw)) / prec_den if prec_den > 0 else 0.0
    return R, P


def pfm_metric(B, G, Wm: Optional[WeightMaps] = None) -> float:
    """Pseudo F-measure of a binary prediction, in percent."""
    R, P = pseudo_recall_precision(B, G, Wm)
    if R + P == 0:
        return 0.0
    return 100.0 * 2 * R * P / (R + P)


def psnr(B, G) -> float:
    B, G = _binary_pair(B, G)
    mse = np.count_nonzero(B != G) / B.size
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def drd_weights(size: int = 5) -> np.ndarray:
    """Normalised reciprocal-distance matrix with a zero centre."""
    c = size // 2
    i, j = np.mgrid[-c:c + 1, -c:c + 1]
    dist = np.hypot(i, j)
    w = np.zeros((size, size))
    nz = dist > 0
    w[nz] = 1.0 / dist[nz]
    return w / w.sum()


def nubn(G) -> int:
    """Count of complete 8x8 ground-truth blocks holding both values."""
    G = np.asarray(G).astype(bool)
    H, W = G.shape
    h, w = H // DRD_BLOCK, W // DRD_BLOCK
    if h == 0 or w == 0:
        return 0
    blocks = G[:h * DRD_BLOCK, :w * DRD_BLOCK].reshape(h, DRD_BLOCK, w, DRD_BLOCK)
    s = blocks.sum(axis=(1, 3))
    return int(np.count_nonzero((s > 0) & (s < DRD_BLOCK * DRD_BLOCK)))


def drd(B, G) -> float:
    B, G = _binary_pair(B, G)
    n = nubn(G)
    if n == 0:
        raise DomainError("uniform ground truth: no non-uniform 8x8 blocks")
    flipped = B != G
    if not flipped.any():
        return 0.0
    Wn = drd_weights(5)
    g = G.astype(np.float64)
    # out-of-bounds neighbours match the flipped pixel's value: contribute nothing
    ones = ndimage.correlate(g, Wn, mode="constant", cval=0.0)
    inside = ndimage.correlate(np.ones_like(g), Wn, mode="constant", cval=0.0)
    # for B=1: sum of W over neighbours with G=0; for B=0: sum of W over neighbours with G=1
    cost_if_one = inside - ones
    cost_if_zero = ones
    cost = np.where(B, cost_if_one, cost_if_zero)
    return float(np.sum(cost[flipped])) / n


def evaluate_pair(B, G, Wm: Optional[WeightMaps] = None) -> MetricReport:
    B, G = _binary_pair(B, G)
    if Wm is None:
        Wm = pseudo_weights(G)
    return MetricReport(pfm_metric(B, G, Wm), fm_metric(B, G), psnr(B, G), drd(B, G), Wm.scheme)


def mean_report(reports: Sequence[MetricReport]) -> MetricReport:
    """Unweighted mean; infinite PSNRs are left out unless every image is perfect."""
    if not reports:
        raise InvalidArgument("no reports to aggregate")
    finite = [r.psnr for r in reports if math.isfinite(r.psnr)]
    return MetricReport(
        float(np.mean([r.pfm for r in reports])),
        float(np.mean([r.fm for r in reports])),
        float(np.mean(finite)) if finite else math.inf,
        float(np.mean([r.drd for r in reports])),
        reports[0].scheme,
    )


def _fmt(v: float) -> str:
    if math.isinf(v):
        return "+inf" if v > 0 else "-inf"
    if math.isnan(v):
        return "nan"
    return f"{v:.6f}"


CSV_HEADER = ("path", "pfm", "fm", "psnr", "drd")


def report_csv(rows: Iterable[tuple[str, Optional[MetricReport]]],
               mean: Optional[MetricReport] = None) -> str:
    """CSV text: one row per image, then a ``mean`` row. ``None`` rows print as nan."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for path, r in rows:
        if r is None:
            w.writerow([path] + ["nan"] * 4)
        else:
            w.writerow([path, _fmt(r.pfm), _fmt(r.fm), _fmt(r.psnr), _fmt(r.drd)])
    if mean is not None:
        w.writerow(["mean", _fmt(mean.pfm), _fmt(mean.fm), _fmt(mean.psnr), _fmt(mean.drd)])
    return buf.getvalue()


def parse_float(text: str) -> float:
    return float(text.replace("+inf", "inf"))
