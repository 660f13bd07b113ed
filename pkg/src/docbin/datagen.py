"""Seeded synthetic degraded pages with exact ground truth.

A page is a union of random-walk pen strokes on a shaded background, plus a
mirrored faint stroke layer imitating ink from the reverse side, then noise
and blur. Only the front strokes are ink in the ground truth.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
from scipy import ndimage

from .errors import InvalidArgument
from .imaging import save_image


@dataclass(frozen=True)
class PageParams:
    size: tuple = (128, 128)
    strokes: tuple = (6, 14)           # stroke count range (inclusive)
    thickness: tuple = (1.5, 3.5)      # pen diameter range, pixels
    length: tuple = (15, 45)           # random-walk steps per stroke
    fg_range: tuple = (0.02, 0.20)     # allowed ink fraction of the page
    ink: tuple = (0.05, 0.35)          # ink gray level range
    background: tuple = (0.7, 0.95)    # page background gray range
    gradient: float = 0.15             # peak-to-peak illumination ramp
    bleed: float = 0.45                # reverse-side opacity, 0 disables
    noise: float = 0.03
    blur: float = 0.6
    seed: int = 0

    def validate(self) -> None:
        H, W = self.shape
        if H < 8 or W < 8:
            raise InvalidArgument(f"page size {H}x{W} too small (min 8x8)")
        if not 0.0 <= self.bleed <= 1.0:
            raise InvalidArgument(f"bleed opacity must lie in [0, 1], got {self.bleed}")
        if min(self.gradient, self.noise, self.blur) < 0:
            raise InvalidArgument("gradient, noise and blur must be non-negative")
        lo, hi = self.fg_range
        if not 0 < lo < hi <= 1:
            raise InvalidArgument(f"bad foreground range {self.fg_range}")
        if self.strokes[0] < 1 or self.strokes[0] > self.strokes[1]:
            raise InvalidArgument(f"bad stroke count range {self.strokes}")
        for name in ("ink", "background"):
            a, b = getattr(self, name)
            if not 0 <= a <= b <= 1:
                raise InvalidArgument(f"{name} levels must satisfy 0 <= lo <= hi <= 1")
        if self.ink[1] >= self.background[0]:
            raise InvalidArgument("ink must be darker than the background")

    @property
    def shape(self) -> tuple[int, int]:
        s = self.size
        return (int(s), int(s)) if np.isscalar(s) else (int(s[0]), int(s[1]))

    def clean(self) -> "PageParams":
        return replace(self, gradient=0.0, bleed=0.0, noise=0.0, blur=0.0)


def _stroke(rng, shape, thickness, length) -> np.ndarray:
    H, W = shape
    n = int(rng.integers(length[0], length[1] + 1))
    pos = np.array([rng.uniform(0, H), rng.uniform(0, W)])
    heading = rng.uniform(0, 2 * np.pi)
    turn = 0.0
    pts = [pos.copy()]
    for _ in range(n):
        # smooth curvature: the turn rate itself random-walks
        turn = 0.7 * turn + rng.normal(0, 0.25)
        heading += turn
        pos = pos + np.array([np.sin(heading), np.cos(heading)])
        pts.append(pos.copy())
    pts = np.array(pts)
    # sample the polyline densely and stamp a disc of the pen radius
    seg = np.linspace(0, 1, 4, endpoint=False)
    dense = (pts[:-1, None] + (pts[1:] - pts[:-1])[:, None] * seg[None, :, None]).reshape(-1, 2)
    dense = np.vstack([dense, pts[-1:]])
    ij = np.round(dense).astype(int)
    ok = (ij[:, 0] >= 0) & (ij[:, 0] < H) & (ij[:, 1] >= 0) & (ij[:, 1] < W)
    centre = np.zeros(shape, bool)
    centre[ij[ok, 0], ij[ok, 1]] = True
    if not centre.any():
        return centre
    dist = ndimage.distance_transform_edt(~centre)
    return dist <= thickness / 2


def stroke_layer(rng, params: PageParams) -> np.ndarray:
    """Union of strokes whose ink fraction lies in ``params.fg_range``."""
    shape = params.shape
    lo, hi = params.fg_range
    target = int(rng.integers(params.strokes[0], params.strokes[1] + 1))
    mask = np.zeros(shape, bool)
    count = tries = 0
    while (count < target or mask.mean() < lo) and tries < 50 * params.strokes[1]:
        tries += 1
        s = _stroke(rng, shape, rng.uniform(*params.thickness), params.length)
        merged = mask | s
        if not s.any() or merged.mean() > hi:
            continue
        mask = merged
        count += 1
    if mask.mean() < lo:
        raise InvalidArgument(f"could not reach ink fraction {lo} with these stroke settings")
    return mask


def generate_page(params: PageParams):
    """Returns ``(image, gt)``: float gray image in [0, 1] and uint8 ink mask."""
    params.validate()
    rng = np.random.default_rng(params.seed)
    H, W = params.shape
    gt = stroke_layer(rng, params)
    back = stroke_layer(rng, params)[:, ::-1]
    base = rng.uniform(*params.background)
    ink = rng.uniform(*params.ink)
    angle = rng.uniform(0, 2 * np.pi)
    yy, xx = np.mgrid[0:H, 0:W]
    ramp = np.cos(angle) * yy / max(H - 1, 1) + np.sin(angle) * xx / max(W - 1, 1)
    ramp = ramp - ramp.min()
    if ramp.max() > 0:
        ramp = ramp / ramp.max() - 0.5
    bg = base + params.gradient * ramp
    img = bg.copy()
    if params.bleed > 0:
        # reverse-side ink shows through diffused and faded
        seep = ndimage.gaussian_filter(back.astype(np.float64), 0.8)
        img = img - params.bleed * seep * (bg - ink)
    img = np.where(gt, ink, img)
    if params.noise > 0:
        img = img + rng.normal(0, params.noise, img.shape)
    if params.blur > 0:
        img = ndimage.gaussian_filter(img, params.blur)
    return np.clip(img, 0.0, 1.0), gt.astype(np.uint8)


MANIFEST_FIELDS = ("index", "seed", "image", "gt")


def generate_corpus(n: int, params: PageParams, out_dir, prefix: str = "page") -> list[dict]:
    """Write ``n`` pages with seeds ``params.seed + i``; returns the manifest rows."""
    if n < 1:
        raise InvalidArgument(f"page count must be >= 1, got {n}")
    params.validate()
    os.makedirs(out_dir, exist_ok=True)
    rows = []
    for i in range(n):
        seed = params.seed + i
        img, gt = generate_page(replace(params, seed=seed))
        name = f"{prefix}_{i:04d}"
        save_image(os.path.join(out_dir, name + ".pgm"), img)
        save_image(os.path.join(out_dir, name + "_gt.pbm"), gt)
        rows.append({"index": i, "seed": seed, "image": name + ".pgm", "gt": name + "_gt.pbm"})
    with open(os.path.join(out_dir, "manifest.csv"), "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=MANIFEST_FIELDS, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    return rows


def params_from_dict(values: dict, base: Optional[PageParams] = None) -> PageParams:
    """Override ``base`` with string values such as ``bleed=0.3`` or ``size=96,128``."""
    base = PageParams() if base is None else base
    kw = {}
    for key, text in values.items():
        if not hasattr(base, key):
            raise InvalidArgument(f"unknown page parameter {key!r}")
        cur = getattr(base, key)
        try:
            if isinstance(cur, tuple):
                cast = type(cur[0])
                parts = tuple(cast(p) for p in str(text).split(","))
                if key == "size" and len(parts) == 1:
                    parts = parts * 2
                if len(parts) != len(cur):
                    raise ValueError
                kw[key] = parts
            else:
                kw[key] = type(cur)(text)
        except ValueError:
            raise InvalidArgument(f"bad value for {key}: {text!r}") from None
    return replace(base, **kw)
