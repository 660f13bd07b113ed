"""Image I/O (binary PNM), grayscale conversion, distance transforms and crops.

Gray images are float arrays in [0, 1]. Masks are uint8 arrays of {0, 1}
with 1 meaning foreground ink.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import ndimage

from .errors import DomainError, FormatError, InvalidArgument

_WS = b" \t\r\n\v\f"


def _read_header(data: bytes, n_fields: int) -> tuple[list[int], int]:
    """Parse ``n_fields`` integers after the magic; return them and raster offset."""
    pos = 2
    values = []
    while len(values) < n_fields:
        while pos < len(data) and (data[pos] in _WS or data[pos] == ord("#")):
            if data[pos] == ord("#"):
                while pos < len(data) and data[pos] not in b"\r\n":
                    pos += 1
            else:
                pos += 1
        start = pos
        while pos < len(data) and chr(data[pos]).isdigit():
            pos += 1
        if start == pos:
            raise FormatError(f"malformed PNM header near byte {pos}: {data[:max(pos, 16)][:64]!r}")
        values.append(int(data[start:pos]))
    if pos >= len(data) or data[pos] not in _WS:
        raise FormatError(f"PNM header not terminated by whitespace: {data[:pos + 1][:64]!r}")
    return values, pos + 1


def parse_pnm(data: bytes):
    """Decode P4/P5/P6 bytes. See ``load_image`` for the return convention."""
    magic = data[:2]
    if magic == b"P4":
        (w, h), off = _read_header(data, 2)
        if w <= 0 or h <= 0:
            raise FormatError(f"bad PBM size {w}x{h}")
        row_bytes = (w + 7) // 8
        raw = data[off:off + row_bytes * h]
        if len(raw) < row_bytes * h:
            raise FormatError(f"truncated PBM raster: {len(raw)} of {row_bytes * h} bytes")
        bits = np.unpackbits(np.frombuffer(raw, np.uint8).reshape(h, row_bytes), axis=1)
        return bits[:, :w].astype(np.uint8)
    if magic in (b"P5", b"P6"):
        (w, h, maxval), off = _read_header(data, 3)
        if w <= 0 or h <= 0 or not 0 < maxval < 65536:
            raise FormatError(f"bad PNM header values {w}x{h} maxval={maxval}")
        chans = 1 if magic == b"P5" else 3
        dtype = np.dtype(np.uint8) if maxval < 256 else np.dtype(">u2")
        n = w * h * chans
        raw = data[off:off + n * dtype.itemsize]
        if len(raw) < n * dtype.itemsize:
            raise FormatError(
                f"truncated {magic.decode()} raster: {len(raw)} of {n * dtype.itemsize} bytes")
        vals = np.frombuffer(raw, dtype).astype(np.float64) / maxval
        if chans == 1:
            return vals.reshape(h, w)
        rgb = vals.reshape(h, w, 3)
        return rgb[..., 0].copy(), rgb[..., 1].copy(), rgb[..., 2].copy()
    raise FormatError(f"unsupported image magic {data[:8]!r}")


def load_image(path):
    """Read a binary PNM file.

    Returns a float ``(H, W)`` array for P5, a ``(r, g, b)`` tuple of float
    arrays for P6, and a uint8 mask for P4 (PBM 1 = black = ink).
    """
    with open(path, "rb") as f:
        data = f.read()
    return parse_pnm(data)


def load_gray(path) -> np.ndarray:
    """Load any supported file as a gray image in [0, 1]."""
    img = load_image(path)
    if isinstance(img, tuple):
        return to_grayscale(*img)
    if img.dtype == np.uint8:
        return 1.0 - img.astype(np.float64)
    return img


def load_mask(path) -> np.ndarray:
    """Load a ground-truth mask. PBM as is; gray/colour images: dark (< 0.5) is ink."""
    img = load_image(path)
    if isinstance(img, tuple):
        img = to_grayscale(*img)
    if img.dtype == np.uint8:
        return img
    return (img < 0.5).astype(np.uint8)


def is_mask(arr: np.ndarray) -> bool:
    return arr.dtype == np.bool_ or np.issubdtype(arr.dtype, np.integer)


def encode_pnm(image: np.ndarray) -> bytes:
    arr = np.asarray(image)
    if arr.ndim != 2 or arr.size == 0:
        raise InvalidArgument(f"cannot encode image of shape {arr.shape}")
    h, w = arr.shape
    if is_mask(arr):
        if not np.isin(arr, (0, 1)).all():
            raise InvalidArgument("mask values must be 0 or 1")
        packed = np.packbits(arr.astype(np.uint8), axis=1)
        return b"P4\n%d %d\n" % (w, h) + packed.tobytes()
    if not np.isfinite(arr).all():
        raise InvalidArgument("gray image contains non-finite values")
    v = np.clip(np.round(np.clip(arr, 0.0, 1.0) * 255), 0, 255).astype(np.uint8)
    return b"P5\n%d %d\n255\n" % (w, h) + v.tobytes()


def save_image(path, image: np.ndarray) -> None:
    """Write a mask (bool/integer dtype) as P4 or a float image as P5."""
    data = encode_pnm(image)
    with open(path, "wb") as f:
        f.write(data)


def to_grayscale(r, g, b) -> np.ndarray:
    r, g, b = (np.asarray(c, dtype=np.float64) for c in (r, g, b))
    if not r.shape == g.shape == b.shape:
        raise InvalidArgument(f"channel shapes differ: {r.shape} {g.shape} {b.shape}")
    return 0.299 * r + 0.587 * g + 0.114 * b


def distance_transform(mask: np.ndarray, from_value: int = 1) -> np.ndarray:
    """Chessboard distance from every pixel to the nearest pixel equal to ``from_value``."""
    mask = np.asarray(mask)
    target = mask == from_value
    if not target.any():
        raise DomainError(f"mask has no pixels equal to {from_value}")
    # cdt measures distance from nonzero to the nearest zero
    return ndimage.distance_transform_cdt(~target, metric="chessboard").astype(np.int64)


@dataclass
class CropPair:
    image: np.ndarray
    mask: np.ndarray
    offset: tuple[int, int]
    padded: bool = False
    source: Optional[int] = None
    extras: dict = field(default_factory=dict)


def crop_starts(length: int, size: int, stride: int) -> list[int]:
    """Top-left anchored starts; the last one is shifted inward to stay in bounds."""
    if length <= size:
        return [0]
    starts = list(range(0, length - size + 1, stride))
    if starts[-1] + size < length:
        starts.append(length - size)
    return starts


def _pad_to(arr: np.ndarray, h: int, w: int) -> np.ndarray:
    ph, pw = max(0, h - arr.shape[-2]), max(0, w - arr.shape[-1])
    if not (ph or pw):
        return arr
    pad = [(0, 0)] * (arr.ndim - 2) + [(0, ph), (0, pw)]
    return np.pad(arr, pad, mode="edge")


def extract_crops(image: np.ndarray, mask: np.ndarray, size: int = 256, stride: int = 64,
                  keep_empty: bool = False, extras: Optional[dict] = None) -> list[CropPair]:
    """Cut aligned training crops from an image (``(H,W)`` or ``(C,H,W)``) and its mask.

    Crops without foreground are dropped unless ``keep_empty``. Arrays in
    ``extras`` (same spatial shape) are cropped alongside.
    """
    H, W = image.shape[-2:]
    if mask.shape != (H, W):
        raise InvalidArgument(f"image {image.shape} and mask {mask.shape} differ spatially")
    if size < 1 or stride < 1:
        raise InvalidArgument(f"bad crop geometry size={size} stride={stride}")
    padded = H < size or W < size
    if padded:
        image = _pad_to(image, size, size)
        mask = _pad_to(mask, size, size)
        extras = {k: _pad_to(v, size, size) for k, v in (extras or {}).items()}
    out = []
    for r in crop_starts(H, size, stride):
        for c in crop_starts(W, size, stride):
            m = mask[r:r + size, c:c + size]
            if not keep_empty and not m.any():
                continue
            ex = {k: v[..., r:r + size, c:c + size].copy() for k, v in (extras or {}).items()}
            out.append(CropPair(image[..., r:r + size, c:c + size].copy(), m.copy(),
                                (r, c), padded, extras=ex))
    return out


def list_pairs(directory) -> list[tuple[str, str]]:
    """Find ``(image, gt)`` pairs in a directory.

    Uses ``manifest.csv`` when present, otherwise matches ``X.pgm``/``X.ppm``
    with ``X_gt.pbm``/``X_gt.pgm``.
    """
    import csv

    directory = os.fspath(directory)
    manifest = os.path.join(directory, "manifest.csv")
    if os.path.exists(manifest):
        with open(manifest, newline="") as f:
            rows = list(csv.DictReader(f))
        return [(os.path.join(directory, r["image"]), os.path.join(directory, r["gt"]))
                for r in rows]
    pairs = []
    for name in sorted(os.listdir(directory)):
        stem, ext = os.path.splitext(name)
        if ext not in (".pgm", ".ppm") or stem.endswith("_gt"):
            continue
        for gext in (".pbm", ".pgm"):
            gt = os.path.join(directory, stem + "_gt" + gext)
            if os.path.exists(gt):
                pairs.append((os.path.join(directory, name), gt))
                break
    return pairs
