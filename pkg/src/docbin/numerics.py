"""Layer primitives for the FCN, each with a hand-written backward.

Tensors are plain numpy arrays laid out channels-first. Every spatial op
accepts either a single sample ``(C, H, W)`` or a batch ``(N, C, H, W)``;
the conv kernels use the ``(D_out, K, K, D_in)`` layout.

All functions are pure: inputs are never modified in place.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .errors import InvalidArgument


def _as_batch(x: np.ndarray) -> tuple[np.ndarray, bool]:
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise InvalidArgument(f"expected (C,H,W) or (N,C,H,W), got shape {x.shape}")


def _check_conv(x: np.ndarray, W: np.ndarray) -> None:
    if W.ndim != 4 or W.shape[1] != W.shape[2]:
        raise InvalidArgument(f"kernel must be (D_out,K,K,D_in), got {W.shape}")
    if W.shape[1] % 2 == 0:
        raise InvalidArgument(f"kernel size must be odd, got {W.shape[1]}")
    if x.shape[-3] != W.shape[3]:
        raise InvalidArgument(
            f"input has {x.shape[-3]} channels but kernel expects {W.shape[3]}")


def conv2d(x: np.ndarray, W: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Same-size cross-correlation with zero padding of ``(K-1)/2``.

    ``out[d] = sum_c W[d,:,:,c] (*) x[c] + b[d]``. No kernel flip.
    """
    _check_conv(x, W)
    if b.shape != (W.shape[0],):
        raise InvalidArgument(f"bias shape {b.shape} != ({W.shape[0]},)")
    xb, single = _as_batch(x)
    N, C, H, Wd = xb.shape
    D, K = W.shape[0], W.shape[1]
    p = K // 2
    dtype = np.result_type(xb, W)
    # channels-major so each shifted window flattens to a (C, N*H*W) matrix
    xp = np.zeros((C, N, H + 2 * p, Wd + 2 * p), dtype=dtype)
    xp[:, :, p:p + H, p:p + Wd] = xb.transpose(1, 0, 2, 3)
    out = np.zeros((D, N * H * Wd), dtype=dtype)
    for i in range(K):
        for j in range(K):
            out += W[:, i, j, :] @ xp[:, :, i:i + H, j:j + Wd].reshape(C, -1)
    out += b.astype(dtype, copy=False)[:, None]
    out = out.reshape(D, N, H, Wd).transpose(1, 0, 2, 3)
    out = np.ascontiguousarray(out)
    return out[0] if single else out


def conv2d_backward(x: np.ndarray, W: np.ndarray, grad_out: np.ndarray, need_x: bool = True):
    """Gradients of ``conv2d`` w.r.t. input, kernel and bias.

    Returns ``(grad_x, grad_W, grad_b)``; ``grad_x`` is ``None`` when
    ``need_x`` is false.
    """
    _check_conv(x, W)
    xb, single = _as_batch(x)
    gb, _ = _as_batch(grad_out)
    N, C, H, Wd = xb.shape
    D, K = W.shape[0], W.shape[1]
    if gb.shape != (N, D, H, Wd):
        raise InvalidArgument(
            f"grad_out shape {grad_out.shape} inconsistent with output {(N, D, H, Wd)}")
    p = K // 2
    dtype = np.result_type(xb, W, gb)
    xp = np.zeros((C, N, H + 2 * p, Wd + 2 * p), dtype=dtype)
    xp[:, :, p:p + H, p:p + Wd] = xb.transpose(1, 0, 2, 3)
    g2 = np.ascontiguousarray(gb.transpose(1, 0, 2, 3)).reshape(D, -1)
    gxp = np.zeros_like(xp) if need_x else None
    grad_W = np.zeros((D, K, K, C), dtype=dtype)
    for i in range(K):
        for j in range(K):
            xs = xp[:, :, i:i + H, j:j + Wd].reshape(C, -1)
            grad_W[:, i, j, :] = g2 @ xs.T
            if need_x:
                gxp[:, :, i:i + H, j:j + Wd] += (W[:, i, j, :].T @ g2).reshape(C, N, H, Wd)
    grad_b = g2.sum(axis=1)
    if not need_x:
        return None, grad_W, grad_b
    grad_x = np.ascontiguousarray(gxp[:, :, p:p + H, p:p + Wd].transpose(1, 0, 2, 3))
    return (grad_x[0] if single else grad_x), grad_W, grad_b


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def relu_backward(grad_y: np.ndarray, x: np.ndarray) -> np.ndarray:
    # subgradient at exactly 0 is 0
    return np.where(x > 0, grad_y, 0).astype(grad_y.dtype, copy=False)


def _pad_even(x: np.ndarray) -> np.ndarray:
    H, W = x.shape[-2:]
    ph, pw = H % 2, W % 2
    if ph or pw:
        pad = [(0, 0)] * (x.ndim - 2) + [(0, ph), (0, pw)]
        x = np.pad(x, pad, mode="edge")
    return x


def avgpool2(x: np.ndarray) -> np.ndarray:
    """Non-overlapping 2x2 mean; odd trailing row/col is edge-replicated first."""
    H, W = x.shape[-2:]
    if H < 2 or W < 2:
        raise InvalidArgument(f"avgpool2 needs H,W >= 2, got {H}x{W}")
    xe = _pad_even(x)
    He, We = xe.shape[-2:]
    lead = xe.shape[:-2]
    return xe.reshape(*lead, He // 2, 2, We // 2, 2).mean(axis=(-3, -1))


def avgpool2_backward(grad_y: np.ndarray, in_shape: Sequence[int]) -> np.ndarray:
    H, W = in_shape[-2:]
    g = np.repeat(np.repeat(grad_y, 2, axis=-2), 2, axis=-1) * 0.25
    if H % 2:
        # replicated row contributed to the last real row
        g[..., H - 1, :] += g[..., H, :]
    if W % 2:
        g[..., :, W - 1] += g[..., :, W]
    return np.ascontiguousarray(g[..., :H, :W])


def interp_matrix(n_in: int, n_out: int, dtype=np.float64) -> np.ndarray:
    """Align-corners linear interpolation as an ``(n_out, n_in)`` matrix."""
    A = np.zeros((n_out, n_in), dtype=dtype)
    if n_in == 1 or n_out == 1:
        A[:, 0] = 1.0
        return A
    pos = np.arange(n_out) * ((n_in - 1) / (n_out - 1))
    lo = np.minimum(np.floor(pos).astype(int), n_in - 2)
    frac = pos - lo
    rows = np.arange(n_out)
    A[rows, lo] = 1.0 - frac
    A[rows, lo + 1] += frac
    return A


def bilinear_upsample(x: np.ndarray, H: int, W: int) -> np.ndarray:
    h, w = x.shape[-2:]
    if H < h or W < w:
        raise InvalidArgument(f"cannot upsample {h}x{w} to smaller {H}x{W}")
    Ay = interp_matrix(h, H, x.dtype)
    Ax = interp_matrix(w, W, x.dtype)
    return Ay @ x @ Ax.T


def bilinear_upsample_backward(grad_y: np.ndarray, h: int, w: int) -> np.ndarray:
    H, W = grad_y.shape[-2:]
    Ay = interp_matrix(h, H, grad_y.dtype)
    Ax = interp_matrix(w, W, grad_y.dtype)
    return Ay.T @ grad_y @ Ax


def sigmoid(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    if not np.issubdtype(x.dtype, np.floating):
        x = x.astype(np.float64)
    # overflow-free form of 1/(1+exp(-x))
    return np.exp(-np.logaddexp(0, -x)).astype(x.dtype, copy=False)


def sigmoid_backward(grad_y: np.ndarray, y: np.ndarray) -> np.ndarray:
    return grad_y * y * (1 - y)


def concat_channels(xs: Sequence[np.ndarray]) -> np.ndarray:
    if not xs:
        raise InvalidArgument("nothing to concatenate")
    spatial = {x.shape[-2:] for x in xs}
    lead = {x.shape[:-3] for x in xs}
    if len(spatial) != 1 or len(lead) != 1:
        raise InvalidArgument(f"mismatched shapes: {[x.shape for x in xs]}")
    return np.concatenate(xs, axis=-3)


def split_channels(grad: np.ndarray, sizes: Sequence[int]) -> list[np.ndarray]:
    """Backward of ``concat_channels``: slice the gradient per input."""
    if sum(sizes) != grad.shape[-3]:
        raise InvalidArgument(f"sizes {list(sizes)} do not sum to {grad.shape[-3]}")
    cuts = np.cumsum(sizes)[:-1]
    return np.split(grad, cuts, axis=-3)


def global_norm(grads: Sequence[np.ndarray]) -> float:
    return float(np.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads)))


def clip_gradients(grads: Sequence[np.ndarray], max_norm: float) -> list[np.ndarray]:
    """Rescale so the global L2 norm is at most ``max_norm``."""
    if not max_norm > 0:
        raise InvalidArgument(f"max_norm must be positive, got {max_norm}")
    norm = global_norm(grads)
    if norm <= max_norm:
        return [g.copy() for g in grads]
    scale = max_norm / norm
    return [(g * scale).astype(g.dtype, copy=False) for g in grads]


def sgd_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], lr: float,
             weight_decay: float = 0.0,
             exempt: Sequence[bool] | None = None) -> list[np.ndarray]:
    """Plain SGD with L2 decay: ``p - lr * (g + wd * p)``.

    ``exempt[i]`` marks tensors (biases) that skip weight decay.
    """
    if len(params) != len(grads):
        raise InvalidArgument(f"{len(params)} params but {len(grads)} grads")
    if not lr > 0:
        raise InvalidArgument(f"lr must be positive, got {lr}")
    if exempt is None:
        exempt = [False] * len(params)
    out = []
    for p, g, skip in zip(params, grads, exempt):
        p = np.asarray(p)
        g = np.asarray(g)
        if p.shape != g.shape:
            raise InvalidArgument(f"param shape {p.shape} != grad shape {g.shape}")
        step = g if skip else g + weight_decay * p
        out.append((p - lr * step).astype(p.dtype, copy=False))
    return out
