"""Classical binarisation references: Otsu, Sauvola, and a Howe-style graph cut.

Ink is dark, so every method labels low intensities as foreground.
"""

from __future__ import annotations

import warnings
from collections import deque
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument
from .features import canny

# unaries are scaled to 0-255 intensity units so the Potts constant reads in gray levels
HOWE_SCALE = 255.0


def otsu_threshold(img: np.ndarray):
    """Histogram level maximising between-class variance; ``None`` if the image is constant.

    Ties go to the smallest level. Computed with exact integer arithmetic.
    """
    levels = np.clip(np.round(np.asarray(img, dtype=np.float64) * 255), 0, 255).astype(np.int64)
    hist = np.bincount(levels.ravel(), minlength=256).tolist()
    N = sum(hist)
    S = sum(i * h for i, h in enumerate(hist))
    best_t, best_num, best_den = None, 0, 1
    n0 = s0 = 0
    for t in range(255):
        n0 += hist[t]
        s0 += t * hist[t]
        n1 = N - n0
        if n0 == 0 or n1 == 0:
            continue
        # between-class variance * N^2 = (N*s0 - n0*S)^2 / (n0*n1)
        num = (N * s0 - n0 * S) ** 2
        den = n0 * n1
        if best_t is None or num * best_den > best_num * den:
            best_t, best_num, best_den = t, num, den
    if best_t is None or best_num == 0:
        return None
    return best_t


def otsu(img: np.ndarray) -> np.ndarray:
    t = otsu_threshold(img)
    levels = np.clip(np.round(np.asarray(img, dtype=np.float64) * 255), 0, 255)
    if t is None:
        warnings.warn("constant image: Otsu threshold undefined, returning background",
                      RuntimeWarning, stacklevel=2)
        return np.zeros(levels.shape, np.uint8)
    return (levels <= t).astype(np.uint8)


def _box_sum(integral: np.ndarray, window: int, H: int, W: int) -> np.ndarray:
    return (integral[window:window + H, window:window + W] - integral[:H, window:window + W]
            - integral[window:window + H, :W] + integral[:H, :W])


def sauvola_threshold(img: np.ndarray, window: int = 31, k: float = 0.2,
                      R: float = 0.5) -> np.ndarray:
    """Per-pixel threshold ``m * (1 + k (s / R - 1))`` from integral images."""
    if window < 1 or window % 2 == 0:
        raise InvalidArgument(f"window must be a positive odd integer, got {window}")
    img = np.asarray(img, dtype=np.float64)
    H, W = img.shape
    r = window // 2
    c = float(img.mean())
    x = np.pad(img - c, r, mode="edge")
    ii = np.zeros((H + 2 * r + 1, W + 2 * r + 1))
    ii2 = np.zeros_like(ii)
    ii[1:, 1:] = x.cumsum(0).cumsum(1)
    ii2[1:, 1:] = (x * x).cumsum(0).cumsum(1)
    n = window * window
    m = _box_sum(ii, window, H, W) / n
    var = _box_sum(ii2, window, H, W) / n - m * m
    s = np.sqrt(np.maximum(var, 0.0))
    m = m + c
    return m * (1 + k * (s / R - 1))


def sauvola(img: np.ndarray, window: int = 31, k: float = 0.2, R: float = 0.5) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    return (img <= sauvola_threshold(img, window, k, R)).astype(np.uint8)


def laplacian(img: np.ndarray) -> np.ndarray:
    """Five-point Laplacian with edge replication."""
    p = np.pad(np.asarray(img, dtype=np.float64), 1, mode="edge")
    return p[:-2, 1:-1] + p[2:, 1:-1] + p[1:-1, :-2] + p[1:-1, 2:] - 4 * p[1:-1, 1:-1]


@dataclass
class GridGraph:
    """s-t graph on a 4-connected pixel grid.

    ``source[p]`` is paid when p ends on the sink (background) side and
    ``sink[p]`` when p ends on the source (foreground) side. ``right`` holds
    the symmetric capacity between (r, c) and (r, c+1); ``down`` between
    (r, c) and (r+1, c).
    """
    source: np.ndarray
    sink: np.ndarray
    right: np.ndarray
    down: np.ndarray

    def __post_init__(self):
        self.source = np.asarray(self.source, dtype=np.float64)
        self.sink = np.asarray(self.sink, dtype=np.float64)
        H, W = self.source.shape
        self.right = np.asarray(self.right, dtype=np.float64).reshape(H, max(W - 1, 0))
        self.down = np.asarray(self.down, dtype=np.float64).reshape(max(H - 1, 0), W)
        if self.sink.shape != (H, W):
            raise InvalidArgument("source and sink capacity shapes differ")
        for name in ("source", "sink", "right", "down"):
            if (getattr(self, name) < 0).any():
                raise InvalidArgument(f"negative {name} capacity")

    def energy(self, labels: np.ndarray) -> float:
        """Cut cost of a labelling (1 = source side)."""
        y = np.asarray(labels).astype(bool)
        e = self.sink[y].sum() + self.source[~y].sum()
        e += (self.right * (y[:, 1:] != y[:, :-1])).sum()
        e += (self.down * (y[1:, :] != y[:-1, :])).sum()
        return float(e)


class _Dinic:
    def __init__(self, n: int):
        self.n = n
        self.head = [-1] * n
        self.nxt: list[int] = []
        self.to: list[int] = []
        self.cap: list[float] = []

    def add(self, u: int, v: int, c_uv: float, c_vu: float = 0.0) -> None:
        for a, b, c in ((u, v, c_uv), (v, u, c_vu)):
            self.to.append(b)
            self.cap.append(c)
            self.nxt.append(self.head[a])
            self.head[a] = len(self.to) - 1

    def _bfs(self, s: int, t: int, eps: float):
        level = [-1] * self.n
        level[s] = 0
        q = deque([s])
        head, nxt, to, cap = self.head, self.nxt, self.to, self.cap
        while q:
            u = q.popleft()
            e = head[u]
            while e != -1:
                v = to[e]
                if level[v] < 0 and cap[e] > eps:
                    level[v] = level[u] + 1
                    q.append(v)
                e = nxt[e]
        return level if level[t] >= 0 else None

    def _augment(self, s: int, t: int, level, it, eps: float) -> float:
        """Find one shortest augmenting path with current-arc pointers; push its bottleneck."""
        to, cap, nxt = self.to, self.cap, self.nxt
        path: list[int] = []
        u = s
        while True:
            if u == t:
                f = min(cap[e] for e in path)
                for e in path:
                    cap[e] -= f
                    cap[e ^ 1] += f
                return f
            e = it[u]
            while e != -1:
                v = to[e]
                if cap[e] > eps and level[v] == level[u] + 1:
                    break
                e = nxt[e]
            it[u] = e
            if e == -1:
                if u == s:
                    return 0.0
                # dead end: retreat and skip the arc that led here
                level[u] = -1
                back = path.pop()
                u = to[back ^ 1]
                it[u] = nxt[it[u]]
                continue
            path.append(e)
            u = to[e]

    def run(self, s: int, t: int, eps: float) -> float:
        flow = 0.0
        while True:
            level = self._bfs(s, t, eps)
            if level is None:
                return flow
            it = list(self.head)
            while True:
                f = self._augment(s, t, level, it, eps)
                if f <= 0:
                    break
                flow += f

    def reachable(self, s: int, eps: float) -> list[bool]:
        seen = [False] * self.n
        seen[s] = True
        q = deque([s])
        while q:
            u = q.popleft()
            e = self.head[u]
            while e != -1:
                v = self.to[e]
                if not seen[v] and self.cap[e] > eps:
                    seen[v] = True
                    q.append(v)
                e = self.nxt[e]
        return seen


def max_flow(g: GridGraph):
    """Exact minimum s-t cut of a grid graph by shortest augmenting paths (Dinic).

    Returns ``(labels, flow)`` where ``labels`` is 1 for pixels reachable from
    the source in the final residual graph.
    """
    H, W = g.source.shape
    n = H * W
    src = g.source.ravel().copy()
    snk = g.sink.ravel().copy()
    # saturate the direct s->p->t paths first; only the excess of one side remains
    direct = np.minimum(src, snk)
    flow = float(direct.sum())
    src -= direct
    snk -= direct
    scale = max(float(src.max(initial=0)), float(snk.max(initial=0)),
                float(g.right.max(initial=0)), float(g.down.max(initial=0)), 1.0)
    eps = 1e-12 * scale
    S, T = n, n + 1
    net = _Dinic(n + 2)
    for p in np.nonzero(src > 0)[0].tolist():
        net.add(S, p, float(src[p]))
    for p in np.nonzero(snk > 0)[0].tolist():
        net.add(p, T, float(snk[p]))
    idx = np.arange(n).reshape(H, W)
    for a, b, c in zip(idx[:, :-1].ravel().tolist(), idx[:, 1:].ravel().tolist(),
                       g.right.ravel().tolist()):
        if c > 0:
            net.add(a, b, c, c)
    for a, b, c in zip(idx[:-1, :].ravel().tolist(), idx[1:, :].ravel().tolist(),
                       g.down.ravel().tolist()):
        if c > 0:
            net.add(a, b, c, c)
    flow += net.run(S, T, eps)
    seen = net.reachable(S, eps)
    labels = np.array(seen[:n], dtype=np.uint8).reshape(H, W)
    return labels, flow


def howe_graph(img: np.ndarray, c: float = 50.0, t_hi: float = 0.2, t_lo: float = 0.1,
               sigma: float = 1.0) -> GridGraph:
    """Graph whose minimum cut minimises the Laplacian/Canny Potts energy.

    Unaries: ``U(fg) = -L``, ``U(bg) = +L`` (in 0-255 units), so pixels darker
    than their neighbours lean towards ink. Pairwise: ``c`` between
    4-neighbours unless Canny marks either endpoint.
    """
    if c < 0:
        raise InvalidArgument(f"pairwise penalty must be non-negative, got {c}")
    L = laplacian(img) * HOWE_SCALE
    u_fg, u_bg = -L, L
    edges = canny(img, sigma=sigma, low=t_lo, high=t_hi).astype(bool)
    right = c * ~(edges[:, 1:] | edges[:, :-1])
    down = c * ~(edges[1:, :] | edges[:-1, :])
    # shift each pixel's unaries by their minimum: same minimiser, non-negative capacities
    m = np.minimum(u_fg, u_bg)
    return GridGraph(source=u_bg - m, sink=u_fg - m, right=right, down=down)


def howe(img: np.ndarray, c: float = 50.0, t_hi: float = 0.2, t_lo: float = 0.1) -> np.ndarray:
    labels, _ = max_flow(howe_graph(img, c, t_hi, t_lo))
    return labels
