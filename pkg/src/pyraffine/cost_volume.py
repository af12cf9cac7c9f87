"""Constrained correlation volume: rectified cosine scores over a square
offset window around each source pixel, with a per-level shrinking radius."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .features import DescriptorMap
from .geometry import ShapeError

DEFAULT_BYTE_BUDGET = 512 * 1024 * 1024


class BudgetError(ValueError):
    """Requested volume exceeds the configured byte budget."""


def window_radius(window_ratio: float, height: int, width: int) -> int:
    """Realized search radius: round-half-up of ratio * max(H, W), floor 1."""
    r = int(np.floor(window_ratio * max(height, width) + 0.5))
    return max(r, 1)


@dataclass
class CostVolume:
    """scores[y, x, oy, ox] is the rectified cosine at offset
    (dx, dy) = (ox - radius, oy - radius) from pixel (x, y)."""

    scores: np.ndarray  # (H, W, 2r+1, 2r+1)
    radius: int

    def __post_init__(self):
        k = 2 * self.radius + 1
        if self.scores.ndim != 4 or self.scores.shape[2:] != (k, k):
            raise ShapeError(
                f"scores must be (H, W, {k}, {k}), got {self.scores.shape}")

    @property
    def height(self) -> int:
        return self.scores.shape[0]

    @property
    def width(self) -> int:
        return self.scores.shape[1]

    def channels(self) -> np.ndarray:
        """Volume flattened to (K*K, H, W) with offsets in (dy, dx) lex order."""
        h, w = self.height, self.width
        k = 2 * self.radius + 1
        return self.scores.reshape(h, w, k * k).transpose(2, 0, 1)


def build_constrained(src: DescriptorMap, tgt: DescriptorMap,
                      window_ratio: float,
                      byte_budget: int = DEFAULT_BYTE_BUDGET) -> CostVolume:
    """Rectified cosine scores max(0, tgt(i) . src(j)) for j in the window
    around i; offsets landing outside the counterpart image score exactly 0.

    Note the orientation: pixel i indexes the anchor map `tgt` and the window
    offsets index into `src`, so best matches point from anchor pixels into
    the source.
    """
    if not (src.normalized and tgt.normalized):
        raise ValueError("cost volume requires L2-normalized descriptor maps")
    if (src.height, src.width, src.depth) != (tgt.height, tgt.width, tgt.depth):
        raise ShapeError(
            f"descriptor shapes differ: {src.data.shape} vs {tgt.data.shape}")
    h, w = src.height, src.width
    r = window_radius(window_ratio, h, w)
    k = 2 * r + 1
    need = h * w * k * k * 8
    if need > byte_budget:
        raise BudgetError(
            f"volume needs {need} bytes, budget is {byte_budget}")
    a = tgt.data
    b = src.data
    scores = np.zeros((h, w, k, k))
    for oy in range(-r, r + 1):
        ys0 = max(0, -oy)
        ys1 = min(h, h - oy)
        if ys0 >= ys1:
            continue
        for ox in range(-r, r + 1):
            xs0 = max(0, -ox)
            xs1 = min(w, w - ox)
            if xs0 >= xs1:
                continue
            av = a[ys0:ys1, xs0:xs1]
            bv = b[ys0 + oy:ys1 + oy, xs0 + ox:xs1 + ox]
            # accumulate depth sequentially so every score is bit-identical
            # to a scalar left-to-right dot product
            dot = av[..., 0] * bv[..., 0]
            for d in range(1, av.shape[-1]):
                dot = dot + av[..., d] * bv[..., d]
            scores[ys0:ys1, xs0:xs1, oy + r, ox + r] = np.maximum(dot, 0.0)
    return CostVolume(scores, r)


def _valid_offsets(h: int, w: int, r: int) -> np.ndarray:
    """(H, W, 2r+1, 2r+1) mask of offsets whose match pixel is in bounds."""
    ys, xs = np.mgrid[0:h, 0:w]
    offs = np.arange(-r, r + 1)
    oky = (ys[:, :, None] + offs[None, None, :] >= 0) & \
          (ys[:, :, None] + offs[None, None, :] < h)
    okx = (xs[:, :, None] + offs[None, None, :] >= 0) & \
          (xs[:, :, None] + offs[None, None, :] < w)
    return oky[:, :, :, None] & okx[:, :, None, :]


def best_forward_map(c: CostVolume) -> np.ndarray:
    """(H, W, 2) array of best-match pixel coords (x, y) for every pixel.
    Only in-bounds offsets compete; ties break to the smallest (dy, dx)."""
    h, w = c.height, c.width
    k = 2 * c.radius + 1
    masked = np.where(_valid_offsets(h, w, c.radius), c.scores, -1.0)
    idx = np.argmax(masked.reshape(h, w, k * k), axis=-1)
    oy = idx // k - c.radius
    ox = idx % k - c.radius
    ys, xs = np.mgrid[0:h, 0:w]
    return np.stack([xs + ox, ys + oy], axis=-1)


def best_forward(c: CostVolume, i: tuple[int, int]) -> tuple[int, int]:
    """Best in-window match for pixel i = (x, y); ties break to the smallest
    (dy, dx) offset."""
    x, y = i
    r = c.radius
    best = -1.0
    out = (x, y)
    for oy in range(-r, r + 1):
        for ox in range(-r, r + 1):
            jy, jx = y + oy, x + ox
            if 0 <= jy < c.height and 0 <= jx < c.width:
                s = c.scores[y, x, oy + r, ox + r]
                if s > best:
                    best = s
                    out = (jx, jy)
    return out


def best_backward_map(c: CostVolume) -> np.ndarray:
    """(H, W, 2) array mapping each target pixel j to the source pixel m
    maximizing C(m, j - m); ties break to the smallest (dy, dx) offset."""
    h, w = c.height, c.width
    r = c.radius
    best = np.full((h, w), -1.0)
    bx = np.zeros((h, w), dtype=np.int64)
    by = np.zeros((h, w), dtype=np.int64)
    ys, xs = np.mgrid[0:h, 0:w]
    for oy in range(-r, r + 1):
        for ox in range(-r, r + 1):
            # source m = j - (ox, oy); valid where m is in bounds
            my = ys - oy
            mx = xs - ox
            valid = (my >= 0) & (my < h) & (mx >= 0) & (mx < w)
            s = np.where(
                valid,
                c.scores[np.clip(my, 0, h - 1), np.clip(mx, 0, w - 1),
                         oy + r, ox + r],
                -1.0)
            better = s > best
            best = np.where(better, s, best)
            bx = np.where(better, mx, bx)
            by = np.where(better, my, by)
    return np.stack([bx, by], axis=-1)


def best_backward(c: CostVolume, j: tuple[int, int]) -> tuple[int, int]:
    """Best source pixel for target pixel j under the transpose scan."""
    x, y = j
    r = c.radius
    best = -1.0
    out = (x, y)
    for oy in range(-r, r + 1):
        for ox in range(-r, r + 1):
            my, mx = y - oy, x - ox
            if 0 <= my < c.height and 0 <= mx < c.width:
                s = c.scores[my, mx, oy + r, ox + r]
                if s > best:
                    best = s
                    out = (mx, my)
    return out
