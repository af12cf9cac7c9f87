"""Weak supervision from match consistency: forward/backward agreement over
the constrained cost volume, object-mask restriction, and robust global
affine initialization via MSAC."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cost_volume import CostVolume, best_backward_map, best_forward_map
from .geometry import Affine2D, AffineField, ShapeError

MIN_SAMPLE_FLOOR = 6
MSAC_DEFAULT_ITERATIONS = 500
MSAC_DEFAULT_THRESHOLD = 2.0


class DegenerateConfigurationError(ValueError):
    """Too few or collinear correspondences for an affine fit."""


@dataclass
class ObjectMask:
    """Boolean (H, W) restriction of where supervision samples may anchor."""

    mask: np.ndarray

    def __post_init__(self):
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.mask.ndim != 2:
            raise ShapeError(f"mask must be (H, W), got {self.mask.shape}")
        if not self.mask.any():
            raise ValueError("mask must contain at least one true pixel")

    @staticmethod
    def from_bbox(height: int, width: int, x0: int, y0: int,
                  x1: int, y1: int) -> "ObjectMask":
        """Lower a bounding box (inclusive corners) to a rectangular mask."""
        m = np.zeros((height, width), dtype=bool)
        m[max(y0, 0):y1 + 1, max(x0, 0):x1 + 1] = True
        return ObjectMask(m)

    @staticmethod
    def full(height: int, width: int) -> "ObjectMask":
        return ObjectMask(np.ones((height, width), dtype=bool))


@dataclass
class SampleSet:
    """Consistency-verified (pixel, match) pairs for one pyramid level.

    points and matches are (N, 2) integer (x, y) arrays in the cost volume's
    pixel frame; displacements() gives matches - points."""

    level: int
    points: np.ndarray
    matches: np.ndarray
    height: int
    width: int

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.int64).reshape(-1, 2)
        self.matches = np.asarray(self.matches, dtype=np.int64).reshape(-1, 2)
        if self.points.shape != self.matches.shape:
            raise ShapeError("points and matches must have equal shapes")

    def __len__(self) -> int:
        return self.points.shape[0]

    def displacements(self) -> np.ndarray:
        return (self.matches - self.points).astype(np.float64)

    def subset(self, keep: np.ndarray) -> "SampleSet":
        return SampleSet(self.level, self.points[keep], self.matches[keep],
                         self.height, self.width)

    def dump(self, path) -> None:
        """Diagnostic text dump: header then one `i_x i_y f_x f_y` per line."""
        with open(path, "w") as fh:
            fh.write(f"# level {self.level} count {len(self)}\n")
            for (ix, iy), (fx, fy) in zip(self.points, self.matches):
                fh.write(f"{ix} {iy} {fx} {fy}\n")


def generate_samples(c: CostVolume, mask: ObjectMask | None = None,
                     level: int = 1) -> SampleSet:
    """Keep pixel i with forward match f_i iff the backward best match of f_i
    is exactly i; optionally restricted to masked pixels."""
    h, w = c.height, c.width
    if mask is not None and mask.mask.shape != (h, w):
        raise ShapeError(
            f"mask shape {mask.mask.shape} does not match volume {(h, w)}")
    fwd = best_forward_map(c)
    bwd = best_backward_map(c)
    ys, xs = np.mgrid[0:h, 0:w]
    back = bwd[fwd[..., 1], fwd[..., 0]]
    consistent = (back[..., 0] == xs) & (back[..., 1] == ys)
    if mask is not None:
        consistent &= mask.mask
    sel_y, sel_x = np.nonzero(consistent)  # row-major merge order
    points = np.stack([sel_x, sel_y], axis=-1)
    matches = fwd[sel_y, sel_x]
    return SampleSet(level, points, matches, h, w)


def _solve_affine(src: np.ndarray, dst: np.ndarray) -> np.ndarray | None:
    """Least-squares affine params mapping src points to dst; None if the
    source configuration is degenerate (collinear)."""
    n = src.shape[0]
    a = np.concatenate([src, np.ones((n, 1))], axis=1)
    # collinearity check via rank of the design matrix
    if np.linalg.matrix_rank(a, tol=1e-9) < 3:
        return None
    sol, _, _, _ = np.linalg.lstsq(a, dst, rcond=None)
    # sol is (3, 2): columns are (x', y') coefficients over (x, y, 1)
    return np.array([sol[0, 0], sol[1, 0], sol[2, 0],
                     sol[0, 1], sol[1, 1], sol[2, 1]])


def _residuals(params: np.ndarray, src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    px = params[0] * src[:, 0] + params[1] * src[:, 1] + params[2]
    py = params[3] * src[:, 0] + params[4] * src[:, 1] + params[5]
    return np.hypot(px - dst[:, 0], py - dst[:, 1])


def msac_affine(samples: SampleSet,
                iterations: int = MSAC_DEFAULT_ITERATIONS,
                inlier_threshold_px: float = MSAC_DEFAULT_THRESHOLD,
                seed: int = 0) -> tuple[Affine2D, SampleSet]:
    """Robust global affine via MSAC: truncated-squared-residual scoring over
    random minimal hypotheses, then exact least-squares refit on the inliers.
    """
    n = len(samples)
    if n < 3:
        raise DegenerateConfigurationError(f"need >= 3 samples, got {n}")
    src = samples.points.astype(np.float64)
    dst = samples.matches.astype(np.float64)
    rng = np.random.default_rng(seed)
    tau2 = inlier_threshold_px ** 2
    best_score = np.inf
    best_params = None
    for _ in range(iterations):
        pick = rng.choice(n, size=3, replace=False)
        params = _solve_affine(src[pick], dst[pick])
        if params is None:
            continue
        r2 = _residuals(params, src, dst) ** 2
        score = float(np.minimum(r2, tau2).sum())
        if score < best_score:
            best_score = score
            best_params = params
    if best_params is None:
        raise DegenerateConfigurationError("all sampled minimal sets collinear")
    inliers = _residuals(best_params, src, dst) < inlier_threshold_px
    if inliers.sum() >= 3:
        refit = _solve_affine(src[inliers], dst[inliers])
        if refit is not None:
            best_params = refit
            inliers = _residuals(best_params, src, dst) < inlier_threshold_px
    return Affine2D.from_params(best_params), samples.subset(inliers)


def filter_samples_by_field(samples: SampleSet, field: AffineField,
                            radius_px: float) -> SampleSet:
    """Keep samples whose match lies within radius_px of the field-predicted
    location of the sample pixel."""
    src = samples.points
    p = field.params[np.clip(src[:, 1], 0, field.height - 1),
                     np.clip(src[:, 0], 0, field.width - 1)]
    x = src[:, 0].astype(np.float64)
    y = src[:, 1].astype(np.float64)
    px = p[:, 0] * x + p[:, 1] * y + p[:, 2]
    py = p[:, 3] * x + p[:, 4] * y + p[:, 5]
    d = np.hypot(px - samples.matches[:, 0], py - samples.matches[:, 1])
    return samples.subset(d <= radius_px)
