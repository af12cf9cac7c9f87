"""Dense handcrafted descriptors: oriented-gradient histograms pooled at
multiple Gaussian scales, concatenated and L2-normalized per pixel.

Stands in for a learned backbone; externally computed feature maps can be
imported through the PFM1 format instead.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter

from . import formats
from .geometry import ShapeError

N_ORIENTATIONS = 8
BASE_SIGMA = 1.0
MIN_IMAGE_SIDE = 16

# ITU-R 601 luma weights for RGB inputs
LUMA = np.array([0.299, 0.587, 0.114])


@dataclass
class DescriptorMap:
    """Dense (H, W, D) descriptor array; normalized means unit per-pixel L2."""

    data: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 3:
            raise ShapeError(f"descriptor map must be (H, W, D), got {self.data.shape}")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def depth(self) -> int:
        return self.data.shape[2]


@dataclass
class LevelSpec:
    """Per-level extraction settings: pooling scales and search-window ratio."""

    level: int
    scale_indices: list[int] = field(default_factory=lambda: [0])
    window_ratio: float = 0.1

    def __post_init__(self):
        if not self.scale_indices:
            raise ValueError("scale_indices must be non-empty")
        if not (0.0 < self.window_ratio <= 1.0):
            raise ValueError(f"window_ratio must be in (0, 1], got {self.window_ratio}")


def to_luma(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 3:
        return img @ LUMA
    return img


def orientation_histograms(img: np.ndarray) -> np.ndarray:
    """Per-pixel magnitude-weighted hard assignment to 8 signed-angle bins."""
    gray = to_luma(img)
    gx = np.zeros_like(gray)
    gy = np.zeros_like(gray)
    gx[:, 1:-1] = (gray[:, 2:] - gray[:, :-2]) * 0.5
    gy[1:-1, :] = (gray[2:, :] - gray[:-2, :]) * 0.5
    mag = np.hypot(gx, gy)
    ang = np.arctan2(gy, gx)  # [-pi, pi]
    bins = np.floor((ang + np.pi) / (2 * np.pi / N_ORIENTATIONS)).astype(np.int64)
    bins = np.clip(bins, 0, N_ORIENTATIONS - 1)
    h, w = gray.shape
    hist = np.zeros((h, w, N_ORIENTATIONS))
    ys, xs = np.mgrid[0:h, 0:w]
    hist[ys, xs, bins] = mag
    return hist


def extract_handcrafted(img: np.ndarray, spec: LevelSpec) -> DescriptorMap:
    """Oriented-gradient histograms Gaussian-pooled at each scale in the spec,
    concatenated across scales, then L2-normalized per pixel."""
    img = np.asarray(img, dtype=np.float64)
    if min(img.shape[:2]) < MIN_IMAGE_SIDE:
        raise ValueError(
            f"image min side {min(img.shape[:2])} below {MIN_IMAGE_SIDE}")
    hist = orientation_histograms(img)
    pooled = []
    for s in spec.scale_indices:
        sigma = BASE_SIGMA * (2 ** s)
        pooled.append(gaussian_filter(hist, sigma=(sigma, sigma, 0), truncate=3.0))
    concat = np.concatenate(pooled, axis=2)
    return l2_normalize(DescriptorMap(concat))


def concat_levels(maps: list[DescriptorMap]) -> DescriptorMap:
    """Channel concatenation in list order; normalization left to the caller."""
    if not maps:
        raise ValueError("concat_levels requires at least one map")
    first = maps[0]
    for m in maps[1:]:
        if (m.height, m.width) != (first.height, first.width):
            raise ShapeError(
                f"map shape {(m.height, m.width)} does not match "
                f"{(first.height, first.width)}")
    if len(maps) == 1:
        return DescriptorMap(first.data.copy(), normalized=first.normalized)
    data = np.concatenate([m.data for m in maps], axis=2)
    return DescriptorMap(data, normalized=False)


def l2_normalize(m: DescriptorMap) -> DescriptorMap:
    """Scale each pixel vector to unit norm; zero vectors stay zero."""
    norms = np.linalg.norm(m.data, axis=2, keepdims=True)
    safe = np.where(norms > 0.0, norms, 1.0)
    return DescriptorMap(m.data / safe, normalized=True)


def save_map(m: DescriptorMap, path) -> None:
    formats.save_feature_map(path, m.data)


def load_map(path) -> DescriptorMap:
    data = formats.load_feature_map(path).astype(np.float64)
    norms = np.linalg.norm(data, axis=2)
    normalized = bool(np.all((norms == 0.0) | (np.abs(norms - 1.0) < 1e-5)))
    return DescriptorMap(data, normalized=normalized)
