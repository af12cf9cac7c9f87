"""Affine transform algebra, dense fields, bilinear upsampling and warping.

All transforms use the parameter order (a11, a12, tx, a21, a22, ty): a point
(x, y) maps to (a11*x + a12*y + tx, a21*x + a22*y + ty).  Pixel coordinates
are zero-based with pixel centers at integer coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PARAM_COUNT = 6
IDENTITY_PARAMS = np.array([1.0, 0.0, 0.0, 0.0, 1.0, 0.0])


class ShapeError(ValueError):
    """Raised when array dimensions do not match a contract."""


@dataclass(frozen=True)
class Affine2D:
    """A single 2x3 affine map; linear part dimensionless, translation in px."""

    a11: float
    a12: float
    tx: float
    a21: float
    a22: float
    ty: float

    def __post_init__(self):
        if not np.all(np.isfinite(self.params)):
            raise ValueError("affine parameters must be finite")

    @property
    def params(self) -> np.ndarray:
        return np.array([self.a11, self.a12, self.tx, self.a21, self.a22, self.ty])

    @staticmethod
    def from_params(p) -> "Affine2D":
        p = np.asarray(p, dtype=float)
        if p.shape != (PARAM_COUNT,):
            raise ShapeError(f"expected 6 parameters, got shape {p.shape}")
        return Affine2D(*p.tolist())

    @staticmethod
    def identity() -> "Affine2D":
        return Affine2D(1.0, 0.0, 0.0, 0.0, 1.0, 0.0)

    @staticmethod
    def translation(tx: float, ty: float) -> "Affine2D":
        return Affine2D(1.0, 0.0, tx, 0.0, 1.0, ty)

    def matrix(self) -> np.ndarray:
        """3x3 homogeneous augmentation."""
        return np.array([
            [self.a11, self.a12, self.tx],
            [self.a21, self.a22, self.ty],
            [0.0, 0.0, 1.0],
        ])


def apply_affine(t: Affine2D, p) -> tuple[float, float]:
    """Map point p = (x, y) through t in homogeneous coordinates."""
    x, y = float(p[0]), float(p[1])
    return (t.a11 * x + t.a12 * y + t.tx, t.a21 * x + t.a22 * y + t.ty)


def compose(outer: Affine2D, inner: Affine2D) -> Affine2D:
    """Affine whose 3x3 augmentation is M(outer) @ M(inner)."""
    p = compose_params(outer.params, inner.params)
    return Affine2D.from_params(p)


def invert(t: Affine2D) -> Affine2D:
    det = t.a11 * t.a22 - t.a12 * t.a21
    if abs(det) < 1e-300:
        raise ValueError("affine linear part is singular")
    m = np.linalg.inv(t.matrix())
    return Affine2D(m[0, 0], m[0, 1], m[0, 2], m[1, 0], m[1, 1], m[1, 2])


def compose_params(outer: np.ndarray, inner: np.ndarray) -> np.ndarray:
    """Vectorized composition of (..., 6) parameter arrays (outer applied last)."""
    a11, a12, atx = outer[..., 0], outer[..., 1], outer[..., 2]
    a21, a22, aty = outer[..., 3], outer[..., 4], outer[..., 5]
    b11, b12, btx = inner[..., 0], inner[..., 1], inner[..., 2]
    b21, b22, bty = inner[..., 3], inner[..., 4], inner[..., 5]
    return np.stack([
        a11 * b11 + a12 * b21,
        a11 * b12 + a12 * b22,
        a11 * btx + a12 * bty + atx,
        a21 * b11 + a22 * b21,
        a21 * b12 + a22 * b22,
        a21 * btx + a22 * bty + aty,
    ], axis=-1)


@dataclass
class AffineField:
    """Dense per-pixel affine field, stored as an (H, W, 6) float64 array."""

    params: np.ndarray

    def __post_init__(self):
        self.params = np.asarray(self.params, dtype=np.float64)
        if self.params.ndim != 3 or self.params.shape[2] != PARAM_COUNT:
            raise ShapeError(f"field params must be (H, W, 6), got {self.params.shape}")
        if not np.all(np.isfinite(self.params)):
            raise ValueError("field parameters must be finite")

    @property
    def height(self) -> int:
        return self.params.shape[0]

    @property
    def width(self) -> int:
        return self.params.shape[1]

    @staticmethod
    def identity(height: int, width: int) -> "AffineField":
        p = np.broadcast_to(IDENTITY_PARAMS, (height, width, PARAM_COUNT)).copy()
        return AffineField(p)

    @staticmethod
    def constant(height: int, width: int, t: Affine2D) -> "AffineField":
        p = np.broadcast_to(t.params, (height, width, PARAM_COUNT)).copy()
        return AffineField(p)

    def cell(self, y: int, x: int) -> Affine2D:
        return Affine2D.from_params(self.params[y, x])


@dataclass
class GridAffineField:
    """Level-k quad-tree field: (2^{k-1})^2 cells over an image."""

    level: int
    params: np.ndarray  # (G, G, 6)
    image_height: int
    image_width: int

    def __post_init__(self):
        if self.level < 1:
            raise ValueError("level must be >= 1")
        g = self.grid_size
        self.params = np.asarray(self.params, dtype=np.float64)
        if self.params.shape != (g, g, PARAM_COUNT):
            raise ShapeError(
                f"level {self.level} grid must be ({g}, {g}, 6), got {self.params.shape}")
        if not np.all(np.isfinite(self.params)):
            raise ValueError("grid parameters must be finite")

    @property
    def grid_size(self) -> int:
        return 2 ** (self.level - 1)

    @staticmethod
    def identity(level: int, image_height: int, image_width: int) -> "GridAffineField":
        g = 2 ** (level - 1)
        p = np.broadcast_to(IDENTITY_PARAMS, (g, g, PARAM_COUNT)).copy()
        return GridAffineField(level, p, image_height, image_width)


def compose_fields(levels: list[AffineField]) -> AffineField:
    """Per-pixel composition in list order; first entry is outermost."""
    if not levels:
        raise ValueError("compose_fields requires at least one field")
    first = levels[0]
    for f in levels[1:]:
        if (f.height, f.width) != (first.height, first.width):
            raise ShapeError(
                f"field shape {(f.height, f.width)} does not match "
                f"{(first.height, first.width)}")
    out = levels[0].params
    for f in levels[1:]:
        out = compose_params(out, f.params)
    return AffineField(np.array(out))


def grid_interp_axis(n_cells: int, length: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Bilinear weights from cell centers to pixel positions along one axis.

    Returns (i0, i1, w1) so that value(p) = (1-w1)*cell[i0] + w1*cell[i1].
    Coordinates are clamped to the outermost cell centers.
    """
    pos = (np.arange(length) + 0.5) * n_cells / length - 0.5
    pos = np.clip(pos, 0.0, n_cells - 1.0)
    i0 = np.minimum(np.floor(pos).astype(np.int64), max(n_cells - 2, 0))
    i1 = np.minimum(i0 + 1, n_cells - 1)
    w1 = pos - i0
    return i0, i1, w1


def grid_to_dense(g: GridAffineField) -> AffineField:
    """Bilinearly upsample the 6 grid parameters to every image pixel."""
    n = g.grid_size
    h, w = g.image_height, g.image_width
    ry0, ry1, wy = grid_interp_axis(n, h)
    cx0, cx1, wx = grid_interp_axis(n, w)
    p = g.params
    top = (p[ry0][:, cx0] * (1 - wx)[None, :, None]
           + p[ry0][:, cx1] * wx[None, :, None])
    bot = (p[ry1][:, cx0] * (1 - wx)[None, :, None]
           + p[ry1][:, cx1] * wx[None, :, None])
    dense = top * (1 - wy)[:, None, None] + bot * wy[:, None, None]
    return AffineField(dense)


def bilinear_sample(img: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Sample img (H, W[, C]) at float coords; out-of-bounds contributes zero."""
    squeeze = img.ndim == 2
    if squeeze:
        img = img[:, :, None]
    h, w, c = img.shape
    x0 = np.floor(xs)
    y0 = np.floor(ys)
    wx = xs - x0
    wy = ys - y0
    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)
    out = np.zeros(xs.shape + (c,), dtype=img.dtype)
    for dy, dx, wgt in (
        (0, 0, (1 - wx) * (1 - wy)),
        (0, 1, wx * (1 - wy)),
        (1, 0, (1 - wx) * wy),
        (1, 1, wx * wy),
    ):
        xi = x0 + dx
        yi = y0 + dy
        valid = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
        vals = img[np.clip(yi, 0, h - 1), np.clip(xi, 0, w - 1)]
        out += np.where(valid[..., None], wgt[..., None] * vals, 0.0)
    return out[..., 0] if squeeze else out


def field_points(field: AffineField) -> tuple[np.ndarray, np.ndarray]:
    """Mapped coordinates (X', Y') for every pixel of the field's grid."""
    h, w = field.height, field.width
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    p = field.params
    xp = p[..., 0] * xs + p[..., 1] * ys + p[..., 2]
    yp = p[..., 3] * xs + p[..., 4] * ys + p[..., 5]
    return xp, yp


def warp_image(img: np.ndarray, field: AffineField) -> np.ndarray:
    """output(i) = bilinear sample of img at the field-mapped location of i."""
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape[:2]
    if (field.height, field.width) != (h, w):
        raise ShapeError(
            f"field dims {(field.height, field.width)} do not match image {(h, w)}")
    xp, yp = field_points(field)
    return bilinear_sample(img, xp, yp)


def flow_from_field(field: AffineField) -> np.ndarray:
    """Per-pixel displacement (H, W, 2) with (dx, dy) = T_i . i - i."""
    h, w = field.height, field.width
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    xp, yp = field_points(field)
    return np.stack([xp - xs, yp - ys], axis=-1)


def field_at(field: AffineField, x: float, y: float) -> Affine2D:
    """Affine at a continuous position, bilinearly interpolating parameters."""
    h, w = field.height, field.width
    xc = min(max(x, 0.0), w - 1.0)
    yc = min(max(y, 0.0), h - 1.0)
    x0 = min(int(np.floor(xc)), max(w - 2, 0))
    y0 = min(int(np.floor(yc)), max(h - 2, 0))
    x1 = min(x0 + 1, w - 1)
    y1 = min(y0 + 1, h - 1)
    fx = xc - x0
    fy = yc - y0
    p = (field.params[y0, x0] * (1 - fx) * (1 - fy)
         + field.params[y0, x1] * fx * (1 - fy)
         + field.params[y1, x0] * (1 - fx) * fy
         + field.params[y1, x1] * fx * fy)
    return Affine2D.from_params(p)


def resize_bilinear(arr: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Center-aligned, edge-clamped bilinear resize of (H, W[, C]) data."""
    squeeze = arr.ndim == 2
    if squeeze:
        arr = arr[:, :, None]
    h, w = arr.shape[:2]
    i0y, i1y, wy = grid_interp_axis(h, out_h)
    i0x, i1x, wx = grid_interp_axis(w, out_w)
    top = (arr[i0y][:, i0x] * (1 - wx)[None, :, None]
           + arr[i0y][:, i1x] * wx[None, :, None])
    bot = (arr[i1y][:, i0x] * (1 - wx)[None, :, None]
           + arr[i1y][:, i1x] * wx[None, :, None])
    out = top * (1 - wy)[:, None, None] + bot * wy[:, None, None]
    return out[..., 0] if squeeze else out


def resize_mask_nearest(mask: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    h, w = mask.shape
    ys = np.minimum(((np.arange(out_h) + 0.5) * h / out_h).astype(np.int64), h - 1)
    xs = np.minimum(((np.arange(out_w) + 0.5) * w / out_w).astype(np.int64), w - 1)
    return mask[ys][:, xs]


def resize_field(field: AffineField, out_h: int, out_w: int) -> AffineField:
    """Rescale a field to new image dims (uniform scale; translation rescaled).

    Assumes the resize preserves aspect ratio; the linear part is unchanged
    and translations scale by the resolution ratio.
    """
    in_h, in_w = field.height, field.width
    out = resize_bilinear(field.params, out_h, out_w)
    return AffineField(rescale_params(out, in_h, in_w, out_h, out_w))


def rescale_params(params: np.ndarray, in_h: int, in_w: int,
                   out_h: int, out_w: int) -> np.ndarray:
    """Conjugate (..., 6) affine params from an in_h x in_w pixel frame to an
    out_h x out_w frame (exact, including the half-pixel center offset)."""
    sy = out_h / in_h
    sx = out_w / in_w
    up = np.array([sx, 0.0, (sx - 1) / 2, 0.0, sy, (sy - 1) / 2])
    down = np.array([1 / sx, 0.0, -(sx - 1) / (2 * sx),
                     0.0, 1 / sy, -(sy - 1) / (2 * sy)])
    return compose_params(up, compose_params(params, down))
