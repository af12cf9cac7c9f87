"""Affine regressors over constrained cost volumes.

Grid-level: a small conv stack pooled to the level's 2^{k-1} x 2^{k-1} cell
grid with a zero-initialized 6-channel head, so the untrained network emits
exact identity fields.  Pixel-level: a two-stage encoder-decoder with skip
connections and the same residual-about-identity head.

The flattened cost volume is condensed into match-statistic features before
the first convolution: each pixel's best-match displacement (mutually
consistent with the backward best match, mirroring the supervision's
consistency check), products of that displacement with the coordinate
planes, peak-score statistics, and the coordinate planes themselves.
Spatial pooling of the product channels yields exactly the moments a
least-squares affine solve needs, so the pooled linear head can represent a
near-closed-form fit while the convolution stack learns to down-weight
matches that disagree with their neighbourhood.  The channel count is fixed,
so the network cost is independent of the search-window radius.
"""

from __future__ import annotations

import numpy as np
from scipy.ndimage import uniform_filter

from . import autodiff as ad
from . import formats
from .autodiff import Tensor
from .cost_volume import (CostVolume, _valid_offsets, best_backward_map,
                          best_forward_map)
from .geometry import AffineField, GridAffineField, ShapeError

GRID_WIDTHS = (32, 32, 64, 64)
GRID_STRIDES = (1, 2, 2, 1)
PIXEL_PRE_WIDTH = 16
PIXEL_ENC_WIDTHS = (32, 64)
FEAT_CHANNELS = 20

SUPPORT_RADIUS = 13
SUPPORT_TOL = 1.0
SUPPORT_SLACK = 0.35
SUPPORT_POW = 12
SUPPORT_ITERS = 4
SUPPORT_KEEP = 0.3

KIND_GRID = "grid"
KIND_PIXEL = "pixel"


class NetParams:
    """Named parameter blocks plus the metadata needed to rebuild the net."""

    def __init__(self, kind: str, level: int, in_channels: int, seed: int,
                 blocks: dict[str, Tensor]):
        self.kind = kind
        self.level = level
        self.in_channels = in_channels
        self.seed = seed
        self.blocks = blocks

    def tensors(self) -> list[Tensor]:
        return list(self.blocks.values())

    def zero_grad(self) -> None:
        for t in self.blocks.values():
            t.grad = None

    def copy(self) -> "NetParams":
        blocks = {k: ad.parameter(v.data.copy(), name=k)
                  for k, v in self.blocks.items()}
        return NetParams(self.kind, self.level, self.in_channels, self.seed, blocks)

    def save(self, path) -> None:
        kind_code = 0.0 if self.kind == KIND_GRID else 1.0
        entries = [
            ("meta.kind", np.array(kind_code)),
            ("meta.level", np.array(float(self.level))),
            ("meta.in_channels", np.array(float(self.in_channels))),
            ("meta.seed", np.array(float(self.seed))),
        ]
        entries += [(k, v.data) for k, v in self.blocks.items()]
        formats.save_checkpoint(path, entries)

    @staticmethod
    def load(path) -> "NetParams":
        entries = formats.load_checkpoint(path)
        meta = {k: v for k, v in entries if k.startswith("meta.")}
        kind = KIND_GRID if float(meta["meta.kind"]) == 0.0 else KIND_PIXEL
        blocks = {k: ad.parameter(v, name=k) for k, v in entries
                  if not k.startswith("meta.")}
        return NetParams(kind, int(float(meta["meta.level"])),
                         int(float(meta["meta.in_channels"])),
                         int(float(meta["meta.seed"])), blocks)


def _conv_block(rng: np.random.Generator, name: str, c_in: int, c_out: int,
                k: int, blocks: dict[str, Tensor], zero: bool = False) -> None:
    if zero:
        w = np.zeros((c_out, c_in, k, k))
    else:
        std = np.sqrt(2.0 / (c_in * k * k))
        w = rng.normal(0.0, std, size=(c_out, c_in, k, k))
    blocks[f"{name}.w"] = ad.parameter(w, name=f"{name}.w")
    blocks[f"{name}.b"] = ad.parameter(np.zeros(c_out), name=f"{name}.b")


def make_grid_params(level: int, in_channels: int, seed: int = 0) -> NetParams:
    """Parameters for a level-k grid regressor over a flattened cost volume
    of `in_channels` offset channels (coord channels added internally)."""
    rng = np.random.default_rng(seed)
    blocks: dict[str, Tensor] = {}
    c = FEAT_CHANNELS
    for i, width in enumerate(GRID_WIDTHS):
        _conv_block(rng, f"conv{i + 1}", c, width, 3, blocks)
        c = width
    _conv_block(rng, "head", c, 6, 1, blocks, zero=True)
    return NetParams(KIND_GRID, level, in_channels, seed, blocks)


def make_pixel_params(in_channels: int, seed: int = 0) -> NetParams:
    rng = np.random.default_rng(seed)
    blocks: dict[str, Tensor] = {}
    _conv_block(rng, "pre", FEAT_CHANNELS, PIXEL_PRE_WIDTH, 3, blocks)
    _conv_block(rng, "enc1", PIXEL_PRE_WIDTH, PIXEL_ENC_WIDTHS[0], 3, blocks)
    _conv_block(rng, "enc2", PIXEL_ENC_WIDTHS[0], PIXEL_ENC_WIDTHS[1], 3, blocks)
    _conv_block(rng, "mid", PIXEL_ENC_WIDTHS[1], PIXEL_ENC_WIDTHS[1], 3, blocks)
    _conv_block(rng, "dec1", PIXEL_ENC_WIDTHS[1] + PIXEL_ENC_WIDTHS[0],
                PIXEL_ENC_WIDTHS[0], 3, blocks)
    _conv_block(rng, "dec2", PIXEL_ENC_WIDTHS[0] + PIXEL_PRE_WIDTH,
                PIXEL_PRE_WIDTH, 3, blocks)
    _conv_block(rng, "head", PIXEL_PRE_WIDTH, 6, 1, blocks, zero=True)
    return NetParams(KIND_PIXEL, 0, in_channels, seed, blocks)


def _shifted(a: np.ndarray, oy: int, ox: int, fill: float) -> np.ndarray:
    """Translate a 2-D array by (oy, ox), padding exposed cells with fill."""
    out = np.full_like(a, fill)
    h, w = a.shape
    ys0, ys1 = max(oy, 0), h + min(oy, 0)
    xs0, xs1 = max(ox, 0), w + min(ox, 0)
    out[ys0:ys1, xs0:xs1] = a[ys0 - oy:ys1 - oy, xs0 - ox:xs1 - ox]
    return out


def _support_weights(v: np.ndarray, dx: np.ndarray,
                     dy: np.ndarray) -> np.ndarray:
    """Per-pixel confidence from neighbourhood displacement agreement.

    Starting from the consistency indicator, each round reweights a match by
    the (weight-carrying) fraction of its neighbours whose displacement
    agrees with its own.  The agreement tolerance grows with neighbour
    distance (SUPPORT_TOL + SUPPORT_SLACK per pixel) because under a smooth
    warp the true displacement itself drifts across the neighbourhood.
    Iterating lets confidence flow only through matches that are themselves
    supported, so clusters of mutually consistent but wrong matches die
    out."""
    shifts = []
    for oy in range(-SUPPORT_RADIUS, SUPPORT_RADIUS + 1):
        for ox in range(-SUPPORT_RADIUS, SUPPORT_RADIUS + 1):
            if (oy, ox) == (0, 0):
                continue
            sdx = _shifted(dx, oy, ox, np.inf)
            sdy = _shifted(dy, oy, ox, np.inf)
            limit = SUPPORT_TOL + SUPPORT_SLACK * np.hypot(oy, ox)
            with np.errstate(invalid="ignore"):
                agree = np.hypot(sdx - dx, sdy - dy) < limit
            shifts.append((oy, ox, agree))
    wt = v.copy()
    for _ in range(SUPPORT_ITERS):
        support = np.zeros_like(wt)
        count = np.zeros_like(wt)
        for oy, ox, agree in shifts:
            sw = _shifted(wt, oy, ox, 0.0)
            support += sw * agree
            count += sw
        frac = support / np.maximum(count, 1e-12)
        wt = v * frac ** SUPPORT_POW
    return wt


def _mass_ratio(num: np.ndarray, mass: np.ndarray, size: int) -> np.ndarray:
    """Box-filtered num / box-filtered mass, zero where the mass vanishes."""
    sn = uniform_filter(num, size=size, mode="constant")
    sm = uniform_filter(mass, size=size, mode="constant")
    return np.where(sm > 1e-12, sn / np.maximum(sm, 1e-12), 0.0)


def featurize_volume(channels: np.ndarray) -> np.ndarray:
    """(K*K, H, W) volume channels -> (FEAT_CHANNELS, H, W) match statistics.

    Channels: consistency indicator v (forward best match confirmed by the
    backward best match), the binary neighbourhood-support indicator u
    (support weight above SUPPORT_KEEP of the per-volume maximum),
    u-weighted displacement (normalized by the window radius), then the
    support-mass-normalized moment maps: every moment a per-pixel affine
    fit needs (displacement against coordinate planes and the coordinate
    Gram entries) averaged over a half-image box around each pixel and
    divided by the u mass in the same box, so their scale is independent
    of how many matches survived.  The best in-bounds score, its margin
    over the in-bounds mean, and the raw coordinate planes close the
    stack.  Everything is a deterministic function of the volume, so this
    is input preprocessing, not part of the learned graph."""
    c, h, w = channels.shape
    k = int(round(np.sqrt(c)))
    if k * k != c or k % 2 == 0:
        raise ShapeError(
            f"channel count {c} is not an odd square window")
    r = (k - 1) // 2
    vol = CostVolume(channels.transpose(1, 2, 0).reshape(h, w, k, k), r)
    fwd = best_forward_map(vol)
    bwd = best_backward_map(vol)
    ys, xs = np.mgrid[0:h, 0:w]
    back = bwd[fwd[..., 1], fwd[..., 0]]
    v = ((back[..., 0] == xs) & (back[..., 1] == ys)).astype(np.float64)
    dx = (fwd[..., 0] - xs).astype(np.float64)
    dy = (fwd[..., 1] - ys).astype(np.float64)
    wt = _support_weights(v, dx, dy)
    u = (wt > SUPPORT_KEEP * max(wt.max(), 1e-12)).astype(np.float64)
    nx = dx / r
    ny = dy / r
    valid = _valid_offsets(h, w, r).reshape(h, w, k * k)
    flat = vol.scores.reshape(h, w, k * k)
    peak = np.where(valid, flat, -np.inf).max(axis=-1)
    mean = (flat * valid).sum(axis=-1) / valid.sum(axis=-1)
    xp = (np.tile(np.linspace(-1.0, 1.0, w) if w > 1 else np.zeros(1), (h, 1)))
    yp = np.tile((np.linspace(-1.0, 1.0, h) if h > 1 else np.zeros(1))[:, None],
                 (1, w))
    box = max(min(h, w) // 2, 1)
    density = uniform_filter(u, size=box, mode="constant")
    ratios = [_mass_ratio(u * f, u, box)
              for f in (nx, ny, nx * xp, nx * yp, ny * xp, ny * yp,
                        xp, yp, xp * xp, xp * yp, yp * yp)]
    feats = np.stack([
        v, u, u * nx, u * ny, density, *ratios,
        peak, peak - mean, xp, yp,
    ])
    return feats


def _conv(params: NetParams, name: str, x: Tensor, stride: int = 1,
          pad: int = 1) -> Tensor:
    return ad.conv2d(x, params.blocks[f"{name}.w"], params.blocks[f"{name}.b"],
                     stride=stride, pad=pad)


def grid_graph(params: NetParams, channels: np.ndarray,
               features: np.ndarray | None = None) -> Tensor:
    """Forward the grid regressor; returns a (G, G, 6) parameter tensor in the
    cost volume's pixel frame.  `features` may carry a cached
    featurize_volume(channels) result to skip recomputation."""
    if params.kind != KIND_GRID:
        raise ValueError("grid_graph requires grid-regressor parameters")
    c, h, w = channels.shape
    if c != params.in_channels:
        raise ValueError(
            f"volume has {c} channels, parameters expect {params.in_channels}")
    if features is None:
        features = featurize_volume(channels)
    return grid_graph_features(params, features)


def grid_graph_features(params: NetParams, features: np.ndarray) -> Tensor:
    """Grid-regressor forward over an already-featurized volume."""
    _, h, w = features.shape
    g = 2 ** (params.level - 1)
    x = Tensor(features[None])
    for i, stride in enumerate(GRID_STRIDES):
        x = ad.relu(_conv(params, f"conv{i + 1}", x, stride=stride))
    x = ad.adaptive_avg_pool2d(x, (g, g))
    raw = _conv(params, "head", x, stride=1, pad=0)
    return ad.params_from_head(raw, w, h)


def pixel_graph(params: NetParams, channels: np.ndarray,
                features: np.ndarray | None = None) -> Tensor:
    """Forward the encoder-decoder; returns an (H, W, 6) parameter tensor."""
    if params.kind != KIND_PIXEL:
        raise ValueError("pixel_graph requires pixel-regressor parameters")
    c, h, w = channels.shape
    if c != params.in_channels:
        raise ValueError(
            f"volume has {c} channels, parameters expect {params.in_channels}")
    if features is None:
        features = featurize_volume(channels)
    return pixel_graph_features(params, features)


def pixel_graph_features(params: NetParams, features: np.ndarray) -> Tensor:
    """Encoder-decoder forward over an already-featurized volume."""
    _, h, w = features.shape
    x = Tensor(features[None])
    pre = ad.relu(_conv(params, "pre", x))
    e1 = ad.relu(_conv(params, "enc1", pre, stride=2))
    e2 = ad.relu(_conv(params, "enc2", e1, stride=2))
    mid = ad.relu(_conv(params, "mid", e2))
    u1 = ad.upsample_bilinear(mid, e1.shape[2:])
    d1 = ad.relu(_conv(params, "dec1", ad.concat_channels([u1, e1])))
    u2 = ad.upsample_bilinear(d1, (h, w))
    d2 = ad.relu(_conv(params, "dec2", ad.concat_channels([u2, pre])))
    raw = _conv(params, "head", d2, stride=1, pad=0)
    return ad.params_from_head(raw, w, h)


def forward_grid(params: NetParams, c: CostVolume, level: int) -> GridAffineField:
    """Regress the level's residual grid field from a cost volume.  The field
    lives in the volume's pixel frame (image dims equal the volume dims)."""
    if level != params.level:
        raise ValueError(f"parameters are for level {params.level}, not {level}")
    out = grid_graph(params, c.channels())
    return GridAffineField(level, out.data, c.height, c.width)


def forward_pixel(params: NetParams, c: CostVolume) -> AffineField:
    out = pixel_graph(params, c.channels())
    return AffineField(out.data)


def in_channels_for(radius: int) -> int:
    return (2 * radius + 1) ** 2
