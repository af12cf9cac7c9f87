"""Coarse-to-fine orchestration: per-level warp, feature extraction, cost
volume, regression and composition, for inference and the sequential
weakly-supervised training protocol, plus synthetic pair generation.

All fields are anchored at output-frame pixels and map into the source: the
generated target satisfies target == warp_image(source, gt_field), and the
engine's estimated fields use the same convention.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from . import autodiff as ad
from . import regressors
from .cost_volume import (DEFAULT_BYTE_BUDGET, CostVolume, build_constrained,
                          window_radius)
from .features import MIN_IMAGE_SIDE, LevelSpec, extract_handcrafted
from .geometry import (Affine2D, AffineField, GridAffineField, compose_fields,
                       compose_params, flow_from_field, grid_to_dense,
                       rescale_params, resize_bilinear, resize_field,
                       resize_mask_nearest, warp_image)
from .regressors import NetParams, forward_grid, forward_pixel
from .supervision import (ObjectMask, SampleSet, filter_samples_by_field,
                          generate_samples, msac_affine)

PIXEL_LEVEL = "pixel"


class TrainingAborted(RuntimeError):
    """Raised when no training pair yields enough supervision samples."""


@dataclass
class PyramidConfig:
    """Pyramid shape, search schedule and desk-scale training settings."""

    grid_levels: int = 3
    window_ratios: tuple = (1 / 10, 1 / 10, 1 / 15, 1 / 15)
    strides: tuple = (4, 4, 4, 4)
    scale_indices: tuple = ((2,), (1, 2), (0, 1), (0, 1))
    iterations: int = 2000
    batch_size: int = 8
    learning_rate: float = 1e-3
    momentum: float = 0.9
    seed: int = 0
    msac_iterations: int = 500
    msac_threshold_px: float = 2.0
    msac_filter_radius_px: float = 3.0
    min_inlier_ratio: float = 0.25
    sample_floor: int = 6
    finetune_iterations: int = 100
    finetune_lr: float = 1e-4
    byte_budget: int = DEFAULT_BYTE_BUDGET

    def __post_init__(self):
        if self.grid_levels < 1:
            raise ValueError("grid_levels must be >= 1")
        if len(self.window_ratios) != self.grid_levels + 1:
            raise ValueError(
                f"window_ratios must have {self.grid_levels + 1} entries, "
                f"got {len(self.window_ratios)}")
        if len(self.strides) != self.grid_levels + 1:
            raise ValueError(
                f"strides must have {self.grid_levels + 1} entries")
        if len(self.scale_indices) != self.grid_levels + 1:
            raise ValueError(
                f"scale_indices must have {self.grid_levels + 1} entries")

    def level_index(self, level) -> int:
        """0-based schedule index for level 1..K or the pixel level."""
        if level == PIXEL_LEVEL:
            return self.grid_levels
        k = int(level)
        if not (1 <= k <= self.grid_levels):
            raise ValueError(f"level {level} outside 1..{self.grid_levels}")
        return k - 1

    def level_spec(self, level) -> LevelSpec:
        i = self.level_index(level)
        k = self.grid_levels + 1 if level == PIXEL_LEVEL else int(level)
        return LevelSpec(k, list(self.scale_indices[i]), self.window_ratios[i])

    def work_dims(self, level, height: int, width: int) -> tuple[int, int]:
        s = self.strides[self.level_index(level)]
        return (max(int(round(height / s)), MIN_IMAGE_SIDE),
                max(int(round(width / s)), MIN_IMAGE_SIDE))


@dataclass
class TrainingPair:
    """An image pair; the mask and ground truth live in the anchor frame
    (the frame the estimated field is indexed by)."""

    source: np.ndarray
    target: np.ndarray
    mask: np.ndarray | None = None
    gt_flow: np.ndarray | None = None
    gt_field: AffineField | None = None

    def __post_init__(self):
        self.source = np.asarray(self.source, dtype=np.float64)
        self.target = np.asarray(self.target, dtype=np.float64)
        if self.source.ndim != self.target.ndim:
            raise ValueError("source and target must have equal channel count")


class ModelParams:
    """Per-level regressor parameters: grid levels 1..K plus the pixel level."""

    def __init__(self, grids: dict[int, NetParams], pixel: NetParams | None):
        self.grids = grids
        self.pixel = pixel

    @staticmethod
    def init(config: PyramidConfig, image_shape: tuple[int, int],
             seed: int | None = None, with_pixel: bool = True) -> "ModelParams":
        """Freshly initialized parameters; zero heads make this an identity
        model end to end."""
        seed = config.seed if seed is None else seed
        h, w = image_shape
        grids = {}
        for k in range(1, config.grid_levels + 1):
            wh, ww = config.work_dims(k, h, w)
            r = window_radius(config.window_ratios[k - 1], wh, ww)
            grids[k] = regressors.make_grid_params(
                k, regressors.in_channels_for(r), seed=seed * 100 + k)
        pixel = None
        if with_pixel:
            wh, ww = config.work_dims(PIXEL_LEVEL, h, w)
            r = window_radius(config.window_ratios[-1], wh, ww)
            pixel = regressors.make_pixel_params(
                regressors.in_channels_for(r), seed=seed * 100 + 99)
        return ModelParams(grids, pixel)

    def levels(self) -> list:
        out: list = sorted(self.grids)
        if self.pixel is not None:
            out.append(PIXEL_LEVEL)
        return out

    def all_tensors(self) -> list[ad.Tensor]:
        ts = []
        for k in sorted(self.grids):
            ts.extend(self.grids[k].tensors())
        if self.pixel is not None:
            ts.extend(self.pixel.tensors())
        return ts

    def save(self, out_dir) -> list[str]:
        import os
        paths = []
        for k in sorted(self.grids):
            p = os.path.join(out_dir, f"level{k}.pnp1")
            self.grids[k].save(p)
            paths.append(p)
        if self.pixel is not None:
            p = os.path.join(out_dir, "pixel.pnp1")
            self.pixel.save(p)
            paths.append(p)
        return paths

    @staticmethod
    def load(in_dir, grid_levels: int, with_pixel: bool = True) -> "ModelParams":
        import os
        grids = {k: NetParams.load(os.path.join(in_dir, f"level{k}.pnp1"))
                 for k in range(1, grid_levels + 1)}
        pixel = None
        pixel_path = os.path.join(in_dir, "pixel.pnp1")
        if with_pixel and os.path.exists(pixel_path):
            pixel = NetParams.load(pixel_path)
        return ModelParams(grids, pixel)


def _level_volume(warped: np.ndarray, target: np.ndarray,
                  config: PyramidConfig, level) -> CostVolume:
    h, w = warped.shape[:2]
    wh, ww = config.work_dims(level, h, w)
    spec = config.level_spec(level)
    src_small = resize_bilinear(warped, wh, ww)
    tgt_small = resize_bilinear(target, wh, ww)
    f_src = extract_handcrafted(src_small, spec)
    f_tgt = extract_handcrafted(tgt_small, spec)
    return build_constrained(f_src, f_tgt, spec.window_ratio,
                             byte_budget=config.byte_budget)


def _lift_grid(g: GridAffineField, out_h: int, out_w: int) -> GridAffineField:
    params = rescale_params(g.params, g.image_height, g.image_width,
                            out_h, out_w)
    return GridAffineField(g.level, params, out_h, out_w)


def _check_model(config: PyramidConfig, model: ModelParams) -> None:
    expect = set(range(1, config.grid_levels + 1))
    if set(model.grids) != expect:
        raise ValueError(
            f"model has grid levels {sorted(model.grids)}, config needs "
            f"{sorted(expect)}")


@dataclass
class InferenceResult:
    final_field: AffineField
    level_fields: list[AffineField]
    warped: np.ndarray


def run_inference(src: np.ndarray, tgt: np.ndarray, config: PyramidConfig,
                  model: ModelParams) -> InferenceResult:
    """Full coarse-to-fine pass: per level, warp the running image by the
    previous residual field, regress the next residual, and finally compose
    everything (grid levels outermost, pixel level innermost)."""
    _check_model(config, model)
    src = np.asarray(src, dtype=np.float64)
    tgt = np.asarray(tgt, dtype=np.float64)
    h, w = src.shape[:2]
    warped = src
    fields: list[AffineField] = []
    for k in range(1, config.grid_levels + 1):
        vol = _level_volume(warped, tgt, config, k)
        grid = forward_grid(model.grids[k], vol, k)
        dense = grid_to_dense(_lift_grid(grid, h, w))
        fields.append(dense)
        warped = warp_image(warped, dense)
    if model.pixel is not None:
        vol = _level_volume(warped, tgt, config, PIXEL_LEVEL)
        pf = forward_pixel(model.pixel, vol)
        dense = resize_field(pf, h, w)
        fields.append(dense)
        warped = warp_image(warped, dense)
    return InferenceResult(compose_fields(fields), fields, warped)


@dataclass
class LevelData:
    """Frozen per-pair training inputs for one level."""

    features: np.ndarray     # (F, wh, ww) featurized cost volume
    in_channels: int         # raw volume channel count (network metadata)
    coords: np.ndarray       # (N, 2) sample pixels, volume frame
    targets: np.ndarray      # (N, 2) displacement supervision, volume frame
    work_dims: tuple[int, int]


def _warp_through_levels(pair: TrainingPair, config: PyramidConfig,
                         model: ModelParams, upto: int) -> np.ndarray:
    """Source image warped by the trained fields of levels < upto."""
    h, w = pair.source.shape[:2]
    warped = pair.source
    for n in range(1, upto):
        vol = _level_volume(warped, pair.target, config, n)
        grid = forward_grid(model.grids[n], vol, n)
        dense = grid_to_dense(_lift_grid(grid, h, w))
        warped = warp_image(warped, dense)
    return warped


def prepare_level_data(pair: TrainingPair, level, config: PyramidConfig,
                       model: ModelParams) -> LevelData | None:
    """Supervision for one pair at one level, or None (with the pair dropped)
    when consistency or MSAC screening leaves too few samples."""
    upto = (config.grid_levels + 1 if level == PIXEL_LEVEL else int(level))
    warped = _warp_through_levels(pair, config, model, upto)
    vol = _level_volume(warped, pair.target, config, level)
    mask = None
    if pair.mask is not None:
        small = resize_mask_nearest(pair.mask, vol.height, vol.width)
        if not small.any():
            return None
        mask = ObjectMask(small)
    level_no = config.grid_levels + 1 if level == PIXEL_LEVEL else int(level)
    samples = generate_samples(vol, mask, level=level_no)
    if len(samples) < max(config.sample_floor, 3):
        return None
    if level == 1:
        t0, inliers = msac_affine(samples,
                                  iterations=config.msac_iterations,
                                  inlier_threshold_px=config.msac_threshold_px,
                                  seed=config.seed)
        if len(inliers) / len(samples) < config.min_inlier_ratio:
            return None
        t0_field = AffineField.constant(vol.height, vol.width, t0)
        samples = filter_samples_by_field(samples, t0_field,
                                          config.msac_filter_radius_px)
        if len(samples) < config.sample_floor:
            return None
        # supervise with the consensus fit at the kept pixels rather than
        # the raw integer matches: same inlier set, without the pixel
        # quantization noise of individual correspondences
        pts = samples.points.astype(np.float64)
        fitted = np.column_stack([
            t0.a11 * pts[:, 0] + t0.a12 * pts[:, 1] + t0.tx,
            t0.a21 * pts[:, 0] + t0.a22 * pts[:, 1] + t0.ty,
        ])
        targets = fitted - pts
    else:
        targets = samples.displacements()
    channels = vol.channels()
    return LevelData(regressors.featurize_volume(channels), channels.shape[0],
                     samples.points.astype(np.float64),
                     targets, (vol.height, vol.width))


def _level_loss(params: NetParams, data: LevelData) -> ad.Tensor:
    wh, ww = data.work_dims
    if params.kind == regressors.KIND_GRID:
        graph = regressors.grid_graph_features(params, data.features)
    else:
        graph = regressors.pixel_graph_features(params, data.features)
    at = ad.sample_params(graph, data.coords[:, 0], data.coords[:, 1], ww, wh)
    return ad.flow_loss(at, data.coords, data.targets)


def train_level(level, dataset: list[TrainingPair], config: PyramidConfig,
                model: ModelParams,
                iterations: int | None = None) -> tuple[NetParams, list[float], dict]:
    """Train one level against consistency supervision, lower levels frozen.

    Returns the trained parameters (also installed into the model), the loss
    curve, and a diagnostics dict with per-pair drop reasons."""
    iterations = config.iterations if iterations is None else iterations
    usable: list[LevelData] = []
    dropped = 0
    for pair in dataset:
        data = prepare_level_data(pair, level, config, model)
        if data is None:
            dropped += 1
        else:
            usable.append(data)
    if not usable:
        raise TrainingAborted(
            f"level {level}: all {len(dataset)} pairs below the sample floor")
    level_no = config.grid_levels + 1 if level == PIXEL_LEVEL else int(level)
    c = usable[0].in_channels
    if level == PIXEL_LEVEL:
        params = regressors.make_pixel_params(c, seed=config.seed * 100 + 99)
    else:
        params = regressors.make_grid_params(level_no, c,
                                             seed=config.seed * 100 + level_no)
    opt = ad.MomentumSGD(params.tensors(), lr=config.learning_rate,
                         momentum=config.momentum)
    rng = np.random.default_rng(config.seed * 7919 + level_no)
    curve: list[float] = []
    warmup = max(min(100, iterations // 10), 1)
    for step in range(iterations):
        # linear warmup into a cosine decay: the warmup keeps the first
        # momentum-amplified steps from overshooting, the decay settles the
        # final iterate instead of leaving it bouncing around the minimum
        ramp = min((step + 1) / warmup, 1.0)
        cos = 0.5 * (1.0 + np.cos(np.pi * step / max(iterations - 1, 1)))
        opt.lr = config.learning_rate * ramp * (0.05 + 0.95 * cos)
        idx = rng.choice(len(usable), size=min(config.batch_size, len(usable)),
                         replace=len(usable) < config.batch_size)
        opt.zero_grad()
        losses = [_level_loss(params, usable[i]) for i in idx]
        total = ad.mean_tensor(losses)
        if not np.isfinite(total.data):
            raise TrainingAborted(f"level {level}: loss became non-finite")
        total.backward()
        opt.step()
        curve.append(float(total.data))
    if level == PIXEL_LEVEL:
        model.pixel = params
    else:
        model.grids[int(level)] = params
    return params, curve, {"pairs": len(dataset), "dropped": dropped}


def _tracked_level_params(params: NetParams, channels: np.ndarray,
                          work_dims: tuple[int, int],
                          image_dims: tuple[int, int]) -> ad.Tensor:
    """Forward one level with tracking and conjugate the resulting parameter
    tensor into the image frame."""
    if params.kind == regressors.KIND_GRID:
        graph = regressors.grid_graph(params, channels)
    else:
        graph = regressors.pixel_graph(params, channels)
    wh, ww = work_dims
    h, w = image_dims
    sy, sx = h / wh, w / ww
    up = ad.Tensor(np.array([sx, 0.0, (sx - 1) / 2, 0.0, sy, (sy - 1) / 2]))
    down = ad.Tensor(np.array([1 / sx, 0.0, -(sx - 1) / (2 * sx),
                               0.0, 1 / sy, -(sy - 1) / (2 * sy)]))
    return ad.compose_affine(up, ad.compose_affine(graph, down))


def _finetune_pair_loss(pair: TrainingPair, config: PyramidConfig,
                        model: ModelParams) -> ad.Tensor | None:
    """End-to-end loss for one pair: composed field at the final level's
    supervision samples, compared against their displacements."""
    h, w = pair.source.shape[:2]
    warped = pair.source
    lifted: list[ad.Tensor] = []
    for k in range(1, config.grid_levels + 1):
        vol = _level_volume(warped, pair.target, config, k)
        t = _tracked_level_params(model.grids[k], vol.channels(),
                                  (vol.height, vol.width), (h, w))
        lifted.append(t)
        dense = grid_to_dense(
            GridAffineField(k, t.data, h, w))
        warped = warp_image(warped, dense)
    final_level = PIXEL_LEVEL if model.pixel is not None else config.grid_levels
    if model.pixel is not None:
        vol = _level_volume(warped, pair.target, config, PIXEL_LEVEL)
        t = _tracked_level_params(model.pixel, vol.channels(),
                                  (vol.height, vol.width), (h, w))
        lifted.append(t)
    mask = None
    if pair.mask is not None:
        small = resize_mask_nearest(pair.mask, vol.height, vol.width)
        if not small.any():
            return None
        mask = ObjectMask(small)
    samples = generate_samples(vol, mask)
    if len(samples) < config.sample_floor:
        return None
    stride_y = h / vol.height
    stride_x = w / vol.width
    coords = np.stack([
        (samples.points[:, 0] + 0.5) * stride_x - 0.5,
        (samples.points[:, 1] + 0.5) * stride_y - 0.5], axis=-1)
    disp = samples.displacements()
    targets = np.stack([disp[:, 0] * stride_x, disp[:, 1] * stride_y], axis=-1)
    at = [ad.sample_params(t, coords[:, 0], coords[:, 1], w, h) for t in lifted]
    composed = at[0]
    for t in at[1:]:
        composed = ad.compose_affine(composed, t)
    return ad.flow_loss(composed, coords, targets)


def finetune_end_to_end(model: ModelParams, dataset: list[TrainingPair],
                        config: PyramidConfig,
                        iterations: int | None = None) -> list[float]:
    """Joint gradient steps through the full warp-compose chain, using the
    final level's supervision.  Returns the loss curve."""
    _check_model(config, model)
    iterations = config.finetune_iterations if iterations is None else iterations
    tensors = model.all_tensors()
    opt = ad.MomentumSGD(tensors, lr=config.finetune_lr, momentum=config.momentum)
    rng = np.random.default_rng(config.seed * 104729 + 1)
    curve: list[float] = []
    for _ in range(iterations):
        idx = rng.choice(len(dataset), size=min(config.batch_size, len(dataset)),
                         replace=len(dataset) < config.batch_size)
        opt.zero_grad()
        losses = []
        for i in idx:
            loss = _finetune_pair_loss(dataset[i], config, model)
            if loss is not None:
                losses.append(loss)
        if not losses:
            raise TrainingAborted("finetune: no pair yields enough samples")
        total = ad.mean_tensor(losses)
        if not np.isfinite(total.data):
            raise TrainingAborted("finetune: loss became non-finite")
        total.backward()
        opt.step()
        curve.append(float(total.data))
    return curve


def train_all(dataset: list[TrainingPair], config: PyramidConfig,
              finetune: bool = False,
              image_shape: tuple[int, int] | None = None,
              with_pixel: bool = True) -> tuple[ModelParams, dict]:
    """Sequential protocol: levels 1..K, then the pixel level, then an
    optional end-to-end finetune."""
    if image_shape is None:
        image_shape = dataset[0].source.shape[:2]
    model = ModelParams.init(config, image_shape, with_pixel=with_pixel)
    curves: dict = {}
    for k in range(1, config.grid_levels + 1):
        _, curve, diag = train_level(k, dataset, config, model)
        curves[f"level{k}"] = curve
        curves[f"level{k}.diagnostics"] = diag
    if with_pixel:
        _, curve, diag = train_level(PIXEL_LEVEL, dataset, config, model)
        curves["pixel"] = curve
        curves["pixel.diagnostics"] = diag
    if finetune:
        curves["finetune"] = finetune_end_to_end(model, dataset, config)
    return model, curves


# ---------------------------------------------------------------------------
# synthetic pair generation

GLOBAL_ROT_MAX_DEG = 20.0
GLOBAL_SCALE_RANGE = (0.8, 1.25)
GLOBAL_TRANS_FRAC = 0.1
GLOBAL_SHEAR_MAX = 0.1
QUAD_ROT_MAX_DEG = 8.0
QUAD_SCALE_RANGE = (0.92, 1.08)
QUAD_TRANS_FRAC = 0.04
QUAD_SHEAR_MAX = 0.04
FLIP_ROT_MAX_DEG = 5.0
MASK_MARGIN_FRAC = 0.06

SYNTH_MODES = ("global", "quadsplit", "flip")


def random_affine(rng: np.random.Generator, height: int, width: int,
                  rot_max_deg: float = GLOBAL_ROT_MAX_DEG,
                  scale_range: tuple = GLOBAL_SCALE_RANGE,
                  trans_frac: float = GLOBAL_TRANS_FRAC,
                  shear_max: float = GLOBAL_SHEAR_MAX) -> Affine2D:
    """Random rotation/scale/shear about the image center plus translation."""
    theta = np.deg2rad(rng.uniform(-rot_max_deg, rot_max_deg))
    s = rng.uniform(*scale_range)
    sh = rng.uniform(-shear_max, shear_max)
    tx = rng.uniform(-trans_frac, trans_frac) * width
    ty = rng.uniform(-trans_frac, trans_frac) * height
    rot = np.array([[np.cos(theta), -np.sin(theta)],
                    [np.sin(theta), np.cos(theta)]])
    lin = s * rot @ np.array([[1.0, sh], [0.0, 1.0]])
    cx, cy = (width - 1) / 2.0, (height - 1) / 2.0
    off = np.array([cx, cy]) - lin @ np.array([cx, cy]) + np.array([tx, ty])
    return Affine2D(lin[0, 0], lin[0, 1], off[0], lin[1, 0], lin[1, 1], off[1])


TEXTURE_BLOB_COUNT = 40
TEXTURE_BLOB_SIGMA = (2.5, 9.0)
TEXTURE_BLOB_AMP = (1.5, 3.0)


def make_texture_image(rng: np.random.Generator, height: int = 128,
                       width: int = 128) -> np.ndarray:
    """Smooth random multi-scale texture in [0, 255], dense in gradients so
    descriptors are distinctive everywhere.

    Isolated blobs are layered over the band-limited noise; their distinct
    coarse-scale appearance anchors matching where the noise alone is
    locally repetitive."""
    img = np.zeros((height, width))
    for sigma, amp in ((2.0, 1.0), (5.0, 1.5), (11.0, 2.0)):
        img += amp * gaussian_filter(rng.normal(size=(height, width)), sigma)
    ys, xs = np.mgrid[0:height, 0:width]
    for _ in range(TEXTURE_BLOB_COUNT):
        cy, cx = rng.uniform(0, height), rng.uniform(0, width)
        sig = rng.uniform(*TEXTURE_BLOB_SIGMA)
        amp = rng.choice([-1.0, 1.0]) * rng.uniform(*TEXTURE_BLOB_AMP)
        img += amp * np.exp(-((ys - cy) ** 2 + (xs - cx) ** 2)
                            / (2.0 * sig * sig))
    lo, hi = img.min(), img.max()
    return (img - lo) / max(hi - lo, 1e-12) * 255.0


def _validity_mask(fld: AffineField) -> np.ndarray:
    h, w = fld.height, fld.width
    flow = flow_from_field(fld)
    ys, xs = np.mgrid[0:h, 0:w]
    sx = xs + flow[..., 0]
    sy = ys + flow[..., 1]
    valid = (sx >= 0) & (sx <= w - 1) & (sy >= 0) & (sy <= h - 1)
    my = max(int(round(h * MASK_MARGIN_FRAC)), 1)
    mx = max(int(round(w * MASK_MARGIN_FRAC)), 1)
    box = np.zeros_like(valid)
    box[my:h - my, mx:w - mx] = True
    return valid & box


def synth_pair(image: np.ndarray, rng: np.random.Generator,
               mode: str = "global") -> TrainingPair:
    """Generate a geometric training pair with exact ground truth.

    The drawn field maps target-frame pixels into the source, so the target
    is exactly warp_image(source, field)."""
    image = np.asarray(image, dtype=np.float64)
    h, w = image.shape[:2]
    if min(h, w) < 64:
        raise ValueError(f"image min side {min(h, w)} below 64")
    if mode == "global":
        fld = AffineField.constant(h, w, random_affine(rng, h, w))
    elif mode == "quadsplit":
        cells = np.stack([
            np.stack([random_affine(rng, h, w,
                                    rot_max_deg=QUAD_ROT_MAX_DEG,
                                    scale_range=QUAD_SCALE_RANGE,
                                    trans_frac=QUAD_TRANS_FRAC,
                                    shear_max=QUAD_SHEAR_MAX).params
                      for _ in range(2)])
            for _ in range(2)])
        fld = grid_to_dense(GridAffineField(2, cells, h, w))
    elif mode == "flip":
        mirror = np.array([-1.0, 0.0, w - 1.0, 0.0, 1.0, 0.0])
        mild = random_affine(rng, h, w,
                             rot_max_deg=FLIP_ROT_MAX_DEG,
                             scale_range=(0.95, 1.05),
                             trans_frac=0.03,
                             shear_max=0.03).params
        fld = AffineField.constant(h, w,
                                   Affine2D.from_params(compose_params(mild, mirror)))
    else:
        raise ValueError(f"unknown mode {mode!r}; expected one of {SYNTH_MODES}")
    target = warp_image(image, fld)
    mask = _validity_mask(fld)
    return TrainingPair(source=image, target=target, mask=mask,
                        gt_flow=flow_from_field(fld), gt_field=fld)
