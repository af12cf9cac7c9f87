"""Command-line surface: train, infer, eval, synth, gradcheck.

Configuration is a flat key=value file (# comments, dotted keys); any key can
also be overridden on the command line with --set.  Exit codes: 0 success,
1 computation failure, 2 usage or input error.
"""

from __future__ import annotations

import argparse
import hashlib
import os
import sys


class UsageError(Exception):
    """Bad arguments, unreadable inputs, malformed config — exit code 2."""


# ---------------------------------------------------------------------------
# config parsing

def _parse_int_tuple(text: str) -> tuple:
    return tuple(int(v) for v in text.split(",") if v != "")


def _parse_float_tuple(text: str) -> tuple:
    return tuple(float(v) for v in text.split(",") if v != "")


def _parse_index_groups(text: str) -> tuple:
    """Semicolon-separated groups of comma-separated ints: "2;1,2;0,1"."""
    return tuple(_parse_int_tuple(g) for g in text.split(";"))


# config key -> (PyramidConfig attribute, value parser)
CONFIG_KEYS = {
    "pyramid.k": ("grid_levels", int),
    "pyramid.window_ratios": ("window_ratios", _parse_float_tuple),
    "pyramid.strides": ("strides", _parse_int_tuple),
    "pyramid.scale_indices": ("scale_indices", _parse_index_groups),
    "train.iterations": ("iterations", int),
    "train.batch_size": ("batch_size", int),
    "train.lr": ("learning_rate", float),
    "train.momentum": ("momentum", float),
    "train.min_inlier_ratio": ("min_inlier_ratio", float),
    "train.sample_floor": ("sample_floor", int),
    "msac.iterations": ("msac_iterations", int),
    "msac.threshold_px": ("msac_threshold_px", float),
    "msac.filter_radius_px": ("msac_filter_radius_px", float),
    "finetune.iterations": ("finetune_iterations", int),
    "finetune.lr": ("finetune_lr", float),
    "budget.bytes": ("byte_budget", int),
    "seed": ("seed", int),
}


def parse_config_text(text: str, source: str = "<config>") -> dict:
    """Flat key=value lines with # comments; unknown keys are rejected."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{source}:{lineno}: expected key=value, got {raw!r}")
        key, _, val = line.partition("=")
        key = key.strip()
        val = val.strip()
        if key not in CONFIG_KEYS:
            raise UsageError(f"{source}:{lineno}: unknown config key {key!r}")
        attr, parse = CONFIG_KEYS[key]
        try:
            values[attr] = parse(val)
        except ValueError as exc:
            raise UsageError(f"{source}:{lineno}: bad value for {key}: {exc}")
    return values


def build_config(args):
    """PyramidConfig from defaults, then --config file, then --set overrides,
    then --seed."""
    from .pipeline import PyramidConfig

    values = {}
    if getattr(args, "config", None):
        path = args.config
        if not os.path.isfile(path):
            raise UsageError(f"config file not found: {path}")
        with open(path) as fh:
            values.update(parse_config_text(fh.read(), source=path))
    for item in getattr(args, "set", None) or []:
        values.update(parse_config_text(item, source="--set"))
    if getattr(args, "seed", None) is not None:
        values["seed"] = args.seed
    try:
        return PyramidConfig(**values)
    except ValueError as exc:
        raise UsageError(f"invalid configuration: {exc}")


def config_hash(config) -> str:
    from dataclasses import asdict

    canon = ";".join(f"{k}={v!r}" for k, v in sorted(asdict(config).items()))
    return hashlib.sha256(canon.encode()).hexdigest()


def _apply_threads(n: int) -> None:
    """Pin BLAS worker counts; must run before numpy is first imported to be
    fully effective, hence the lazy module imports throughout."""
    if n < 1:
        raise UsageError("--threads must be >= 1")
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
        os.environ[var] = str(n)


def _require_file(path, what: str):
    if not os.path.isfile(path):
        raise UsageError(f"{what} not found: {path}")
    return path


def _load_gray(path):
    """Load a PGM/PPM image as float64 grayscale-or-color array."""
    from . import formats

    return formats.load_image(_require_file(path, "image")).astype(float)


# ---------------------------------------------------------------------------
# dataset corpus layout (written by synth, read by train)

PAIRS_MANIFEST = "pairs.txt"


def _read_pairs(dataset_dir) -> list:
    from . import formats
    from .pipeline import TrainingPair

    listing = os.path.join(dataset_dir, PAIRS_MANIFEST)
    _require_file(listing, "pair listing")
    pairs = []
    with open(listing) as fh:
        for raw in fh:
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            names = line.split()
            if len(names) != 4:
                raise UsageError(
                    f"{listing}: expected 4 fields per line, got {len(names)}")
            src_p, tgt_p, flow_p, mask_p = (
                os.path.join(dataset_dir, n) for n in names)
            for p in (src_p, tgt_p, flow_p, mask_p):
                _require_file(p, "pair file")
            mask = formats.load_image(mask_p) >= 128
            pairs.append(TrainingPair(
                source=formats.load_image(src_p).astype(float),
                target=formats.load_image(tgt_p).astype(float),
                mask=mask,
                gt_flow=formats.load_flow(flow_p)))
    return pairs


# ---------------------------------------------------------------------------
# commands

def cmd_train(args) -> int:
    from . import pipeline, report

    config = build_config(args)
    pairs = _read_pairs(args.data)
    if not pairs:
        raise UsageError(f"{args.data}: pair listing is empty")
    os.makedirs(args.out, exist_ok=True)
    model, curves = pipeline.train_all(
        pairs, config, finetune=args.finetune, with_pixel=not args.no_pixel)
    ckpts = model.save(args.out)
    lines = [f"seed={config.seed}", f"config_hash={config_hash(config)}",
             f"pairs={len(pairs)}", f"finetune={int(args.finetune)}"]
    for p in ckpts:
        name = os.path.splitext(os.path.basename(p))[0]
        lines.append(f"checkpoint.{name}={os.path.basename(p)}")
    plot_curves = {}
    for name, curve in curves.items():
        if name.endswith(".diagnostics"):
            continue
        csv_name = f"loss_{name}.csv"
        report.write_loss_csv(os.path.join(args.out, csv_name), curve)
        lines.append(f"loss_csv.{name}={csv_name}")
        plot_curves[name] = curve
    report.plot_loss_curves(os.path.join(args.out, "loss_curves.png"),
                            plot_curves)
    lines.append("loss_plot=loss_curves.png")
    with open(os.path.join(args.out, "manifest.txt"), "w") as fh:
        fh.write("\n".join(lines) + "\n")
    print(f"trained {len(ckpts)} modules on {len(pairs)} pairs -> {args.out}")
    return 0


def cmd_infer(args) -> int:
    from . import formats, pipeline
    from .geometry import flow_from_field

    config = build_config(args)
    src = _load_gray(args.source)
    tgt = _load_gray(args.target)
    if src.shape != tgt.shape:
        raise UsageError("source and target images must share dimensions")
    if not os.path.isdir(args.model):
        raise UsageError(f"model directory not found: {args.model}")
    model = pipeline.ModelParams.load(args.model, config.grid_levels)
    result = pipeline.run_inference(src, tgt, config, model)
    os.makedirs(args.out, exist_ok=True)
    formats.save_flow(os.path.join(args.out, "flow.pff1"),
                      flow_from_field(result.final_field))
    formats.save_affine_field(os.path.join(args.out, "field.paf1"),
                              result.final_field.params)
    warped = result.warped.clip(0, 255)
    formats.save_image(os.path.join(args.out, "warped.pgm"
                                    if warped.ndim == 2 else "warped.ppm"),
                       warped.round().astype("uint8"))
    if args.per_level:
        for i, fld in enumerate(result.level_fields, start=1):
            formats.save_affine_field(
                os.path.join(args.out, f"field_level{i}.paf1"), fld.params)
    print(f"wrote flow/field/warped -> {args.out}")
    return 0


def _load_keypoints(path):
    """Text keypoints: optional '# bbox H W' header then 'x y' per line."""
    from .evaluate import Keypoints

    bbox_h = bbox_w = None
    pts = []
    with open(_require_file(path, "keypoint file")) as fh:
        for raw in fh:
            line = raw.strip()
            if line.startswith("#"):
                fields = line[1:].split()
                if fields[:1] == ["bbox"] and len(fields) == 3:
                    bbox_h, bbox_w = float(fields[1]), float(fields[2])
                continue
            if not line:
                continue
            xy = line.split()
            if len(xy) != 2:
                raise UsageError(f"{path}: expected 'x y' lines")
            pts.append((float(xy[0]), float(xy[1])))
    if bbox_h is None:
        raise UsageError(f"{path}: missing '# bbox H W' header")
    return Keypoints(xy=pts, bbox_h=bbox_h, bbox_w=bbox_w)


def cmd_eval(args) -> int:
    from . import evaluate, formats, report

    os.makedirs(args.out, exist_ok=True)
    rows = []
    if args.protocol == "endpoint":
        if not args.flow or not args.gt_flow:
            raise UsageError("endpoint protocol needs --flow and --gt-flow")
        flow = formats.load_flow(_require_file(args.flow, "flow"))
        gt = formats.load_flow(_require_file(args.gt_flow, "ground-truth flow"))
        if args.mask:
            mask = formats.load_image(_require_file(args.mask, "mask")) >= 128
        else:
            mask = None
        import numpy as np
        if mask is None:
            mask = np.ones(flow.shape[:2], dtype=bool)
        rep = evaluate.endpoint_accuracy(flow, gt, mask, threshold=args.threshold)
        rows.append(("endpoint_accuracy", rep.threshold, rep.fraction,
                     rep.pixel_count))
        if args.sweep:
            sweep = evaluate.accuracy_sweep(flow, gt, mask)
            report.write_sweep_csv(os.path.join(args.out, "sweep.csv"), sweep)
            report.plot_sweep(os.path.join(args.out, "sweep.png"), sweep)
    elif args.protocol == "pck":
        if not args.warped_kps or not args.gt_kps:
            raise UsageError("pck protocol needs --warped-kps and --gt-kps")
        warped = _load_keypoints(args.warped_kps)
        gt = _load_keypoints(args.gt_kps)
        if len(warped.xy) != len(gt.xy):
            raise UsageError("keypoint files differ in length")
        for alpha in args.alphas:
            rows.append(("pck", alpha, evaluate.pck(warped, gt, alpha),
                         len(gt.xy)))
    else:
        raise UsageError(f"unknown protocol {args.protocol!r}")
    report.write_metric_csv(os.path.join(args.out, "metrics.csv"), rows)
    for metric, param, value, count in rows:
        print(f"{metric}({param:g}) = {value:.4f}  [n={count}]")
    return 0


def cmd_synth(args) -> int:
    import numpy as np

    from . import formats, pipeline
    from .geometry import flow_from_field

    build_config(args)  # generation ignores the pyramid, but reject bad config
    if args.mode not in pipeline.SYNTH_MODES:
        raise UsageError(f"unknown synth mode {args.mode!r}")
    if args.count < 0:
        raise UsageError("--count must be >= 0")
    images = []
    if args.images:
        if not os.path.isdir(args.images):
            raise UsageError(f"image directory not found: {args.images}")
        names = sorted(n for n in os.listdir(args.images)
                       if n.endswith((".pgm", ".ppm")))
        if not names:
            raise UsageError(f"{args.images}: no .pgm/.ppm images")
        images = [formats.load_image(os.path.join(args.images, n)).astype(float)
                  for n in names]
    os.makedirs(args.out, exist_ok=True)
    rng = np.random.default_rng(args.seed if args.seed is not None else 0)
    lines = []
    for i in range(args.count):
        base = (images[i % len(images)] if images
                else pipeline.make_texture_image(rng, args.height, args.width))
        pair = pipeline.synth_pair(base, rng, mode=args.mode)
        stem = f"pair{i:04d}"
        names = (f"{stem}_src.pgm", f"{stem}_tgt.pgm",
                 f"{stem}_flow.pff1", f"{stem}_mask.pgm")
        formats.save_image(os.path.join(args.out, names[0]),
                           pair.source.clip(0, 255).round().astype("uint8"))
        formats.save_image(os.path.join(args.out, names[1]),
                           pair.target.clip(0, 255).round().astype("uint8"))
        formats.save_flow(os.path.join(args.out, names[2]), pair.gt_flow)
        formats.save_image(os.path.join(args.out, names[3]),
                           np.where(pair.mask, 255, 0).astype("uint8"))
        lines.append(" ".join(names))
    with open(os.path.join(args.out, PAIRS_MANIFEST), "w") as fh:
        for line in lines:
            fh.write(line + "\n")
    print(f"wrote {args.count} pairs -> {args.out}")
    return 0


def cmd_gradcheck(args) -> int:
    from . import gradcheck

    build_config(args)  # validates config even though checks use toy sizes
    reports = gradcheck.run_all(tol=args.tol, seed=args.seed or 0)
    worst = 0.0
    failed = 0
    for rep in reports:
        status = "ok" if rep["passed"] else "FAIL"
        print(f"{rep['name']:<22s} max_rel_error={rep['max_rel_error']:.3e}  "
              f"{status}")
        worst = max(worst, rep["max_rel_error"])
        failed += 0 if rep["passed"] else 1
    print(f"worst relative error {worst:.3e} over {len(reports)} checks")
    if failed:
        print(f"{failed} check(s) failed at tol {args.tol:g}", file=sys.stderr)
        return 1
    return 0


# ---------------------------------------------------------------------------
# argument surface

def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value configuration file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a single config key (repeatable)")
    p.add_argument("--seed", type=int, help="override the run seed")
    p.add_argument("--threads", type=int, default=1,
                   help="BLAS worker count; 1 is the reproducibility mode")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pyraffine",
        description="Pyramidal per-pixel affine correspondence toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train all pyramid levels on a pair corpus")
    _add_common(p)
    p.add_argument("--data", required=True, help="dataset directory with pairs.txt")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--finetune", action="store_true",
                   help="end-to-end finetune after sequential training")
    p.add_argument("--no-pixel", action="store_true",
                   help="skip the pixel-level module")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="estimate the field for one image pair")
    _add_common(p)
    p.add_argument("--model", required=True, help="checkpoint directory")
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--per-level", action="store_true",
                   help="also write each level's field")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="score a flow or keypoint transfer")
    _add_common(p)
    p.add_argument("--protocol", choices=("endpoint", "pck"), default="endpoint")
    p.add_argument("--flow")
    p.add_argument("--gt-flow")
    p.add_argument("--mask")
    p.add_argument("--threshold", type=float, default=5.0)
    p.add_argument("--sweep", action="store_true",
                   help="also write the accuracy-vs-threshold sweep")
    p.add_argument("--warped-kps")
    p.add_argument("--gt-kps")
    p.add_argument("--alphas", type=_parse_float_tuple,
                   default=(0.05, 0.1, 0.15))
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", help="generate a synthetic pair corpus")
    _add_common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--mode", default="global")
    p.add_argument("--images", help="directory of base images (default: textures)")
    p.add_argument("--height", type=int, default=128)
    p.add_argument("--width", type=int, default=128)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("gradcheck", help="finite-difference check of all layers")
    _add_common(p)
    p.add_argument("--tol", type=float, default=1e-3)
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        _apply_threads(args.threads)
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        from .formats import FormatError

        if isinstance(exc, FormatError):
            print(f"error: {exc}", file=sys.stderr)
            return 2
        print(f"failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
