"""Command-line front end for the image-to-point-cloud pipeline.

Subcommands mirror the pipeline stages:

  project   point cloud -> cropped, completed depth image
  synth     generate a synthetic paired dataset directory
  train     fit a model on a dataset (directory or synthetic)
  index     encode keyframe clouds into a searchable index file
  query     retrieve the nearest keyframes for one camera image
  eval      end-to-end recall evaluation with a written report

Exit codes: 0 success, 1 usage error, 2 data error (missing or malformed
inputs, unwritable outputs), 3 internal error. All randomness is funneled
through the `seed` configuration key, so identical invocations produce
identical outputs, including model files and reports.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

from . import __version__
from .dataset_io import (
    SyntheticSceneConfig,
    generate_synthetic_scene,
    read_calib,
    read_dataset,
    read_intensity_image,
    read_velodyne_bin,
    synthetic_camera,
    write_dataset,
    write_depth_image,
)
from .pipeline import PipelineConfig, encode_image, parse_line, prepare_depth
from .retrieval import (
    build_index,
    evaluate_recall,
    load_index,
    query as run_query,
    sample_keyframes,
    save_index,
)
from .training import TrainConfig, train
from .vlad import load_model, save_model

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_INTERNAL = 3


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on usage errors; this surface reserves 2 for
    # data errors and uses 1 for usage.
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="FILE", help="key=value configuration file")
    p.add_argument(
        "--set",
        action="append",
        metavar="KEY=VALUE",
        default=[],
        help="override one configuration key (repeatable)",
    )


def _load_config(args) -> PipelineConfig:
    cfg = PipelineConfig.from_file(args.config) if args.config else PipelineConfig()
    cfg = cfg.with_overrides(args.set)
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    return cfg


def _parse_synth_spec(spec: str) -> SyntheticSceneConfig:
    defaults = SyntheticSceneConfig()
    names = {f.name for f in dataclasses.fields(SyntheticSceneConfig)}
    kwargs = {}
    for part in spec.split(","):
        if not part.strip():
            continue
        key, value = parse_line(part)
        if key not in names:
            raise ValueError(f"unknown synthetic scene key {key!r}")
        current = getattr(defaults, key)
        kwargs[key] = int(value) if isinstance(current, int) else float(value)
    return SyntheticSceneConfig(**kwargs)


def _load_frames(args, cfg: PipelineConfig):
    """Frames and camera from a dataset directory or a synthetic spec."""
    if getattr(args, "synthetic", None) is not None:
        scene = _parse_synth_spec(args.synthetic)
        if getattr(args, "seed", None) is not None and "seed" not in args.synthetic:
            scene = dataclasses.replace(scene, seed=args.seed)
        return generate_synthetic_scene(scene), synthetic_camera()
    if not args.dataset:
        raise ValueError("either a dataset directory or --synthetic is required")
    return read_dataset(args.dataset)


def _train_config(cfg: PipelineConfig) -> TrainConfig:
    return TrainConfig(
        margin=cfg.margin,
        pos_radius=cfg.pos_radius,
        negatives_per_query=cfg.negatives_per_query,
        learning_rate=cfg.learning_rate,
        epochs=cfg.epochs,
        seed=cfg.seed,
        batch_size=cfg.batch_size,
        momentum=cfg.momentum,
        hardest_negative=cfg.hardest_negative,
        augment=cfg.augment,
        augment_rot_deg=cfg.augment_rot_deg,
        augment_shift_m=cfg.augment_shift_m,
    )


def _config_header(cfg: PipelineConfig, extra: dict[str, str]) -> list[str]:
    lines = ["# configuration:"]
    lines += [f"#   {line}" for line in cfg.echo_lines()]
    lines += [f"# {k}: {v}" for k, v in extra.items()]
    return lines


def cmd_project(args) -> int:
    cfg = _load_config(args)
    if args.no_completion:
        cfg.use_completion = False
    cloud = read_velodyne_bin(args.cloud)
    cam = read_calib(args.calib, width=cfg.cam_width, height=cfg.cam_height)
    depth = prepare_depth(cloud, cam, cfg.prep_config())
    write_depth_image(depth, args.output, cfg.max_depth_m)
    print(
        f"wrote {args.output}: {depth.width}x{depth.height}, "
        f"fill ratio {depth.fill_ratio():.3f}"
    )
    return EXIT_OK


def cmd_synth(args) -> int:
    spec = args.spec if args.spec else ""
    scene = _parse_synth_spec(spec)
    if args.seed is not None and "seed" not in spec:
        scene = dataclasses.replace(scene, seed=args.seed)
    frames = generate_synthetic_scene(scene)
    write_dataset(frames, synthetic_camera(), args.outdir)
    print(f"wrote {len(frames)} frames ({scene.num_places} places) to {args.outdir}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _load_config(args)
    frames, cam = _load_frames(args, cfg)
    result = train(frames, cam, _train_config(cfg), pipe=cfg)
    save_model(result.model, args.model_out)

    log_path = args.log if args.log else str(args.model_out) + ".log"
    header = _config_header(cfg, {"frames": str(len(frames))})
    Path(log_path).write_text("\n".join(header + result.loss_log) + "\n")

    if result.epoch_losses:
        print(
            f"trained {cfg.epochs} epochs on {len(frames)} frames: "
            f"mean loss {result.epoch_losses[0]:.4f} -> {result.epoch_losses[-1]:.4f}"
        )
    print(f"wrote {args.model_out} and {log_path}")
    return EXIT_OK


def cmd_index(args) -> int:
    cfg = _load_config(args)
    frames, cam = _load_frames(args, cfg)
    model = load_model(args.model)
    keep = set(sample_keyframes([f.pose for f in frames], cfg.keyframe_spacing_m))
    keyframes = [f for f in frames if f.frame_id in keep]
    stats: dict = {}
    index = build_index(keyframes, cam, model, cfg.prep_config(), stats=stats)
    if len(index) == 0:
        raise ValueError("no frames could be indexed")
    save_index(index, args.index_out)
    skipped = stats.get("skipped_frames", 0)
    note = f" ({skipped} frames skipped)" if skipped else ""
    print(f"indexed {len(index)} keyframes to {args.index_out}{note}")
    return EXIT_OK


def cmd_query(args) -> int:
    cfg = _load_config(args)
    model = load_model(args.model)
    index = load_index(args.index)
    cam = read_calib(args.calib, width=cfg.cam_width, height=cfg.cam_height)
    image = read_intensity_image(args.image)
    desc = encode_image(image, cam, model, cfg.prep_config())
    for rank, (fid, dist) in enumerate(run_query(index, desc, args.topn), start=1):
        print(f"{rank} {fid} {dist:.6f}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _load_config(args)
    if args.threshold is not None:
        cfg.threshold_m = args.threshold
    if args.topn:
        cfg = cfg.with_overrides([f"topn={args.topn}"])
    frames, cam = _load_frames(args, cfg)
    model = load_model(args.model)
    prep = cfg.prep_config()

    keep = set(sample_keyframes([f.pose for f in frames], cfg.keyframe_spacing_m))
    keyframes = [f for f in frames if f.frame_id in keep]
    index = build_index(keyframes, cam, model, prep)
    if len(index) == 0:
        raise ValueError("keyframe index is empty; nothing to evaluate against")

    queries = [(encode_image(f.intensity, cam, model, prep), f.pose) for f in frames]
    report = evaluate_recall(queries, index, cfg.threshold_m, cfg.topn)

    source = args.dataset if args.dataset else f"synthetic({args.synthetic})"
    lines = _config_header(cfg, {"dataset": str(source), "model": str(args.model)})
    lines += report.to_records()
    lines.append("")
    lines.append(report.to_text())
    text = "\n".join(lines) + "\n"
    print(text, end="")
    if args.report:
        Path(args.report).write_text(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="xmplace",
        description="Cross-modal place recognition: camera queries against a point-cloud keyframe database.",
    )
    parser.add_argument("--version", action="version", version=f"xmplace {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("project", help="convert a point cloud to a depth image")
    p.add_argument("cloud", help="binary point cloud file")
    p.add_argument("calib", help="calibration file with P2/Tr lines")
    p.add_argument("output", help="output 16-bit graymap path")
    p.add_argument("--no-completion", action="store_true", help="skip gap interpolation")
    _add_config_args(p)
    p.set_defaults(func=cmd_project)

    p = sub.add_parser("synth", help="generate a synthetic paired dataset")
    p.add_argument("outdir", help="output dataset directory")
    p.add_argument(
        "--spec",
        default="",
        metavar="K=V,...",
        help="scene settings, e.g. num_places=20,noise_sigma_m=0.05",
    )
    p.add_argument("--seed", type=int, help="scene seed (overrides spec)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("dataset", nargs="?", help="dataset directory")
    p.add_argument("model_out", help="output model file")
    p.add_argument("--synthetic", metavar="K=V,...", help="train on a generated scene instead")
    p.add_argument("--log", help="loss log path (default: model path + .log)")
    p.add_argument("--seed", type=int, help="training seed (overrides config)")
    _add_config_args(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("index", help="build a keyframe index")
    p.add_argument("dataset", nargs="?", help="dataset directory")
    p.add_argument("model", help="model file")
    p.add_argument("index_out", help="output index file")
    p.add_argument("--synthetic", metavar="K=V,...", help="index a generated scene instead")
    p.add_argument("--seed", type=int, help="seed for --synthetic")
    _add_config_args(p)
    p.set_defaults(func=cmd_index)

    p = sub.add_parser("query", help="retrieve nearest keyframes for an image")
    p.add_argument("model", help="model file")
    p.add_argument("index", help="index file")
    p.add_argument("image", help="query camera image (graymap)")
    p.add_argument("--calib", required=True, help="calibration for the query camera")
    p.add_argument("--topn", type=int, default=5, help="number of results")
    _add_config_args(p)
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("eval", help="recall evaluation")
    p.add_argument("dataset", nargs="?", help="dataset directory")
    p.add_argument("model", help="model file")
    p.add_argument("--synthetic", metavar="K=V,...", help="evaluate on a generated scene")
    p.add_argument("--seed", type=int, help="seed override")
    p.add_argument("--threshold", type=float, help="ground-truth distance threshold in meters")
    p.add_argument("--topn", help="comma-separated recall depths, e.g. 1,5,10")
    p.add_argument("--report", help="also write the report to this path")
    _add_config_args(p)
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as e:
        print(f"xmplace: error: {e}", file=sys.stderr)
        return EXIT_DATA
    except KeyboardInterrupt:
        raise
    except Exception as e:  # noqa: BLE001 - last-resort guard for exit code 3
        print(f"xmplace: internal error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
