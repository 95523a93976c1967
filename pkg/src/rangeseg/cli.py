"""
``rangeseg`` command line.

Exit codes: 0 on success, 1 on usage errors (bad flags, bad config files or
flag values), 2 on data errors (unreadable, malformed or inconsistent
inputs).  Every output file is written to a temporary name and renamed.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from rangeseg._atomic import atomic_write_bytes, atomic_write_text
from rangeseg.clustering import DbscanParams, apply_instances, cluster_frame
from rangeseg.errors import ConfigError, NonFiniteLossError, RangeSegError, SizeMismatchError
from rangeseg.evaluation import EvalReport, analyze_row_ranges, bench_csv
from rangeseg.fog import FogParams, defog, fog_labels, fog_simulate_indexed
from rangeseg.images import bev_occupancy, class_gray, class_rgb, range_gray, write_pgm, write_ppm
from rangeseg.net import NetConfig
from rangeseg.pipeline import STAGES, benchmark_stage, channel_names, load_dataset, load_weights, net_for_image
from rangeseg.pointcloud_io import (
    CLASS_NAMES,
    load_kitti_bin,
    load_point_labels,
    load_raster,
    save_boxes,
    save_instance_raster,
    save_kitti_bin,
    save_point_labels,
    save_raster,
)
from rangeseg.projection import ProjectionConfig, encode_frame, load_range_image, save_range_image
from rangeseg.synthetic import SceneSpec, generate_frames
from rangeseg.training import TrainConfig, train, write_metrics


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _read_bytes(path) -> bytes:
    return Path(path).read_bytes()


def _net_config(path) -> NetConfig | None:
    if path is None:
        return None
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"{path}: {exc.strerror}") from None
    return NetConfig.from_text(text, str(path))


def _class_id(name: str) -> int:
    lookup = {v: k for k, v in CLASS_NAMES.items()}
    if name in lookup:
        return lookup[name]
    if name.isdigit() and int(name) in CLASS_NAMES:
        return int(name)
    raise UsageError(f"unknown class {name!r}; expected one of {', '.join(lookup)}")


def _projection(args) -> ProjectionConfig:
    return ProjectionConfig(H=args.height, W=args.width)


# ---------------------------------------------------------------------------
# subcommands


def cmd_encode(args) -> int:
    cloud = load_kitti_bin(args.inp)
    labels = None
    if args.labels:
        labels = load_point_labels(args.labels, expected=len(cloud))
    img, raster = encode_frame(cloud, labels, _projection(args), channel_names(args.channels))
    save_range_image(args.out, img)
    if raster is not None and args.raster:
        save_raster(args.raster, raster)
    if args.png:
        write_pgm(args.png, range_gray(img.range, img.occupancy))
    return 0


def cmd_synth(args) -> int:
    if args.frames < 0:
        raise UsageError("--frames must be non-negative")
    cfg = _projection(args)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    frames = generate_frames(args.frames, args.seed, cfg, SceneSpec())
    names = channel_names(args.channels)
    for i, fr in enumerate(frames):
        stem = out / f"frame_{i:04d}"
        save_kitti_bin(stem.with_suffix(".bin"), fr.cloud)
        save_point_labels(stem.with_suffix(".label"), fr.labels)
        save_boxes(stem.with_suffix(".boxes.jsonl"), [o.box_label() for o in fr.objects if o.class_id])
        img, raster = encode_frame(fr.cloud, fr.labels, cfg, names)
        save_range_image(stem.with_suffix(".rimg"), img)
        save_raster(stem.with_suffix(".rseg"), raster)
    summary = "".join(f"frame_{i:04d},{len(fr.cloud)},{fr.instance_count}\n" for i, fr in enumerate(frames))
    atomic_write_text(out / "frames.csv", "frame,points,instances\n" + summary)
    return 0


def cmd_train(args) -> int:
    tcfg = TrainConfig()
    if args.config:
        try:
            text = Path(args.config).read_text()
        except OSError as exc:
            raise UsageError(f"{args.config}: {exc.strerror}") from None
        tcfg = TrainConfig.from_text(text, args.config)
    dataset = load_dataset(args.data)
    net_cfg = _net_config(args.net_config)
    net = net_for_image(dataset[0][0], net_cfg, seed=tcfg.seed)

    def log(step, lr, values):
        if args.verbose and (step % 50 == 0 or step == tcfg.steps - 1):
            print(f"step {step:5d} lr {lr:.5f} loss {values[2]:.4f}", file=sys.stderr)

    try:
        result = train(dataset, net, tcfg.loss_config(net.cfg.num_classes), tcfg.schedule(),
                       seed=tcfg.seed, dump_path=args.dump, log=log)
    except NonFiniteLossError as exc:
        print(f"{args.data}: {exc}", file=sys.stderr)
        return 2
    atomic_write_bytes(args.out, result.checkpoint)
    if args.log:
        write_metrics(args.log, result)
    if args.figure:
        from rangeseg.plotting import plot_loss_curve
        plot_loss_curve(result.metrics, args.figure)
    if args.save_net_config:
        atomic_write_text(args.save_net_config, net.cfg.to_text())
    return 0


def cmd_infer(args) -> int:
    img = load_range_image(args.inp)
    net = net_for_image(img, _net_config(args.net_config))
    load_weights(net, _read_bytes(args.weights))
    raster = net.predict(img)
    save_raster(args.out, raster)
    if args.png:
        write_pgm(args.png, class_gray(raster))
    if args.ppm:
        write_ppm(args.ppm, class_rgb(raster))
    return 0


def cmd_cluster(args) -> int:
    params = DbscanParams(args.eps, args.min_pts)
    img = load_range_image(args.inp)
    cloud = load_kitti_bin(args.cloud)
    raster = load_raster(args.pred)
    labeling = cluster_frame(img, raster, cloud, params)
    inst, cleaned = apply_instances(raster, img, labeling)
    save_instance_raster(args.out, inst)
    if args.instances:
        atomic_write_text(args.instances, labeling.to_jsonl())
    if args.cleaned:
        save_raster(args.cleaned, cleaned)
    print(f"instances={labeling.num_instances} noise_points={int(labeling.noise.sum())}")
    return 0


def cmd_eval(args) -> int:
    if len(args.pred) != len(args.gt):
        raise UsageError(f"{len(args.pred)} --pred files but {len(args.gt)} --gt files")
    if args.img and len(args.img) != len(args.gt):
        raise UsageError(f"{len(args.img)} --img files but {len(args.gt)} --gt files")
    report = None
    for i, (p, g) in enumerate(zip(args.pred, args.gt)):
        pred, gt = load_raster(p), load_raster(g)
        if pred.shape != gt.shape:
            raise SizeMismatchError(f"{p}: raster {pred.shape} vs ground truth {gt.shape}")
        mask = load_range_image(args.img[i]).occupancy > 0 if args.img else None
        if report is None:
            report = EvalReport(args.top_rows, gt.shape[0])
        report.add(pred, gt, mask)
    text = report.to_csv()
    if args.out:
        atomic_write_text(args.out, text)
    sys.stdout.write(text)
    return 0


def cmd_analyze(args) -> int:
    class_id = _class_id(args.class_name)
    stats = analyze_row_ranges(load_dataset(args.data), class_id)
    if args.csv:
        atomic_write_text(args.csv, stats.to_csv())
    else:
        sys.stdout.write(stats.to_csv())
    if args.pgm:
        write_pgm(args.pgm, stats.heatmap(args.bin_width))
    if args.figure:
        from rangeseg.plotting import plot_row_ranges
        plot_row_ranges(stats, args.figure, args.bin_width)
    return 0


def cmd_fogsim(args) -> int:
    params = FogParams(args.visibility, args.false_alarm_rate, args.attenuation, args.seed)
    cloud = load_kitti_bin(args.inp)
    labels = load_point_labels(args.labels, expected=len(cloud)) if args.labels else None
    fogged, src, fa = fog_simulate_indexed(cloud, params)
    save_kitti_bin(args.out, fogged)
    if labels is not None and args.labels_out:
        save_point_labels(args.labels_out, fog_labels(labels, src, fa))
    if args.bev:
        write_pgm(args.bev, bev_occupancy(fogged.xyz))
    return 0


def cmd_defog(args) -> int:
    cloud = load_kitti_bin(args.inp)
    keep = cloud.ranges() >= args.min_range
    save_kitti_bin(args.out, defog(cloud, args.min_range))
    if args.labels and args.labels_out:
        labels = load_point_labels(args.labels, expected=len(cloud))
        save_point_labels(args.labels_out, labels[keep])
    return 0


def cmd_bench(args) -> int:
    if args.frames < 1 or args.repetitions < 1 or args.warmup < 0:
        raise UsageError("--frames and --repetitions must be positive, --warmup non-negative")
    cfg = _projection(args)
    frames = generate_frames(args.frames, args.seed, cfg, SceneSpec())
    stages = STAGES if args.stage == "all" else (args.stage,)
    net = None
    if "forward" in stages:
        img, _ = encode_frame(frames[0].cloud, None, cfg)
        net = net_for_image(img, _net_config(args.net_config))
        if args.weights:
            load_weights(net, _read_bytes(args.weights))
    results = [benchmark_stage(s, frames, cfg, args.repetitions, args.warmup, net=net)
               for s in stages]
    text = bench_csv(results)
    if args.csv:
        atomic_write_text(args.csv, text)
    sys.stdout.write(text)
    if args.figure:
        from rangeseg.plotting import plot_bench
        plot_bench(results, args.figure)
    return 0


# ---------------------------------------------------------------------------
# parser


def _grid_flags(p, width: int = 512):
    p.add_argument("--height", type=int, default=64, help="range image rows (default 64)")
    p.add_argument("--width", type=int, default=width, help=f"range image columns (default {width})")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="rangeseg", description="LiDAR range-image segmentation pipeline.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("encode", help="project a KITTI .bin cloud into a range image")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True, help="output .rimg")
    p.add_argument("--labels", help="per-point label file (one byte per point)")
    p.add_argument("--raster", help="output label raster (.rseg), needs --labels")
    p.add_argument("--png", help="range channel as a grayscale PGM")
    p.add_argument("--channels", type=int, choices=(2, 3), default=3)
    _grid_flags(p)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("synth", help="generate labeled synthetic frames")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--frames", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--channels", type=int, choices=(2, 3), default=3)
    _grid_flags(p, width=128)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train the range-aware network")
    p.add_argument("--data", required=True, help="directory of .rimg/.rseg pairs")
    p.add_argument("--config", help="training config (key=value)")
    p.add_argument("--net-config", help="network config (key=value)")
    p.add_argument("--out", required=True, help="output weights (.rswt)")
    p.add_argument("--log", help="per-step metrics CSV")
    p.add_argument("--figure", help="loss curve PNG")
    p.add_argument("--dump", help="diagnostic JSON written if the loss goes non-finite")
    p.add_argument("--save-net-config", help="write the effective network config")
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="predict a semantic raster")
    p.add_argument("--weights", required=True)
    p.add_argument("--in", dest="inp", required=True, help="input .rimg")
    p.add_argument("--out", required=True, help="output .rseg")
    p.add_argument("--png", help="class raster as a grayscale PGM")
    p.add_argument("--ppm", help="class raster as a color PPM")
    p.add_argument("--net-config")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("cluster", help="DBSCAN instance clustering of a semantic raster")
    p.add_argument("--in", dest="inp", required=True, help="input .rimg")
    p.add_argument("--cloud", required=True, help="source KITTI .bin")
    p.add_argument("--pred", required=True, help="semantic raster (.rseg)")
    p.add_argument("--out", required=True, help="instance raster (.rsg2)")
    p.add_argument("--instances", help="per-instance JSON lines")
    p.add_argument("--cleaned", help="semantic raster with noise removed (.rseg)")
    p.add_argument("--eps", type=float, default=0.7)
    p.add_argument("--min-pts", type=int, default=7)
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("eval", help="per-class IoU table")
    p.add_argument("--pred", nargs="+", required=True)
    p.add_argument("--gt", nargs="+", required=True)
    p.add_argument("--img", nargs="+", help="range images; restrict scoring to occupied cells")
    p.add_argument("--top-rows", type=int, default=16)
    p.add_argument("--out", help="also write the CSV here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("analyze", help="range distribution of a class per laser row")
    p.add_argument("--data", required=True, help="directory of .rimg/.rseg pairs")
    p.add_argument("--class", dest="class_name", default="car")
    p.add_argument("--csv")
    p.add_argument("--pgm", help="row x range heatmap")
    p.add_argument("--figure", help="row x range figure (PNG)")
    p.add_argument("--bin-width", type=float, default=1.0)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("fogsim", help="apply the fog model to a cloud")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--visibility", type=float, default=70.0)
    p.add_argument("--false-alarm-rate", type=float, default=0.05)
    p.add_argument("--attenuation", type=float, default=0.4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--labels", help="per-point labels of the input")
    p.add_argument("--labels-out", help="per-point labels of the fogged cloud")
    p.add_argument("--bev", help="bird's-eye occupancy PGM of the fogged cloud")
    p.set_defaults(func=cmd_fogsim)

    p = sub.add_parser("defog", help="drop returns closer than 2 m")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--min-range", type=float, default=2.0)
    p.add_argument("--labels")
    p.add_argument("--labels-out")
    p.set_defaults(func=cmd_defog)

    p = sub.add_parser("bench", help="per-stage timing on synthetic frames")
    p.add_argument("--stage", choices=STAGES + ("all",), default="all")
    p.add_argument("--frames", type=int, default=5)
    p.add_argument("--repetitions", type=int, default=5)
    p.add_argument("--warmup", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--weights")
    p.add_argument("--net-config")
    p.add_argument("--csv")
    p.add_argument("--figure", help="bar chart PNG")
    _grid_flags(p)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"rangeseg {args.command}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        where = exc.filename if exc.filename else ""
        print(f"rangeseg {args.command}: {where}: {exc.strerror or exc}", file=sys.stderr)
        return 2
    except (RangeSegError, ValueError) as exc:
        print(f"rangeseg {args.command}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
