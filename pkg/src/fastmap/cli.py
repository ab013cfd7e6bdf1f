"""Command-line interface: run / synth / eval / export subcommands."""

import argparse
import os
import sys

import numpy as np

from . import config as config_mod
from . import io as io_mod
from . import metrics, synth
from .model import PoseState
from .pipeline import StageError, run_pipeline

_EVAL_ORDER = ["ATE", "RRA@1", "RRA@3", "RTA@1", "RTA@3", "AUC@1", "AUC@3"]


def _limit_threads(n):
    """Best-effort cap on BLAS worker threads (0 = leave all cores)."""
    if n <= 0:
        return
    try:
        from threadpoolctl import threadpool_limits
        threadpool_limits(limits=n)
    except ImportError:
        pass


def _cmd_run(args):
    cfg = config_mod.load(args.config)
    if args.no_focal_refine:
        import dataclasses
        cfg = dataclasses.replace(cfg, refine_focal=False)
    _limit_threads(args.threads)
    try:
        match_set = io_mod.read_matches(args.matches)
    except (OSError, ValueError) as exc:
        print(f"error at stage ingest.read_matches: {exc}", file=sys.stderr)
        return 1
    os.makedirs(args.out, exist_ok=True)
    try:
        scene, report = run_pipeline(match_set, cfg, seed=args.seed)
    except StageError as exc:
        print(f"error at stage {exc.stage}: {exc.cause}", file=sys.stderr)
        with open(os.path.join(args.out, "report.txt"), "w",
                  encoding="utf-8") as fh:
            fh.write(f"FAILED at stage {exc.stage}: {exc.cause}\n")
        return 1
    io_mod.write_model(scene, args.out)
    report += f"seed = {args.seed}\nthreads = {args.threads}\n"
    with open(os.path.join(args.out, "report.txt"), "w",
              encoding="utf-8") as fh:
        fh.write(report)
    print(report, end="")
    return 0


def _cmd_synth(args):
    spec = synth.SynthSpec(
        n_images=args.n_images, n_points=args.n_points, layout=args.layout,
        fov_deg=args.fov, alpha=args.alpha, noise_px=args.noise_px,
        outlier_frac=args.outlier_frac, seed=args.seed, width=args.width,
        height=args.height, n_cameras=args.n_cameras,
        planar_fraction=args.planar_fraction)
    try:
        match_set, gt = synth.generate(spec)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    os.makedirs(args.out, exist_ok=True)
    io_mod.write_matches(match_set, os.path.join(args.out, "matches.txt"))
    io_mod.write_model(gt, os.path.join(args.out, "gt"))
    print(f"wrote {os.path.join(args.out, 'matches.txt')} and "
          f"{os.path.join(args.out, 'gt')}/")
    return 0


def _pad_poses(poses, n):
    if len(poses.registered) == n:
        return poses
    out = PoseState.identity(n)
    out.registered[:] = False
    m = len(poses.registered)
    out.rotations[:m] = poses.rotations
    out.centers[:m] = poses.centers
    out.registered[:m] = poses.registered
    return out


def _cmd_eval(args):
    try:
        est = io_mod.read_model(args.est_dir)
        gt = io_mod.read_model(args.gt_dir)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    n = max(len(est.poses.registered), len(gt.poses.registered))
    est_poses = _pad_poses(est.poses, n)
    gt_poses = _pad_poses(gt.poses, n)
    est_set = set(np.flatnonzero(est_poses.registered))
    gt_set = set(np.flatnonzero(gt_poses.registered))
    if est_set != gt_set:
        print(f"warning: image sets differ "
              f"(est {len(est_set)}, gt {len(gt_set)}, "
              f"common {len(est_set & gt_set)}); using the intersection",
              file=sys.stderr)
    try:
        table = metrics.evaluate(est_poses, gt_poses)
    except (ValueError, metrics.DegenerateAlignmentError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for key in _EVAL_ORDER:
        print(f"{key:<6s} {table[key]:.6f}")
    return 0


def _cmd_export(args):
    try:
        scene = io_mod.read_model(args.model_dir)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    io_mod.write_model(scene, args.out)
    print(f"wrote {args.out}/")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="fastmap",
        description="Global structure-from-motion from verified keypoint "
                    "matches.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run the full reconstruction pipeline")
    p.add_argument("matches", help="MatchFile path")
    p.add_argument("-o", "--out", required=True, help="output model directory")
    p.add_argument("-c", "--config", default=None, help="config file path")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=0,
                   help="worker threads (0 = all cores)")
    p.add_argument("--no-focal-refine", action="store_true",
                   help="skip focal refinement in the epipolar adjustment")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("synth", help="generate a synthetic scene")
    p.add_argument("-o", "--out", required=True)
    p.add_argument("--n-images", type=int, default=30)
    p.add_argument("--n-points", type=int, default=500)
    p.add_argument("--layout", choices=("ring", "grid", "random"),
                   default="ring")
    p.add_argument("--fov", type=float, default=60.0)
    p.add_argument("--alpha", type=float, default=0.0)
    p.add_argument("--noise-px", type=float, default=0.0)
    p.add_argument("--outlier-frac", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--width", type=int, default=640)
    p.add_argument("--height", type=int, default=480)
    p.add_argument("--n-cameras", type=int, default=1)
    p.add_argument("--planar-fraction", type=float, default=0.0)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("eval", help="compare two model directories")
    p.add_argument("est_dir")
    p.add_argument("gt_dir")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("export", help="re-export a model directory "
                                      "(canonical formatting)")
    p.add_argument("model_dir")
    p.add_argument("-o", "--out", required=True)
    p.set_defaults(func=_cmd_export)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
