"""``dynafuse`` command line: run / segment / align / reconstruct.

Every config key is exposed as a ``--flag`` (dashes for underscores) on
every subcommand; flags override values from ``--config``.  Exit codes:
0 = success, 1 = a failure that prevented output, 2 = the run finished but
more than half of the frame alignments failed.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import fields
from pathlib import Path

import cv2
import numpy as np

from . import __version__
from .config import ConfigError, PipelineConfig, load_config
from .detection import DetectionParseError
from .geometry import Intrinsics
from .imaging import AssociationError, FramePair, decode_depth, read_gray_png, write_gray_png
from .odometry import DivergenceError, InsufficientOverlapError, estimate_pose, odom_frame_from_pair
from .pipeline import reconstruct_from_files, run, segment_frame
from .reconstruction import TrajectoryEntry, write_trajectory
from .segmentation import DegenerateTrimapError, InvalidBoxError

_FIELD_HELP = {
    "rgb_index": "color index file ('timestamp filename' per line)",
    "depth_index": "depth index file",
    "detections": "detections JSONL file ('' = none)",
    "strokes_dir": "directory of <timestamp>.strokes.png trimap overrides",
    "depth_scale": "depth PNG units per meter",
    "max_dt": "rgb/depth association tolerance [s]",
    "fx": "focal length x [px]",
    "fy": "focal length y [px]",
    "ox": "optical center x [px]",
    "oy": "optical center y [px]",
    "dynamic_classes": "comma-separated labels treated as dynamic",
    "min_confidence": "minimum detection confidence",
    "gmm_components": "GMM components per class",
    "gamma": "smoothness weight",
    "grabcut_max_iters": "max GrabCut iterations",
    "grabcut_tol": "relative energy decrease to stop GrabCut",
    "mask_dilation_px": "dynamic mask dilation radius [px]",
    "pyramid_levels": "odometry pyramid levels",
    "w_intensity": "intensity residual weight",
    "w_depth": "depth residual weight",
    "gn_max_iters": "max Gauss-Newton iterations per level",
    "gn_tol": "GN stop threshold on |delta|",
    "min_valid_fraction": "minimum valid-pixel fraction for alignment",
    "stride": "odometry pixel sampling stride",
    "huber": "enable Huber robustifier",
    "huber_delta_i": "Huber threshold, intensity",
    "huber_delta_z": "Huber threshold, depth",
    "init_from_previous": "seed each alignment with the previous estimate",
    "fusion_stride": "fusion pixel sampling stride",
    "voxel_size": "voxel downsample size [m]",
    "out_ply": "output point cloud path",
    "out_traj": "output trajectory path",
    "debug_mask_dir": "write per-frame dynamic masks here ('' = off)",
    "report_dir": "write report figures here ('' = off)",
}

_ERRORS = (
    ConfigError,
    AssociationError,
    DetectionParseError,
    InvalidBoxError,
    DegenerateTrimapError,
    InsufficientOverlapError,
    DivergenceError,
    FileNotFoundError,
    OSError,
    ValueError,
)


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", metavar="FILE", help="key = value config file")
    grp = parser.add_argument_group("config keys (override --config)")
    defaults = PipelineConfig()
    for f in fields(PipelineConfig):
        grp.add_argument(
            f"--{f.name.replace('_', '-')}",
            dest=f"cfg_{f.name}",
            default=None,
            metavar="V",
            help=f"{_FIELD_HELP.get(f.name, f.name)} (default: {getattr(defaults, f.name)!r})",
        )


def _config_from_args(args: argparse.Namespace) -> PipelineConfig:
    overrides = {}
    for f in fields(PipelineConfig):
        v = getattr(args, f"cfg_{f.name}", None)
        if v is not None:
            overrides[f.name] = v  # raw strings; load_config coerces
    return load_config(args.config, overrides)


def _read_rgb(path: str) -> np.ndarray:
    bgr = cv2.imread(path, cv2.IMREAD_COLOR)
    if bgr is None:
        raise FileNotFoundError(f"cannot read image: {path}")
    return bgr[:, :, ::-1].copy()


def _read_depth(path: str, depth_scale: float) -> np.ndarray:
    raw = cv2.imread(path, cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise FileNotFoundError(f"cannot read depth image: {path}")
    if raw.ndim != 2:
        raise ValueError(f"{path}: expected single-channel depth, got shape {raw.shape}")
    return decode_depth(raw, depth_scale)


def _parse_bbox(text: str) -> tuple[float, float, float, float]:
    parts = text.split(",")
    if len(parts) != 4:
        raise ValueError(f"--bbox expects x,y,w,h, got {text!r}")
    x, y, w, h = (float(p) for p in parts)
    return x, y, w, h


def _cmd_run(args: argparse.Namespace) -> int:
    cfg = _config_from_args(args)
    if not cfg.rgb_index or not cfg.depth_index:
        raise ConfigError("rgb_index and depth_index are required for 'run'")
    summary = run(cfg)
    for line in summary.lines():
        print(line)
    if summary.alignments_attempted and (
        summary.alignment_failures > 0.5 * summary.alignments_attempted
    ):
        return 2
    return 0


def _cmd_segment(args: argparse.Namespace) -> int:
    cfg = _config_from_args(args)
    rgb = _read_rgb(args.image)
    frame = FramePair(0.0, rgb, np.zeros(rgb.shape[:2]))
    strokes = None
    if args.strokes:
        from .segmentation import strokes_from_image

        strokes = strokes_from_image(read_gray_png(args.strokes))
    mask, traces, failures = segment_frame(frame, [_parse_bbox(args.bbox)], cfg, strokes)
    if failures or mask is None:
        raise DegenerateTrimapError("segmentation failed for the given box")
    write_gray_png(args.out_mask, mask)
    if args.trace:
        rows = ["iteration,energy"]
        rows += [f"{i + 1},{e!r}" for i, e in enumerate(traces[0])]
        Path(args.trace).write_text("\n".join(rows) + "\n")
    if cfg.report_dir:
        from . import report

        os.makedirs(cfg.report_dir, exist_ok=True)
        report.save_energy_traces([(0.0, traces[0])], Path(cfg.report_dir) / "energy_trace.png")
    print(f"mask: {args.out_mask} ({int((mask != 0).sum())} dynamic px)")
    return 0


def _cmd_align(args: argparse.Namespace) -> int:
    cfg = _config_from_args(args)
    i1 = _read_rgb(args.rgb1)
    i2 = _read_rgb(args.rgb2)
    d1 = _read_depth(args.depth1, cfg.depth_scale)
    d2 = _read_depth(args.depth2, cfg.depth_scale)
    m1 = read_gray_png(args.mask1).astype(bool) if args.mask1 else None
    m2 = read_gray_png(args.mask2).astype(bool) if args.mask2 else None
    K = Intrinsics(cfg.fx, cfg.fy, cfg.ox, cfg.oy, i1.shape[1], i1.shape[0])
    f1 = odom_frame_from_pair(FramePair(0.0, i1, d1), m1)
    f2 = odom_frame_from_pair(FramePair(0.0, i2, d2), m2)
    result = estimate_pose(
        f1,
        f2,
        K,
        levels=cfg.pyramid_levels,
        w_intensity=cfg.w_intensity,
        w_depth=cfg.w_depth,
        gn_max_iters=cfg.gn_max_iters,
        gn_tol=cfg.gn_tol,
        min_valid_fraction=cfg.min_valid_fraction,
        stride=cfg.stride,
        huber=cfg.huber,
        huber_delta_i=cfg.huber_delta_i,
        huber_delta_z=cfg.huber_delta_z,
    )
    entry = TrajectoryEntry.from_pose(args.timestamp, result.pose)
    line = f"{entry.timestamp:.6f} " + " ".join(repr(float(v)) for v in (*entry.t, *entry.q))
    if args.out:
        write_trajectory([entry], args.out)
    else:
        print(line)
    return 0


def _cmd_reconstruct(args: argparse.Namespace) -> int:
    cfg = _config_from_args(args)
    if not cfg.rgb_index or not cfg.depth_index:
        raise ConfigError("rgb_index and depth_index are required for 'reconstruct'")
    cloud = reconstruct_from_files(cfg, args.traj, args.masks, cfg.out_ply)
    print(f"wrote {len(cloud)} points to {cfg.out_ply}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dynafuse",
        description="Reconstruct the static scene from RGB-D video with moving objects.",
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser(
        "run",
        help="full pipeline: segment, align, fuse; writes PLY + trajectory",
    )
    _add_config_flags(p_run)
    p_run.set_defaults(func=_cmd_run)

    p_seg = sub.add_parser(
        "segment",
        help="one frame + seed box -> dynamic mask PNG (+ energy trace CSV)",
    )
    p_seg.add_argument("--image", required=True, help="RGB PNG")
    p_seg.add_argument("--bbox", required=True, help="seed box as x,y,w,h [px]")
    p_seg.add_argument("--out-mask", required=True, help="output mask PNG (operative: dilated)")
    p_seg.add_argument("--strokes", help="stroke PNG (255 fg, 0 bg, else untouched)")
    p_seg.add_argument("--trace", help="write the energy trace CSV here")
    _add_config_flags(p_seg)
    p_seg.set_defaults(func=_cmd_segment)

    p_align = sub.add_parser(
        "align",
        help="two frames + optional masks -> frame-1->frame-2 pose line",
    )
    p_align.add_argument("--rgb1", required=True)
    p_align.add_argument("--depth1", required=True)
    p_align.add_argument("--rgb2", required=True)
    p_align.add_argument("--depth2", required=True)
    p_align.add_argument("--mask1", help="dynamic mask for frame 1 (nonzero = excluded)")
    p_align.add_argument("--mask2", help="dynamic mask for frame 2")
    p_align.add_argument("--timestamp", type=float, default=0.0, help="timestamp for the pose line (default: 0.0)")
    p_align.add_argument("--out", help="write the pose line to this file instead of stdout")
    _add_config_flags(p_align)
    p_align.set_defaults(func=_cmd_align)

    p_rec = sub.add_parser(
        "reconstruct",
        help="frames + trajectory + optional masks -> PLY",
    )
    p_rec.add_argument("--traj", required=True, help="trajectory file (world-from-camera)")
    p_rec.add_argument("--masks", help="directory of <timestamp>.png dynamic masks")
    _add_config_flags(p_rec)
    p_rec.set_defaults(func=_cmd_reconstruct)

    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _ERRORS as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
