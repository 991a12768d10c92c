"""End-to-end batch pipeline: detections -> masks -> poses -> fused cloud.

Frames stream through in timestamp order with O(1) frames held in memory:
each frame is segmented (GrabCut seeded by its dynamic detections), aligned
against the previous frame on unmasked pixels, and fused into the static
point cloud.  World coordinates are the first camera's frame.

Per-frame segmentation or alignment failures are logged and the frame is
skipped for fusion (alignment falls back to identity so the trajectory
stays chained); the run continues.
"""

from __future__ import annotations

import logging
import os
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import PipelineConfig
from .detection import DetectionSet, DynamicPolicy, parse_detections, select_dynamic
from .geometry import Intrinsics, Pose
from .imaging import (
    FramePair,
    associate,
    load_frame_pair,
    read_gray_png,
    read_index,
    write_gray_png,
)
from .odometry import (
    DivergenceError,
    InsufficientOverlapError,
    estimate_pose,
    odom_frame_from_pair,
)
from .reconstruction import (
    PointCloud,
    TrajectoryEntry,
    fuse_frame,
    voxel_downsample,
    write_ply,
    write_trajectory,
)
from .segmentation import (
    DegenerateTrimapError,
    InvalidBoxError,
    apply_strokes,
    dilate_mask,
    grabcut,
    init_trimap,
    strokes_from_image,
)

__all__ = ["RunSummary", "run", "segment_frame", "reconstruct_from_files"]

log = logging.getLogger("dynafuse")


@dataclass
class RunSummary:
    frames_processed: int = 0
    frames_with_detections: int = 0
    frames_fused: int = 0
    segmentation_failures: int = 0
    alignment_failures: int = 0
    alignments_attempted: int = 0
    mean_valid_fraction: float = 0.0
    mean_gn_iterations: float = 0.0
    point_count: int = 0
    elapsed_seconds: float = 0.0

    def lines(self) -> list[str]:
        return [
            f"frames_processed: {self.frames_processed}",
            f"frames_with_detections: {self.frames_with_detections}",
            f"frames_fused: {self.frames_fused}",
            f"segmentation_failures: {self.segmentation_failures}",
            f"alignment_failures: {self.alignment_failures}",
            f"mean_valid_fraction: {self.mean_valid_fraction:.4f}",
            f"mean_gn_iterations: {self.mean_gn_iterations:.2f}",
            f"point_count: {self.point_count}",
            f"elapsed_seconds: {self.elapsed_seconds:.2f}",
        ]


def _match_detections(
    refs, det_sets: list[DetectionSet], max_dt: float
) -> dict[int, DetectionSet]:
    """Greedy nearest-timestamp matching, each record used at most once."""
    candidates = []
    for i, ref in enumerate(refs):
        for j, ds in enumerate(det_sets):
            dt = abs(ref.timestamp - ds.timestamp)
            if dt <= max_dt:
                candidates.append((dt, i, j))
    candidates.sort()
    out: dict[int, DetectionSet] = {}
    used: set[int] = set()
    for _, i, j in candidates:
        if i in out or j in used:
            continue
        out[i] = det_sets[j]
        used.add(j)
    return out


def segment_frame(
    frame: FramePair,
    boxes,
    cfg: PipelineConfig,
    strokes=None,
) -> tuple[np.ndarray | None, list[list[float]], int]:
    """Dynamic mask for one frame: GrabCut per box, results OR-ed, dilated.

    Returns ``(mask, energy_traces, failures)``; ``mask`` is uint8 0/255
    (None when there are no boxes), already dilated by
    ``cfg.mask_dilation_px`` — the operative mask the rest of the pipeline
    uses.  ``failures`` counts boxes whose segmentation raised.
    """
    if not boxes:
        return None, [], 0
    h, w = frame.rgb.shape[:2]
    combined = np.zeros((h, w), dtype=bool)
    traces: list[list[float]] = []
    failures = 0
    for box in boxes:
        try:
            trimap = init_trimap(box, w, h)
            if strokes is not None:
                trimap = apply_strokes(trimap, strokes)
            result = grabcut(
                frame.rgb,
                trimap,
                n_components=cfg.gmm_components,
                gamma=cfg.gamma,
                max_iters=cfg.grabcut_max_iters,
                tol=cfg.grabcut_tol,
            )
            combined |= result.alpha.astype(bool)
            traces.append(result.energies)
            if result.collapsed:
                log.warning("t=%.6f box %s: segmentation collapsed to one class", frame.timestamp, box)
        except (InvalidBoxError, DegenerateTrimapError, ValueError) as e:
            failures += 1
            log.warning("t=%.6f box %s: segmentation failed: %s", frame.timestamp, box, e)
    mask = dilate_mask(combined, cfg.mask_dilation_px) * np.uint8(255)
    return mask, traces, failures


def _load_strokes(cfg: PipelineConfig, timestamp: float):
    if not cfg.strokes_dir:
        return None
    path = Path(cfg.strokes_dir) / f"{timestamp:.6f}.strokes.png"
    if not path.exists():
        return None
    return strokes_from_image(read_gray_png(path))


def run(cfg: PipelineConfig) -> RunSummary:
    """Execute the full pipeline per ``cfg``; writes the PLY, the
    trajectory, and any debug/report outputs, and returns a summary."""
    t_start = time.monotonic()
    cfg.validate()
    rgb_root = os.path.dirname(os.path.abspath(cfg.rgb_index))
    depth_root = os.path.dirname(os.path.abspath(cfg.depth_index))
    rgb_idx = read_index(cfg.rgb_index)
    depth_idx = read_index(cfg.depth_index)
    refs = associate(rgb_idx, depth_idx, cfg.max_dt)

    policy = DynamicPolicy(cfg.dynamic_class_set(), cfg.min_confidence)
    summary = RunSummary()
    cloud = PointCloud.empty()
    trajectory: list[TrajectoryEntry] = []
    energy_traces: list[tuple[float, list[float]]] = []
    valid_fractions: list[float] = []
    gn_iterations: list[int] = []

    if cfg.debug_mask_dir:
        os.makedirs(cfg.debug_mask_dir, exist_ok=True)

    K: Intrinsics | None = None
    det_by_frame: dict[int, DetectionSet] = {}
    prev_odom = None
    prev_pose_w = Pose.identity()
    prev_rel = Pose.identity()

    for i, ref in enumerate(refs):
        frame = load_frame_pair(ref, rgb_root, depth_root, cfg.depth_scale)
        if K is None:
            K = Intrinsics(cfg.fx, cfg.fy, cfg.ox, cfg.oy, frame.width, frame.height)
            if cfg.detections:
                det_sets = parse_detections(cfg.detections, K.width, K.height)
                det_by_frame = _match_detections(refs, det_sets, cfg.max_dt)

        boxes = []
        if i in det_by_frame:
            boxes = select_dynamic(det_by_frame[i], policy)
        if boxes:
            summary.frames_with_detections += 1
        mask, traces, seg_failures = segment_frame(frame, boxes, cfg, _load_strokes(cfg, ref.timestamp))
        summary.segmentation_failures += seg_failures
        for tr in traces:
            energy_traces.append((ref.timestamp, tr))
        if mask is not None and cfg.debug_mask_dir:
            write_gray_png(Path(cfg.debug_mask_dir) / f"{ref.timestamp:.6f}.png", mask)

        odom = odom_frame_from_pair(frame, mask.astype(bool) if mask is not None else None)
        align_failed = False
        if i == 0:
            pose_w = Pose.identity()
        else:
            summary.alignments_attempted += 1
            init = prev_rel if cfg.init_from_previous else Pose.identity()
            try:
                result = estimate_pose(
                    prev_odom,
                    odom,
                    K,
                    init=init,
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
                rel = result.pose  # frame (i-1) -> frame i
                valid_fractions.append(result.valid_pixel_fraction)
                gn_iterations.append(sum(result.iterations_per_level))
                prev_rel = rel
            except (InsufficientOverlapError, DivergenceError) as e:
                align_failed = True
                summary.alignment_failures += 1
                rel = Pose.identity()
                prev_rel = Pose.identity()
                log.warning("t=%.6f: alignment failed: %s", ref.timestamp, e)
            pose_w = prev_pose_w @ rel.inverse()

        trajectory.append(TrajectoryEntry.from_pose(ref.timestamp, pose_w))
        if not align_failed and seg_failures == 0:
            cloud = fuse_frame(cloud, frame, pose_w, K, mask, cfg.fusion_stride)
            summary.frames_fused += 1
        summary.frames_processed += 1
        prev_odom = odom
        prev_pose_w = pose_w

    cloud = voxel_downsample(cloud, cfg.voxel_size)
    summary.point_count = len(cloud)
    summary.mean_valid_fraction = float(np.mean(valid_fractions)) if valid_fractions else 0.0
    summary.mean_gn_iterations = float(np.mean(gn_iterations)) if gn_iterations else 0.0

    for out in (cfg.out_ply, cfg.out_traj):
        parent = os.path.dirname(out)
        if parent:
            os.makedirs(parent, exist_ok=True)
    write_ply(cloud, cfg.out_ply)
    write_trajectory(trajectory, cfg.out_traj)
    if cfg.report_dir:
        from . import report

        os.makedirs(cfg.report_dir, exist_ok=True)
        rd = Path(cfg.report_dir)
        report.save_cloud_scatter(cloud, rd / "cloud.png")
        report.save_trajectory_plot(trajectory, rd / "trajectory.png")
        if energy_traces:
            report.save_energy_traces(energy_traces, rd / "energy_traces.png")
    summary.elapsed_seconds = time.monotonic() - t_start
    return summary


def reconstruct_from_files(
    cfg: PipelineConfig,
    traj_path: str | Path,
    mask_dir: str | Path | None = None,
    out_ply: str | Path | None = None,
) -> PointCloud:
    """Fuse a cloud from frames + a written trajectory + optional mask PNGs.

    Mask files are looked up as ``<timestamp>.png`` (6-decimal) under
    ``mask_dir``; frames without a matching trajectory entry are skipped.
    With the masks and trajectory produced by :func:`run` (and the same
    config), the written PLY is byte-identical to the pipeline's.
    """
    from .reconstruction import read_trajectory

    entries = read_trajectory(traj_path)
    if not entries:
        raise ValueError(f"trajectory file {traj_path} contains no poses")
    rgb_root = os.path.dirname(os.path.abspath(cfg.rgb_index))
    depth_root = os.path.dirname(os.path.abspath(cfg.depth_index))
    refs = associate(read_index(cfg.rgb_index), read_index(cfg.depth_index), cfg.max_dt)
    by_idx: dict[int, TrajectoryEntry] = {}
    candidates = []
    for i, ref in enumerate(refs):
        for j, e in enumerate(entries):
            dt = abs(ref.timestamp - e.timestamp)
            if dt <= cfg.max_dt:
                candidates.append((dt, i, j))
    candidates.sort()
    used: set[int] = set()
    for _, i, j in candidates:
        if i in by_idx or j in used:
            continue
        by_idx[i] = entries[j]
        used.add(j)

    K: Intrinsics | None = None
    cloud = PointCloud.empty()
    for i, ref in enumerate(refs):
        if i not in by_idx:
            continue
        frame = load_frame_pair(ref, rgb_root, depth_root, cfg.depth_scale)
        if K is None:
            K = Intrinsics(cfg.fx, cfg.fy, cfg.ox, cfg.oy, frame.width, frame.height)
        mask = None
        if mask_dir is not None:
            mpath = Path(mask_dir) / f"{ref.timestamp:.6f}.png"
            if mpath.exists():
                mask = read_gray_png(mpath)
        cloud = fuse_frame(cloud, frame, by_idx[i].pose(), K, mask, cfg.fusion_stride)
    cloud = voxel_downsample(cloud, cfg.voxel_size)
    if out_ply is not None:
        parent = os.path.dirname(str(out_ply))
        if parent:
            os.makedirs(parent, exist_ok=True)
        write_ply(cloud, out_ply)
    return cloud
