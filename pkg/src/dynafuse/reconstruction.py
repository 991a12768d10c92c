"""Static point cloud fusion and output writers.

World coordinates are the first camera's frame.  Frames contribute their
unmasked, valid-depth pixels on a stride grid, back-projected and moved by
the frame's world-from-camera pose; the merged cloud is voxel-downsampled
before writing.  Both writers are deterministic: identical inputs produce
byte-identical files.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import Intrinsics, Pose, pose_to_quat, quat_to_pose
from .imaging import FramePair

__all__ = [
    "PointCloud",
    "TrajectoryEntry",
    "fuse_frame",
    "voxel_downsample",
    "write_ply",
    "write_trajectory",
    "read_trajectory",
]


@dataclass(frozen=True, eq=False)
class PointCloud:
    """World-space points (N, 3) float64 with uint8 RGB colors (N, 3)."""

    xyz: np.ndarray
    rgb: np.ndarray

    @classmethod
    def empty(cls) -> "PointCloud":
        return cls(np.empty((0, 3), dtype=np.float64), np.empty((0, 3), dtype=np.uint8))

    def __len__(self) -> int:
        return self.xyz.shape[0]


@dataclass(frozen=True)
class TrajectoryEntry:
    """One camera pose: world-from-camera, quaternion order (qx, qy, qz, qw)."""

    timestamp: float
    t: tuple[float, float, float]
    q: tuple[float, float, float, float]

    def pose(self) -> Pose:
        return quat_to_pose(self.q, self.t)

    @classmethod
    def from_pose(cls, timestamp: float, pose: Pose) -> "TrajectoryEntry":
        q, t = pose_to_quat(pose)
        return cls(timestamp, tuple(float(v) for v in t), tuple(float(v) for v in q))


def fuse_frame(
    cloud: PointCloud,
    frame: FramePair,
    pose: Pose,
    K: Intrinsics,
    mask: np.ndarray | None = None,
    stride: int = 2,
) -> PointCloud:
    """Append the frame's static points (world frame) to ``cloud``.

    ``pose`` is world-from-camera; ``mask`` (bool or 0/255, nonzero =
    dynamic, expected pre-dilated) excludes pixels; only valid depth on the
    stride grid contributes.  Returns a new cloud; the input is unchanged.
    """
    h, w = frame.depth.shape
    ys, xs = np.mgrid[0:h:stride, 0:w:stride]
    ys = ys.ravel()
    xs = xs.ravel()
    z = frame.depth[ys, xs]
    keep = z > 0
    if mask is not None:
        keep &= mask[ys, xs] == 0
    xs, ys, z = xs[keep], ys[keep], z[keep]
    X = (xs - K.ox) / K.fx * z
    Y = (ys - K.oy) / K.fy * z
    pts_cam = np.stack([X, Y, z], axis=1)
    pts_world = pts_cam @ pose.R.T + pose.t
    colors = frame.rgb[ys, xs]
    return PointCloud(
        np.concatenate([cloud.xyz, pts_world], axis=0),
        np.concatenate([cloud.rgb, colors], axis=0),
    )


def voxel_downsample(cloud: PointCloud, voxel: float = 0.01) -> PointCloud:
    """One point per occupied voxel: member centroid, mean color (rounded).

    Output order is the lexicographic order of voxel indices, so the result
    is a pure function of the input point set and voxel size.
    """
    if voxel <= 0:
        raise ValueError("voxel size must be positive")
    if len(cloud) == 0:
        return cloud
    keys = np.floor(cloud.xyz / voxel).astype(np.int64)
    uniq, inverse = np.unique(keys, axis=0, return_inverse=True)
    inverse = inverse.ravel()
    n = uniq.shape[0]
    counts = np.bincount(inverse, minlength=n).astype(np.float64)
    xyz = np.empty((n, 3), dtype=np.float64)
    rgb_sum = np.empty((n, 3), dtype=np.float64)
    for c in range(3):
        xyz[:, c] = np.bincount(inverse, weights=cloud.xyz[:, c], minlength=n) / counts
        rgb_sum[:, c] = np.bincount(inverse, weights=cloud.rgb[:, c].astype(np.float64), minlength=n)
    rgb = np.clip(np.rint(rgb_sum / counts[:, None]), 0, 255).astype(np.uint8)
    return PointCloud(xyz, rgb)


def write_ply(cloud: PointCloud, path: str | Path) -> None:
    """ASCII PLY with float x/y/z and uchar red/green/blue."""
    lines = [
        "ply",
        "format ascii 1.0",
        f"element vertex {len(cloud)}",
        "property float x",
        "property float y",
        "property float z",
        "property uchar red",
        "property uchar green",
        "property uchar blue",
        "end_header",
    ]
    rows = [
        f"{p[0]:.6f} {p[1]:.6f} {p[2]:.6f} {c[0]} {c[1]} {c[2]}"
        for p, c in zip(cloud.xyz, cloud.rgb)
    ]
    Path(path).write_text("\n".join(lines + rows) + "\n")


def write_trajectory(entries: list[TrajectoryEntry], path: str | Path) -> None:
    """One ``timestamp tx ty tz qx qy qz qw`` line per pose.

    Pose components use shortest-round-trip float formatting, so parsing the
    file back recovers the exact values (timestamps keep the conventional
    6-decimal form).
    """
    lines = ["# timestamp tx ty tz qx qy qz qw"]
    for e in entries:
        vals = " ".join(repr(float(v)) for v in (*e.t, *e.q))
        lines.append(f"{e.timestamp:.6f} {vals}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_trajectory(path: str | Path) -> list[TrajectoryEntry]:
    entries: list[TrajectoryEntry] = []
    with open(path, "r") as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 8:
                raise ValueError(f"{path}: malformed trajectory line: {line!r}")
            ts, tx, ty, tz, qx, qy, qz, qw = (float(v) for v in parts)
            entries.append(TrajectoryEntry(ts, (tx, ty, tz), (qx, qy, qz, qw)))
    return entries
