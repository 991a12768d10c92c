"""Figure rendering for run outputs: cloud scatter, trajectory, energy traces.

All figures are written straight to files (Agg backend); nothing opens a
display.  These are presentation artifacts — the PLY and trajectory files
remain the canonical outputs.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .reconstruction import PointCloud, TrajectoryEntry

__all__ = ["save_cloud_scatter", "save_trajectory_plot", "save_energy_traces"]


def save_cloud_scatter(
    cloud: PointCloud, path: str | Path, max_points: int = 50000, point_size: float = 1.0
) -> None:
    """3-D scatter of the fused static scene, colored by point RGB."""
    fig = plt.figure(figsize=(8, 6))
    ax = fig.add_subplot(projection="3d")
    n = len(cloud)
    if n:
        if n > max_points:
            # Even subsample; deterministic.
            sel = np.linspace(0, n - 1, max_points).astype(np.int64)
        else:
            sel = np.arange(n)
        xyz = cloud.xyz[sel]
        ax.scatter(
            xyz[:, 0], xyz[:, 1], xyz[:, 2], c=cloud.rgb[sel] / 255.0, s=point_size, linewidths=0
        )
        _equal_aspect(ax, xyz)
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.set_zlabel("z [m]")
    ax.set_title(f"fused static cloud ({n} points)")
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)


def save_trajectory_plot(entries: list[TrajectoryEntry], path: str | Path) -> None:
    """Camera path through world space with start/end markers."""
    t = np.array([e.t for e in entries], dtype=np.float64).reshape(-1, 3)
    fig = plt.figure(figsize=(8, 6))
    ax = fig.add_subplot(projection="3d")
    if len(t):
        ax.plot(t[:, 0], t[:, 1], t[:, 2], "-o", markersize=2.5, linewidth=1.0)
        ax.scatter(*t[0], color="green", s=40, label="start")
        ax.scatter(*t[-1], color="red", s=40, label="end")
        ax.legend()
        _equal_aspect(ax, t)
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.set_zlabel("z [m]")
    ax.set_title(f"camera trajectory ({len(t)} poses)")
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)


def save_energy_traces(
    traces: list[tuple[float, list[float]]], path: str | Path, max_traces: int = 8
) -> None:
    """Per-box GrabCut energy vs. iteration (non-increasing by construction)."""
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for ts, energies in traces[:max_traces]:
        if energies:
            ax.plot(range(1, len(energies) + 1), energies, "-o", markersize=3, label=f"t={ts:.3f}")
    ax.set_xlabel("iteration")
    ax.set_ylabel("Gibbs energy")
    ax.set_title("segmentation energy traces")
    if len(traces[:max_traces]) <= 8 and traces:
        ax.legend(fontsize=7)
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)


def _equal_aspect(ax, pts: np.ndarray) -> None:
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    center = (lo + hi) / 2
    half = float((hi - lo).max()) / 2 or 1.0
    ax.set_xlim(center[0] - half, center[0] + half)
    ax.set_ylim(center[1] - half, center[1] + half)
    ax.set_zlim(center[2] - half, center[2] + half)
