"""Smoke tests for the report figures (Agg backend, files only)."""

import numpy as np

from dynafuse.geometry import Pose
from dynafuse.reconstruction import PointCloud, TrajectoryEntry
from dynafuse.report import save_cloud_scatter, save_energy_traces, save_trajectory_plot


def png_ok(path):
    data = path.read_bytes()
    return data[:8] == b"\x89PNG\r\n\x1a\n" and len(data) > 100


def test_cloud_scatter(tmp_path, rng):
    cloud = PointCloud(
        rng.random((300, 3)), rng.integers(0, 256, (300, 3)).astype(np.uint8)
    )
    p = tmp_path / "cloud.png"
    save_cloud_scatter(cloud, p)
    assert png_ok(p)


def test_cloud_scatter_subsamples_large_clouds(tmp_path, rng):
    cloud = PointCloud(
        rng.random((60_000, 3)), rng.integers(0, 256, (60_000, 3)).astype(np.uint8)
    )
    p = tmp_path / "big.png"
    save_cloud_scatter(cloud, p, max_points=5000)
    assert png_ok(p)


def test_cloud_scatter_empty(tmp_path):
    p = tmp_path / "empty.png"
    save_cloud_scatter(PointCloud.empty(), p)
    assert png_ok(p)


def test_trajectory_plot(tmp_path):
    entries = [
        TrajectoryEntry.from_pose(float(i), Pose(np.eye(3), np.array([0.01 * i, 0.0, 0.0])))
        for i in range(5)
    ]
    p = tmp_path / "traj.png"
    save_trajectory_plot(entries, p)
    assert png_ok(p)


def test_energy_traces(tmp_path):
    traces = [(1.0 + i, [100.0 - j for j in range(4)]) for i in range(12)]
    p = tmp_path / "energy.png"
    save_energy_traces(traces, p, max_traces=8)
    assert png_ok(p)
