"""Frame I/O and image-level utilities.

Datasets follow the common RGB-D benchmark layout: two plain-text index
files (``timestamp filename`` per line, ``#`` comments) for color and depth,
8-bit RGB PNGs, and 16-bit grayscale depth PNGs storing ``meters *
depth_scale`` (0 = missing measurement).
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np

__all__ = [
    "AssociationError",
    "FramePairRef",
    "FramePair",
    "read_index",
    "associate",
    "load_frame_pair",
    "read_gray_png",
    "write_gray_png",
    "decode_depth",
    "rgb_to_intensity",
    "build_pyramid",
    "sample_bilinear",
    "sample_bilinear_depth",
    "sample_bilinear_with_grad",
    "sample_bilinear_depth_with_grad",
]

#: Luma weights for RGB -> intensity conversion.
_LUMA = (0.299, 0.587, 0.114)


class AssociationError(ValueError):
    """No RGB/depth pairs could be associated within the time tolerance."""


@dataclass(frozen=True)
class FramePairRef:
    """An associated (rgb, depth) file pair, not yet loaded."""

    timestamp: float  # RGB timestamp; the pair's canonical time
    rgb_path: str
    depth_timestamp: float
    depth_path: str


@dataclass(frozen=True, eq=False)
class FramePair:
    """A loaded RGB-D frame: RGB uint8 (H,W,3) + depth in meters (H,W)."""

    timestamp: float
    rgb: np.ndarray
    depth: np.ndarray

    @property
    def height(self) -> int:
        return self.rgb.shape[0]

    @property
    def width(self) -> int:
        return self.rgb.shape[1]


def read_index(path: str | Path) -> list[tuple[float, str]]:
    """Parse a ``timestamp filename`` index file, skipping ``#`` comments."""
    entries: list[tuple[float, str]] = []
    with open(path, "r") as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) < 2:
                raise ValueError(f"{path}: malformed index line: {line!r}")
            entries.append((float(parts[0]), parts[1]))
    return entries


def associate(
    rgb_index: list[tuple[float, str]],
    depth_index: list[tuple[float, str]],
    max_dt: float = 0.02,
) -> list[FramePairRef]:
    """Greedy globally-nearest matching of RGB to depth timestamps.

    All candidate pairs within ``max_dt`` are sorted by (|dt|, rgb time,
    depth time) and accepted greedily, each timestamp used at most once.
    The result is sorted by RGB timestamp.  Raises
    :class:`AssociationError` if nothing matches.
    """
    candidates = []
    for i, (t_rgb, _) in enumerate(rgb_index):
        for j, (t_d, _) in enumerate(depth_index):
            dt = abs(t_rgb - t_d)
            if dt <= max_dt:
                candidates.append((dt, t_rgb, t_d, i, j))
    candidates.sort()
    used_rgb: set[int] = set()
    used_depth: set[int] = set()
    pairs: list[FramePairRef] = []
    for _, t_rgb, t_d, i, j in candidates:
        if i in used_rgb or j in used_depth:
            continue
        used_rgb.add(i)
        used_depth.add(j)
        pairs.append(FramePairRef(t_rgb, rgb_index[i][1], t_d, depth_index[j][1]))
    if not pairs:
        raise AssociationError(
            f"no rgb/depth pairs within {max_dt}s "
            f"({len(rgb_index)} rgb, {len(depth_index)} depth entries)"
        )
    pairs.sort(key=lambda p: p.timestamp)
    return pairs


def decode_depth(raw: np.ndarray, depth_scale: float = 5000.0) -> np.ndarray:
    """16-bit depth values -> meters (float64); 0 stays 0 = invalid."""
    return raw.astype(np.float64) / depth_scale


def load_frame_pair(
    ref: FramePairRef,
    rgb_root: str | Path = ".",
    depth_root: str | Path | None = None,
    depth_scale: float = 5000.0,
) -> FramePair:
    """Load the PNGs behind a :class:`FramePairRef`.

    Index entries are conventionally relative to their index file's
    directory, so the two may resolve under different roots
    (``depth_root`` defaults to ``rgb_root``).
    """
    if depth_root is None:
        depth_root = rgb_root
    rgb_path = os.path.join(str(rgb_root), ref.rgb_path)
    depth_path = os.path.join(str(depth_root), ref.depth_path)
    bgr = cv2.imread(rgb_path, cv2.IMREAD_COLOR)
    if bgr is None:
        raise FileNotFoundError(f"cannot read RGB image: {rgb_path}")
    raw = cv2.imread(depth_path, cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise FileNotFoundError(f"cannot read depth image: {depth_path}")
    if raw.ndim != 2:
        raise ValueError(f"{depth_path}: expected single-channel depth, got shape {raw.shape}")
    if bgr.shape[:2] != raw.shape:
        raise ValueError(
            f"rgb/depth size mismatch: {bgr.shape[:2]} vs {raw.shape} "
            f"({rgb_path}, {depth_path})"
        )
    return FramePair(ref.timestamp, bgr[:, :, ::-1].copy(), decode_depth(raw, depth_scale))


def read_gray_png(path: str | Path) -> np.ndarray:
    """Read an 8-bit single-channel PNG (first channel if saved as color)."""
    img = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if img is None:
        raise FileNotFoundError(f"cannot read image: {path}")
    if img.ndim == 3:
        img = img[:, :, 0]
    return img.astype(np.uint8)


def write_gray_png(path: str | Path, img: np.ndarray) -> None:
    """Write an 8-bit single-channel PNG."""
    if not cv2.imwrite(str(path), np.asarray(img, dtype=np.uint8)):
        raise OSError(f"cannot write image: {path}")


def rgb_to_intensity(rgb: np.ndarray) -> np.ndarray:
    """uint8 RGB (H,W,3) -> float64 intensity in [0, 1]."""
    r, g, b = _LUMA
    out = rgb[:, :, 0] * (r / 255.0) + rgb[:, :, 1] * (g / 255.0) + rgb[:, :, 2] * (b / 255.0)
    return out.astype(np.float64)


def _downsample_intensity(img: np.ndarray) -> np.ndarray:
    h2, w2 = img.shape[0] // 2, img.shape[1] // 2
    v = img[: 2 * h2, : 2 * w2]
    return 0.25 * (v[0::2, 0::2] + v[0::2, 1::2] + v[1::2, 0::2] + v[1::2, 1::2])


def _downsample_depth(depth: np.ndarray) -> np.ndarray:
    # First valid measurement of each 2x2 block in row-major order
    # (TL, TR, BL, BR); 0 if all four are missing.  Averaging across a depth
    # discontinuity would invent surfaces, so one real sample is kept instead.
    h2, w2 = depth.shape[0] // 2, depth.shape[1] // 2
    v = depth[: 2 * h2, : 2 * w2]
    out = v[0::2, 0::2].copy()
    for cand in (v[0::2, 1::2], v[1::2, 0::2], v[1::2, 1::2]):
        hole = out == 0.0
        if not hole.any():
            break
        out[hole] = cand[hole]
    return out


def build_pyramid(
    intensity: np.ndarray, depth: np.ndarray, levels: int
) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Coarse-to-fine pyramids: ``[level0, level1, ...]``, level 0 full-res.

    Intensity is 2x2 box-averaged; depth keeps the first valid sample of
    each 2x2 block.  Odd trailing rows/columns are dropped.
    """
    if levels < 1:
        raise ValueError("pyramid needs at least one level")
    ints = [np.asarray(intensity, dtype=np.float64)]
    deps = [np.asarray(depth, dtype=np.float64)]
    for _ in range(levels - 1):
        ints.append(_downsample_intensity(ints[-1]))
        deps.append(_downsample_depth(deps[-1]))
    return ints, deps


def sample_bilinear(img: np.ndarray, x, y) -> tuple[np.ndarray, np.ndarray]:
    """Bilinear interpolation at (x, y); returns ``(values, valid)``.

    Valid iff the full 4-neighbor stencil lies inside the image, i.e.
    ``0 <= x <= W-1`` and ``0 <= y <= H-1`` (the right/bottom edge uses the
    degenerate cell whose weight collapses onto the stored pixel, so integer
    coordinates always return the stored value exactly).  Out-of-range
    samples return 0 with ``valid`` False.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    h, w = img.shape[:2]
    valid = (x >= 0.0) & (x <= w - 1.0) & (y >= 0.0) & (y <= h - 1.0)
    x0 = np.clip(np.floor(x).astype(np.int64), 0, max(w - 2, 0))
    y0 = np.clip(np.floor(y).astype(np.int64), 0, max(h - 2, 0))
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    wx = np.where(valid, x - x0, 0.0)
    wy = np.where(valid, y - y0, 0.0)
    v00 = img[y0, x0]
    v01 = img[y0, x1]
    v10 = img[y1, x0]
    v11 = img[y1, x1]
    # Four-weight form: weight-0 corners contribute an exact 0, so samples at
    # integer coordinates (including the right/bottom edge) reproduce the
    # stored pixel bit-exactly.
    out = (
        v00 * ((1.0 - wx) * (1.0 - wy))
        + v01 * (wx * (1.0 - wy))
        + v10 * ((1.0 - wx) * wy)
        + v11 * (wx * wy)
    )
    return np.where(valid, out, 0.0), valid


def sample_bilinear_with_grad(
    img: np.ndarray, x, y
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Bilinear value plus the interpolant's exact in-cell partial
    derivatives: ``(value, d/dx, d/dy, valid)``.

    The gradient differentiates the same four-weight expression
    :func:`sample_bilinear` evaluates, so finite differences of the sampled
    value reproduce it to rounding error (away from cell boundaries, where
    the interpolant is only piecewise smooth).
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    h, w = img.shape[:2]
    valid = (x >= 0.0) & (x <= w - 1.0) & (y >= 0.0) & (y <= h - 1.0)
    x0 = np.clip(np.floor(x).astype(np.int64), 0, max(w - 2, 0))
    y0 = np.clip(np.floor(y).astype(np.int64), 0, max(h - 2, 0))
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    wx = np.where(valid, x - x0, 0.0)
    wy = np.where(valid, y - y0, 0.0)
    v00 = img[y0, x0]
    v01 = img[y0, x1]
    v10 = img[y1, x0]
    v11 = img[y1, x1]
    val = (
        v00 * ((1.0 - wx) * (1.0 - wy))
        + v01 * (wx * (1.0 - wy))
        + v10 * ((1.0 - wx) * wy)
        + v11 * (wx * wy)
    )
    gx = (v01 - v00) * (1.0 - wy) + (v11 - v10) * wy
    gy = (v10 - v00) * (1.0 - wx) + (v11 - v01) * wx
    zero = np.zeros_like(val)
    return (
        np.where(valid, val, 0.0),
        np.where(valid, gx, zero),
        np.where(valid, gy, zero),
        valid,
    )


def sample_bilinear_depth_with_grad(
    depth: np.ndarray, x, y
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Depth variant of :func:`sample_bilinear_with_grad`: additionally
    invalid when any stencil neighbor is a missing measurement (0)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    h, w = depth.shape
    valid = (x >= 0.0) & (x <= w - 1.0) & (y >= 0.0) & (y <= h - 1.0)
    x0 = np.clip(np.floor(x).astype(np.int64), 0, max(w - 2, 0))
    y0 = np.clip(np.floor(y).astype(np.int64), 0, max(h - 2, 0))
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    v00 = depth[y0, x0]
    v01 = depth[y0, x1]
    v10 = depth[y1, x0]
    v11 = depth[y1, x1]
    valid = valid & (v00 > 0) & (v01 > 0) & (v10 > 0) & (v11 > 0)
    wx = np.where(valid, x - x0, 0.0)
    wy = np.where(valid, y - y0, 0.0)
    val = (
        v00 * ((1.0 - wx) * (1.0 - wy))
        + v01 * (wx * (1.0 - wy))
        + v10 * ((1.0 - wx) * wy)
        + v11 * (wx * wy)
    )
    gx = (v01 - v00) * (1.0 - wy) + (v11 - v10) * wy
    gy = (v10 - v00) * (1.0 - wx) + (v11 - v01) * wx
    zero = np.zeros_like(val)
    return (
        np.where(valid, val, 0.0),
        np.where(valid, gx, zero),
        np.where(valid, gy, zero),
        valid,
    )


def sample_bilinear_depth(depth: np.ndarray, x, y) -> tuple[np.ndarray, np.ndarray]:
    """Like :func:`sample_bilinear` but a sample is also invalid when any of
    its 4 stencil neighbors is a missing measurement (0): interpolating
    across a hole would blend real geometry with nothing."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    h, w = depth.shape
    valid = (x >= 0.0) & (x <= w - 1.0) & (y >= 0.0) & (y <= h - 1.0)
    x0 = np.clip(np.floor(x).astype(np.int64), 0, max(w - 2, 0))
    y0 = np.clip(np.floor(y).astype(np.int64), 0, max(h - 2, 0))
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    v00 = depth[y0, x0]
    v01 = depth[y0, x1]
    v10 = depth[y1, x0]
    v11 = depth[y1, x1]
    valid = valid & (v00 > 0) & (v01 > 0) & (v10 > 0) & (v11 > 0)
    wx = np.where(valid, x - x0, 0.0)
    wy = np.where(valid, y - y0, 0.0)
    out = (
        v00 * ((1.0 - wx) * (1.0 - wy))
        + v01 * (wx * (1.0 - wy))
        + v10 * ((1.0 - wx) * wy)
        + v11 * (wx * wy)
    )
    return np.where(valid, out, 0.0), valid
