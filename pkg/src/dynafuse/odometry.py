"""Dense RGB-D visual odometry on static pixels.

The relative pose between two frames minimizes photometric + geometric
residuals over frame-1 pixels that lie outside the (dilated) dynamic mask:

* warp ``tau(x, T) = project(T @ backproject(x, Z1(x)))``
* intensity residual ``r_I = I2(tau(x, T)) - I1(x)``
* depth residual ``r_z = Z2(tau(x, T)) - [T @ backproject(x, Z1(x))]_z``

A Gauss-Newton loop with a small Levenberg diagonal runs coarse-to-fine
over an image pyramid; increments are left-multiplicative twists,
``T <- se3_exp(delta) @ T``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import Intrinsics, Pose, se3_exp
from .imaging import (
    FramePair,
    build_pyramid,
    rgb_to_intensity,
    sample_bilinear,
    sample_bilinear_depth_with_grad,
    sample_bilinear_with_grad,
)

__all__ = [
    "InsufficientOverlapError",
    "DivergenceError",
    "OdomFrame",
    "Residuals",
    "AlignmentResult",
    "odom_frame_from_pair",
    "warp",
    "compute_residuals",
    "cost",
    "jacobian",
    "estimate_pose",
]


class InsufficientOverlapError(RuntimeError):
    """Too few usable pixels survive warping between the two frames."""


class DivergenceError(RuntimeError):
    """The optimization reached a non-finite state."""


@dataclass(frozen=True, eq=False)
class OdomFrame:
    """One frame prepared for alignment.

    ``mask`` (optional bool, True = excluded) marks dynamic pixels; callers
    are expected to pass it already dilated.
    """

    intensity: np.ndarray  # float64, [0, 1]
    depth: np.ndarray  # float64 meters, 0 = invalid
    mask: np.ndarray | None = None


def odom_frame_from_pair(pair: FramePair, mask: np.ndarray | None = None) -> OdomFrame:
    return OdomFrame(rgb_to_intensity(pair.rgb), pair.depth, mask)


@dataclass(eq=False)
class Residuals:
    """Residual samples over the frame-1 stride grid (struct-of-arrays).

    One slot per grid pixel; ``valid`` marks slots where the source pixel is
    unmasked with valid depth, the warped point stays in front of the
    camera, both target samples interpolate inside the image, the target
    depth stencil has no holes, and the warp does not land in frame 2's
    mask.  ``valid_fraction`` divides by the unmasked slots only — masking
    is deliberate exclusion, not lost overlap.
    """

    px: np.ndarray  # int, source pixel x
    py: np.ndarray  # int, source pixel y
    r_i: np.ndarray  # float, 0 where invalid
    r_z: np.ndarray  # float, 0 where invalid
    valid: np.ndarray  # bool
    n_candidates: int  # grid pixels outside the frame-1 mask

    @property
    def n_valid(self) -> int:
        return int(np.count_nonzero(self.valid))

    @property
    def valid_fraction(self) -> float:
        if self.n_candidates == 0:
            return 0.0
        return self.n_valid / self.n_candidates


@dataclass
class AlignmentResult:
    pose: Pose  # frame-1 -> frame-2 transform
    final_cost: float
    iterations_per_level: list[int] = field(default_factory=list)
    valid_pixel_fraction: float = 0.0


def warp(x: tuple[float, float], T: Pose, depth1: np.ndarray, K: Intrinsics):
    """Warp one frame-1 pixel into frame 2; ``None`` if it cannot be warped
    (no depth, behind the camera, or projecting outside the image)."""
    xi, yi = int(round(x[0])), int(round(x[1]))
    if not (0 <= yi < depth1.shape[0] and 0 <= xi < depth1.shape[1]):
        return None
    z = depth1[yi, xi]
    if z <= 0:
        return None
    X = (x[0] - K.ox) / K.fx * z
    Y = (x[1] - K.oy) / K.fy * z
    p2 = T.R @ np.array([X, Y, z]) + T.t
    if p2[2] <= 0:
        return None
    u = p2[0] / p2[2] * K.fx + K.ox
    v = p2[1] / p2[2] * K.fy + K.oy
    if not (0.0 <= u <= K.width - 1.0 and 0.0 <= v <= K.height - 1.0):
        return None
    return float(u), float(v)


class _Forward:
    """Everything computed in one residual pass, kept for the Jacobian."""

    __slots__ = (
        "px", "py", "i1", "p2x", "p2y", "p2z", "u", "v",
        "gi_x", "gi_y", "gz_x", "gz_y", "r_i", "r_z", "valid", "n_candidates",
    )


def _forward(f1: OdomFrame, f2: OdomFrame, T: Pose, K: Intrinsics, stride: int) -> _Forward:
    h, w = f1.depth.shape
    ys, xs = np.mgrid[0:h:stride, 0:w:stride]
    xs = xs.ravel()
    ys = ys.ravel()
    unmasked = (
        np.ones(xs.shape, dtype=bool) if f1.mask is None else ~f1.mask[ys, xs].astype(bool)
    )
    z1 = f1.depth[ys, xs]
    ok = unmasked & (z1 > 0)
    zs = np.where(ok, z1, 1.0)  # dummy depth keeps the algebra finite
    X = (xs - K.ox) / K.fx * zs
    Y = (ys - K.oy) / K.fy * zs
    R, t = T.R, T.t
    p2x = R[0, 0] * X + R[0, 1] * Y + R[0, 2] * zs + t[0]
    p2y = R[1, 0] * X + R[1, 1] * Y + R[1, 2] * zs + t[1]
    p2z = R[2, 0] * X + R[2, 1] * Y + R[2, 2] * zs + t[2]
    ok = ok & (p2z > 0)
    safe_z = np.where(ok, p2z, 1.0)
    u = p2x / safe_z * K.fx + K.ox
    v = p2y / safe_z * K.fy + K.oy
    i2, gi_x, gi_y, i_ok = sample_bilinear_with_grad(f2.intensity, u, v)
    z2, gz_x, gz_y, z_ok = sample_bilinear_depth_with_grad(f2.depth, u, v)
    ok = ok & i_ok & z_ok
    if f2.mask is not None:
        hit, hit_ok = sample_bilinear(f2.mask.astype(np.float64), u, v)
        ok = ok & hit_ok & (hit == 0.0)
    fw = _Forward()
    fw.px = xs
    fw.py = ys
    fw.i1 = f1.intensity[ys, xs]
    fw.p2x, fw.p2y, fw.p2z = p2x, p2y, p2z
    fw.u, fw.v = u, v
    fw.gi_x, fw.gi_y = gi_x, gi_y
    fw.gz_x, fw.gz_y = gz_x, gz_y
    fw.r_i = np.where(ok, i2 - fw.i1, 0.0)
    fw.r_z = np.where(ok, z2 - p2z, 0.0)
    fw.valid = ok
    fw.n_candidates = int(np.count_nonzero(unmasked))
    return fw


def _residuals_of(fw: _Forward) -> Residuals:
    return Residuals(fw.px, fw.py, fw.r_i, fw.r_z, fw.valid, fw.n_candidates)


def compute_residuals(
    f1: OdomFrame,
    f2: OdomFrame,
    T: Pose,
    K: Intrinsics,
    stride: int = 1,
    min_valid_fraction: float | None = 0.1,
) -> Residuals:
    """Residual samples of frame 1 warped into frame 2 under ``T``.

    Raises :class:`InsufficientOverlapError` when the valid fraction falls
    below ``min_valid_fraction`` (pass ``None`` to disable the check).
    """
    res = _residuals_of(_forward(f1, f2, T, K, stride))
    if min_valid_fraction is not None and res.valid_fraction < min_valid_fraction:
        raise InsufficientOverlapError(
            f"valid pixel fraction {res.valid_fraction:.4f} < {min_valid_fraction}"
        )
    return res


def cost(res: Residuals, w_intensity: float = 1.0, w_depth: float = 1.0) -> float:
    """Mean weighted squared residual over valid samples (inf if none)."""
    n = res.n_valid
    if n == 0:
        return float("inf")
    ri = res.r_i[res.valid]
    rz = res.r_z[res.valid]
    return float(w_intensity * np.dot(ri, ri) + w_depth * np.dot(rz, rz)) / n


def _huber_weights(r: np.ndarray, delta: float) -> np.ndarray:
    a = np.abs(r)
    return np.where(a <= delta, 1.0, delta / np.maximum(a, 1e-300))


def _huber_rho(r: np.ndarray, delta: float) -> np.ndarray:
    a = np.abs(r)
    return np.where(a <= delta, r * r, delta * (2.0 * a - delta))


def _objective(fw: _Forward, w_i: float, w_z: float, huber, deltas) -> float:
    n = int(np.count_nonzero(fw.valid))
    if n == 0:
        return float("inf")
    ri = fw.r_i[fw.valid]
    rz = fw.r_z[fw.valid]
    if huber:
        di, dz = deltas
        return float(w_i * np.sum(_huber_rho(ri, di)) + w_z * np.sum(_huber_rho(rz, dz))) / n
    return float(w_i * np.dot(ri, ri) + w_z * np.dot(rz, rz)) / n


def _jacobian_rows(fw: _Forward, K: Intrinsics) -> tuple[np.ndarray, np.ndarray]:
    """Analytic residual derivatives wrt the left twist at the current pose.

    Chain rule: d r / d xi = (image gradient) . (d project / d P') .
    (d P' / d xi) with d P'/d xi = [I | -skew(P')]; the depth residual
    additionally subtracts d P'_z / d xi = [0, 0, 1, Y', -X', 0].
    Rows of invalid samples are zero.
    """
    X, Y, Z = fw.p2x, fw.p2y, fw.p2z
    safe_z = np.where(fw.valid, Z, 1.0)
    iz = 1.0 / safe_z
    fx, fy = K.fx, K.fy
    # d pixel / d P' rows.
    du = np.empty((len(X), 3))
    dv = np.empty((len(X), 3))
    du[:, 0] = fx * iz
    du[:, 1] = 0.0
    du[:, 2] = -fx * X * iz * iz
    dv[:, 0] = 0.0
    dv[:, 1] = fy * iz
    dv[:, 2] = -fy * Y * iz * iz
    # d P' / d xi = [I3 | -skew(P')]; both residual rows share the chain.
    def row(gx, gy, sub_pz: bool):
        a0 = gx * du[:, 0] + gy * dv[:, 0]
        a1 = gx * du[:, 1] + gy * dv[:, 1]
        a2 = gx * du[:, 2] + gy * dv[:, 2]
        J = np.empty((len(X), 6))
        # translation block: a . I
        J[:, 0] = a0
        J[:, 1] = a1
        J[:, 2] = a2
        # rotation block: a . (-skew(P')) = P' x a
        J[:, 3] = a2 * Y - a1 * Z
        J[:, 4] = a0 * Z - a2 * X
        J[:, 5] = a1 * X - a0 * Y
        if sub_pz:
            # minus d P'_z / d xi = [0, 0, 1, Y', -X', 0]
            J[:, 2] -= 1.0
            J[:, 3] -= Y
            J[:, 4] -= -X
        J[~fw.valid] = 0.0
        return J

    J_i = row(fw.gi_x, fw.gi_y, sub_pz=False)
    J_z = row(fw.gz_x, fw.gz_y, sub_pz=True)
    return J_i, J_z


def jacobian(
    f1: OdomFrame, f2: OdomFrame, T: Pose, K: Intrinsics, stride: int = 1
) -> tuple[np.ndarray, Residuals]:
    """Residual Jacobian, shape ``(n_slots, 2, 6)``: per sample one
    intensity row and one depth row against the twist ``(v, w)``."""
    fw = _forward(f1, f2, T, K, stride)
    J_i, J_z = _jacobian_rows(fw, K)
    J = np.stack([J_i, J_z], axis=1)
    return J, _residuals_of(fw)


def estimate_pose(
    f1: OdomFrame,
    f2: OdomFrame,
    K: Intrinsics,
    init: Pose | None = None,
    levels: int = 4,
    w_intensity: float = 1.0,
    w_depth: float = 1.0,
    gn_max_iters: int = 20,
    gn_tol: float = 1e-6,
    min_valid_fraction: float = 0.1,
    stride: int = 1,
    huber: bool = False,
    huber_delta_i: float = 0.1,
    huber_delta_z: float = 0.05,
    max_damping_retries: int = 5,
) -> AlignmentResult:
    """Coarse-to-fine Gauss-Newton estimate of the frame-1 -> frame-2 pose.

    Each level solves ``(J^T W J + lam I) delta = -J^T W r`` with
    ``lam = 1e-6 tr(J^T W J) / 6``, accepts steps that do not increase the
    (mean, optionally Huber-robustified) cost, and retries a rejected step
    with 10x damping up to ``max_damping_retries`` times before moving on.
    """
    ints1, deps1 = build_pyramid(f1.intensity, f1.depth, levels)
    ints2, deps2 = build_pyramid(f2.intensity, f2.depth, levels)
    masks1 = _mask_pyramid(f1.mask, levels)
    masks2 = _mask_pyramid(f2.mask, levels)
    T = init if init is not None else Pose.identity()
    deltas = (huber_delta_i, huber_delta_z)
    iters_per_level: list[int] = []
    final_fw = None
    for L in reversed(range(levels)):
        K_L = K.scaled(L)
        f1L = OdomFrame(ints1[L], deps1[L], masks1[L] if masks1 else None)
        f2L = OdomFrame(ints2[L], deps2[L], masks2[L] if masks2 else None)
        fw = _forward(f1L, f2L, T, K_L, stride)
        frac = _residuals_of(fw).valid_fraction
        if frac < min_valid_fraction:
            raise InsufficientOverlapError(
                f"level {L}: valid pixel fraction {frac:.4f} < {min_valid_fraction}"
            )
        cur = _objective(fw, w_intensity, w_depth, huber, deltas)
        if not np.isfinite(cur):
            raise DivergenceError(f"level {L}: non-finite cost at the initial pose")
        iters = 0
        for _ in range(gn_max_iters):
            J_i, J_z = _jacobian_rows(fw, K_L)
            wi = np.where(fw.valid, w_intensity, 0.0)
            wz = np.where(fw.valid, w_depth, 0.0)
            if huber:
                wi = wi * _huber_weights(fw.r_i, huber_delta_i)
                wz = wz * _huber_weights(fw.r_z, huber_delta_z)
            H = J_i.T @ (J_i * wi[:, None]) + J_z.T @ (J_z * wz[:, None])
            g = J_i.T @ (wi * fw.r_i) + J_z.T @ (wz * fw.r_z)
            lam = 1e-6 * float(np.trace(H)) / 6.0
            accepted = False
            for _retry in range(max_damping_retries + 1):
                try:
                    delta = np.linalg.solve(H + lam * np.eye(6), -g)
                except np.linalg.LinAlgError:
                    delta = None
                if delta is not None and np.all(np.isfinite(delta)):
                    T_new = se3_exp(delta) @ T
                    fw_new = _forward(f1L, f2L, T_new, K_L, stride)
                    new = _objective(fw_new, w_intensity, w_depth, huber, deltas)
                    if new <= cur:
                        accepted = True
                        break
                lam = 10.0 * lam if lam > 0 else 1e-12
            if not accepted:
                break
            T, fw, cur = T_new, fw_new, new
            iters += 1
            if float(np.linalg.norm(delta)) < gn_tol:
                break
        iters_per_level.append(iters)
        final_fw = fw
    res = _residuals_of(final_fw)
    return AlignmentResult(
        pose=T,
        final_cost=cost(res, w_intensity, w_depth),
        iterations_per_level=iters_per_level,
        valid_pixel_fraction=res.valid_fraction,
    )


def _mask_pyramid(mask: np.ndarray | None, levels: int) -> list[np.ndarray] | None:
    """Downsample an exclusion mask by 2x2 any-pooling (conservative)."""
    if mask is None:
        return None
    out = [np.asarray(mask, dtype=bool)]
    for _ in range(levels - 1):
        m = out[-1]
        h2, w2 = m.shape[0] // 2, m.shape[1] // 2
        v = m[: 2 * h2, : 2 * w2]
        out.append(v[0::2, 0::2] | v[0::2, 1::2] | v[1::2, 0::2] | v[1::2, 1::2])
    return out
