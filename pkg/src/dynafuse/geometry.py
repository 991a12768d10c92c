"""Pinhole camera model and SE(3) pose algebra.

Conventions used throughout the package:

* Pixel coordinates are (x, y) with x along image columns, y along rows.
  The optical center (ox, oy) is expressed in the same units.
* 3-D points are homogeneous 4-vectors ``(X, Y, Z, 1)`` in camera
  coordinates, Z pointing into the scene along the optical axis.
* Rigid transforms are ``Pose`` objects (rotation matrix R, translation t)
  acting as ``P' = R @ P + t``.
* se(3) twists are 6-vectors ``(vx, vy, vz, wx, wy, wz)`` — translation
  block first, rotation block second.  ``se3_exp`` applies the closed-form
  Rodrigues / left-Jacobian formulas with Taylor fallbacks for small angles.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "BehindCameraError",
    "InvalidDepthError",
    "NearSingularLogError",
    "Intrinsics",
    "Pose",
    "backproject",
    "project",
    "transform_point",
    "se3_exp",
    "se3_log",
    "pose_to_quat",
    "quat_to_pose",
]

# Below this rotation magnitude the closed-form Rodrigues coefficients are
# replaced by their Taylor expansions.  The switch sits well above the 1e-8
# scale where (1 - cos th) underflows to 0: the closed form for
# B = (1 - cos th)/th^2 keeps ~2e-8 relative error at th = 1e-4 and degrades
# quadratically below, while the quadratic Taylor term is exact to ~1e-18
# there.
_SMALL_ANGLE = 1e-4
# log() is refused within this margin of a half-turn, where the axis is
# numerically unrecoverable from the rotation matrix.
_PI_MARGIN = 1e-6


class InvalidDepthError(ValueError):
    """Backprojection was asked for a non-positive or non-finite depth."""


class BehindCameraError(ValueError):
    """Projection was asked for a point with Z <= 0."""


class NearSingularLogError(ValueError):
    """se3_log near a half-turn rotation, where the twist is ill-defined."""


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole intrinsics plus image size (pixels)."""

    fx: float
    fy: float
    ox: float
    oy: float
    width: int
    height: int

    def __post_init__(self) -> None:
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if not (self.width > 0 and self.height > 0):
            raise ValueError(f"image size must be positive, got {self.width}x{self.height}")

    def scaled(self, level: int) -> "Intrinsics":
        """Intrinsics of pyramid level ``level`` (level 0 = full resolution).

        Each halving maps fx -> fx/2 and ox -> (ox - 0.5)/2: pixel centers of
        the coarse grid sit at the average of the 2x2 fine-grid centers they
        aggregate.
        """
        if level < 0:
            raise ValueError("pyramid level must be >= 0")
        s = 2**level
        return Intrinsics(
            fx=self.fx / s,
            fy=self.fy / s,
            ox=(self.ox + 0.5) / s - 0.5,
            oy=(self.oy + 0.5) / s - 0.5,
            width=self.width // s,
            height=self.height // s,
        )


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid transform: rotation matrix ``R`` (3x3) and translation ``t`` (3,)."""

    R: np.ndarray
    t: np.ndarray

    def __post_init__(self) -> None:
        R = np.asarray(self.R, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.t, dtype=np.float64).reshape(3)
        # Scalar-unrolled checks: this constructor sits inside optimization
        # loops, and the small-matrix numpy route costs ~10x more.
        a, b, c = R[0]
        d, e, f = R[1]
        g, h, i = R[2]
        err = max(
            abs(a * a + b * b + c * c - 1.0),
            abs(d * d + e * e + f * f - 1.0),
            abs(g * g + h * h + i * i - 1.0),
            abs(a * d + b * e + c * f),
            abs(a * g + b * h + c * i),
            abs(d * g + e * h + f * i),
        )
        if err > 1e-9:
            raise ValueError(f"R is not orthonormal (max |R R^T - I| = {err:.3e})")
        det = a * (e * i - f * h) - b * (d * i - f * g) + c * (d * h - e * g)
        if abs(det - 1.0) > 1e-9:
            raise ValueError(f"R is not a proper rotation (det = {det!r})")
        R = R.copy()
        t = t.copy()
        R.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", t)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    def matrix(self) -> np.ndarray:
        """The 4x4 homogeneous matrix."""
        T = np.eye(4)
        T[:3, :3] = self.R
        T[:3, 3] = self.t
        return T

    def compose(self, other: "Pose") -> "Pose":
        """``self @ other``: apply ``other`` first, then ``self``."""
        return Pose(self.R @ other.R, self.R @ other.t + self.t)

    def inverse(self) -> "Pose":
        return Pose(self.R.T, -self.R.T @ self.t)

    def __matmul__(self, other: "Pose") -> "Pose":
        return self.compose(other)


def backproject(x, y, z, K: Intrinsics) -> np.ndarray:
    """Lift pixel(s) ``(x, y)`` at depth ``z`` to homogeneous camera points.

    Accepts scalars or broadcastable arrays; returns shape ``(..., 4)`` with
    the last component 1.  Raises :class:`InvalidDepthError` if any depth is
    non-positive or non-finite.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    if not np.all(np.isfinite(z)) or np.any(z <= 0):
        raise InvalidDepthError("depth must be finite and > 0")
    X = (x - K.ox) / K.fx * z
    Y = (y - K.oy) / K.fy * z
    X, Y, z = np.broadcast_arrays(X, Y, z)
    out = np.empty(X.shape + (4,), dtype=np.float64)
    out[..., 0] = X
    out[..., 1] = Y
    out[..., 2] = z
    out[..., 3] = 1.0
    return out


def project(p: np.ndarray, K: Intrinsics) -> np.ndarray:
    """Project camera point(s) to pixel coordinates, shape ``(..., 2)``.

    Accepts ``(..., 3)`` or homogeneous ``(..., 4)`` arrays.  Raises
    :class:`BehindCameraError` if any Z <= 0.  No image-bounds clipping is
    applied; callers decide what to do with out-of-frame projections.
    """
    p = np.asarray(p, dtype=np.float64)
    X, Y, Z = p[..., 0], p[..., 1], p[..., 2]
    if np.any(Z <= 0):
        raise BehindCameraError("cannot project points with Z <= 0")
    out = np.empty(Z.shape + (2,), dtype=np.float64)
    out[..., 0] = X / Z * K.fx + K.ox
    out[..., 1] = Y / Z * K.fy + K.oy
    return out


def transform_point(T: Pose, p: np.ndarray) -> np.ndarray:
    """Apply ``T`` to point(s) ``p`` of shape ``(..., 3)`` or ``(..., 4)``."""
    p = np.asarray(p, dtype=np.float64)
    xyz = p[..., :3] @ T.R.T + T.t
    if p.shape[-1] == 4:
        out = np.empty_like(p)
        out[..., :3] = xyz
        out[..., 3] = p[..., 3]
        return out
    return xyz


def se3_exp(xi) -> Pose:
    """Exponential map of a twist ``(v, w)`` to a :class:`Pose`.

    ``R = I + A [w]x + B [w]x^2`` and ``t = V v`` with the left Jacobian
    ``V = I + B [w]x + C [w]x^2`` where ``A = sin(th)/th``,
    ``B = (1 - cos(th))/th^2``, ``C = (th - sin(th))/th^3``.
    """
    xi = np.asarray(xi, dtype=np.float64).reshape(6)
    v0, v1, v2 = float(xi[0]), float(xi[1]), float(xi[2])
    x, y, z = float(xi[3]), float(xi[4]), float(xi[5])
    th2 = x * x + y * y + z * z
    th = math.sqrt(th2)
    if th < _SMALL_ANGLE:
        A = 1.0 - th2 / 6.0
        B = 0.5 - th2 / 24.0
        C = 1.0 / 6.0 - th2 / 120.0
    else:
        s, c = math.sin(th), math.cos(th)
        A = s / th
        B = (1.0 - c) / th2
        C = (th - s) / (th2 * th)
    # M(p, q) = I + p [w]x + q [w]x^2, written out elementwise; R uses
    # (A, B), the left Jacobian V uses (B, C).
    xx, yy, zz = x * x, y * y, z * z
    xy, xz, yz = x * y, x * z, y * z

    def m(p, q):
        return np.array(
            [
                [1.0 - q * (yy + zz), q * xy - p * z, q * xz + p * y],
                [q * xy + p * z, 1.0 - q * (xx + zz), q * yz - p * x],
                [q * xz - p * y, q * yz + p * x, 1.0 - q * (xx + yy)],
            ]
        )

    R = m(A, B)
    Vb, Vc = B, C
    t = np.array(
        [
            (1.0 - Vc * (yy + zz)) * v0 + (Vc * xy - Vb * z) * v1 + (Vc * xz + Vb * y) * v2,
            (Vc * xy + Vb * z) * v0 + (1.0 - Vc * (xx + zz)) * v1 + (Vc * yz - Vb * x) * v2,
            (Vc * xz - Vb * y) * v0 + (Vc * yz + Vb * x) * v1 + (1.0 - Vc * (xx + yy)) * v2,
        ]
    )
    return Pose(R, t)


def se3_log(T: Pose) -> np.ndarray:
    """Logarithm map: the twist ``(v, w)`` with ``se3_exp(xi) == T``.

    The rotation angle comes from ``atan2(|R - R^T| / 2, (tr R - 1) / 2)``,
    which stays well-conditioned down to zero rotation.  Raises
    :class:`NearSingularLogError` within 1e-6 of a half-turn, where the axis
    sign cannot be recovered reliably.
    """
    R = T.R
    a0 = float(R[2, 1] - R[1, 2])
    a1 = float(R[0, 2] - R[2, 0])
    a2 = float(R[1, 0] - R[0, 1])
    s = 0.5 * math.sqrt(a0 * a0 + a1 * a1 + a2 * a2)  # == sin(theta)
    c = 0.5 * float(R[0, 0] + R[1, 1] + R[2, 2] - 1.0)  # == cos(theta)
    th = math.atan2(s, max(-1.0, min(1.0, c)))
    if th >= math.pi - _PI_MARGIN:
        raise NearSingularLogError(f"rotation angle {th!r} is too close to pi")
    if th < _SMALL_ANGLE:
        # w = vee(R - R^T)/2 * th/sin(th); expand th/sin(th) = 1 + th^2/6.
        f = 0.5 * (1.0 + th * th / 6.0)
    else:
        f = 0.5 * th / s
    if th < 1e-2:
        # Direct evaluation of D loses relative precision below ~1e-2.
        t2 = th * th
        D = 1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0
    else:
        A = s / th
        B = (1.0 - c) / (th * th)
        D = (1.0 - A / (2.0 * B)) / (th * th)
    x, y, z = a0 * f, a1 * f, a2 * f
    # V^-1 = I - [w]x/2 + D [w]x^2, elementwise.
    xx, yy, zz = x * x, y * y, z * z
    xy, xz, yz = x * y, x * z, y * z
    t0, t1, t2_ = float(T.t[0]), float(T.t[1]), float(T.t[2])
    return np.array(
        [
            (1.0 - D * (yy + zz)) * t0 + (D * xy + 0.5 * z) * t1 + (D * xz - 0.5 * y) * t2_,
            (D * xy - 0.5 * z) * t0 + (1.0 - D * (xx + zz)) * t1 + (D * yz + 0.5 * x) * t2_,
            (D * xz + 0.5 * y) * t0 + (D * yz - 0.5 * x) * t1 + (1.0 - D * (xx + yy)) * t2_,
            x,
            y,
            z,
        ]
    )


def pose_to_quat(T: Pose) -> tuple[np.ndarray, np.ndarray]:
    """Convert to ``(q, t)`` with ``q = (qx, qy, qz, qw)``, ``qw >= 0``."""
    R = T.R
    tr = R[0, 0] + R[1, 1] + R[2, 2]
    # Shepperd's method: branch on the largest of (trace, R00, R11, R22).
    if tr > max(R[0, 0], R[1, 1], R[2, 2]):
        r = math.sqrt(1.0 + tr)
        s = 0.5 / r
        q = np.array(
            [(R[2, 1] - R[1, 2]) * s, (R[0, 2] - R[2, 0]) * s, (R[1, 0] - R[0, 1]) * s, 0.5 * r]
        )
    elif R[0, 0] >= max(R[1, 1], R[2, 2]):
        r = math.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        s = 0.5 / r
        q = np.array(
            [0.5 * r, (R[0, 1] + R[1, 0]) * s, (R[0, 2] + R[2, 0]) * s, (R[2, 1] - R[1, 2]) * s]
        )
    elif R[1, 1] >= R[2, 2]:
        r = math.sqrt(1.0 - R[0, 0] + R[1, 1] - R[2, 2])
        s = 0.5 / r
        q = np.array(
            [(R[0, 1] + R[1, 0]) * s, 0.5 * r, (R[1, 2] + R[2, 1]) * s, (R[0, 2] - R[2, 0]) * s]
        )
    else:
        r = math.sqrt(1.0 - R[0, 0] - R[1, 1] + R[2, 2])
        s = 0.5 / r
        q = np.array(
            [(R[0, 2] + R[2, 0]) * s, (R[1, 2] + R[2, 1]) * s, 0.5 * r, (R[1, 0] - R[0, 1]) * s]
        )
    q /= np.linalg.norm(q)
    if q[3] < 0.0:
        q = -q
    return q, T.t.copy()


def quat_to_pose(q, t) -> Pose:
    """Build a :class:`Pose` from ``(qx, qy, qz, qw)`` and translation."""
    q = np.asarray(q, dtype=np.float64).reshape(4)
    x, y, z, w = float(q[0]), float(q[1]), float(q[2]), float(q[3])
    n = math.sqrt(x * x + y * y + z * z + w * w)
    if n == 0.0 or not math.isfinite(n):
        raise ValueError("quaternion has zero or non-finite norm")
    x, y, z, w = x / n, y / n, z / n, w / n
    R = np.array(
        [
            [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - z * w), 2.0 * (x * z + y * w)],
            [2.0 * (x * y + z * w), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - x * w)],
            [2.0 * (x * z - y * w), 2.0 * (y * z + x * w), 1.0 - 2.0 * (x * x + y * y)],
        ]
    )
    return Pose(R, np.asarray(t, dtype=np.float64).reshape(3))
