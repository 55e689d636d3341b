"""Cameras, rigid poses and similarity transforms.

Quaternions are stored as ``(w, x, y, z)`` and always renormalized after
composition. Poses are WORLD-TO-CAMERA: ``x_cam = R @ x_world + t``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def quat_normalize(q):
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q)
    if not np.isfinite(n) or n == 0.0:
        raise ValueError("quaternion has zero or non-finite norm")
    q = q / n
    # canonical hemisphere keeps round trips through matrices stable
    if q[0] < 0:
        q = -q
    return q


def quat_to_matrix(q):
    """Rotation matrix of a unit quaternion ``(w, x, y, z)``."""
    w, x, y, z = np.asarray(q, dtype=np.float64)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def quat_matrix_jacobian(q):
    """Partial derivatives of :func:`quat_to_matrix` w.r.t. each component.

    Returns an array of shape ``(4, 3, 3)``; entry ``k`` is ``dR/dq_k`` for
    the (unnormalized) polynomial form of the rotation matrix.
    """
    w, x, y, z = np.asarray(q, dtype=np.float64)
    dw = 2 * np.array([[0, -z, y], [z, 0, -x], [-y, x, 0]])
    dx = 2 * np.array([[0, y, z], [y, -2 * x, -w], [z, w, -2 * x]])
    dy = 2 * np.array([[-2 * y, x, w], [x, 0, z], [-w, z, -2 * y]])
    dz = 2 * np.array([[-2 * z, -w, x], [w, -2 * z, y], [x, y, 0]])
    return np.stack([dw, dx, dy, dz])


def matrix_to_quat(R):
    """Unit quaternion of a rotation matrix (Shepperd's method)."""
    R = np.asarray(R, dtype=np.float64)
    tr = np.trace(R)
    diag = np.diag(R)
    k = int(np.argmax([tr, *diag]))
    if k == 0:
        s = 2.0 * np.sqrt(1.0 + tr)
        q = [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
    elif k == 1:
        s = 2.0 * np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
    elif k == 2:
        s = 2.0 * np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        q = [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
    else:
        s = 2.0 * np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        q = [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
    return quat_normalize(q)


def quat_multiply(a, b):
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


def quat_conjugate(q):
    q = np.asarray(q, dtype=np.float64)
    return np.array([q[0], -q[1], -q[2], -q[3]])


def axis_angle_to_quat(axis, angle):
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    half = 0.5 * angle
    return quat_normalize(np.concatenate([[np.cos(half)], np.sin(half) * axis]))


def random_quat(rng):
    """Uniformly distributed unit quaternion."""
    return quat_normalize(rng.normal(size=4))


def rotation_angle(R):
    """Angle (radians) of a rotation matrix, robust near 0 and pi."""
    R = np.asarray(R, dtype=np.float64)
    # atan2 form keeps precision for tiny angles where arccos of the trace does not
    s = 0.5 * np.linalg.norm([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    c = 0.5 * (np.trace(R) - 1.0)
    return float(np.arctan2(s, c))


@dataclass(frozen=True)
class ImageSize:
    width: int
    height: int

    def __post_init__(self):
        if int(self.width) < 1 or int(self.height) < 1:
            raise ValueError(f"image size must be positive, got {self.width}x{self.height}")
        object.__setattr__(self, "width", int(self.width))
        object.__setattr__(self, "height", int(self.height))

    @property
    def shape(self):
        """Array shape ``(H, W)`` of per-pixel grids."""
        return (self.height, self.width)

    @property
    def num_pixels(self):
        return self.width * self.height


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole camera with square pixels and a single focal length."""

    focal: float
    principal_point: tuple[float, float]

    def __post_init__(self):
        if not (np.isfinite(self.focal) and self.focal > 0):
            raise ValueError(f"focal must be positive and finite, got {self.focal}")
        cx, cy = self.principal_point
        object.__setattr__(self, "focal", float(self.focal))
        object.__setattr__(self, "principal_point", (float(cx), float(cy)))

    @classmethod
    def centered(cls, focal, size: ImageSize):
        return cls(focal, (size.width / 2.0, size.height / 2.0))

    @property
    def matrix(self):
        cx, cy = self.principal_point
        return np.array([[self.focal, 0.0, cx], [0.0, self.focal, cy], [0.0, 0.0, 1.0]])

    def project(self, points):
        """Pixel coordinates ``(N, 2)`` of camera-frame points ``(N, 3)``."""
        points = np.asarray(points, dtype=np.float64)
        cx, cy = self.principal_point
        z = points[..., 2]
        return np.stack([self.focal * points[..., 0] / z + cx, self.focal * points[..., 1] / z + cy], axis=-1)


@dataclass(frozen=True, eq=False)
class RigidPose:
    """World-to-camera rigid transform ``x_cam = R x_world + t``."""

    rotation: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        q = np.asarray(self.rotation, dtype=np.float64).reshape(4)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if abs(np.linalg.norm(q) - 1.0) > 1e-9:
            q = quat_normalize(q)
        object.__setattr__(self, "rotation", q)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls):
        return cls()

    @classmethod
    def from_matrix(cls, R, t):
        return cls(matrix_to_quat(R), np.asarray(t, dtype=np.float64))

    @property
    def R(self):
        return quat_to_matrix(self.rotation)

    @property
    def matrix(self):
        """3x4 ``[R | t]``."""
        return np.hstack([self.R, self.translation[:, None]])

    def apply(self, points):
        points = np.asarray(points, dtype=np.float64)
        return points @ self.R.T + self.translation

    def inverse(self):
        R = self.R
        return RigidPose(quat_conjugate(self.rotation), -R.T @ self.translation)

    def compose(self, other: RigidPose):
        """``self ∘ other``: apply ``other`` first."""
        q = quat_normalize(quat_multiply(self.rotation, other.rotation))
        return RigidPose(q, self.R @ other.translation + self.translation)

    @property
    def center(self):
        """Camera center in world coordinates."""
        return -self.R.T @ self.translation

    def __repr__(self):
        return f"RigidPose(q={np.round(self.rotation, 6).tolist()}, t={np.round(self.translation, 6).tolist()})"


@dataclass(frozen=True, eq=False)
class SimTransform:
    """Similarity ``x -> scale * (R x + t)``."""

    scale: float = 1.0
    rotation: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        if not (np.isfinite(self.scale) and self.scale > 0):
            raise ValueError(f"similarity scale must be positive, got {self.scale}")
        q = np.asarray(self.rotation, dtype=np.float64).reshape(4)
        if abs(np.linalg.norm(q) - 1.0) > 1e-9:
            q = quat_normalize(q)
        object.__setattr__(self, "scale", float(self.scale))
        object.__setattr__(self, "rotation", q)
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=np.float64).reshape(3))

    @property
    def R(self):
        return quat_to_matrix(self.rotation)

    @property
    def rigid(self):
        """The ``[R | t]`` part, ignoring scale."""
        return RigidPose(self.rotation, self.translation)

    def apply(self, points):
        points = np.asarray(points, dtype=np.float64)
        return self.scale * (points @ self.R.T + self.translation)

    def inverse(self):
        # x = s (R y + t)  =>  y = R^T x / s - R^T t = (1/s) (R^T x - s R^T t)
        R = self.R
        return SimTransform(1.0 / self.scale, quat_conjugate(self.rotation), -self.scale * (R.T @ self.translation))

    def compose(self, other: SimTransform):
        """``self ∘ other``: apply ``other`` first."""
        # s1 (R1 (s2 (R2 x + t2)) + t1) = s1 s2 (R1 R2 x + R1 t2 + t1 / s2)
        q = quat_normalize(quat_multiply(self.rotation, other.rotation))
        t = self.R @ other.translation + self.translation / other.scale
        return SimTransform(self.scale * other.scale, q, t)

    def __repr__(self):
        return (
            f"SimTransform(scale={self.scale:.6g}, q={np.round(self.rotation, 6).tolist()}, "
            f"t={np.round(self.translation, 6).tolist()})"
        )
