"""Pinhole camera model, rigid transforms and quaternion algebra.

Conventions used throughout the package:

- Poses are passive target-to-camera rigid transforms: ``x_cam = R @ x_target + t``.
- The camera boresight is the +z axis of the camera frame; image ``u`` grows to
  the right and ``v`` downwards.
- Pixel coordinates place ``(0, 0)`` at the *center* of the top-left pixel, so
  integer coordinates are pixel centers (matching the remap semantics of the
  common image libraries).
- Quaternions are scalar-first ``(w, x, y, z)``, kept at unit norm, and
  canonicalized to ``w >= 0`` on construction so the antipodal double cover is
  never visible downstream.

All types are immutable values and all operations are pure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NonPositiveDepth, PointBehindCamera

_MIN_Z = 1e-12


@dataclass(frozen=True)
class Quaternion:
    """Unit rotation quaternion, scalar first, canonicalized to w >= 0."""

    w: float
    x: float
    y: float
    z: float

    def __post_init__(self):
        n = math.sqrt(self.w**2 + self.x**2 + self.y**2 + self.z**2)
        if not math.isfinite(n) or n < 1e-12:
            raise ValueError(f"quaternion norm {n} is not invertible")
        w, x, y, z = float(self.w), float(self.x), float(self.y), float(self.z)
        if abs(n - 1.0) > 1e-12:  # keep construction idempotent on unit input
            w, x, y, z = w / n, x / n, y / n, z / n
        if w < 0.0:
            w, x, y, z = -w, -x, -y, -z
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "z", z)

    @classmethod
    def identity(cls) -> "Quaternion":
        return cls(1.0, 0.0, 0.0, 0.0)

    @classmethod
    def from_axis_angle(cls, axis, angle: float) -> "Quaternion":
        """Rotation of `angle` radians about `axis` (need not be normalized)."""
        axis = np.asarray(axis, dtype=float)
        n = float(np.linalg.norm(axis))
        if n < 1e-12:
            raise ValueError("rotation axis has zero norm")
        s = math.sin(angle / 2.0) / n
        return cls(math.cos(angle / 2.0), axis[0] * s, axis[1] * s, axis[2] * s)

    @classmethod
    def from_array(cls, wxyz) -> "Quaternion":
        w, x, y, z = (float(v) for v in wxyz)
        return cls(w, x, y, z)

    @classmethod
    def from_matrix(cls, m) -> "Quaternion":
        """Quaternion of a rotation matrix (Shepperd's method, branch on trace)."""
        m = np.asarray(m, dtype=float)
        t = m[0, 0] + m[1, 1] + m[2, 2]
        if t > 0.0:
            s = math.sqrt(t + 1.0) * 2.0
            return cls(0.25 * s, (m[2, 1] - m[1, 2]) / s,
                       (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s)
        i = int(np.argmax([m[0, 0], m[1, 1], m[2, 2]]))
        if i == 0:
            s = math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2.0
            return cls((m[2, 1] - m[1, 2]) / s, 0.25 * s,
                       (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s)
        if i == 1:
            s = math.sqrt(1.0 - m[0, 0] + m[1, 1] - m[2, 2]) * 2.0
            return cls((m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s,
                       0.25 * s, (m[1, 2] + m[2, 1]) / s)
        s = math.sqrt(1.0 - m[0, 0] - m[1, 1] + m[2, 2]) * 2.0
        return cls((m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s,
                   (m[1, 2] + m[2, 1]) / s, 0.25 * s)

    def as_array(self) -> np.ndarray:
        return np.array([self.w, self.x, self.y, self.z])

    def conjugate(self) -> "Quaternion":
        return Quaternion(self.w, -self.x, -self.y, -self.z)

    def __mul__(self, other: "Quaternion") -> "Quaternion":
        """Hamilton product; ``(a * b).to_matrix() == a.to_matrix() @ b.to_matrix()``."""
        w1, x1, y1, z1 = self.w, self.x, self.y, self.z
        w2, x2, y2, z2 = other.w, other.x, other.y, other.z
        # term grouping keeps q * q.conjugate() exactly scalar in floating point
        return Quaternion(
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            (w1 * x2 + x1 * w2) + (y1 * z2 - z1 * y2),
            (w1 * y2 + y1 * w2) + (z1 * x2 - x1 * z2),
            (w1 * z2 + z1 * w2) + (x1 * y2 - y1 * x2),
        )

    def to_matrix(self) -> np.ndarray:
        w, x, y, z = self.w, self.x, self.y, self.z
        return np.array([
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ])

    def rotate(self, v) -> np.ndarray:
        return self.to_matrix() @ np.asarray(v, dtype=float)

    def angle(self) -> float:
        """Rotation angle in [0, pi] (canonical form makes this unambiguous)."""
        s = math.sqrt(self.x**2 + self.y**2 + self.z**2)
        return 2.0 * math.atan2(s, self.w)

    def axis(self) -> np.ndarray:
        """Unit rotation axis; zero vector for the identity rotation."""
        s = math.sqrt(self.x**2 + self.y**2 + self.z**2)
        if s < 1e-12:
            return np.zeros(3)
        return np.array([self.x, self.y, self.z]) / s


def slerp(a: Quaternion, b: Quaternion, t: float) -> Quaternion:
    """Spherical interpolation from `a` (t=0) to `b` (t=1) along the short arc."""
    if t == 0.0:
        return a
    if t == 1.0:
        return b
    dot = a.w * b.w + a.x * b.x + a.y * b.y + a.z * b.z
    av, bv = a.as_array(), b.as_array()
    if dot < 0.0:
        bv = -bv
        dot = -dot
    dot = min(dot, 1.0)
    theta = math.acos(dot)
    if theta < 1e-9:
        out = (1.0 - t) * av + t * bv
    else:
        out = (math.sin((1.0 - t) * theta) * av + math.sin(t * theta) * bv) / math.sin(theta)
    return Quaternion.from_array(out)


@dataclass(frozen=True)
class Pose:
    """Passive target-to-camera rigid transform (rotation then translation)."""

    rotation: Quaternion
    translation: np.ndarray

    def __post_init__(self):
        t = np.array(self.translation, dtype=float).reshape(3)
        if not np.all(np.isfinite(t)):
            raise ValueError("pose translation must be finite")
        t.setflags(write=False)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(Quaternion.identity(), np.zeros(3))

    @classmethod
    def from_matrix(cls, m) -> "Pose":
        m = np.asarray(m, dtype=float)
        return cls(Quaternion.from_matrix(m[:3, :3]), m[:3, 3])

    def to_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation.to_matrix()
        m[:3, 3] = self.translation
        return m

    def inverse(self) -> "Pose":
        qi = self.rotation.conjugate()
        return Pose(qi, -qi.rotate(self.translation))

    def compose(self, other: "Pose") -> "Pose":
        """self after other, i.e. the matrix product self @ other."""
        return Pose(self.rotation * other.rotation,
                    self.rotation.rotate(other.translation) + self.translation)

    def transform(self, p) -> np.ndarray:
        """Map a target-frame point into the camera frame."""
        return self.rotation.rotate(p) + self.translation


@dataclass(frozen=True)
class Intrinsics:
    """Zero-skew pinhole intrinsics; focal lengths and principal point in pixels."""

    fx: float
    fy: float
    px: float
    py: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image dimensions must be positive")
        if not (0 <= self.px < self.width and 0 <= self.py < self.height):
            raise ValueError("principal point must lie inside the image")

    def to_matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.px],
                         [0.0, self.fy, self.py],
                         [0.0, 0.0, 1.0]])

    def inverse_matrix(self) -> np.ndarray:
        return np.array([[1.0 / self.fx, 0.0, -self.px / self.fx],
                         [0.0, 1.0 / self.fy, -self.py / self.fy],
                         [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class ImagePoint:
    """Real-valued pixel coordinates; may lie outside the image bounds."""

    u: float
    v: float

    def as_array(self) -> np.ndarray:
        return np.array([self.u, self.v])


def project(p_target, pose: Pose, k: Intrinsics) -> ImagePoint:
    """Project a target-frame 3D point into the image.

    Raises:
        PointBehindCamera: if the camera-frame z of the point is <= 1e-12.
    """
    pc = pose.transform(p_target)
    if pc[2] <= _MIN_Z:
        raise PointBehindCamera(f"camera-frame z = {pc[2]:.3e}")
    return ImagePoint(k.fx * pc[0] / pc[2] + k.px, k.fy * pc[1] / pc[2] + k.py)


def backproject(x: ImagePoint, depth: float, k: Intrinsics) -> np.ndarray:
    """Camera-frame point on the ray through pixel `x` at camera z = `depth`.

    Raises:
        NonPositiveDepth: if depth <= 0.
    """
    if not depth > 0:
        raise NonPositiveDepth(f"depth = {depth}")
    return depth * np.array([(x.u - k.px) / k.fx, (x.v - k.py) / k.fy, 1.0])


def relative_pose(source: Pose, target: Pose) -> Pose:
    """Transform mapping source-camera coordinates to target-camera coordinates.

    Composing the result with `source` reproduces `target` exactly:
    ``relative_pose(s, t).compose(s) == t``.
    """
    q = target.rotation * source.rotation.conjugate()
    return Pose(q, target.translation - q.rotate(source.translation))


def camera_center(pose: Pose) -> np.ndarray:
    """Camera position in the target frame: C = -R^T t."""
    return -pose.rotation.conjugate().rotate(pose.translation)
