"""Pairwise pose distance metrics.

The central one is the boresight deviation distance (BDD): an attitude-only
distance in [0, 1] that combines the magnitude ``theta`` of the relative
rotation with the angle ``phi`` between its axis and the camera boresight.
It vanishes for pure boresight rotations and reaches 1 for 180-degree
rotations about an in-plane axis.

Note that the BDD is a *pseudometric* on SO(3): distinct attitudes related by
a pure boresight rotation have distance 0, and the triangle inequality does
not hold in general (see the test suite, which counts violations over random
triples). Code that requires metric guarantees (e.g. search-tree pruning)
must not assume them for the BDD.

Also provided: C-L2 (Euclidean distance between camera centers), the relative
rotation magnitude, and the weighted-sum baseline used by pose-estimation
competitions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import Pose, Quaternion, camera_center

_ZERO_THETA = 1e-12


@dataclass(frozen=True)
class BddValue:
    """BDD scalar plus the angles it was computed from.

    value = (theta / pi) * (1 - |2 * phi / pi - 1|), with theta in [0, pi]
    and phi in [0, pi/2].
    """

    value: float
    theta: float
    phi: float


@dataclass(frozen=True)
class DistanceKind:
    """Tag selecting one of the four pose distances.

    ``weight_position`` (1/meters) is only meaningful for the combined
    metric and must be supplied explicitly there; there is no default.
    """

    name: str
    weight_position: float | None = None

    def __post_init__(self):
        if self.name not in ("bdd", "cl2", "rotation_magnitude", "spec_combined"):
            raise ValueError(f"unknown distance kind {self.name!r}")
        if self.name == "spec_combined":
            if self.weight_position is None or not self.weight_position > 0:
                raise ValueError("spec_combined requires weight_position > 0")
        elif self.weight_position is not None:
            raise ValueError(f"{self.name} takes no weight")


BDD = DistanceKind("bdd")
CL2 = DistanceKind("cl2")
ROTATION_MAGNITUDE = DistanceKind("rotation_magnitude")


def spec_combined_kind(weight_position: float) -> DistanceKind:
    return DistanceKind("spec_combined", weight_position)


def bdd_quat(q1: Quaternion, q2: Quaternion) -> BddValue:
    """BDD between two attitudes.

    The relative rotation ``q_r = q1 * q2.conjugate()`` is reduced to axis-angle
    form; its axis is mapped to the +z hemisphere before measuring the angle
    ``phi`` to the boresight. Total function: returns value 0 (never an error)
    when the relative rotation is the identity.
    """
    qr = q1 * q2.conjugate()  # canonical w >= 0, so theta lands in [0, pi]
    vx, vy, vz = qr.x, qr.y, qr.z
    s = math.sqrt(vx * vx + vy * vy + vz * vz)
    theta = 2.0 * math.atan2(s, qr.w)
    if theta < _ZERO_THETA:
        return BddValue(0.0, theta, 0.0)
    # axis = v / sin(theta/2); the positive scale does not affect phi, so it
    # can be measured on v directly: phi = atan2(|e_z x w+|, e_z . w+).
    phi = math.atan2(math.hypot(vx, vy), abs(vz))
    value = (theta / math.pi) * (1.0 - abs(2.0 * phi / math.pi - 1.0))
    return BddValue(value, theta, phi)


def relative_axis(a: Pose, b: Pose) -> tuple[np.ndarray, np.ndarray]:
    """Diagnostic: relative rotation axis and its +z-hemisphere image.

    Returns (axis, axis_hemisphere); both zero vectors for identical attitudes.
    """
    qr = a.rotation * b.rotation.conjugate()
    axis = qr.axis()
    return axis, np.array([axis[0], axis[1], abs(axis[2])])


def bdd(a: Pose, b: Pose) -> BddValue:
    """BDD between the attitude components of two poses (translation ignored)."""
    return bdd_quat(a.rotation, b.rotation)


def cl2(a: Pose, b: Pose) -> float:
    """Euclidean distance between the camera centers, in meters."""
    return float(np.linalg.norm(camera_center(a) - camera_center(b)))


def rotation_magnitude(a: Pose, b: Pose) -> float:
    """Angle of the canonicalized relative rotation, in [0, pi]."""
    return (a.rotation * b.rotation.conjugate()).angle()


def spec_combined(a: Pose, b: Pose, weight_position: float) -> float:
    """Weighted sum of C-L2 and rotation magnitude (weight in 1/meters)."""
    if not weight_position > 0:
        raise ValueError("weight_position must be > 0")
    return weight_position * cl2(a, b) + rotation_magnitude(a, b)


def distance(kind: DistanceKind, a: Pose, b: Pose) -> float:
    """Uniform scalar dispatch over the four distance kinds."""
    if kind.name == "bdd":
        return bdd(a, b).value
    if kind.name == "cl2":
        return cl2(a, b)
    if kind.name == "rotation_magnitude":
        return rotation_magnitude(a, b)
    return spec_combined(a, b, kind.weight_position)


# Vectorized forms on (n, 4) scalar-first quaternion arrays. These are the
# workhorses for density analysis and nearest-neighbor scans.


def quat_array(quats) -> np.ndarray:
    """Stack Quaternions (or poses' rotations) into an (n, 4) wxyz array."""
    rows = []
    for q in quats:
        if isinstance(q, Pose):
            q = q.rotation
        rows.append((q.w, q.x, q.y, q.z))
    return np.array(rows, dtype=float)


def _quat_mul_conj(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Rows of a * conj(b), broadcasting; inputs (..., 4) wxyz."""
    w1, x1, y1, z1 = a[..., 0], a[..., 1], a[..., 2], a[..., 3]
    w2, x2, y2, z2 = b[..., 0], b[..., 1], b[..., 2], b[..., 3]
    # term grouping keeps the a == b case exactly scalar in floating point
    return np.stack([
        w1 * w2 + x1 * x2 + y1 * y2 + z1 * z2,
        (x1 * w2 - w1 * x2) + (z1 * y2 - y1 * z2),
        (y1 * w2 - w1 * y2) + (x1 * z2 - z1 * x2),
        (z1 * w2 - w1 * z2) + (y1 * x2 - x1 * y2),
    ], axis=-1)


def _bdd_from_rel(qr: np.ndarray) -> np.ndarray:
    s = np.sqrt(qr[..., 1] ** 2 + qr[..., 2] ** 2 + qr[..., 3] ** 2)
    theta = 2.0 * np.arctan2(s, np.abs(qr[..., 0]))  # |w| == canonical form
    phi = np.arctan2(np.hypot(qr[..., 1], qr[..., 2]), np.abs(qr[..., 3]))
    value = (theta / np.pi) * (1.0 - np.abs(2.0 * phi / np.pi - 1.0))
    return np.where(theta < _ZERO_THETA, 0.0, value)


def bdd_rowwise(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Elementwise BDD between matching rows of two (n, 4) arrays."""
    return _bdd_from_rel(_quat_mul_conj(a, b))


def bdd_pairwise(a: np.ndarray, b: np.ndarray, chunk: int = 512) -> np.ndarray:
    """Full (len(a), len(b)) BDD matrix, computed in row chunks."""
    a = np.atleast_2d(a)
    b = np.atleast_2d(b)
    out = np.empty((a.shape[0], b.shape[0]))
    for lo in range(0, a.shape[0], chunk):
        hi = min(lo + chunk, a.shape[0])
        out[lo:hi] = _bdd_from_rel(_quat_mul_conj(a[lo:hi, None, :], b[None, :, :]))
    return out
