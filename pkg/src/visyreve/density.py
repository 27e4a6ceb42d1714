"""Attitude-space sampling density analysis.

The coverage of a pose dataset is measured by the largest empty BDD-ball:
the largest BDD radius around some attitude that contains no dataset pose.
Because no closed-form covering of SO(3) under the BDD is known, the ball
search is discretized against a dense blue-noise baseline sampling generated
with a best-candidate rule (each accepted rotation is the candidate farthest,
in min-BDD terms, from the rotations accepted so far).

Density is reported as rho = 1 / LB-BDD, with infinity as the documented
sentinel when the largest empty ball is degenerate (size 0).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import EmptyInput, RejectionBudgetExhausted
from .geometry import Pose, Quaternion
from .posemetrics import bdd_pairwise, quat_array

DEFAULT_BASELINE_SIZE = 2048
DEFAULT_CANDIDATES = 32


def random_rotations(rng: np.random.Generator, n: int) -> np.ndarray:
    """Uniform rotations on SO(3) as an (n, 4) scalar-first array.

    Uses the subgroup-algorithm construction from three uniform variates.
    """
    u1 = rng.random(n)
    u2 = rng.random(n) * 2.0 * np.pi
    u3 = rng.random(n) * 2.0 * np.pi
    a = np.sqrt(1.0 - u1)
    b = np.sqrt(u1)
    q = np.stack([b * np.cos(u3), a * np.sin(u2), a * np.cos(u2), b * np.sin(u3)], axis=1)
    q[q[:, 0] < 0.0] *= -1.0  # canonical hemisphere
    return q


def random_rotation(rng: np.random.Generator) -> Quaternion:
    return Quaternion.from_array(random_rotations(rng, 1)[0])


@dataclass(frozen=True)
class BaselineSampling:
    """Blue-noise-like reference sampling of SO(3).

    rotations: (n, 4) scalar-first quaternion array, deterministic for fixed
    (size, candidate_count, seed).
    """

    rotations: np.ndarray
    candidate_count: int
    seed: int

    def __len__(self):
        return len(self.rotations)

    def quaternion(self, i: int) -> Quaternion:
        return Quaternion.from_array(self.rotations[i])


@dataclass(frozen=True)
class DensityReport:
    """LB-BDD (largest empty ball) and its inverse, the density rho."""

    lb_bdd: float
    rho: float
    ball_center: Quaternion
    min_distances: np.ndarray

    def to_json_dict(self) -> dict:
        return {
            "lb_bdd": self.lb_bdd,
            "rho": "inf" if math.isinf(self.rho) else self.rho,
            "ball_center_wxyz": list(self.ball_center.as_array()),
            "baseline_size": int(len(self.min_distances)),
        }


def sample_baseline(size: int, candidates: int = DEFAULT_CANDIDATES,
                    seed: int = 0) -> BaselineSampling:
    """Greedy best-candidate sampling of `size` rotations.

    The first rotation is uniform random; every subsequent one is the best of
    `candidates` uniform draws, maximizing the minimum BDD to the accepted set.
    """
    if size < 1 or candidates < 1:
        raise ValueError("size and candidates must be >= 1")
    rng = np.random.default_rng(seed)
    accepted = np.empty((size, 4))
    accepted[0] = random_rotations(rng, 1)[0]
    for i in range(1, size):
        cand = random_rotations(rng, candidates)
        d = bdd_pairwise(cand, accepted[:i]).min(axis=1)
        accepted[i] = cand[int(np.argmax(d))]
    return BaselineSampling(rotations=accepted, candidate_count=candidates, seed=seed)


def lb_bdd(dataset_poses, baseline: BaselineSampling, threads: int = 1) -> DensityReport:
    """Largest empty BDD-ball of a pose set, measured against the baseline.

    For every baseline rotation the minimum BDD to any dataset pose is taken;
    the report carries the maximum of those minima and the baseline rotation
    achieving it. Raises EmptyInput if either set is empty.
    """
    poses = list(dataset_poses)
    if not poses or len(baseline) == 0:
        raise EmptyInput("lb_bdd needs a nonempty dataset and baseline")
    dataset = quat_array(poses)
    chunks = np.array_split(baseline.rotations, max(1, threads))
    min_d = np.concatenate([bdd_pairwise(c, dataset).min(axis=1) for c in chunks])
    i = int(np.argmax(min_d))
    lb = float(min_d[i])
    rho = math.inf if lb == 0.0 else 1.0 / lb
    return DensityReport(lb_bdd=lb, rho=rho,
                         ball_center=baseline.quaternion(i), min_distances=min_d)


def sample_at_bdd(center: Quaternion, target_bdd: float, tolerance: float,
                  seed: int = 0, max_draws: int = 1_000_000) -> Quaternion:
    """Rejection-sample a rotation whose BDD to `center` is target +/- tolerance.

    Raises:
        RejectionBudgetExhausted: after `max_draws` uniform draws without a hit.
    """
    if not 0.0 <= target_bdd <= 1.0:
        raise ValueError("target_bdd must be in [0, 1]")
    if not tolerance > 0:
        raise ValueError("tolerance must be > 0")
    if target_bdd - tolerance <= 0.0:
        return center  # BDD(center, center) == 0 is already in the window
    rng = np.random.default_rng(seed)
    cq = quat_array([center])
    batch = 4096
    drawn = 0
    while drawn < max_draws:
        n = min(batch, max_draws - drawn)
        cand = random_rotations(rng, n)
        drawn += n
        d = bdd_pairwise(cand, cq)[:, 0]
        hits = np.flatnonzero(np.abs(d - target_bdd) <= tolerance)
        if hits.size:
            return Quaternion.from_array(cand[hits[0]])
    raise RejectionBudgetExhausted(
        f"no rotation at BDD {target_bdd}+/-{tolerance} from center in {max_draws} draws")


def mean_range_along_boresight(poses) -> float:
    """Mean camera-to-target range; the default translation magnitude for
    baseline rotations when a full Pose is required (the BDD ignores it)."""
    rs = [float(np.linalg.norm(p.translation)) for p in poses]
    if not rs:
        raise EmptyInput("no poses")
    return float(np.mean(rs))


def baseline_pose(rotation: Quaternion, range_m: float) -> Pose:
    """Pose looking at the target from `range_m` meters along the boresight."""
    return Pose(rotation, np.array([0.0, 0.0, range_m]))
