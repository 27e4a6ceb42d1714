import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from visyreve.density import random_rotations
from visyreve.geometry import Intrinsics, Pose, Quaternion


@pytest.fixture
def k256():
    return Intrinsics(fx=300.0, fy=300.0, px=127.5, py=127.5, width=256, height=256)


def random_poses(rng: np.random.Generator, n: int, r_lo=4.0, r_hi=7.0):
    """Uniform attitudes with translations keeping a target in front."""
    quats = random_rotations(rng, n)
    out = []
    for q in quats:
        t = np.array([rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3),
                      rng.uniform(r_lo, r_hi)])
        out.append(Pose(Quaternion.from_array(q), t))
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(20250810)
