"""Nearest-neighbor search over dataset poses under a chosen distance.

The index contract is oracle equivalence: queries return exactly what an
exhaustive linear scan would, with ties (equal distance) broken by lower
C-L2 to the query and then by lower view id. Ties are routine under the BDD
because it ignores translation entirely.

For distances that satisfy the triangle inequality (C-L2, rotation magnitude,
and the combined metric) a vantage-point tree with exact pruning is used.
The BDD violates the triangle inequality, so tree pruning would be unsound;
BDD indexes run a vectorized exhaustive scan instead (logged once per build).
"""

from __future__ import annotations

import bisect
import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyDataset, KTooLarge
from .geometry import Pose, camera_center
from .posemetrics import DistanceKind, bdd_pairwise, distance, quat_array

log = logging.getLogger(__name__)

_LEAF_SIZE = 12


class _Node:
    __slots__ = ("vp", "bucket", "inside", "outside", "in_lo", "in_hi", "out_lo", "out_hi")

    def __init__(self):
        self.vp = None
        self.bucket = None
        self.inside = None
        self.outside = None
        self.in_lo = self.in_hi = 0.0
        self.out_lo = self.out_hi = 0.0


@dataclass
class PoseIndex:
    """Immutable after build; concurrently queryable (the eval counter is advisory)."""

    ids: list
    poses: list
    metric: DistanceKind
    quats: np.ndarray = field(repr=False)
    centers: np.ndarray = field(repr=False)
    root: object = field(default=None, repr=False)
    last_query_evals: int = 0

    def __len__(self):
        return len(self.ids)


def build(entries, metric: DistanceKind) -> PoseIndex:
    """Build an index over (view-id, Pose) pairs.

    Raises:
        EmptyDataset: if no entries are given.
    """
    entries = list(entries)
    if not entries:
        raise EmptyDataset("cannot index an empty dataset")
    ids = [e[0] for e in entries]
    poses = [e[1] for e in entries]
    index = PoseIndex(
        ids=ids,
        poses=poses,
        metric=metric,
        quats=quat_array(poses),
        centers=np.array([camera_center(p) for p in poses]),
    )
    if metric.name == "bdd":
        log.info("BDD violates the triangle inequality; index of %d poses will "
                 "use exhaustive scan", len(ids))
    else:
        index.root = _build_node(index, list(range(len(ids))))
    return index


def _build_node(index: PoseIndex, idxs: list[int]) -> _Node:
    node = _Node()
    if len(idxs) <= _LEAF_SIZE:
        node.bucket = idxs
        return node
    node.vp = idxs[0]
    rest = idxs[1:]
    vp_pose = index.poses[node.vp]
    dists = [distance(index.metric, vp_pose, index.poses[i]) for i in rest]
    med = float(np.median(dists))
    inside = [i for i, d in zip(rest, dists) if d <= med]
    outside = [i for i, d in zip(rest, dists) if d > med]
    if not outside:  # all points equidistant from the vantage
        node.bucket = idxs
        node.vp = None
        return node
    din = [d for d in dists if d <= med]
    dout = [d for d in dists if d > med]
    node.in_lo, node.in_hi = min(din), max(din)
    node.out_lo, node.out_hi = min(dout), max(dout)
    node.inside = _build_node(index, inside)
    node.outside = _build_node(index, outside)
    return node


def nearest(index: PoseIndex, query: Pose, k: int) -> list[tuple]:
    """The k nearest entries as (view-id, distance), ascending.

    Raises:
        KTooLarge: unless 1 <= k <= len(index).
    """
    if not 1 <= k <= len(index):
        raise KTooLarge(f"k={k} outside [1, {len(index)}]")
    if index.metric.name == "bdd":
        return _nearest_scan(index, query, k)
    return _nearest_tree(index, query, k)


def _nearest_scan(index: PoseIndex, query: Pose, k: int) -> list[tuple]:
    qq = quat_array([query])
    dists = bdd_pairwise(qq, index.quats)[0]
    ties = np.linalg.norm(index.centers - camera_center(query), axis=1)
    index.last_query_evals = len(index)
    order = sorted(range(len(index)), key=lambda i: (dists[i], ties[i], index.ids[i]))[:k]
    return [(index.ids[i], float(dists[i])) for i in order]


def _nearest_tree(index: PoseIndex, query: Pose, k: int) -> list[tuple]:
    evals = 0
    qc = camera_center(query)
    best: list[tuple] = []  # sorted (d, cl2, id, idx), length <= k

    def consider(i):
        nonlocal evals
        d = distance(index.metric, query, index.poses[i])
        evals += 1
        key = (d, float(np.linalg.norm(index.centers[i] - qc)), index.ids[i], i)
        if len(best) < k:
            bisect.insort(best, key)
        elif key < best[-1]:
            bisect.insort(best, key)
            best.pop()

    def visit(node):
        nonlocal evals
        if node.bucket is not None:
            for i in node.bucket:
                consider(i)
            return
        dq = distance(index.metric, query, index.poses[node.vp])
        evals += 1
        key = (dq, float(np.linalg.norm(index.centers[node.vp] - qc)),
               index.ids[node.vp], node.vp)
        if len(best) < k:
            bisect.insort(best, key)
        elif key < best[-1]:
            bisect.insort(best, key)
            best.pop()
        lb_in = max(0.0, dq - node.in_hi, node.in_lo - dq)
        lb_out = max(0.0, dq - node.out_hi, node.out_lo - dq)
        children = sorted(((lb_in, node.inside), (lb_out, node.outside)),
                          key=lambda pair: pair[0])
        for lb, child in children:
            # equal lower bounds must still be visited: ties are resolved by
            # C-L2 and id, which pruning cannot see
            if len(best) == k and lb > best[-1][0]:
                continue
            visit(child)

    visit(index.root)
    index.last_query_evals = evals
    return [(key[2], key[0]) for key in best]
