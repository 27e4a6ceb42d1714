"""Experiment orchestration: Monte-Carlo sample replacement, confidence
threshold extraction, correlation tables, dataset densification, trajectory
synthesis and runtime benchmarks.

Sample replacement draws random (target, source) view pairs whose BDD is
below a cap (default 0.5, the synthesizability bound), synthesizes the
target from the source and scores it against the real image. From the
scored rows a performance model is extracted: for each quality requirement,
the largest BDD below which the required confidence fraction of samples
passes.

All randomness flows from explicit seeds; identical seeds give identical
results byte for byte.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import cv2
import numpy as np
from scipy.interpolate import CubicSpline

from . import density as density_mod
from . import nnindex
from .dataset import Dataset, append_views, load_image, look_at_pose
from .errors import (DegenerateVariance, InsufficientPairs,
                     MaxIterationsExceeded, NoValidSource, TargetUnreachable,
                     TooFewSamples)
from .geometry import Pose, camera_center, slerp
from .meshrender import TriangleMesh, mask_from_depth, render_depth
from .posemetrics import BDD, bdd
from .quality import ORACLE_FLAG, KeypointSet, QualityReport, evaluate_pair
from .synthesis import (SynthesisResult, Timing, View, homography_transform,
                        transform_3d)

TWO_SIGMA = 0.9545
THREE_SIGMA = 0.9973

METHODS = ("homography", "3dt")


@dataclass(frozen=True)
class MetricThresholds:
    """Pass requirements for the three quality metrics."""

    kps_vbn_req: float = 0.01   # below: the 1%-of-range navigation bar
    iou_req: float = 0.9        # at or above
    ssim_req: float = 0.9       # at or above

    def requirements(self):
        return {
            "kps_vbn": lambda r: r.kps_vbn < self.kps_vbn_req,
            "iou": lambda r: r.iou >= self.iou_req,
            "ssim": lambda r: r.ssim >= self.ssim_req,
        }


@dataclass(frozen=True)
class McConfig:
    n_pairs: int
    method: str = "3dt"
    bdd_cap: float = 0.5
    seed: int = 0
    thresholds: MetricThresholds = field(default_factory=MetricThresholds)
    confidence: float = THREE_SIGMA
    spec_weight: float = 1.0  # 1/meters, for the combined-metric column

    def __post_init__(self):
        if not 0.0 < self.bdd_cap <= 1.0:
            raise ValueError("bdd_cap must be in (0, 1]")
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}")
        if not 0.0 < self.confidence < 1.0:
            raise ValueError("confidence must be in (0, 1)")


@dataclass(frozen=True)
class McSample:
    pair_id: int
    source_id: str
    target_id: str
    report: QualityReport
    timing: Timing


@dataclass(frozen=True)
class PerformanceModel:
    """Max BDD per metric at the configured confidence, plus the raw rows.

    Thresholds are None when fewer than 100 rows are available (the
    extraction floor).
    """

    config: McConfig
    samples: tuple[McSample, ...]
    max_bdd: dict

    def reports(self):
        return [s.report for s in self.samples]


def draw_pairs(dataset: Dataset, n_pairs: int, bdd_cap: float,
               rng: np.random.Generator, budget_factor: int = 100):
    """Rejection-sample (target, source) index pairs under the BDD cap.

    Raises:
        InsufficientPairs: when the draw budget runs out.
    """
    ids = dataset.manifest.ids()
    if len(ids) < 2:
        raise InsufficientPairs("need at least 2 views")
    poses = [v.pose for v in dataset.manifest.views]
    pairs = []
    budget = budget_factor * n_pairs
    draws = 0
    while len(pairs) < n_pairs:
        if draws >= budget:
            raise InsufficientPairs(
                f"{len(pairs)}/{n_pairs} pairs under BDD {bdd_cap} "
                f"after {draws} draws")
        i, j = rng.integers(0, len(ids), size=2)
        draws += 1
        if i == j:
            continue
        if bdd(poses[i], poses[j]).value < bdd_cap:
            pairs.append((int(i), int(j)))  # (target, source)
    return pairs


def run_mc(dataset: Dataset, config: McConfig, mesh: TriangleMesh | None = None,
           kps: KeypointSet | None = None, threads: int = 1) -> PerformanceModel:
    """Monte-Carlo sample replacement over a dataset.

    Deterministic for a fixed config seed; `threads` only parallelizes the
    pair evaluations (rows are re-sorted by pair index).
    """
    if kps is None:
        if dataset.manifest.keypoints_3d is None:
            raise InsufficientPairs("dataset carries no 3D keypoints")
        kps = KeypointSet(points_3d=dataset.manifest.keypoints_3d)
    if mesh is None:
        mesh = dataset.mesh()
    rng = np.random.default_rng(config.seed)
    pairs = draw_pairs(dataset, config.n_pairs, config.bdd_cap, rng)
    ids = dataset.manifest.ids()

    def eval_one(item):
        pid, (ti, si) = item
        src = dataset.view(ids[si])
        tgt = dataset.view(ids[ti])
        report, result = evaluate_pair(src, tgt, config.method, mesh, kps,
                                       spec_weight=config.spec_weight)
        return McSample(pair_id=pid, source_id=ids[si], target_id=ids[ti],
                        report=report, timing=result.timing)

    items = list(enumerate(pairs))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            samples = list(pool.map(eval_one, items))
    else:
        samples = [eval_one(it) for it in items]
    samples.sort(key=lambda s: s.pair_id)

    max_bdd = {}
    for name, req in config.thresholds.requirements().items():
        if len(samples) >= 100:
            max_bdd[name] = extract_threshold([s.report for s in samples],
                                              req, config.confidence)
        else:
            max_bdd[name] = None
    return PerformanceModel(config=config, samples=tuple(samples),
                            max_bdd=max_bdd)


def extract_threshold(rows, requirement, confidence: float) -> float:
    """Largest BDD below which the pass fraction meets the confidence.

    Rows are sorted by BDD; every prefix of at least 100 rows is a candidate
    threshold, the largest whose pass fraction is >= confidence wins; 0.0
    when none qualifies.

    Raises:
        TooFewSamples: with fewer than 100 rows.
    """
    rows = list(rows)
    if len(rows) < 100:
        raise TooFewSamples(f"{len(rows)} rows < 100")
    rows.sort(key=lambda r: r.bdd)
    best = 0.0
    passes = 0
    for i, row in enumerate(rows):
        if requirement(row):
            passes += 1
        if i + 1 >= 100 and passes / (i + 1) >= confidence:
            best = row.bdd
    return best


_DIST_COLUMNS = ("bdd", "cl2", "rot_mag", "spec")
_METRIC_COLUMNS = ("ssim", "iou", "kps_l2", "kps_vbn")


def correlations(rows) -> dict:
    """Pearson r for every (distance, quality-metric) column pair.

    Raises:
        DegenerateVariance: if any involved column is constant.
        TooFewSamples: with fewer than 3 rows.
    """
    rows = list(rows)
    if len(rows) < 3:
        raise TooFewSamples("correlation needs at least 3 rows")
    cols = {name: np.array([getattr(r, name) for r in rows])
            for name in _DIST_COLUMNS + _METRIC_COLUMNS}
    for name, vals in cols.items():
        if float(np.std(vals)) == 0.0:
            raise DegenerateVariance(f"column {name} is constant")
    out = {}
    for d in _DIST_COLUMNS:
        for m in _METRIC_COLUMNS:
            out[(d, m)] = float(np.corrcoef(cols[d], cols[m])[0, 1])
    return out


def densify(dataset: Dataset, target_lb_bdd: float, method: str,
            baseline: density_mod.BaselineSampling,
            mesh: TriangleMesh | None = None, synthesis_cap: float = 0.5,
            max_iterations: int = 100):
    """Append synthesized views at empty-ball centers until the target LB-BDD.

    Every appended view is synthesized from its BDD nearest neighbor; a
    source farther than `synthesis_cap` aborts (such views cannot be
    synthesized credibly).

    Returns the updated manifest.

    Raises:
        TargetUnreachable, MaxIterationsExceeded
    """
    if mesh is None:
        mesh = dataset.mesh()
    report = density_mod.lb_bdd([p for _, p in dataset.poses()], baseline)
    if report.lb_bdd <= target_lb_bdd:
        return dataset.manifest
    for _ in range(max_iterations):
        entries = dataset.poses()
        mean_range = density_mod.mean_range_along_boresight(
            [p for _, p in entries])
        center_pose = density_mod.baseline_pose(report.ball_center, mean_range)
        index = nnindex.build(entries, BDD)
        nn_id, nn_bdd = nnindex.nearest(index, center_pose, 1)[0]
        if nn_bdd >= synthesis_cap:
            raise TargetUnreachable(
                f"nearest source at BDD {nn_bdd:.3f} >= cap {synthesis_cap}")
        src = dataset.view(nn_id)
        new_pose = Pose(report.ball_center,
                        [0.0, 0.0, float(np.linalg.norm(src.pose.translation))])
        if method == "homography":
            result = homography_transform(src, new_pose)
        else:
            result = transform_3d(src, new_pose, mesh)
        synth = View(image=result.image, pose=new_pose,
                     intrinsics=src.intrinsics, mask=result.transformed_mask)
        append_views(dataset, [(synth, {"synthesized_from": nn_id,
                                        "method": method,
                                        "bdd": float(nn_bdd)})])
        report = density_mod.lb_bdd([p for _, p in dataset.poses()], baseline)
        if report.lb_bdd <= target_lb_bdd:
            return dataset.manifest
    raise MaxIterationsExceeded(
        f"LB-BDD {report.lb_bdd:.4f} > target {target_lb_bdd} "
        f"after {max_iterations} iterations")


@dataclass(frozen=True)
class Trajectory:
    """Time-stamped waypoints; positions follow a cubic spline through the
    camera centers, attitudes interpolate by piecewise slerp."""

    waypoints: tuple

    def __post_init__(self):
        times = np.array([t for t, _ in self.waypoints], dtype=float)
        if len(times) < 2 or not np.all(np.diff(times) > 0):
            raise ValueError("waypoints need strictly increasing times")
        centers = np.array([camera_center(p) for _, p in self.waypoints])
        object.__setattr__(self, "_times", times)
        object.__setattr__(self, "_spline", CubicSpline(times, centers, axis=0))

    def sample(self, t: float) -> Pose:
        times = self._times
        t = float(np.clip(t, times[0], times[-1]))
        seg = int(np.clip(np.searchsorted(times, t, side="right") - 1,
                          0, len(times) - 2))
        u = (t - times[seg]) / (times[seg + 1] - times[seg])
        q = slerp(self.waypoints[seg][1].rotation,
                  self.waypoints[seg + 1][1].rotation, u)
        center = self._spline(t)
        return Pose(q, -q.rotate(center))

    def sample_many(self, n: int):
        ts = np.linspace(self._times[0], self._times[-1], n)
        return [(float(t), self.sample(float(t))) for t in ts]


def random_trajectory(rng: np.random.Generator, range_lo: float,
                      range_hi: float, path_length: float = 10.0,
                      n_waypoints: int = 6) -> Trajectory:
    """Random spline trajectory around the origin of roughly `path_length`
    meters, with look-at attitudes and drifting roll."""
    direction = rng.normal(size=3)
    direction /= np.linalg.norm(direction)
    roll = rng.uniform(0, 2 * np.pi)
    waypoints = []
    t = 0.0
    hop = path_length / (n_waypoints - 1)
    for i in range(n_waypoints):
        r = rng.uniform(range_lo, range_hi)
        waypoints.append((t, look_at_pose(direction * r, roll)))
        step = rng.normal(size=3)
        step -= (step @ direction) * direction
        step /= np.linalg.norm(step)
        direction = direction * r + step * hop
        nr = np.linalg.norm(direction)
        direction /= nr
        roll += rng.uniform(-0.3, 0.3)
        t += hop
    return Trajectory(waypoints=tuple(waypoints))


@dataclass(frozen=True)
class TrajectoryFrame:
    time: float
    pose: Pose
    source_id: str
    source_bdd: float
    result: SynthesisResult
    report: QualityReport | None


def synthesize_trajectory(dataset: Dataset, waypoints, n_samples: int,
                          method: str, mesh: TriangleMesh | None = None,
                          kps: KeypointSet | None = None,
                          source_cap: float = 0.5) -> list[TrajectoryFrame]:
    """Synthesize every sampled trajectory pose from its BDD nearest neighbor.

    Frames whose pose coincides with a dataset view (both distances zero)
    also get a quality report against that view when keypoints are available.

    Raises:
        NoValidSource: when a sampled pose has no dataset source under the cap.
    """
    if mesh is None:
        mesh = dataset.mesh()
    if kps is None and dataset.manifest.keypoints_3d is not None:
        kps = KeypointSet(points_3d=dataset.manifest.keypoints_3d)
    traj = Trajectory(waypoints=tuple(waypoints))
    index = nnindex.build(dataset.poses(), BDD)
    frames = []
    for t, pose in traj.sample_many(n_samples):
        nn_id, nn_bdd = nnindex.nearest(index, pose, 1)[0]
        if nn_bdd >= source_cap:
            raise NoValidSource(f"t={t:.3f}: nearest source at BDD {nn_bdd:.3f}")
        src = dataset.view(nn_id)
        report = None
        exact = nn_bdd < 1e-12 \
            and np.allclose(src.pose.translation, pose.translation, atol=1e-9) \
            and (src.pose.rotation * pose.rotation.conjugate()).angle() < 1e-9
        if method == "homography":
            result = homography_transform(src, pose)
        else:
            result = transform_3d(src, pose, mesh)
        if exact and kps is not None:
            report, _ = evaluate_pair(src, dataset.view(nn_id), method, mesh, kps)
        frames.append(TrajectoryFrame(time=t, pose=pose, source_id=nn_id,
                                      source_bdd=float(nn_bdd), result=result,
                                      report=report))
    return frames


@dataclass(frozen=True)
class BenchStats:
    method: str
    n_samples: int
    mask_input: bool
    interpolate: bool
    mean_s: float
    p95_s: float
    mean_render_s: float
    mean_warp_s: float
    mean_interpolate_s: float

    def to_json_dict(self):
        return {k: getattr(self, k) for k in (
            "method", "n_samples", "mask_input", "interpolate", "mean_s",
            "p95_s", "mean_render_s", "mean_warp_s", "mean_interpolate_s")}


def bench(dataset: Dataset, method: str, n_samples: int,
          mask_input: bool = True, interpolate: bool = True,
          seed: int = 0) -> BenchStats:
    """Wall-clock per-frame synthesis cost over a random spline trajectory.

    Single-threaded by contract; source images are re-read from disk every
    frame and, when `mask_input` is set for the homography, the source mask
    is re-rendered from the mesh (that cost is the render share).
    """
    mesh = dataset.mesh()
    rng = np.random.default_rng(seed)
    ranges = [float(np.linalg.norm(p.translation))
              for _, p in dataset.poses()]
    traj = random_trajectory(rng, min(ranges), max(ranges))
    index = nnindex.build(dataset.poses(), BDD)
    uncached = Dataset(dataset.manifest, dataset.root, cache_capacity=0)
    old_threads = cv2.getNumThreads()
    cv2.setNumThreads(1)
    totals, renders, warps, interps = [], [], [], []
    try:
        for t, pose in traj.sample_many(n_samples):
            nn_id, _ = nnindex.nearest(index, pose, 1)[0]
            t0 = time.perf_counter()
            rec = uncached.manifest.record(nn_id)
            image = load_image(uncached.root / rec.image_path)
            if method == "homography":
                render_s = 0.0
                if mask_input:
                    tr = time.perf_counter()
                    mask = mask_from_depth(render_depth(mesh, rec.pose,
                                                        dataset.manifest.intrinsics))
                    render_s = time.perf_counter() - tr
                else:
                    mask = None
                src = View(image=image, pose=rec.pose,
                           intrinsics=dataset.manifest.intrinsics, mask=mask)
                result = homography_transform(src, pose)
                renders.append(render_s)
                warps.append(result.timing.warp)
                interps.append(0.0)
            else:
                src = View(image=image, pose=rec.pose,
                           intrinsics=dataset.manifest.intrinsics)
                result = transform_3d(src, pose, mesh, interpolate=interpolate)
                renders.append(result.timing.render)
                warps.append(result.timing.warp)
                interps.append(result.timing.interpolate)
            totals.append(time.perf_counter() - t0)
    finally:
        cv2.setNumThreads(old_threads)
    totals_arr = np.array(totals)
    return BenchStats(method=method, n_samples=n_samples,
                      mask_input=mask_input, interpolate=interpolate,
                      mean_s=float(totals_arr.mean()),
                      p95_s=float(np.percentile(totals_arr, 95)),
                      mean_render_s=float(np.mean(renders)),
                      mean_warp_s=float(np.mean(warps)),
                      mean_interpolate_s=float(np.mean(interps)))


# CSV serialization (deterministic: shortest-repr floats, no timestamps)

MC_CSV_COLUMNS = ("pair_id", "source_id", "target_id", "bdd", "cl2",
                  "rot_mag", "spec", "ssim", "iou", "kps_l2", "kps_vbn")
TIMING_CSV_COLUMNS = ("pair_id", "render_s", "warp_s", "interpolate_s",
                      "total_s")


def mc_rows_csv(samples, header: str | None = None) -> str:
    lines = []
    if header:
        lines.append(f"# {header}")
    lines.append(f"# {ORACLE_FLAG}")
    lines.append(",".join(MC_CSV_COLUMNS))
    for s in samples:
        r = s.report
        lines.append(",".join([
            str(s.pair_id), s.source_id, s.target_id,
            repr(r.bdd), repr(r.cl2), repr(r.rot_mag), repr(r.spec),
            repr(r.ssim), repr(r.iou), repr(r.kps_l2), repr(r.kps_vbn)]))
    return "\n".join(lines) + "\n"


def timings_csv(samples, header: str | None = None) -> str:
    lines = []
    if header:
        lines.append(f"# {header}")
    lines.append(",".join(TIMING_CSV_COLUMNS))
    for s in samples:
        t = s.timing
        lines.append(",".join([str(s.pair_id), repr(t.render), repr(t.warp),
                               repr(t.interpolate), repr(t.total)]))
    return "\n".join(lines) + "\n"


def correlations_csv(table: dict, header: str | None = None) -> str:
    lines = []
    if header:
        lines.append(f"# {header}")
    lines.append("distance,metric,pearson_r")
    for (d, m), r in sorted(table.items()):
        lines.append(f"{d},{m},{r!r}")
    return "\n".join(lines) + "\n"


def thresholds_csv(model: PerformanceModel, header: str | None = None) -> str:
    lines = []
    if header:
        lines.append(f"# {header}")
    lines.append(f"# {ORACLE_FLAG}")
    lines.append("metric,method,confidence,max_bdd")
    for name in sorted(model.max_bdd):
        v = model.max_bdd[name]
        lines.append(f"{name},{model.config.method},"
                     f"{model.config.confidence!r},"
                     f"{'' if v is None else repr(v)}")
    return "\n".join(lines) + "\n"


def density_csv(report: density_mod.DensityReport,
                header: str | None = None) -> str:
    lines = []
    if header:
        lines.append(f"# {header}")
    lines.append("baseline_index,min_bdd_to_dataset")
    for i, d in enumerate(report.min_distances):
        lines.append(f"{i},{float(d)!r}")
    lines.append(f"# lb_bdd={report.lb_bdd!r} "
                 f"rho={'inf' if math.isinf(report.rho) else repr(report.rho)}")
    return "\n".join(lines) + "\n"
