"""Full-reference quality metrics for synthesized views.

Four metrics: SSIM on the target-mask bounding box crop, mask IoU, mean 2D
keypoint reprojection error (KPS-L2, pixels) and the range-relative 3D
keypoint error (KPS-VBN, dimensionless; the customary pass bar is 1% of
range).

Keypoint "detections" here come from the geometric transformation of
ground-truth keypoints through the synthesis map, not from a learned
detector; reports are flagged accordingly (ORACLE_FLAG). This isolates
geometric synthesis accuracy from detector behavior.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import fftconvolve

from .errors import (CountMismatch, EmptyMask, KeypointOutOfView,
                     NonPositiveDepth)
from .geometry import ImagePoint, Intrinsics, Pose, project
from .meshrender import Mask, TriangleMesh, mask_from_depth, render_depth
from .posemetrics import bdd, cl2, rotation_magnitude, spec_combined
from .synthesis import SynthesisResult, View, homography_transform, transform_3d

ORACLE_FLAG = "keypoints=geometric-oracle (no learned detector)"

_SSIM_WIN = 11
_SSIM_SIGMA = 1.5
_SSIM_K1 = 0.01
_SSIM_K2 = 0.03
_SSIM_RANGE = 255.0


@dataclass(frozen=True)
class KeypointSet:
    """Named 3D landmarks on the target geometry (>= 4 for PnP use)."""

    points_3d: np.ndarray
    names: tuple[str, ...] = ()

    def __post_init__(self):
        pts = np.asarray(self.points_3d, dtype=float).reshape(-1, 3)
        if pts.shape[0] < 4:
            raise ValueError("a keypoint set needs at least 4 points")
        names = self.names or tuple(f"kp{i}" for i in range(pts.shape[0]))
        if len(names) != pts.shape[0]:
            raise ValueError("names/points length mismatch")
        pts.setflags(write=False)
        object.__setattr__(self, "points_3d", pts)
        object.__setattr__(self, "names", tuple(names))

    def __len__(self):
        return self.points_3d.shape[0]


@dataclass(frozen=True)
class QualityReport:
    ssim: float
    iou: float
    kps_l2: float
    kps_vbn: float
    bdd: float
    cl2: float
    rot_mag: float
    spec: float
    num_keypoints: int

    CSV_COLUMNS = ("ssim", "iou", "kps_l2", "kps_vbn", "bdd", "cl2",
                   "rot_mag", "spec", "num_keypoints")

    def csv_row(self):
        return [repr(getattr(self, c)) if c != "num_keypoints"
                else str(self.num_keypoints) for c in self.CSV_COLUMNS]


def _to_gray(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=float)
    if img.ndim == 3:
        return img.mean(axis=2)
    return img


def _gaussian_kernel(win: int, sigma: float) -> np.ndarray:
    half = win // 2
    g = np.exp(-((np.arange(win) - half) ** 2) / (2.0 * sigma * sigma))
    kern = np.outer(g, g)
    return kern / kern.sum()


def ssim_bbox(synth: np.ndarray, actual: np.ndarray, mask_actual: Mask) -> float:
    """SSIM between the two images cropped to the mask's bounding box.

    11x11 Gaussian window (sigma 1.5), K1=0.01, K2=0.03, dynamic range 255;
    the mean is taken over fully-supported window positions. The crop is
    expanded to the window size when the bounding box is smaller.

    Raises:
        EmptyMask: when the mask has no true pixel.
    """
    if synth.shape[:2] != actual.shape[:2]:
        raise ValueError("images must have equal dimensions")
    vals = mask_actual.values
    if not vals.any():
        raise EmptyMask("bounding box undefined for an empty mask")
    rows = np.flatnonzero(vals.any(axis=1))
    cols = np.flatnonzero(vals.any(axis=0))
    r0, r1 = int(rows[0]), int(rows[-1]) + 1
    c0, c1 = int(cols[0]), int(cols[-1]) + 1

    def widen(lo, hi, limit):
        while hi - lo < _SSIM_WIN:
            if lo > 0:
                lo -= 1
            elif hi < limit:
                hi += 1
            else:
                raise EmptyMask(f"image smaller than the {_SSIM_WIN}px SSIM window")
        return lo, hi

    r0, r1 = widen(r0, r1, vals.shape[0])
    c0, c1 = widen(c0, c1, vals.shape[1])
    a = _to_gray(synth[r0:r1, c0:c1])
    b = _to_gray(actual[r0:r1, c0:c1])

    kern = _gaussian_kernel(_SSIM_WIN, _SSIM_SIGMA)
    c1_ = (_SSIM_K1 * _SSIM_RANGE) ** 2
    c2_ = (_SSIM_K2 * _SSIM_RANGE) ** 2
    mu_a = fftconvolve(a, kern, mode="valid")
    mu_b = fftconvolve(b, kern, mode="valid")
    e_aa = fftconvolve(a * a, kern, mode="valid")
    e_bb = fftconvolve(b * b, kern, mode="valid")
    e_ab = fftconvolve(a * b, kern, mode="valid")
    var_a = e_aa - mu_a * mu_a
    var_b = e_bb - mu_b * mu_b
    cov = e_ab - mu_a * mu_b
    ssim_map = ((2 * mu_a * mu_b + c1_) * (2 * cov + c2_)) \
        / ((mu_a * mu_a + mu_b * mu_b + c1_) * (var_a + var_b + c2_))
    return float(ssim_map.mean())


def iou(m1: Mask, m2: Mask) -> float:
    """Intersection over union of two masks; 1.0 when both are empty."""
    if (m1.width, m1.height) != (m2.width, m2.height):
        raise ValueError("masks must have equal dimensions")
    inter = int((m1.values & m2.values).sum())
    union = int((m1.values | m2.values).sum())
    if union == 0:
        return 1.0
    return inter / union


def oracle_keypoints(result: SynthesisResult, kps: KeypointSet,
                     source: View) -> tuple[ImagePoint, ...]:
    """Detected keypoints of a synthesized view: the transformed ground truth.

    Raises:
        KeypointOutOfView: when a keypoint projects outside the source image
            or could not be carried through the transform.
    """
    k = source.intrinsics
    for x in kps.points_3d:
        p = project(x, source.pose, k)
        if not (-0.5 <= p.u < k.width - 0.5 and -0.5 <= p.v < k.height - 0.5):
            raise KeypointOutOfView(f"({p.u:.1f}, {p.v:.1f}) outside source view")
    got = result.transformed_keypoints
    if got is None:
        raise KeypointOutOfView("synthesis carried no keypoints")
    if len(got) != len(kps):
        raise CountMismatch(f"{len(got)} transformed vs {len(kps)} keypoints")
    if any(not (np.isfinite(p.u) and np.isfinite(p.v)) for p in got):
        raise KeypointOutOfView("a keypoint could not be transformed")
    return got


def kps_l2(detected, ground_truth_pose: Pose, k: Intrinsics,
           kps: KeypointSet) -> float:
    """Mean Euclidean reprojection error in pixels."""
    if len(detected) != len(kps):
        raise CountMismatch(f"{len(detected)} detections vs {len(kps)} keypoints")
    errs = []
    for det, x in zip(detected, kps.points_3d):
        truth = project(x, ground_truth_pose, k)
        errs.append(np.hypot(det.u - truth.u, det.v - truth.v))
    return float(np.mean(errs))


def kps_vbn(detected, ground_truth_pose: Pose, k: Intrinsics,
            kps: KeypointSet) -> float:
    """Mean 3D keypoint error relative to range.

    Each detection is back-projected along its pixel ray, evaluated at the
    ground-truth camera-frame depth of its keypoint, and compared with the
    keypoint in 3D; the mean error is divided by the camera-target range.
    """
    if len(detected) != len(kps):
        raise CountMismatch(f"{len(detected)} detections vs {len(kps)} keypoints")
    range_m = float(np.linalg.norm(ground_truth_pose.translation))
    errs = []
    for det, x in zip(detected, kps.points_3d):
        x_cam = ground_truth_pose.transform(x)
        z = x_cam[2]
        if z <= 0:
            raise NonPositiveDepth(f"keypoint depth {z}")
        est = z * np.array([(det.u - k.px) / k.fx, (det.v - k.py) / k.fy, 1.0])
        errs.append(np.linalg.norm(est - x_cam))
    return float(np.mean(errs) / range_m)


def evaluate_pair(source: View, target: View, method: str,
                  mesh: TriangleMesh | None, kps: KeypointSet,
                  spec_weight: float = 1.0,
                  interpolate: bool = True) -> tuple[QualityReport, SynthesisResult]:
    """Synthesize the target from the source and score it on all metrics.

    `method` is "homography" or "3dt". The target view must carry a mask
    (or a mesh must be available to render one). Returns the report and the
    synthesis result. The report also carries all four pose distances.
    """
    if source.keypoints_2d is None:
        k = source.intrinsics
        source = View(image=source.image, pose=source.pose, intrinsics=k,
                      mask=source.mask, depth=source.depth,
                      keypoints_2d=tuple(project(x, source.pose, k)
                                         for x in kps.points_3d))
    if method == "homography":
        result = homography_transform(source, target.pose)
    elif method == "3dt":
        result = transform_3d(source, target.pose, mesh, interpolate=interpolate)
    else:
        raise ValueError(f"unknown method {method!r}")
    target_mask = target.mask
    if target_mask is None:
        if mesh is None:
            raise EmptyMask("target has no mask and no mesh to render one")
        target_mask = mask_from_depth(render_depth(mesh, target.pose,
                                                   target.intrinsics))
    detected = oracle_keypoints(result, kps, source)
    report = QualityReport(
        ssim=ssim_bbox(result.image, target.image, target_mask),
        iou=iou(result.transformed_mask, target_mask),
        kps_l2=kps_l2(detected, target.pose, target.intrinsics, kps),
        kps_vbn=kps_vbn(detected, target.pose, target.intrinsics, kps),
        bdd=bdd(source.pose, target.pose).value,
        cl2=cl2(source.pose, target.pose),
        rot_mag=rotation_magnitude(source.pose, target.pose),
        spec=spec_combined(source.pose, target.pose, spec_weight),
        num_keypoints=len(kps),
    )
    return report, result
