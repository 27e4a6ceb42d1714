"""Novel view synthesis by image warping.

Two methods:

- ``homography_transform``: a single perspective warp assuming a
  fronto-parallel planar scene at the source's range. Fast; exact only for
  planar scenes and pure camera rotations.
- ``transform_3d``: a per-pixel forward warp using exact depth rendered from
  a triangle mesh, with optional single-pass 5x5 gap interpolation. More
  accurate, needs the mesh.

Both zero out the source background before warping when a mask is available,
map masks and 2D keypoints through the same transform, and report a timing
breakdown (render / warp / interpolate / total, wall-clock seconds).

The ``valid_map`` of a result labels every output pixel:
0 background, 1 transformed, 2 interpolated, 3 unfillable gap.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from enum import IntEnum

import cv2
import numpy as np

from .errors import (EmptyOverlap, MissingMesh, SingularHomography, ZeroRange)
from .geometry import ImagePoint, Intrinsics, Pose, relative_pose
from .meshrender import DepthMap, Mask, TriangleMesh, render_depth
from .nnindex import PoseIndex, nearest


class ValidLabel(IntEnum):
    BACKGROUND = 0
    TRANSFORMED = 1
    INTERPOLATED = 2
    GAP = 3


# documented palette for valid-map PNGs
VALID_MAP_PALETTE = {ValidLabel.BACKGROUND: 0, ValidLabel.TRANSFORMED: 255,
                     ValidLabel.INTERPOLATED: 170, ValidLabel.GAP: 85}


@dataclass(frozen=True)
class Timing:
    render: float
    warp: float
    interpolate: float
    total: float


@dataclass(frozen=True)
class View:
    """An image with its pose; the unit of synthesis."""

    image: np.ndarray
    pose: Pose
    intrinsics: Intrinsics
    mask: Mask | None = None
    depth: DepthMap | None = None
    keypoints_2d: tuple[ImagePoint, ...] | None = None

    def __post_init__(self):
        img = np.asarray(self.image)
        h, w = img.shape[:2]
        if (w, h) != (self.intrinsics.width, self.intrinsics.height):
            raise ValueError(f"image {w}x{h} does not match intrinsics "
                             f"{self.intrinsics.width}x{self.intrinsics.height}")
        for part in (self.mask, self.depth):
            if part is not None and (part.width, part.height) != (w, h):
                raise ValueError("mask/depth dimensions must match the image")
        img = img if img.flags.writeable is False else img.copy()
        img.setflags(write=False)
        object.__setattr__(self, "image", img)
        if self.keypoints_2d is not None:
            object.__setattr__(self, "keypoints_2d", tuple(self.keypoints_2d))


@dataclass(frozen=True)
class SynthesisResult:
    image: np.ndarray
    transformed_mask: Mask
    transformed_keypoints: tuple[ImagePoint, ...] | None
    valid_map: np.ndarray
    timing: Timing


def _masked_image(view: View) -> np.ndarray:
    if view.mask is None:
        return view.image
    m = view.mask.values
    if view.image.ndim == 3:
        m = m[:, :, None]
    return np.where(m, view.image, 0).astype(view.image.dtype)


def _map_points_projective(g: np.ndarray, points) -> tuple[ImagePoint, ...]:
    out = []
    for p in points:
        vec = g @ np.array([p.u, p.v, 1.0])
        if abs(vec[2]) < 1e-12:
            out.append(ImagePoint(float("nan"), float("nan")))
        else:
            out.append(ImagePoint(vec[0] / vec[2], vec[1] / vec[2]))
    return tuple(out)


def homography_transform(source: View, target_pose: Pose) -> SynthesisResult:
    """Warp the source view to the target pose with a planar-scene homography.

    The scene is approximated by the plane normal to the boresight at the
    source's range d = ||t_source||; the image map is G = K (R + t n^T / d) K^-1
    built from the relative pose. Sampling is inverse-mapped bilinear with
    out-of-range pixels set to 0.

    Raises:
        ZeroRange: if the source camera sits on the target origin.
        SingularHomography: if the image map degenerates.
    """
    t_start = time.perf_counter()
    d = float(np.linalg.norm(source.pose.translation))
    if d < 1e-9:
        raise ZeroRange("source range is zero; no plane distance available")
    rel = relative_pose(source.pose, target_pose)
    h = rel.rotation.to_matrix() + np.outer(rel.translation, [0.0, 0.0, 1.0]) / d
    k = source.intrinsics.to_matrix()
    g = k @ h @ source.intrinsics.inverse_matrix()
    if abs(np.linalg.det(g)) < 1e-12:
        raise SingularHomography(f"det(G) = {np.linalg.det(g):.3e}")

    img = _masked_image(source)
    size = (source.intrinsics.width, source.intrinsics.height)
    warped = cv2.warpPerspective(img, g, size, flags=cv2.INTER_LINEAR,
                                 borderMode=cv2.BORDER_CONSTANT, borderValue=0)
    support = (source.mask.values if source.mask is not None
               else np.ones(img.shape[:2], dtype=bool)).astype(np.float32)
    warped_support = cv2.warpPerspective(support, g, size, flags=cv2.INTER_LINEAR,
                                         borderMode=cv2.BORDER_CONSTANT, borderValue=0)
    covered = warped_support >= 0.5
    valid_map = np.where(covered, np.uint8(ValidLabel.TRANSFORMED),
                         np.uint8(ValidLabel.BACKGROUND))
    kps = None
    if source.keypoints_2d is not None:
        kps = _map_points_projective(g, source.keypoints_2d)
    t_end = time.perf_counter()
    timing = Timing(render=0.0, warp=t_end - t_start, interpolate=0.0,
                    total=t_end - t_start)
    return SynthesisResult(image=warped,
                           transformed_mask=Mask(size[0], size[1], covered),
                           transformed_keypoints=kps,
                           valid_map=valid_map, timing=timing)


def transform_3d(source: View, target_pose: Pose, mesh: TriangleMesh | None,
                 interpolate: bool = True,
                 fill_target_mask: bool = False) -> SynthesisResult:
    """Depth-exact forward warp of the source view to the target pose.

    Renders the source depth map from the mesh, back-projects every valid
    source pixel, maps it through the relative pose and splats it onto the
    nearest integer target pixel; collisions keep the smaller target-frame z.
    Gap pixels (no landing, but positive source depth at the same raster
    position, the overlap heuristic) are filled with the mean of transformed
    pixels in their 5x5 neighborhood when `interpolate` is set; gaps without
    any transformed neighbor stay background. Disocclusions are not filled.

    `fill_target_mask` switches gap detection to the rendered *target* mask
    instead (fills every target-object hole, including disocclusions). It
    biases mask-overlap scores to 1 by construction, so it is off by default.

    Raises:
        MissingMesh: when no mesh is given.
        EmptyOverlap: when no source pixel lands inside the target image.
    """
    if mesh is None:
        raise MissingMesh("the 3D transform needs a mesh; use the homography "
                          "transform when none is available")
    t0 = time.perf_counter()
    k = source.intrinsics
    depth = render_depth(mesh, source.pose, k)
    t_render = time.perf_counter() - t0

    t1 = time.perf_counter()
    valid_src = depth.valid()
    if source.mask is not None:
        valid_src &= source.mask.values
    vs, us = np.nonzero(valid_src)
    z = depth.values[vs, us]
    rel = relative_pose(source.pose, target_pose)
    rays = np.stack([(us - k.px) / k.fx, (vs - k.py) / k.fy, np.ones_like(z)], axis=1)
    pc = rays * z[:, None]
    pt = pc @ rel.rotation.to_matrix().T + rel.translation
    front = pt[:, 2] > 1e-12
    pt, vs_f, us_f = pt[front], vs[front], us[front]
    ut = np.rint(k.fx * pt[:, 0] / pt[:, 2] + k.px).astype(np.int64)
    vt = np.rint(k.fy * pt[:, 1] / pt[:, 2] + k.py).astype(np.int64)
    inb = (0 <= ut) & (ut < k.width) & (0 <= vt) & (vt < k.height)
    if not inb.any():
        raise EmptyOverlap("no source pixel lands in the target image")
    ut, vt = ut[inb], vt[inb]
    zt = pt[inb, 2]
    src_v, src_u = vs_f[inb], us_f[inb]

    # collision rule: nearer surface wins; stable lexsort keeps the result
    # deterministic on exact z ties
    flat = vt * k.width + ut
    order = np.lexsort((zt, flat))
    flat_sorted = flat[order]
    first = np.ones(len(order), dtype=bool)
    first[1:] = flat_sorted[1:] != flat_sorted[:-1]
    win = order[first]

    out = np.zeros_like(source.image)
    out[vt[win], ut[win]] = source.image[src_v[win], src_u[win]]
    valid_map = np.full((k.height, k.width), np.uint8(ValidLabel.BACKGROUND))
    valid_map[vt[win], ut[win]] = np.uint8(ValidLabel.TRANSFORMED)
    t_warp = time.perf_counter() - t1

    t2 = time.perf_counter()
    landed = valid_map == np.uint8(ValidLabel.TRANSFORMED)
    if fill_target_mask:
        target_depth = render_depth(mesh, target_pose, k)
        gap_eligible = target_depth.valid() & ~landed
    else:
        gap_eligible = depth.valid() & ~landed
    valid_map[gap_eligible] = np.uint8(ValidLabel.GAP)
    if interpolate and gap_eligible.any():
        counts = cv2.boxFilter(landed.astype(np.float32), -1, (5, 5),
                               normalize=False, borderType=cv2.BORDER_CONSTANT)
        fill = gap_eligible & (counts > 0.5)
        if fill.any():
            img_f = out.astype(np.float32)
            if img_f.ndim == 3:
                src_sum = np.dstack([
                    cv2.boxFilter(img_f[:, :, c] * landed, -1, (5, 5),
                                  normalize=False, borderType=cv2.BORDER_CONSTANT)
                    for c in range(img_f.shape[2])])
                mean = src_sum[fill] / counts[fill][:, None]
            else:
                src_sum = cv2.boxFilter(img_f * landed, -1, (5, 5),
                                        normalize=False,
                                        borderType=cv2.BORDER_CONSTANT)
                mean = src_sum[fill] / counts[fill]
            out[fill] = np.rint(mean).astype(out.dtype)
            valid_map[fill] = np.uint8(ValidLabel.INTERPOLATED)
    t_interp = time.perf_counter() - t2

    kps = None
    if source.keypoints_2d is not None:
        kps = _map_keypoints_3d(source.keypoints_2d, depth, rel, k)
    mask_vals = (valid_map == np.uint8(ValidLabel.TRANSFORMED)) \
        | (valid_map == np.uint8(ValidLabel.INTERPOLATED))
    total = time.perf_counter() - t0
    return SynthesisResult(
        image=out,
        transformed_mask=Mask(k.width, k.height, mask_vals),
        transformed_keypoints=kps,
        valid_map=valid_map,
        timing=Timing(render=t_render, warp=t_warp, interpolate=t_interp,
                      total=total),
    )


def _sample_depth(depth: DepthMap, u: float, v: float) -> float:
    """Depth at the nearest pixel, falling back to the nearest valid pixel
    in a 5x5 window; negative when none is available."""
    iu, iv = int(round(u)), int(round(v))
    if not (0 <= iu < depth.width and 0 <= iv < depth.height):
        return -1.0
    if depth.values[iv, iu] > 0:
        return float(depth.values[iv, iu])
    best = -1.0
    best_d2 = None
    for dv in range(-2, 3):
        for du in range(-2, 3):
            uu, vv = iu + du, iv + dv
            if 0 <= uu < depth.width and 0 <= vv < depth.height \
                    and depth.values[vv, uu] > 0:
                d2 = (uu - u) ** 2 + (vv - v) ** 2
                if best_d2 is None or d2 < best_d2:
                    best_d2 = d2
                    best = float(depth.values[vv, uu])
    return best


def _map_keypoints_3d(points, depth: DepthMap, rel: Pose,
                      k: Intrinsics) -> tuple[ImagePoint, ...]:
    out = []
    for p in points:
        lam = _sample_depth(depth, p.u, p.v)
        if lam <= 0:
            out.append(ImagePoint(float("nan"), float("nan")))
            continue
        pc = lam * np.array([(p.u - k.px) / k.fx, (p.v - k.py) / k.fy, 1.0])
        pt = rel.rotation.rotate(pc) + rel.translation
        if pt[2] <= 1e-12:
            out.append(ImagePoint(float("nan"), float("nan")))
            continue
        out.append(ImagePoint(k.fx * pt[0] / pt[2] + k.px,
                              k.fy * pt[1] / pt[2] + k.py))
    return tuple(out)


def select_source(index: PoseIndex, target_pose: Pose):
    """View id of the BDD nearest neighbor of the target pose."""
    if index.metric.name != "bdd":
        raise ValueError("source selection requires a BDD index")
    return nearest(index, target_pose, 1)[0][0]


def save_valid_map(valid_map: np.ndarray, path):
    """Persist a valid map as PNG using the documented 4-value palette."""
    img = np.zeros_like(valid_map)
    for label, value in VALID_MAP_PALETTE.items():
        img[valid_map == np.uint8(label)] = value
    cv2.imwrite(str(path), img)
