"""Software depth-map rendering of triangle meshes.

Rasterization rules:

- A pixel is covered when its center (integer coordinates, see geometry
  conventions) lies inside the projected triangle; shared edges follow a
  top-left fill rule so adjacent triangles never double-cover or leave gaps.
- Depth is the metric camera-frame z, interpolated perspective-correctly
  (linearly in 1/z across the screen triangle, which is exact for planar
  triangles). No-hit pixels carry a negative sentinel.
- No back-face culling: mesh winding is not trusted, visibility comes from
  the z-buffer alone. Triangles crossing the near plane are clipped.

File formats owned by this module: depth maps as little-endian u32 width,
u32 height, then float32 row-major z values; masks as 8-bit PNG (0/255).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np

from .errors import DegenerateIntrinsics, IoError, ParseError
from .geometry import Intrinsics, Pose

DEPTH_SENTINEL = -1.0
_NEAR = 1e-6


@dataclass(frozen=True)
class TriangleMesh:
    """Vertices in the target frame (meters) and vertex-index triples."""

    vertices: np.ndarray
    triangles: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float).reshape(-1, 3)
        t = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if t.shape[0] < 1:
            raise ValueError("mesh needs at least one triangle")
        if not np.all(np.isfinite(v)):
            raise ValueError("mesh vertices contain non-finite values")
        if t.min() < 0 or t.max() >= v.shape[0]:
            raise ValueError("triangle index out of range")
        v.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)


@dataclass(frozen=True)
class DepthMap:
    """Per-pixel camera-frame z in meters; values < 0 mean no hit."""

    width: int
    height: int
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.height, self.width):
            raise ValueError("depth values shape does not match dimensions")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def valid(self) -> np.ndarray:
        return self.values > 0.0


@dataclass(frozen=True)
class Mask:
    """Boolean target-object pixels."""

    width: int
    height: int
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=bool)
        if v.shape != (self.height, self.width):
            raise ValueError("mask shape does not match dimensions")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def count(self) -> int:
        return int(self.values.sum())


def _check_intrinsics(k: Intrinsics):
    vals = [k.fx, k.fy, k.px, k.py]
    if not np.all(np.isfinite(vals)) or k.fx <= 0 or k.fy <= 0 \
            or k.width <= 0 or k.height <= 0:
        raise DegenerateIntrinsics(f"unusable intrinsics {k}")


def _clip_near(tri: np.ndarray) -> list[np.ndarray]:
    """Sutherland-Hodgman clip of a camera-space triangle against z >= _NEAR."""
    inside = tri[:, 2] >= _NEAR
    if inside.all():
        return [tri]
    if not inside.any():
        return []
    poly = []
    for i in range(3):
        a, b = tri[i], tri[(i + 1) % 3]
        ain, bin_ = inside[i], inside[(i + 1) % 3]
        if ain:
            poly.append(a)
        if ain != bin_:
            t = (_NEAR - a[2]) / (b[2] - a[2])
            poly.append(a + t * (b - a))
    out = []
    for j in range(1, len(poly) - 1):
        out.append(np.array([poly[0], poly[j], poly[j + 1]]))
    return out


def _rasterize(mesh: TriangleMesh, pose: Pose, k: Intrinsics):
    """Z-buffer pass returning (depth values, face ids); ids are -1 for no hit."""
    _check_intrinsics(k)
    h, w = k.height, k.width
    zbuf = np.full((h, w), np.inf)
    fids = np.full((h, w), -1, dtype=np.int32)
    cam = mesh.vertices @ pose.rotation.to_matrix().T + pose.translation

    for fid, tri_idx in enumerate(mesh.triangles):
        for tri in _clip_near(cam[tri_idx]):
            z = tri[:, 2]
            us = k.fx * tri[:, 0] / z + k.px
            vs = k.fy * tri[:, 1] / z + k.py
            p = np.stack([us, vs], axis=1)
            area2 = ((p[1, 0] - p[0, 0]) * (p[2, 1] - p[0, 1])
                     - (p[1, 1] - p[0, 1]) * (p[2, 0] - p[0, 0]))
            if abs(area2) < 1e-12:
                continue
            if area2 < 0.0:  # canonicalize winding so edge functions are >= 0 inside
                p = p[[0, 2, 1]]
                z = z[[0, 2, 1]]
                area2 = -area2
            x0 = max(int(np.ceil(p[:, 0].min())), 0)
            x1 = min(int(np.floor(p[:, 0].max())), w - 1)
            y0 = max(int(np.ceil(p[:, 1].min())), 0)
            y1 = min(int(np.floor(p[:, 1].max())), h - 1)
            if x0 > x1 or y0 > y1:
                continue
            gx, gy = np.meshgrid(np.arange(x0, x1 + 1, dtype=float),
                                 np.arange(y0, y1 + 1, dtype=float))
            inv_z = np.zeros_like(gx)
            covered = np.ones(gx.shape, dtype=bool)
            for i in range(3):
                a, b = p[(i + 1) % 3], p[(i + 2) % 3]
                du, dv = b[0] - a[0], b[1] - a[1]
                e = du * (gy - a[1]) - dv * (gx - a[0])
                top_left = (dv < 0.0) or (dv == 0.0 and du > 0.0)
                covered &= (e > 0.0) | ((e == 0.0) & top_left)
                inv_z += (e / area2) / z[i]  # barycentric weight of vertex i
            if not covered.any():
                continue
            depth = 1.0 / inv_z[covered]
            sub_z = zbuf[y0:y1 + 1, x0:x1 + 1]
            sub_f = fids[y0:y1 + 1, x0:x1 + 1]
            closer = np.zeros(gx.shape, dtype=bool)
            closer[covered] = depth < sub_z[covered]
            sub_z[closer] = 1.0 / inv_z[closer]
            sub_f[closer] = fid
    depth_values = np.where(np.isfinite(zbuf), zbuf, DEPTH_SENTINEL)
    return depth_values, fids


def render_depth(mesh: TriangleMesh, pose: Pose, k: Intrinsics) -> DepthMap:
    """Render the mesh depth map under a pose (see module rules)."""
    values, _ = _rasterize(mesh, pose, k)
    return DepthMap(width=k.width, height=k.height, values=values)


def render_face_ids(mesh: TriangleMesh, pose: Pose, k: Intrinsics):
    """Depth map plus the winning triangle index per pixel (-1 for none)."""
    values, fids = _rasterize(mesh, pose, k)
    return DepthMap(width=k.width, height=k.height, values=values), fids


def mask_from_depth(d: DepthMap) -> Mask:
    return Mask(width=d.width, height=d.height, values=d.valid())


def load_obj(path) -> TriangleMesh:
    """Parse v/f records of a Wavefront OBJ file.

    Polygon faces are fan-triangulated; 1-based and negative (relative)
    indices are resolved; vt/vn/materials are ignored.

    Raises:
        ParseError: with the offending line number.
    """
    path = Path(path)
    if not path.is_file():
        raise IoError(f"OBJ file not found: {path}")
    vertices: list[list[float]] = []
    faces: list[list[int]] = []
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        tag = parts[0]
        if tag == "v":
            if len(parts) < 4:
                raise ParseError("vertex needs 3 coordinates", line=lineno)
            try:
                vertices.append([float(parts[1]), float(parts[2]), float(parts[3])])
            except ValueError:
                raise ParseError(f"bad vertex coordinate in {line!r}", line=lineno)
        elif tag == "f":
            if len(parts) < 4:
                raise ParseError("face needs at least 3 vertices", line=lineno)
            idxs = []
            for tok in parts[1:]:
                head = tok.split("/")[0]
                try:
                    raw_idx = int(head)
                except ValueError:
                    raise ParseError(f"bad face index {tok!r}", line=lineno)
                if raw_idx == 0:
                    raise ParseError("OBJ indices are 1-based, got 0", line=lineno)
                if raw_idx < 0:
                    idx = len(vertices) + raw_idx
                    if idx < 0:
                        raise ParseError(f"relative index {raw_idx} out of range",
                                         line=lineno)
                else:
                    idx = raw_idx - 1
                idxs.append(idx)
            for j in range(1, len(idxs) - 1):
                faces.append([idxs[0], idxs[j], idxs[j + 1]])
        # all other records (vt, vn, usemtl, ...) are ignored
    if not vertices or not faces:
        raise ParseError("OBJ contains no renderable geometry")
    faces_arr = np.array(faces, dtype=np.int64)
    if faces_arr.max() >= len(vertices):
        raise ParseError(f"face index {int(faces_arr.max()) + 1} exceeds vertex count")
    return TriangleMesh(vertices=np.array(vertices), triangles=faces_arr)


def save_depth(d: DepthMap, path):
    path = Path(path)
    with open(path, "wb") as f:
        f.write(struct.pack("<II", d.width, d.height))
        f.write(d.values.astype("<f4").tobytes())


def load_depth(path) -> DepthMap:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as e:
        raise IoError(str(e))
    if len(blob) < 8:
        raise ParseError(f"depth file too short: {path}")
    w, h = struct.unpack("<II", blob[:8])
    expect = 8 + 4 * w * h
    if len(blob) != expect:
        raise ParseError(f"depth file {path}: expected {expect} bytes, got {len(blob)}")
    values = np.frombuffer(blob, dtype="<f4", offset=8).reshape(h, w).astype(float)
    return DepthMap(width=w, height=h, values=values)


def save_mask(m: Mask, path):
    if not cv2.imwrite(str(path), m.values.astype(np.uint8) * 255):
        raise IoError(f"failed to write mask {path}")


def load_mask(path) -> Mask:
    img = cv2.imread(str(path), cv2.IMREAD_GRAYSCALE)
    if img is None:
        raise IoError(f"failed to read mask {path}")
    return Mask(width=img.shape[1], height=img.shape[0], values=img >= 128)
