"""Ingestion, validation and persistence of pose-labeled image datasets.

The manifest is a JSON file (``"schema": 1``) indexing views by id:

    {
      "schema": 1,
      "name": "...",
      "intrinsics": {"fx","fy","px","py","width","height"},
      "mesh": "mesh.obj",                  # optional, relative to manifest
      "keypoints_3d": [[x,y,z], ...],      # optional
      "views": [
        {"id": "...", "image": "images/0000.png",
         "q_wxyz": [w,x,y,z], "t_xyz": [x,y,z],
         "mask": "masks/0000.png",         # optional
         "depth": "depth/0000.f32",        # optional
         "provenance": {...}}              # optional
      ]
    }

Quaternions are scalar-first and must be unit to 1e-6 (then canonicalized);
translation z must be positive (target in front of the camera). Floats
round-trip exactly through the shortest-repr decimal serialization.

Also here: deterministic synthetic scenes (textured cube / plane / two boxes)
that stand in for full-scale spacecraft datasets in tests and benchmarks.
"""

from __future__ import annotations

import json
import math
import threading
from collections import OrderedDict
from dataclasses import dataclass, replace
from pathlib import Path

import cv2
import numpy as np

from .errors import (BadQuaternion, IdCollision, IoError, MissingFile,
                     SchemaError)
from .geometry import ImagePoint, Intrinsics, Pose, Quaternion, project
from .meshrender import (Mask, TriangleMesh, load_depth, load_mask, load_obj,
                         render_face_ids, save_depth, save_mask)
from .posemetrics import bdd_quat
from .synthesis import View

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class ViewRecord:
    id: str
    image_path: str
    pose: Pose
    mask_path: str | None = None
    depth_path: str | None = None
    provenance: dict | None = None


@dataclass(frozen=True)
class DatasetManifest:
    name: str
    intrinsics: Intrinsics
    views: tuple[ViewRecord, ...]
    mesh_path: str | None = None
    keypoints_3d: np.ndarray | None = None

    def ids(self):
        return [v.id for v in self.views]

    def record(self, view_id: str) -> ViewRecord:
        for v in self.views:
            if v.id == view_id:
                return v
        raise KeyError(view_id)


def _parse_pose(obj: dict, view_id: str) -> Pose:
    q = obj.get("q_wxyz")
    t = obj.get("t_xyz")
    if q is None or t is None or len(q) != 4 or len(t) != 3:
        raise SchemaError(f"view {view_id}: q_wxyz and t_xyz are required")
    norm = math.sqrt(sum(float(c) ** 2 for c in q))
    if abs(norm - 1.0) > 1e-6:
        raise BadQuaternion(f"view {view_id}: quaternion norm {norm}")
    if not float(t[2]) > 0:
        raise SchemaError(f"view {view_id}: translation z must be > 0")
    return Pose(Quaternion.from_array(q), np.array(t, dtype=float))


def load_manifest(path) -> DatasetManifest:
    """Load and validate a dataset manifest.

    Raises:
        SchemaError, BadQuaternion, MissingFile
    """
    path = Path(path)
    if not path.is_file():
        raise MissingFile(str(path))
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise SchemaError(f"{path}: not valid JSON ({e})")
    if data.get("schema") != SCHEMA_VERSION:
        raise SchemaError(f"{path}: unsupported schema {data.get('schema')!r}")
    try:
        ki = data["intrinsics"]
        intr = Intrinsics(fx=float(ki["fx"]), fy=float(ki["fy"]),
                          px=float(ki["px"]), py=float(ki["py"]),
                          width=int(ki["width"]), height=int(ki["height"]))
    except (KeyError, TypeError, ValueError) as e:
        raise SchemaError(f"{path}: bad intrinsics ({e})")
    root = path.parent
    views = []
    seen = set()
    for obj in data.get("views", []):
        vid = obj.get("id")
        if not isinstance(vid, str) or not vid:
            raise SchemaError("every view needs a non-empty string id")
        if vid in seen:
            raise SchemaError(f"duplicate view id {vid!r}")
        seen.add(vid)
        pose = _parse_pose(obj, vid)
        rec = ViewRecord(id=vid, image_path=obj["image"], pose=pose,
                         mask_path=obj.get("mask"), depth_path=obj.get("depth"),
                         provenance=obj.get("provenance"))
        for rel in (rec.image_path, rec.mask_path, rec.depth_path):
            if rel is not None and not (root / rel).is_file():
                raise MissingFile(str(root / rel))
        views.append(rec)
    mesh_path = data.get("mesh")
    if mesh_path is not None and not (root / mesh_path).is_file():
        raise MissingFile(str(root / mesh_path))
    kps = data.get("keypoints_3d")
    kps_arr = None if kps is None else np.array(kps, dtype=float).reshape(-1, 3)
    return DatasetManifest(name=data.get("name", path.stem), intrinsics=intr,
                           views=tuple(views), mesh_path=mesh_path,
                           keypoints_3d=kps_arr)


def save_manifest(manifest: DatasetManifest, path):
    path = Path(path)
    ki = manifest.intrinsics
    data = {
        "schema": SCHEMA_VERSION,
        "name": manifest.name,
        "intrinsics": {"fx": ki.fx, "fy": ki.fy, "px": ki.px, "py": ki.py,
                       "width": ki.width, "height": ki.height},
        "mesh": manifest.mesh_path,
        "keypoints_3d": (None if manifest.keypoints_3d is None
                         else manifest.keypoints_3d.tolist()),
        "views": [
            {
                "id": v.id,
                "image": v.image_path,
                "q_wxyz": [v.pose.rotation.w, v.pose.rotation.x,
                           v.pose.rotation.y, v.pose.rotation.z],
                "t_xyz": [float(c) for c in v.pose.translation],
                **({"mask": v.mask_path} if v.mask_path else {}),
                **({"depth": v.depth_path} if v.depth_path else {}),
                **({"provenance": v.provenance} if v.provenance else {}),
            }
            for v in manifest.views
        ],
    }
    path.write_text(json.dumps(data, indent=1) + "\n")


def load_image(path) -> np.ndarray:
    img = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if img is None:
        raise IoError(f"failed to read image {path}")
    if img.ndim == 3:
        img = cv2.cvtColor(img, cv2.COLOR_BGR2RGB)
    return img


def save_image(img: np.ndarray, path):
    out = img
    if img.ndim == 3:
        out = cv2.cvtColor(img, cv2.COLOR_RGB2BGR)
    if not cv2.imwrite(str(path), out):
        raise IoError(f"failed to write image {path}")


class Dataset:
    """A manifest plus a lazily-loaded, size-capped view cache.

    Cached arrays are immutable, so eviction can never change pixel values
    seen by callers. Reads are thread-safe; appending is exclusive.
    """

    def __init__(self, manifest: DatasetManifest, root, cache_capacity: int = 64):
        self.manifest = manifest
        self.root = Path(root)
        self._cache: OrderedDict[str, View] = OrderedDict()
        self._capacity = cache_capacity
        self._lock = threading.Lock()

    def __len__(self):
        return len(self.manifest.views)

    def poses(self):
        return [(v.id, v.pose) for v in self.manifest.views]

    def keypoints_2d_for(self, pose: Pose) -> tuple[ImagePoint, ...] | None:
        if self.manifest.keypoints_3d is None:
            return None
        return tuple(project(x, pose, self.manifest.intrinsics)
                     for x in self.manifest.keypoints_3d)

    def view(self, view_id: str, with_keypoints: bool = False) -> View:
        key = (view_id, with_keypoints)
        with self._lock:
            if key in self._cache:
                self._cache.move_to_end(key)
                return self._cache[key]
        rec = self.manifest.record(view_id)
        image = load_image(self.root / rec.image_path)
        mask = load_mask(self.root / rec.mask_path) if rec.mask_path else None
        depth = load_depth(self.root / rec.depth_path) if rec.depth_path else None
        kps = self.keypoints_2d_for(rec.pose) if with_keypoints else None
        view = View(image=image, pose=rec.pose, intrinsics=self.manifest.intrinsics,
                    mask=mask, depth=depth, keypoints_2d=kps)
        with self._lock:
            self._cache[key] = view
            self._cache.move_to_end(key)
            while len(self._cache) > self._capacity:
                self._cache.popitem(last=False)
        return view

    def mesh(self) -> TriangleMesh | None:
        if self.manifest.mesh_path is None:
            return None
        return load_obj(self.root / self.manifest.mesh_path)

    def manifest_path(self) -> Path:
        return self.root / "manifest.json"


def append_views(dataset: Dataset, new_views) -> DatasetManifest:
    """Persist synthesized views and extend the manifest.

    `new_views` is a list of (View, provenance) tuples; provenance is a dict
    recording at least the synthesis source id, method and BDD. Ids are taken
    from provenance["id"] when present, otherwise generated as synth-NNNN.

    Raises:
        IdCollision: when an id is already taken.
    """
    manifest = dataset.manifest
    existing = set(manifest.ids())
    out_dir = dataset.root
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    (out_dir / "masks").mkdir(parents=True, exist_ok=True)
    counter = 0
    records = list(manifest.views)
    for view, provenance in new_views:
        provenance = dict(provenance)
        vid = provenance.pop("id", None)
        if vid is None:
            while True:
                vid = f"synth-{counter:04d}"
                counter += 1
                if vid not in existing:
                    break
        if vid in existing:
            raise IdCollision(vid)
        existing.add(vid)
        image_rel = f"images/{vid}.png"
        save_image(view.image, out_dir / image_rel)
        mask_rel = None
        if view.mask is not None:
            mask_rel = f"masks/{vid}.png"
            save_mask(view.mask, out_dir / mask_rel)
        records.append(ViewRecord(id=vid, image_path=image_rel, pose=view.pose,
                                  mask_path=mask_rel, provenance=provenance))
    new_manifest = replace(manifest, views=tuple(records))
    dataset.manifest = new_manifest
    save_manifest(new_manifest, dataset.manifest_path())
    return new_manifest


# synthetic scenes


def cube_mesh(side: float = 1.0, subdiv: int = 4) -> TriangleMesh:
    """Axis-aligned cube centered at the origin, each face an n x n grid."""
    h = side / 2.0
    verts: list[tuple] = []
    tris: list[list[int]] = []
    vert_index: dict[tuple, int] = {}

    def vid(p):
        key = tuple(round(c, 12) for c in p)
        if key not in vert_index:
            vert_index[key] = len(verts)
            verts.append(key)
        return vert_index[key]

    # each face: origin corner plus two spanning edge vectors
    faces = [
        ((-h, -h, -h), (side, 0, 0), (0, side, 0)),   # z = -h
        ((-h, -h, +h), (side, 0, 0), (0, side, 0)),   # z = +h
        ((-h, -h, -h), (side, 0, 0), (0, 0, side)),   # y = -h
        ((-h, +h, -h), (side, 0, 0), (0, 0, side)),   # y = +h
        ((-h, -h, -h), (0, side, 0), (0, 0, side)),   # x = -h
        ((+h, -h, -h), (0, side, 0), (0, 0, side)),   # x = +h
    ]
    n = max(1, subdiv)
    for origin, ea, eb in faces:
        o = np.array(origin, dtype=float)
        a = np.array(ea, dtype=float) / n
        b = np.array(eb, dtype=float) / n
        for i in range(n):
            for j in range(n):
                p00 = vid(o + i * a + j * b)
                p10 = vid(o + (i + 1) * a + j * b)
                p11 = vid(o + (i + 1) * a + (j + 1) * b)
                p01 = vid(o + i * a + (j + 1) * b)
                tris.append([p00, p10, p11])
                tris.append([p00, p11, p01])
    return TriangleMesh(vertices=np.array(verts), triangles=np.array(tris))


def plane_mesh(side: float = 2.0, subdiv: int = 8) -> TriangleMesh:
    """Square plane in the target z=0 plane (fronto-parallel for a camera
    looking down +z with identity attitude)."""
    n = max(1, subdiv)
    xs = np.linspace(-side / 2, side / 2, n + 1)
    verts = [(x, y, 0.0) for y in xs for x in xs]
    tris = []
    for j in range(n):
        for i in range(n):
            p00 = j * (n + 1) + i
            p10 = p00 + 1
            p01 = p00 + (n + 1)
            p11 = p01 + 1
            tris.append([p00, p10, p11])
            tris.append([p00, p11, p01])
    return TriangleMesh(vertices=np.array(verts), triangles=np.array(tris))


def two_boxes_mesh() -> TriangleMesh:
    """A unit cube plus a smaller offset cube; produces disocclusions."""
    a = cube_mesh(1.0, subdiv=3)
    b = cube_mesh(0.5, subdiv=2)
    bv = b.vertices + np.array([0.85, 0.0, 0.3])
    return TriangleMesh(vertices=np.vstack([a.vertices, bv]),
                        triangles=np.vstack([a.triangles,
                                             b.triangles + len(a.vertices)]))


def _scene_keypoints(kind: str) -> np.ndarray:
    cube_corners = np.array([[x, y, z] for x in (-0.5, 0.5) for y in (-0.5, 0.5)
                             for z in (-0.5, 0.5)])
    if kind == "cube":
        return cube_corners
    if kind == "plane":
        return np.array([[-1, -1, 0], [1, -1, 0], [1, 1, 0], [-1, 1, 0],
                         [0, 0, 0]], dtype=float)
    if kind == "two-boxes":
        small = cube_corners * 0.5 + np.array([0.85, 0.0, 0.3])
        return np.vstack([cube_corners, small])
    raise ValueError(f"unknown scene kind {kind!r}")


_SCENE_MESHES = {"cube": cube_mesh, "plane": plane_mesh,
                 "two-boxes": two_boxes_mesh}


def _face_shades(mesh: TriangleMesh, texture_seed: int) -> np.ndarray:
    """Flat per-face intensities: a seeded smooth gradient over the geometry
    plus per-face jitter. Smoothness keeps shade steps across shared edges
    small, so image-space comparisons are not dominated by resampling blur
    at facet boundaries."""
    rng = np.random.default_rng(texture_seed)
    direction = rng.normal(size=3)
    direction /= np.linalg.norm(direction)
    centroids = mesh.vertices[mesh.triangles].mean(axis=1)
    proj = centroids @ direction
    span = proj.max() - proj.min()
    t = (proj - proj.min()) / span if span > 0 else np.full(len(proj), 0.5)
    t = np.clip(0.15 + 0.7 * t + rng.uniform(-0.05, 0.05, size=len(proj)), 0.0, 1.0)
    return np.rint(40.0 + 190.0 * t).astype(np.uint8)


@dataclass(frozen=True)
class PoseSamplerConfig:
    """Look-at poses on a shell around the target, with roll and slight
    off-pointing jitter; optionally rejecting attitudes inside a BDD ball
    (a deliberate coverage gap)."""

    seed: int = 0
    range_lo: float = 4.0
    range_hi: float = 7.0
    off_axis_max_deg: float = 2.0
    gap_center: Quaternion | None = None
    gap_radius: float = 0.0


def look_at_pose(center: np.ndarray, roll: float = 0.0,
                 jitter_axis=None, jitter_angle: float = 0.0) -> Pose:
    """Pose of a camera at `center` (target frame) looking at the origin."""
    center = np.asarray(center, dtype=float)
    f = -center / np.linalg.norm(center)  # boresight, camera +z in target frame
    aux = np.array([0.0, 0.0, 1.0])
    if abs(f @ aux) > 0.99:
        aux = np.array([0.0, 1.0, 0.0])
    x_row = np.cross(aux, f)
    x_row /= np.linalg.norm(x_row)
    y_row = np.cross(f, x_row)
    r = np.stack([x_row, y_row, f])
    q = Quaternion.from_matrix(r)
    q = Quaternion.from_axis_angle([0, 0, 1], roll) * q
    if jitter_axis is not None and jitter_angle != 0.0:
        q = Quaternion.from_axis_angle(jitter_axis, jitter_angle) * q
    return Pose(q, -q.rotate(center))


def sample_pose(rng: np.random.Generator, cfg: PoseSamplerConfig) -> Pose:
    while True:
        direction = rng.normal(size=3)
        direction /= np.linalg.norm(direction)
        rng_range = rng.uniform(cfg.range_lo, cfg.range_hi)
        roll = rng.uniform(0.0, 2.0 * np.pi)
        ang = np.radians(rng.uniform(0.0, cfg.off_axis_max_deg))
        phi = rng.uniform(0.0, 2.0 * np.pi)
        jit_axis = [np.cos(phi), np.sin(phi), 0.0]
        pose = look_at_pose(direction * rng_range, roll, jit_axis, ang)
        if cfg.gap_center is not None and cfg.gap_radius > 0.0 \
                and bdd_quat(pose.rotation, cfg.gap_center).value < cfg.gap_radius:
            continue
        return pose


def make_synthetic_scene(kind: str, texture_seed: int, n_views: int,
                         sampler: PoseSamplerConfig, out_dir,
                         intrinsics: Intrinsics | None = None,
                         write_depth: bool = True) -> tuple[Dataset, TriangleMesh]:
    """Render a deterministic synthetic dataset into `out_dir`.

    Each mesh face carries a flat intensity drawn from `texture_seed`; views
    are rendered at poses from the sampler. Images, masks (and optionally
    depth maps) are persisted together with the manifest and the OBJ mesh.
    """
    if kind not in _SCENE_MESHES:
        raise ValueError(f"unknown scene kind {kind!r}")
    if n_views < 1:
        raise ValueError("n_views must be >= 1")
    k = intrinsics or Intrinsics(fx=300.0, fy=300.0, px=127.5, py=127.5,
                                 width=256, height=256)
    mesh = _SCENE_MESHES[kind]()
    out_dir = Path(out_dir)
    for sub in ("images", "masks", "depth"):
        (out_dir / sub).mkdir(parents=True, exist_ok=True)

    shades = _face_shades(mesh, texture_seed)
    pose_rng = np.random.default_rng(sampler.seed)

    records = []
    for i in range(n_views):
        pose = sample_pose(pose_rng, sampler)
        depth, fids = render_face_ids(mesh, pose, k)
        img = np.zeros((k.height, k.width), dtype=np.uint8)
        hit = fids >= 0
        img[hit] = shades[fids[hit]]
        vid = f"view-{i:04d}"
        image_rel = f"images/{vid}.png"
        mask_rel = f"masks/{vid}.png"
        save_image(img, out_dir / image_rel)
        save_mask(Mask(k.width, k.height, hit), out_dir / mask_rel)
        depth_rel = None
        if write_depth:
            depth_rel = f"depth/{vid}.f32"
            save_depth(depth, out_dir / depth_rel)
        records.append(ViewRecord(id=vid, image_path=image_rel, pose=pose,
                                  mask_path=mask_rel, depth_path=depth_rel))

    _write_obj(mesh, out_dir / "mesh.obj")
    manifest = DatasetManifest(
        name=f"synthetic-{kind}", intrinsics=k, views=tuple(records),
        mesh_path="mesh.obj", keypoints_3d=_scene_keypoints(kind))
    save_manifest(manifest, out_dir / "manifest.json")
    return Dataset(manifest, out_dir), mesh


def _write_obj(mesh: TriangleMesh, path):
    lines = [f"v {float(v[0])!r} {float(v[1])!r} {float(v[2])!r}"
             for v in mesh.vertices]
    lines += [f"f {t[0] + 1} {t[1] + 1} {t[2] + 1}" for t in mesh.triangles]
    Path(path).write_text("\n".join(lines) + "\n")


def import_speedplus(labels_path, camera_path, images_dir, out_path,
                     name: str = "imported") -> DatasetManifest:
    """Convert SPEED+-style pose labels into a manifest.

    Expects a labels JSON list with per-image ``filename``,
    ``q_vbs2tango_true`` (scalar-first target-to-camera quaternion) and
    ``r_Vo2To_vbs_true`` (translation, meters), plus a camera JSON with
    ``cameraMatrix`` and image dimensions ``Nu``/``Nv``. Other conventions
    require user-side conversion.
    """
    labels_path, camera_path = Path(labels_path), Path(camera_path)
    for p in (labels_path, camera_path):
        if not p.is_file():
            raise MissingFile(str(p))
    try:
        cam = json.loads(camera_path.read_text())
        km = np.array(cam["cameraMatrix"], dtype=float)
        width, height = int(cam["Nu"]), int(cam["Nv"])
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        raise SchemaError(f"{camera_path}: {e}")
    intr = Intrinsics(fx=km[0, 0], fy=km[1, 1], px=km[0, 2], py=km[1, 2],
                      width=width, height=height)
    try:
        labels = json.loads(labels_path.read_text())
    except json.JSONDecodeError as e:
        raise SchemaError(f"{labels_path}: {e}")
    images_dir = Path(images_dir)
    out_path = Path(out_path)
    records = []
    for entry in labels:
        try:
            fname = entry["filename"]
            q = entry["q_vbs2tango_true"]
            t = entry["r_Vo2To_vbs_true"]
        except (KeyError, TypeError) as e:
            raise SchemaError(f"{labels_path}: missing field {e}")
        img = images_dir / fname
        if not img.is_file():
            raise MissingFile(str(img))
        rel = img.relative_to(out_path.parent) if img.is_relative_to(out_path.parent) \
            else img.resolve()
        pose = _parse_pose({"q_wxyz": q, "t_xyz": t}, fname)
        records.append(ViewRecord(id=Path(fname).stem, image_path=str(rel),
                                  pose=pose))
    manifest = DatasetManifest(name=name, intrinsics=intr, views=tuple(records))
    save_manifest(manifest, out_path)
    return manifest
