"""Procedural hand-object scenes with exact ground truth."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numba
import numpy as np
from PIL import Image
from scipy.spatial.transform import Rotation

from .errors import ConfigRange, LayoutError, NonPositiveDepth, UnknownObject
from .geometry import (
    CameraIntrinsics,
    RigidPose,
    TriMesh,
    backproject,
    box_mesh,
    capsule_mesh,
    cylinder_mesh,
    icosphere,
    matrix_to_axis_angle,
    project,
)
from .hand import PALM_CENTER, PALM_RADIUS, hand_forward

log = logging.getLogger(__name__)

# light directions point from the surface toward the light (camera looks along +z)
LIGHTS = np.array([[0.0, 0.0, -1.0], [0.6, -0.5, -0.6], [-0.7, 0.3, -0.5]])
LIGHTS /= np.linalg.norm(LIGHTS, axis=1, keepdims=True)
LIGHT_WEIGHTS = np.array([0.5, 0.3, 0.2])
AMBIENT = 0.25

HAND_ID, OBJECT_ID = 0, 1
_DEFAULT_CATALOG = None


# --------------------------------------------------------------------------
# object catalog
# --------------------------------------------------------------------------


@dataclass
class ObjectTemplate:
    name: str
    kind: str
    params: dict
    color: tuple[float, float, float]
    mesh: TriMesh = field(init=False, repr=False)

    def __post_init__(self):
        self.color = tuple(float(c) for c in self.color)
        self.mesh = _primitive(self.kind, self.params)

    @property
    def corners(self) -> np.ndarray:
        return self.mesh.aabb_corners()

    @property
    def diameter(self) -> float:
        v = self.mesh.vertices
        d2 = ((v[:, None, :] - v[None, :, :]) ** 2).sum(-1)
        return float(np.sqrt(d2.max()))

    def to_dict(self) -> dict:
        return {"name": self.name, "kind": self.kind, "params": self.params, "color": list(self.color)}


def _primitive(kind: str, p: dict) -> TriMesh:
    if kind == "box":
        return box_mesh(p["half_extents"], divisions=p.get("divisions", 6))
    if kind == "sphere":
        return icosphere(p["radius"], p.get("subdivisions", 3))
    if kind == "cylinder":
        return cylinder_mesh(p["radius"], p["half_height"], p.get("segments", 24), p.get("rings", 4))
    if kind == "capsule":
        m = capsule_mesh(p["radius"], p["length"], p.get("segments", 16), p.get("cap_rings", 4))
        return TriMesh(m.vertices - np.array([0.0, 0.0, p["length"] / 2]), m.faces)
    raise ValueError(f"unknown primitive kind {kind!r}")


class ObjectCatalog:
    def __init__(self, templates: list[ObjectTemplate]):
        self.templates = list(templates)

    def __len__(self):
        return len(self.templates)

    def __getitem__(self, idx: int) -> ObjectTemplate:
        if not 0 <= int(idx) < len(self.templates):
            raise UnknownObject(f"object id {idx} not in catalog of {len(self.templates)}")
        return self.templates[int(idx)]

    @classmethod
    def default(cls) -> "ObjectCatalog":
        global _DEFAULT_CATALOG
        if _DEFAULT_CATALOG is None:
            _DEFAULT_CATALOG = cls._build_default()
        return _DEFAULT_CATALOG

    @classmethod
    def _build_default(cls) -> "ObjectCatalog":
        return cls(
            [
                ObjectTemplate("box", "box", {"half_extents": [0.035, 0.055, 0.022]}, (0.85, 0.2, 0.15)),
                ObjectTemplate("ball", "sphere", {"radius": 0.035}, (0.2, 0.45, 0.9)),
                ObjectTemplate("can", "cylinder", {"radius": 0.032, "half_height": 0.05}, (0.9, 0.8, 0.2)),
                ObjectTemplate("bottle", "capsule", {"radius": 0.025, "length": 0.08}, (0.25, 0.75, 0.35)),
                ObjectTemplate("cube", "box", {"half_extents": [0.03, 0.03, 0.03]}, (0.6, 0.3, 0.75)),
            ]
        )

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps([t.to_dict() for t in self.templates], indent=2))

    @classmethod
    def from_json(cls, path) -> "ObjectCatalog":
        return cls([ObjectTemplate(**d) for d in json.loads(Path(path).read_text())])


# --------------------------------------------------------------------------
# rasterizer
# --------------------------------------------------------------------------


def shade_faces(mesh: TriMesh, color) -> np.ndarray:
    n = mesh.face_normals()
    lam = np.clip(n @ LIGHTS.T, 0.0, None) @ LIGHT_WEIGHTS
    return np.clip(np.asarray(color)[None, :] * (AMBIENT + (1 - AMBIENT) * lam[:, None]), 0.0, 1.0)


def rasterize(meshes, colors, K: CameraIntrinsics, background=(0.5, 0.5, 0.5)):
    """Z-buffered flat-shaded rasterization sampled at integer pixel centers.

    Returns ``(image HxWx3, depth HxW with inf for empty, ids HxW with -1 for
    empty)``; ``ids`` holds the index of the mesh in ``meshes``. Depth uses
    perspective-correct interpolation; ties go to the lower mesh/face index.
    """
    W, H = K.image_width, K.image_height
    image = np.empty((H, W, 3))
    image[:] = np.asarray(background, dtype=np.float64)
    depth = np.full((H, W), np.inf)
    ids = np.full((H, W), -1, dtype=np.int64)
    if not meshes:
        return image, depth, ids
    tris, face_col, face_mesh = [], [], []
    for i, (m, c) in enumerate(zip(meshes, colors)):
        if (m.vertices[:, 2] <= 0).any():
            raise NonPositiveDepth(f"mesh {i} has vertices with z <= 0")
        uv = project(K, m.vertices)
        tris.append(np.concatenate([uv, m.vertices[:, 2:3]], axis=1)[m.faces])
        face_col.append(shade_faces(m, c))
        face_mesh.append(np.full(len(m.faces), i))
    tri = np.concatenate(tris)
    face_col = np.concatenate(face_col)
    face_mesh = np.concatenate(face_mesh)

    face_idx, zbuf = _raster_kernel(np.ascontiguousarray(tri), W, H)
    hit = face_idx >= 0
    image[hit] = face_col[face_idx[hit]]
    depth[hit] = zbuf[hit]
    ids[hit] = face_mesh[face_idx[hit]]
    return image, depth, ids


@numba.njit(cache=True)
def _raster_kernel(tri, W, H):
    face_idx = np.full((H, W), -1, dtype=np.int64)
    zbuf = np.full((H, W), np.inf)
    for f in range(tri.shape[0]):
        u0, v0, z0 = tri[f, 0, 0], tri[f, 0, 1], tri[f, 0, 2]
        u1, v1, z1 = tri[f, 1, 0], tri[f, 1, 1], tri[f, 1, 2]
        u2, v2, z2 = tri[f, 2, 0], tri[f, 2, 1], tri[f, 2, 2]
        area2 = (u1 - u0) * (v2 - v0) - (u2 - u0) * (v1 - v0)
        if abs(area2) <= 1e-12:
            continue
        j0 = max(int(np.ceil(min(u0, u1, u2))), 0)
        j1 = min(int(np.floor(max(u0, u1, u2))), W - 1)
        i0 = max(int(np.ceil(min(v0, v1, v2))), 0)
        i1 = min(int(np.floor(max(v0, v1, v2))), H - 1)
        for i in range(i0, i1 + 1):
            pv = float(i)
            for j in range(j0, j1 + 1):
                pu = float(j)
                b0 = ((u2 - u1) * (pv - v1) - (v2 - v1) * (pu - u1)) / area2
                b1 = ((u0 - u2) * (pv - v2) - (v0 - v2) * (pu - u2)) / area2
                b2 = ((u1 - u0) * (pv - v0) - (v1 - v0) * (pu - u0)) / area2
                if b0 < 0.0 or b1 < 0.0 or b2 < 0.0:
                    continue
                pz = 1.0 / (b0 / z0 + b1 / z1 + b2 / z2)
                if pz < zbuf[i, j]:
                    zbuf[i, j] = pz
                    face_idx[i, j] = f
    return face_idx, zbuf


# --------------------------------------------------------------------------
# scenes
# --------------------------------------------------------------------------


@dataclass
class SceneConfig:
    image_size: int = 224
    focal: float | None = None
    depth_range: tuple[float, float] = (0.28, 0.36)
    jitter_px: float = 20.0  # at 224 px; scaled with image_size
    approach_spread: float = 0.7
    approach_min_cos: float = 0.2
    flexion_range: tuple[float, float] = (0.1, 1.1)
    abduction_range: tuple[float, float] = (-0.15, 0.15)
    twist_range: tuple[float, float] = (-0.1, 0.1)
    alpha_std: float = 0.5
    contact_gap: tuple[float, float] = (0.0, 0.01)
    hand_color: tuple[float, float, float] = (0.88, 0.68, 0.55)
    background: tuple[float, float, float] = (0.45, 0.47, 0.5)
    max_attempts: int = 200

    def __post_init__(self):
        for name in ("depth_range", "flexion_range", "abduction_range", "twist_range", "contact_gap"):
            lo, hi = getattr(self, name)
            if not lo <= hi:
                raise ConfigRange(f"{name}: empty range ({lo}, {hi})")
            setattr(self, name, (float(lo), float(hi)))
        if self.image_size <= 0 or self.jitter_px < 0 or self.alpha_std < 0:
            raise ConfigRange("image_size must be positive; jitter_px and alpha_std non-negative")
        if self.depth_range[0] <= 0:
            raise ConfigRange("depth_range must be in front of the camera")

    def camera(self) -> CameraIntrinsics:
        return CameraIntrinsics.default(self.image_size, self.focal)


@dataclass
class Scene:
    image: np.ndarray
    K: CameraIntrinsics
    theta: np.ndarray
    alpha: np.ndarray
    root_t: np.ndarray
    object_pose: RigidPose
    object_id: int
    hand_mesh: TriMesh
    object_mesh: TriMesh
    bbox: tuple[int, int, int, int]
    hand_joints_gt: np.ndarray

    def equals(self, other: "Scene") -> bool:
        arrays = [
            (self.image, other.image),
            (self.K.matrix(), other.K.matrix()),
            (self.theta, other.theta),
            (self.alpha, other.alpha),
            (self.root_t, other.root_t),
            (self.object_pose.r, other.object_pose.r),
            (self.object_pose.t, other.object_pose.t),
            (self.hand_mesh.vertices, other.hand_mesh.vertices),
            (self.hand_mesh.faces, other.hand_mesh.faces),
            (self.object_mesh.vertices, other.object_mesh.vertices),
            (self.object_mesh.faces, other.object_mesh.faces),
            (self.hand_joints_gt, other.hand_joints_gt),
        ]
        return (
            all(a.shape == b.shape and np.array_equal(a, b) for a, b in arrays)
            and self.K == other.K
            and self.object_id == other.object_id
            and tuple(self.bbox) == tuple(other.bbox)
        )


def _uniform(rng, rng_range, size=None):
    lo, hi = rng_range
    return rng.uniform(lo, hi, size)


def compute_bbox(K: CameraIntrinsics, vertices: np.ndarray) -> tuple[int, int, int, int]:
    uv = project(K, vertices)
    lo = np.floor(uv.min(0)).astype(int)
    hi = np.ceil(uv.max(0)).astype(int)
    return int(lo[0]), int(lo[1]), int(hi[0]), int(hi[1])


def render_scene(hand_mesh: TriMesh, object_mesh: TriMesh, object_color, K, config: SceneConfig):
    return rasterize([hand_mesh, object_mesh], [config.hand_color, object_color], K, config.background)


def quantize_image(img: np.ndarray) -> np.ndarray:
    return np.round(np.clip(img, 0.0, 1.0) * 255.0) / 255.0


def generate_scene(config: SceneConfig | None = None, seed: int = 0, catalog: ObjectCatalog | None = None) -> Scene:
    """Sample an object pose and a grasping hand, render, and return ground truth.

    The palm faces the object with its normal through the object center, and
    the approach direction leans toward the camera, so the hand usually sits
    between the camera and the object.
    """
    config = config or SceneConfig()
    catalog = catalog or ObjectCatalog.default()
    K = config.camera()
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x5CE7E]))
    scale = config.image_size / 224.0
    for _ in range(config.max_attempts):
        object_id = int(rng.integers(len(catalog)))
        tmpl = catalog[object_id]
        q = rng.normal(size=4)
        r_obj = matrix_to_axis_angle(Rotation.from_quat(q / np.linalg.norm(q)).as_matrix())
        depth = _uniform(rng, config.depth_range)
        jitter = rng.uniform(-config.jitter_px, config.jitter_px, 2) * scale
        center = backproject(K, np.array([K.cx, K.cy]) + jitter, depth)
        pose = RigidPose(r_obj, center)
        R_obj = pose.matrix()
        obj_verts = tmpl.mesh.vertices @ R_obj.T + pose.t

        to_cam = -center / np.linalg.norm(center)
        a = to_cam + config.approach_spread * rng.normal(size=3)
        a /= np.linalg.norm(a)
        if a @ to_cam < config.approach_min_cos:
            continue
        y = rng.normal(size=3)
        y -= (y @ a) * a
        y /= np.linalg.norm(y)
        z_axis = -a
        x_axis = np.cross(y, z_axis)
        R_hand = np.stack([x_axis, y, z_axis], axis=1)

        support = float(((obj_verts - pose.t) @ a).max())
        dist = support + PALM_RADIUS + _uniform(rng, config.contact_gap)
        palm = pose.t + a * dist
        root_t = palm - R_hand @ PALM_CENTER

        theta = np.zeros((16, 3))
        theta[0] = matrix_to_axis_angle(R_hand)
        theta[1:, 0] = _uniform(rng, config.flexion_range, 15)
        theta[1:, 1] = _uniform(rng, config.abduction_range, 15)
        theta[1:, 2] = _uniform(rng, config.twist_range, 15)
        theta = theta.reshape(-1)
        alpha = np.clip(rng.normal(0.0, config.alpha_std, 10), -2.0, 2.0)

        joints, hand_mesh = hand_forward(theta, alpha, root_t)
        if hand_mesh.vertices[:, 2].min() < 0.05:
            continue
        bbox = compute_bbox(K, obj_verts)
        if bbox[0] < 0 or bbox[1] < 0 or bbox[2] > K.image_width - 1 or bbox[3] > K.image_height - 1:
            continue
        object_mesh = TriMesh(obj_verts, tmpl.mesh.faces)
        image, _, _ = render_scene(hand_mesh, object_mesh, tmpl.color, K, config)
        return Scene(
            image=quantize_image(image),
            K=K,
            theta=theta,
            alpha=alpha,
            root_t=root_t,
            object_pose=pose,
            object_id=object_id,
            hand_mesh=hand_mesh,
            object_mesh=object_mesh,
            bbox=bbox,
            hand_joints_gt=joints,
        )
    raise ConfigRange(f"no valid scene after {config.max_attempts} attempts; ranges too restrictive")


def object_occlusion_fraction(scene: Scene, config: SceneConfig | None = None) -> float:
    """Fraction of the object's unoccluded silhouette covered by the hand."""
    config = config or SceneConfig()
    _, _, alone = rasterize([scene.object_mesh], [(1.0, 1.0, 1.0)], scene.K)
    _, _, both = rasterize([scene.hand_mesh, scene.object_mesh], [(1.0, 1.0, 1.0)] * 2, scene.K)
    silhouette = alone == 0
    if not silhouette.any():
        return 0.0
    return float((both[silhouette] == HAND_ID).mean())


# --------------------------------------------------------------------------
# dataset io
# --------------------------------------------------------------------------

SCENE_FILES = ("image.png", "meta.json", "hand_mesh.obj", "object_mesh.obj")


def write_scene(scene: Scene, directory) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.round(scene.image * 255.0).astype(np.uint8), mode="RGB").save(d / "image.png")
    meta = {
        "K": scene.K.matrix().reshape(-1).tolist(),
        "theta": scene.theta.tolist(),
        "alpha": scene.alpha.tolist(),
        "root_t": scene.root_t.tolist(),
        "object_id": int(scene.object_id),
        "object_r": scene.object_pose.r.tolist(),
        "object_t": scene.object_pose.t.tolist(),
        "bbox": [int(b) for b in scene.bbox],
        "joints_gt": scene.hand_joints_gt.tolist(),
    }
    (d / "meta.json").write_text(json.dumps(meta))
    scene.hand_mesh.to_obj(d / "hand_mesh.obj")
    scene.object_mesh.to_obj(d / "object_mesh.obj")


def load_scene(directory) -> Scene:
    d = Path(directory)
    meta = json.loads((d / "meta.json").read_text())
    img = np.asarray(Image.open(d / "image.png").convert("RGB"), dtype=np.float64) / 255.0
    H, W = img.shape[:2]
    return Scene(
        image=img,
        K=CameraIntrinsics.from_matrix(np.array(meta["K"]).reshape(3, 3), W, H),
        theta=np.array(meta["theta"], dtype=np.float64),
        alpha=np.array(meta["alpha"], dtype=np.float64),
        root_t=np.array(meta["root_t"], dtype=np.float64),
        object_pose=RigidPose(meta["object_r"], meta["object_t"]),
        object_id=int(meta["object_id"]),
        hand_mesh=TriMesh.from_obj(d / "hand_mesh.obj"),
        object_mesh=TriMesh.from_obj(d / "object_mesh.obj"),
        bbox=tuple(int(b) for b in meta["bbox"]),
        hand_joints_gt=np.array(meta["joints_gt"], dtype=np.float64).reshape(21, 3),
    )


class Dataset:
    """Lazy, indexable view over a dataset directory."""

    def __init__(self, root, scene_dirs: list[Path], catalog: ObjectCatalog | None):
        self.root = Path(root)
        self.scene_dirs = scene_dirs
        self.catalog = catalog
        self._cache: dict[int, Scene] = {}

    def __len__(self):
        return len(self.scene_dirs)

    def __getitem__(self, idx: int) -> Scene:
        if idx < 0:
            idx += len(self)
        if idx not in self._cache:
            self._cache[idx] = load_scene(self.scene_dirs[idx])
        return self._cache[idx]

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    def scene_id(self, idx: int) -> str:
        return self.scene_dirs[idx].name


def write_dataset(scenes, root, catalog: ObjectCatalog | None = None) -> Path:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    (catalog or ObjectCatalog.default()).to_json(root / "objects.json")
    for i, s in enumerate(scenes):
        write_scene(s, root / f"scene_{i:05d}")
    return root


def read_dataset(root) -> Dataset:
    root = Path(root)
    if not root.is_dir():
        raise LayoutError(f"{root}: not a directory")
    dirs = sorted(p for p in root.iterdir() if p.is_dir() and p.name.startswith("scene_"))
    for d in dirs:
        for name in SCENE_FILES:
            if not (d / name).is_file():
                raise LayoutError(f"{d.name}: missing {name}")
        try:
            meta = json.loads((d / "meta.json").read_text())
        except json.JSONDecodeError as exc:
            raise LayoutError(f"{d.name}: meta.json is not valid JSON ({exc})") from exc
        missing = {"K", "theta", "alpha", "root_t", "object_id", "object_r", "object_t", "bbox", "joints_gt"} - set(meta)
        if missing:
            raise LayoutError(f"{d.name}: meta.json lacks keys {sorted(missing)}")
    catalog = None
    if (root / "objects.json").is_file():
        catalog = ObjectCatalog.from_json(root / "objects.json")
    elif dirs:
        raise LayoutError(f"{root}: missing objects.json")
    return Dataset(root, dirs, catalog)


def generate_dataset(root, count: int, seed: int, config: SceneConfig | None = None) -> Dataset:
    catalog = ObjectCatalog.default()
    scenes = (generate_scene(config, seed=scene_seed(seed, i), catalog=catalog) for i in range(count))
    write_dataset(scenes, root, catalog)
    return read_dataset(root)


def scene_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([int(seed), int(index)]).generate_state(1)[0])


class SceneList:
    """In-memory stand-in for Dataset."""

    def __init__(self, scenes, scene_ids=None, catalog: ObjectCatalog | None = None):
        self.scenes = list(scenes)
        self.ids = list(scene_ids) if scene_ids is not None else [f"scene_{i:05d}" for i in range(len(self.scenes))]
        self.catalog = catalog or ObjectCatalog.default()

    def __len__(self):
        return len(self.scenes)

    def __getitem__(self, idx: int) -> Scene:
        return self.scenes[idx]

    def __iter__(self):
        return iter(self.scenes)

    def scene_id(self, idx: int) -> str:
        return self.ids[idx]
