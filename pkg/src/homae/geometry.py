"""Rotations, pinhole projection, triangle meshes, surface sampling, brute-force
mesh SDF and similarity alignment.

Scene units are meters. Pixel coordinates are continuous with pixel ``(row i,
col j)`` centered at ``(u, v) = (j, i)``.
"""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numba
import numpy as np
import torch
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial.transform import Rotation

from .errors import (
    DegenerateConfiguration,
    EmptyMesh,
    NonPositiveDepth,
    NonWatertightWarning,
    ShapeMismatch,
)

# fixed, non-axis-aligned ray directions for the parity vote
_RAY_DIRECTIONS = np.array(
    [
        [0.5377, 0.8396, 0.0781],
        [-0.6601, 0.2312, 0.7147],
        [0.1249, -0.5933, -0.7952],
    ]
)
_RAY_DIRECTIONS /= np.linalg.norm(_RAY_DIRECTIONS, axis=1, keepdims=True)


# --------------------------------------------------------------------------
# cameras and poses
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    image_width: int
    image_height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got {self.fx}, {self.fy}")
        if not (0 <= self.cx < self.image_width and 0 <= self.cy < self.image_height):
            raise ValueError("principal point outside the image")

    @classmethod
    def default(cls, size: int = 224, focal: float | None = None) -> "CameraIntrinsics":
        f = 200.0 * size / 224.0 if focal is None else focal
        return cls(f, f, size / 2.0, size / 2.0, size, size)

    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @classmethod
    def from_matrix(cls, K, image_width: int, image_height: int) -> "CameraIntrinsics":
        K = np.asarray(K, dtype=np.float64)
        return cls(float(K[0, 0]), float(K[1, 1]), float(K[0, 2]), float(K[1, 2]), image_width, image_height)


@dataclass
class RigidPose:
    r: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        self.r = canonicalize_axis_angle(np.asarray(self.r, dtype=np.float64).reshape(3))
        self.t = np.asarray(self.t, dtype=np.float64).reshape(3)

    def matrix(self) -> np.ndarray:
        return axis_angle_to_matrix(self.r)

    def apply(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points) @ self.matrix().T + self.t


# --------------------------------------------------------------------------
# rotations
# --------------------------------------------------------------------------


def rodrigues(r: torch.Tensor) -> torch.Tensor:
    """Batched axis-angle to rotation matrix, ``(..., 3) -> (..., 3, 3)``.

    Uses series expansions near zero so gradients stay finite at r = 0.
    """
    theta2 = (r * r).sum(-1, keepdim=True)
    small = theta2 < 1e-8
    safe2 = torch.where(small, torch.ones_like(theta2), theta2)
    theta = safe2.sqrt()
    a = torch.where(small, 1.0 - theta2 / 6.0, torch.sin(theta) / theta)
    b = torch.where(small, 0.5 - theta2 / 24.0, (1.0 - torch.cos(theta)) / safe2)
    x, y, z = r.unbind(-1)
    zero = torch.zeros_like(x)
    k = torch.stack([zero, -z, y, z, zero, -x, -y, x, zero], dim=-1).reshape(*r.shape[:-1], 3, 3)
    eye = torch.eye(3, dtype=r.dtype, device=r.device).expand_as(k)
    return eye + a[..., None] * k + b[..., None] * (k @ k)


def axis_angle_to_matrix(r) -> np.ndarray:
    r = np.asarray(r, dtype=np.float64)
    return rodrigues(torch.from_numpy(r.copy())).numpy()


def matrix_to_axis_angle(R) -> np.ndarray:
    return Rotation.from_matrix(np.asarray(R, dtype=np.float64)).as_rotvec()


def canonicalize_axis_angle(r: np.ndarray) -> np.ndarray:
    """Map an axis-angle vector to the equivalent one with norm in [0, pi]."""
    r = np.asarray(r, dtype=np.float64)
    theta = np.linalg.norm(r)
    if theta <= np.pi:
        return r.copy()
    wrapped = np.mod(theta, 2 * np.pi)
    if wrapped > np.pi:
        wrapped -= 2 * np.pi
    return r * (wrapped / theta)


# --------------------------------------------------------------------------
# projection
# --------------------------------------------------------------------------


def _intrinsics_tuple(K):
    if isinstance(K, CameraIntrinsics):
        return K.fx, K.fy, K.cx, K.cy
    if isinstance(K, torch.Tensor):
        return K[..., 0, 0, None], K[..., 1, 1, None], K[..., 0, 2, None], K[..., 1, 2, None]
    K = np.asarray(K, dtype=np.float64)
    return K[..., 0, 0, None], K[..., 1, 1, None], K[..., 0, 2, None], K[..., 1, 2, None]


def project(K, p):
    """Pinhole projection of ``(..., N, 3)`` points to ``(..., N, 2)`` pixels.

    Accepts numpy arrays or torch tensors; ``K`` is a CameraIntrinsics or a
    (batched) 3x3 matrix.
    """
    z = p[..., 2]
    if bool((z <= 0).any()):
        raise NonPositiveDepth("cannot project points with z <= 0")
    fx, fy, cx, cy = _intrinsics_tuple(K)
    u = fx * p[..., 0] / z + cx
    v = fy * p[..., 1] / z + cy
    if isinstance(p, torch.Tensor):
        return torch.stack([u, v], dim=-1)
    return np.stack([u, v], axis=-1)


def backproject(K: CameraIntrinsics, uv, z) -> np.ndarray:
    uv = np.asarray(uv, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    x = (uv[..., 0] - K.cx) * z / K.fx
    y = (uv[..., 1] - K.cy) * z / K.fy
    return np.stack([x, y, z], axis=-1)


# --------------------------------------------------------------------------
# meshes and point sets
# --------------------------------------------------------------------------


@dataclass
class TriMesh:
    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if len(self.faces) and (self.faces.min() < 0 or self.faces.max() >= len(self.vertices)):
            raise ValueError("face index out of range")
        if len(self.faces) and self.face_areas().min() <= 1e-12:
            raise ValueError("mesh contains a degenerate face")

    def triangles(self) -> np.ndarray:
        return self.vertices[self.faces]

    def face_areas(self) -> np.ndarray:
        tri = self.triangles()
        return 0.5 * np.linalg.norm(np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]), axis=1)

    def face_normals(self) -> np.ndarray:
        tri = self.triangles()
        n = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
        return n / np.linalg.norm(n, axis=1, keepdims=True)

    def transformed(self, R: np.ndarray, t: np.ndarray) -> "TriMesh":
        return TriMesh(self.vertices @ np.asarray(R).T + np.asarray(t), self.faces.copy())

    def aabb_corners(self) -> np.ndarray:
        lo, hi = self.vertices.min(0), self.vertices.max(0)
        return np.array([[x, y, z] for x in (lo[0], hi[0]) for y in (lo[1], hi[1]) for z in (lo[2], hi[2])])

    def to_obj(self, path) -> None:
        lines = [f"v {x!r} {y!r} {z!r}" for x, y, z in self.vertices.tolist()]
        lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in self.faces.tolist()]
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def from_obj(cls, path) -> "TriMesh":
        verts, faces = [], []
        for line in Path(path).read_text().splitlines():
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                verts.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                faces.append([int(x.split("/")[0]) - 1 for x in parts[1:4]])
        return cls(np.array(verts, dtype=np.float64), np.array(faces, dtype=np.int64))

    @staticmethod
    def concatenate(meshes) -> "TriMesh":
        verts, faces, offset = [], [], 0
        for m in meshes:
            verts.append(m.vertices)
            faces.append(m.faces + offset)
            offset += len(m.vertices)
        return TriMesh(np.concatenate(verts), np.concatenate(faces))


@dataclass
class PointSet:
    points: np.ndarray
    features: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if not np.isfinite(self.points).all():
            raise ValueError("point coordinates must be finite")
        if self.features is not None and len(self.features) != len(self.points):
            raise ShapeMismatch("features and points disagree in length")

    def __len__(self):
        return len(self.points)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "y", "z"])
            w.writerows([[repr(c) for c in row] for row in self.points.tolist()])

    @classmethod
    def from_csv(cls, path) -> "PointSet":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if rows[0] != ["x", "y", "z"]:
            raise ValueError(f"{path}: expected header x,y,z")
        return cls(np.array([[float(c) for c in r] for r in rows[1:]]).reshape(-1, 3))


# --------------------------------------------------------------------------
# primitive tessellations
# --------------------------------------------------------------------------


def icosphere(radius: float = 1.0, subdivisions: int = 3) -> TriMesh:
    t = (1.0 + 5**0.5) / 2.0
    verts = [
        (-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0),
        (0, -1, t), (0, 1, t), (0, -1, -t), (0, 1, -t),
        (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1),
    ]
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    verts = [np.array(v, dtype=np.float64) / np.linalg.norm(v) for v in verts]
    for _ in range(subdivisions):
        cache: dict[tuple[int, int], int] = {}

        def midpoint(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = verts[i] + verts[j]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new
    return TriMesh(np.array(verts) * radius, np.array(faces))


def box_mesh(half_extents, divisions: int = 11) -> TriMesh:
    """Axis-aligned box centered at the origin with each face split into a grid."""
    hx = np.asarray(half_extents, dtype=np.float64)
    n = divisions
    g = np.linspace(-1.0, 1.0, n + 1)
    verts, faces = [], []
    for axis in range(3):
        for sign in (-1.0, 1.0):
            a1, a2 = [a for a in range(3) if a != axis]
            base = len(verts)
            for i in range(n + 1):
                for j in range(n + 1):
                    p = np.zeros(3)
                    p[axis] = sign
                    p[a1], p[a2] = g[i], g[j]
                    verts.append(p * hx)
            for i in range(n):
                for j in range(n):
                    v00 = base + i * (n + 1) + j
                    v01, v10, v11 = v00 + 1, v00 + n + 1, v00 + n + 2
                    quad = [(v00, v10, v11), (v00, v11, v01)]
                    # outward winding: (a1, a2, axis) must be right-handed times sign
                    right_handed = (a1, a2, axis) in ((0, 1, 2), (1, 2, 0), (2, 0, 1))
                    if right_handed != (sign > 0):
                        quad = [(a, c, b) for a, b, c in quad]
                    faces += quad
    # merge duplicate vertices along the box edges
    verts = np.array(verts)
    uniq, inverse = np.unique(np.round(verts, 12), axis=0, return_inverse=True)
    return TriMesh(uniq, inverse.reshape(-1)[np.array(faces)])


def _revolve(profile_r: np.ndarray, profile_z: np.ndarray, segments: int, south: float, north: float) -> TriMesh:
    """Closed surface of revolution about z from rings (r_k, z_k) plus two poles."""
    ang = 2 * np.pi * np.arange(segments) / segments
    rings = [np.stack([r * np.cos(ang), r * np.sin(ang), np.full(segments, z)], 1) for r, z in zip(profile_r, profile_z)]
    verts = np.concatenate([[[0.0, 0.0, south]], *rings, [[0.0, 0.0, north]]])
    nr = len(rings)
    faces = []
    for s in range(segments):
        s1 = (s + 1) % segments
        faces.append((0, 1 + s1, 1 + s))
        for k in range(nr - 1):
            a, b = 1 + k * segments + s, 1 + k * segments + s1
            c, d = a + segments, b + segments
            faces += [(a, b, d), (a, d, c)]
        top = len(verts) - 1
        last = 1 + (nr - 1) * segments
        faces.append((last + s, last + s1, top))
    return TriMesh(verts, np.array(faces))


def capsule_mesh(radius: float, length: float, segments: int = 12, cap_rings: int = 3) -> TriMesh:
    """Capsule along +z from z=0 to z=length with hemispherical caps."""
    phis = np.linspace(-np.pi / 2, 0.0, cap_rings + 1)[1:]
    r_lo, z_lo = radius * np.cos(phis), radius * np.sin(phis)
    r_hi, z_hi = r_lo[::-1], -z_lo[::-1] + length
    return _revolve(np.concatenate([r_lo, r_hi]), np.concatenate([z_lo, z_hi]), segments, -radius, length + radius)


def cylinder_mesh(radius: float, half_height: float, segments: int = 32, rings: int = 8) -> TriMesh:
    """Closed cylinder about z centered at the origin; caps are fanned discs."""
    cap_r = radius * np.arange(1, rings + 1) / rings
    side_z = np.linspace(-half_height, half_height, rings + 1)[1:-1]
    prof_r = np.concatenate([cap_r, np.full(len(side_z), radius), cap_r[::-1]])
    prof_z = np.concatenate([np.full(rings, -half_height), side_z, np.full(rings, half_height)])
    return _revolve(prof_r, prof_z, segments, -half_height, half_height)


# --------------------------------------------------------------------------
# brute-force SDF
# --------------------------------------------------------------------------


def _dot(a, b):
    return np.einsum("...k,...k->...", a, b)


def _closest_points_on_triangles(p, a, b, c):
    """Region-classification closest point; ``p`` is (n,1,3), triangles (1,F,3)."""
    ab, ac = b - a, c - a
    ap = p - a
    d1, d2 = _dot(ab, ap), _dot(ac, ap)
    bp = p - b
    d3, d4 = _dot(ab, bp), _dot(ac, bp)
    cp = p - c
    d5, d6 = _dot(ab, cp), _dot(ac, cp)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2

    with np.errstate(divide="ignore", invalid="ignore"):
        denom = va + vb + vc
        v = vb / denom
        w = vc / denom
        out = a + ab * v[..., None] + ac * w[..., None]

        e = d4 - d3
        f = d5 - d6
        cond = (va <= 0) & (e >= 0) & (f >= 0)
        wbc = e / (e + f)
        out = np.where(cond[..., None], b + (c - b) * wbc[..., None], out)

        cond = (vb <= 0) & (d2 >= 0) & (d6 <= 0)
        wac = d2 / (d2 - d6)
        out = np.where(cond[..., None], a + ac * wac[..., None], out)

        cond = (d6 >= 0) & (d5 <= d6)
        out = np.where(cond[..., None], np.broadcast_to(c, out.shape), out)

        cond = (vc <= 0) & (d1 >= 0) & (d3 <= 0)
        vab = d1 / (d1 - d3)
        out = np.where(cond[..., None], a + ab * vab[..., None], out)

        cond = (d3 >= 0) & (d4 <= d3)
        out = np.where(cond[..., None], np.broadcast_to(b, out.shape), out)

        cond = (d1 <= 0) & (d2 <= 0)
        out = np.where(cond[..., None], np.broadcast_to(a, out.shape), out)
    return out


def point_triangle_distances(q: np.ndarray, tri: np.ndarray) -> np.ndarray:
    """Exact distances from each query to each triangle, shape (n, F)."""
    p = q[:, None, :]
    a, b, c = tri[None, :, 0], tri[None, :, 1], tri[None, :, 2]
    cp = _closest_points_on_triangles(p, a, b, c)
    return np.linalg.norm(cp - p, axis=-1)


def face_components(mesh: TriMesh) -> np.ndarray:
    """Connected-component label per face (faces sharing a vertex are connected)."""
    nf, nv = len(mesh.faces), len(mesh.vertices)
    rows = np.repeat(np.arange(nf), 3)
    g = coo_matrix((np.ones(3 * nf), (rows, nf + mesh.faces.reshape(-1))), shape=(nf + nv, nf + nv))
    _, labels = connected_components(g, directed=False)
    face_lab = labels[:nf]
    _, compact = np.unique(face_lab, return_inverse=True)
    return compact.reshape(-1)


@numba.njit(cache=True)
def _closest_sqdist(px, py, pz, ax, ay, az, bx, by, bz, cx, cy, cz):
    abx, aby, abz = bx - ax, by - ay, bz - az
    acx, acy, acz = cx - ax, cy - ay, cz - az
    apx, apy, apz = px - ax, py - ay, pz - az
    d1 = abx * apx + aby * apy + abz * apz
    d2 = acx * apx + acy * apy + acz * apz
    if d1 <= 0.0 and d2 <= 0.0:
        qx, qy, qz = ax, ay, az
    else:
        bpx, bpy, bpz = px - bx, py - by, pz - bz
        d3 = abx * bpx + aby * bpy + abz * bpz
        d4 = acx * bpx + acy * bpy + acz * bpz
        vc = d1 * d4 - d3 * d2
        if d3 >= 0.0 and d4 <= d3:
            qx, qy, qz = bx, by, bz
        elif vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0:
            v = d1 / (d1 - d3)
            qx, qy, qz = ax + v * abx, ay + v * aby, az + v * abz
        else:
            cpx, cpy, cpz = px - cx, py - cy, pz - cz
            d5 = abx * cpx + aby * cpy + abz * cpz
            d6 = acx * cpx + acy * cpy + acz * cpz
            vb = d5 * d2 - d1 * d6
            va = d3 * d6 - d5 * d4
            if d6 >= 0.0 and d5 <= d6:
                qx, qy, qz = cx, cy, cz
            elif vb <= 0.0 and d2 >= 0.0 and d6 <= 0.0:
                w = d2 / (d2 - d6)
                qx, qy, qz = ax + w * acx, ay + w * acy, az + w * acz
            elif va <= 0.0 and (d4 - d3) >= 0.0 and (d5 - d6) >= 0.0:
                w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
                qx, qy, qz = bx + w * (cx - bx), by + w * (cy - by), bz + w * (cz - bz)
            else:
                denom = 1.0 / (va + vb + vc)
                v = vb * denom
                w = vc * denom
                qx = ax + abx * v + acx * w
                qy = ay + aby * v + acy * w
                qz = az + abz * v + acz * w
    dx, dy, dz = px - qx, py - qy, pz - qz
    return dx * dx + dy * dy + dz * dz


@numba.njit(cache=True)
def _sdf_kernel(q, tri, comp, ncomp, dirs):
    n, nf = q.shape[0], tri.shape[0]
    dist = np.empty(n)
    votes = np.zeros((n, 3, ncomp), dtype=np.int64)
    for i in range(n):
        px, py, pz = q[i, 0], q[i, 1], q[i, 2]
        best = np.inf
        for f in range(nf):
            d = _closest_sqdist(
                px, py, pz,
                tri[f, 0, 0], tri[f, 0, 1], tri[f, 0, 2],
                tri[f, 1, 0], tri[f, 1, 1], tri[f, 1, 2],
                tri[f, 2, 0], tri[f, 2, 1], tri[f, 2, 2],
            )
            if d < best:
                best = d
            e1x, e1y, e1z = tri[f, 1, 0] - tri[f, 0, 0], tri[f, 1, 1] - tri[f, 0, 1], tri[f, 1, 2] - tri[f, 0, 2]
            e2x, e2y, e2z = tri[f, 2, 0] - tri[f, 0, 0], tri[f, 2, 1] - tri[f, 0, 1], tri[f, 2, 2] - tri[f, 0, 2]
            tx, ty, tz = px - tri[f, 0, 0], py - tri[f, 0, 1], pz - tri[f, 0, 2]
            qx, qy, qz = ty * e1z - tz * e1y, tz * e1x - tx * e1z, tx * e1y - ty * e1x
            for k in range(3):
                dx, dy, dz = dirs[k, 0], dirs[k, 1], dirs[k, 2]
                pvx, pvy, pvz = dy * e2z - dz * e2y, dz * e2x - dx * e2z, dx * e2y - dy * e2x
                det = e1x * pvx + e1y * pvy + e1z * pvz
                if abs(det) <= 1e-18:
                    continue
                inv = 1.0 / det
                u = (tx * pvx + ty * pvy + tz * pvz) * inv
                if u < 0.0 or u > 1.0:
                    continue
                v = (dx * qx + dy * qy + dz * qz) * inv
                if v < 0.0 or u + v > 1.0:
                    continue
                t = (e2x * qx + e2y * qy + e2z * qz) * inv
                if t > 0.0:
                    votes[i, k, comp[f]] += 1
        dist[i] = np.sqrt(best)
    return dist, votes


def mesh_sdf_bruteforce(mesh: TriMesh, q, *, return_flags: bool = False):
    """Signed distance from query points to a closed triangle mesh.

    The magnitude is the exact minimum point-to-triangle distance over all
    faces. A point is inside if a majority of three fixed rays cross some
    connected component an odd number of times; for a mesh made of several
    overlapping closed parts this gives the sign of their union. Emits
    :class:`NonWatertightWarning` when the three votes disagree for any
    off-surface point.
    """
    q = np.ascontiguousarray(np.atleast_2d(np.asarray(q, dtype=np.float64)))
    if len(mesh.faces) == 0:
        raise EmptyMesh("mesh has no faces")
    tri = np.ascontiguousarray(mesh.triangles())
    comp = face_components(mesh)
    ncomp = int(comp.max()) + 1
    dist, votes = _sdf_kernel(q, tri, comp, ncomp, _RAY_DIRECTIONS)
    odd = votes % 2 == 1
    nvotes = odd.sum(axis=1)
    inside = (nvotes >= 2).any(axis=1)
    disagree = ((nvotes > 0) & (nvotes < 3)).any(axis=1)
    scale = float(np.ptp(mesh.vertices, axis=0).max())
    disagree &= dist > 1e-12 * max(scale, 1e-12)
    if disagree.any():
        warnings.warn(
            f"ray-parity votes disagree for {int(disagree.sum())} of {len(q)} points",
            NonWatertightWarning,
            stacklevel=2,
        )
    sdf = np.where(inside, -dist, dist)
    if return_flags:
        return sdf, disagree
    return sdf


def sample_surface_points(mesh: TriMesh, n: int, seed: int) -> PointSet:
    """Area-weighted uniform surface samples; ``meta['face_index']`` records the source face."""
    if len(mesh.faces) == 0:
        raise EmptyMesh("cannot sample an empty mesh")
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = np.random.default_rng(seed)
    areas = mesh.face_areas()
    idx = rng.choice(len(areas), size=n, p=areas / areas.sum())
    r1, r2 = rng.random(n), rng.random(n)
    s = np.sqrt(r1)
    bary = np.stack([1.0 - s, s * (1.0 - r2), s * r2], axis=1)
    tri = mesh.triangles()[idx]
    pts = np.einsum("nk,nkd->nd", bary, tri)
    return PointSet(pts, meta={"face_index": idx})


# --------------------------------------------------------------------------
# similarity alignment
# --------------------------------------------------------------------------


def umeyama_align(X, Y):
    """Least-squares similarity ``(s, R, t)`` with det(R) = +1 mapping X onto Y."""
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if X.shape != Y.shape or X.ndim != 2 or X.shape[1] != 3:
        raise ShapeMismatch(f"expected matching (N, 3) arrays, got {X.shape} and {Y.shape}")
    if len(X) < 3:
        raise DegenerateConfiguration("need at least 3 correspondences")
    mx, my = X.mean(0), Y.mean(0)
    xc, yc = X - mx, Y - my
    sv = np.linalg.svd(xc, compute_uv=False)
    if sv[0] == 0 or (sv > 1e-12 * sv[0]).sum() < 2:
        raise DegenerateConfiguration("centered source points have rank < 2")
    cov = yc.T @ xc / len(X)
    U, D, Vt = np.linalg.svd(cov)
    S = np.ones(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        S[2] = -1.0
    R = U @ np.diag(S) @ Vt
    var_x = (xc**2).sum() / len(X)
    s = float((D * S).sum() / var_x)
    t = my - s * R @ mx
    return s, R, t


def apply_similarity(s: float, R: np.ndarray, t: np.ndarray, X) -> np.ndarray:
    return s * np.asarray(X) @ R.T + t
