"""Procedural capsule hand with MANO-sized parameters.

16 rotating joints (wrist + 3 per finger), 21 reported joints (the 16 plus
five fingertips). ``theta`` holds 16 axis-angle rotations, ``alpha`` 10 shape
coefficients: the first five scale each finger's bone lengths, the last five
its capsule radii, by ``1 + 0.1 * alpha``.

Hand-local frame: wrist at the origin, fingers along +y, thumb toward +x,
palm facing +z. Positive rotation about x flexes a finger toward the palm.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .geometry import TriMesh, capsule_mesh, rodrigues

FINGERS = ("thumb", "index", "middle", "ring", "pinky")
NUM_JOINTS = 21
NUM_ROT = 16

_BASES = np.array(
    [
        [0.030, 0.030, 0.008],
        [0.028, 0.088, 0.0],
        [0.008, 0.092, 0.0],
        [-0.012, 0.088, 0.0],
        [-0.030, 0.078, 0.0],
    ]
)
_DIRS = np.array([[0.75, 0.66, 0.0], [0.08, 1.0, 0.0], [0.0, 1.0, 0.0], [-0.05, 1.0, 0.0], [-0.12, 1.0, 0.0]])
_DIRS /= np.linalg.norm(_DIRS, axis=1, keepdims=True)
_BONE_LENGTHS = np.array(
    [
        [0.040, 0.032, 0.028],
        [0.040, 0.024, 0.022],
        [0.045, 0.027, 0.024],
        [0.042, 0.026, 0.023],
        [0.033, 0.020, 0.020],
    ]
)
FINGER_RADII = np.array([0.0095, 0.0085, 0.0085, 0.0080, 0.0070])
PALM_RADIUS = 0.011
PALM_CENTER = np.array([0.005, 0.055, 0.0])

# per-axis limits (x: flexion, y: abduction, z: twist) for finger joints 1..15
JOINT_LIMITS = np.tile(np.array([[-0.2, 1.8], [-0.6, 0.6], [-0.6, 0.6]]), (15, 1, 1))


def _build_template() -> np.ndarray:
    joints = np.zeros((NUM_JOINTS, 3))
    for f in range(5):
        p = _BASES[f].copy()
        joints[1 + 3 * f] = p
        for k in range(3):
            p = p + _DIRS[f] * _BONE_LENGTHS[f, k]
            if k < 2:
                joints[2 + 3 * f + k] = p
            else:
                joints[16 + f] = p
    return joints


TEMPLATE_JOINTS = _build_template()
PARENTS = np.array([-1] + [0 if k == 0 else 1 + 3 * f + k - 1 for f in range(5) for k in range(3)] + [3 + 3 * f for f in range(5)])


def _align_z_to(d: np.ndarray) -> np.ndarray:
    """Rotation taking +z onto unit vector d."""
    z = np.array([0.0, 0.0, 1.0])
    v = np.cross(z, d)
    c = float(z @ d)
    if np.linalg.norm(v) < 1e-12:
        return np.eye(3) if c > 0 else np.diag([1.0, -1.0, -1.0])
    k = np.array([[0, -v[2], v[1]], [v[2], 0, -v[0]], [-v[1], v[0], 0]])
    return np.eye(3) + k + k @ k / (1 + c)


@dataclass(frozen=True)
class _CapsuleTemplate:
    unit: np.ndarray  # radius-1 vertices
    top: np.ndarray  # 1 where the vertex sits on the far cap
    faces: np.ndarray


def _capsule_template() -> _CapsuleTemplate:
    m1, m2 = capsule_mesh(1.0, 1.0), capsule_mesh(1.0, 2.0)
    top = (m2.vertices - m1.vertices)[:, 2]
    unit = m1.vertices - top[:, None] * np.array([0.0, 0.0, 1.0])
    return _CapsuleTemplate(unit, top, m1.faces)


_CAPSULE = _capsule_template()

# bones: (joint whose frame carries the bone, child joint, finger or -1 for palm)
BONES = [(0, 1 + 3 * f, -1) for f in range(5)] + [
    (1 + 3 * f + k, (2 + 3 * f + k) if k < 2 else 16 + f, f) for f in range(5) for k in range(3)
]
_BONE_ROT = np.stack([_align_z_to((TEMPLATE_JOINTS[c] - TEMPLATE_JOINTS[j]) / np.linalg.norm(TEMPLATE_JOINTS[c] - TEMPLATE_JOINTS[j])) for j, c, _ in BONES])
HAND_FACES = np.concatenate([_CAPSULE.faces + i * len(_CAPSULE.unit) for i in range(len(BONES))])
NUM_VERTS = len(BONES) * len(_CAPSULE.unit)


def clamp_theta(theta: torch.Tensor) -> tuple[torch.Tensor, bool]:
    t = theta.reshape(*theta.shape[:-1], NUM_ROT, 3)
    lim = torch.as_tensor(JOINT_LIMITS, dtype=theta.dtype)
    lo, hi = lim[..., 0], lim[..., 1]
    fingers = t[..., 1:, :]
    clamped = torch.maximum(torch.minimum(fingers, hi), lo)
    flag = bool((clamped != fingers).any())
    out = torch.cat([t[..., :1, :], clamped], dim=-2)
    return out.reshape(theta.shape), flag


def hand_forward_torch(theta, alpha, root_t, *, clamp: bool = True):
    """Differentiable forward model.

    Shapes: theta (..., 48), alpha (..., 10), root_t (..., 3). Returns joints
    (..., 21, 3), mesh vertices (..., V, 3) and a flag set when any finger
    joint was clamped into its anatomical range.
    """
    theta = torch.as_tensor(theta)
    dtype = theta.dtype if theta.is_floating_point() else torch.float64
    theta = theta.to(dtype)
    alpha = torch.as_tensor(alpha, dtype=dtype)
    root_t = torch.as_tensor(root_t, dtype=dtype)
    flag = False
    if clamp:
        theta, flag = clamp_theta(theta)
    batch = theta.shape[:-1]
    rots = rodrigues(theta.reshape(*batch, NUM_ROT, 3))
    bone_scale = 1.0 + 0.1 * alpha[..., :5]
    radius_scale = 1.0 + 0.1 * alpha[..., 5:]
    tmpl = torch.as_tensor(TEMPLATE_JOINTS, dtype=dtype)

    world_rot = [None] * NUM_ROT
    joints = [None] * NUM_JOINTS
    world_rot[0] = rots[..., 0, :, :]
    joints[0] = root_t
    for j in range(1, NUM_JOINTS):
        p = int(PARENTS[j])
        offset = tmpl[j] - tmpl[p]
        if p != 0:
            f = (j - 16) if j >= 16 else (j - 1) // 3
            offset = offset * bone_scale[..., f : f + 1]
        else:
            offset = offset.expand(*batch, 3)
        joints[j] = joints[p] + (world_rot[p] @ offset[..., None])[..., 0]
        if j < NUM_ROT:
            world_rot[j] = world_rot[p] @ rots[..., j, :, :]
    joints_t = torch.stack(joints, dim=-2)

    unit = torch.as_tensor(_CAPSULE.unit, dtype=dtype)
    top = torch.as_tensor(_CAPSULE.top, dtype=dtype)
    ez = torch.tensor([0.0, 0.0, 1.0], dtype=dtype)
    verts = []
    for b, (j, c, f) in enumerate(BONES):
        length = torch.linalg.norm(tmpl[c] - tmpl[j])
        if f < 0:
            radius = torch.full((*batch, 1), PALM_RADIUS, dtype=dtype)
            length = length.expand(*batch, 1)
        else:
            radius = FINGER_RADII[f] * radius_scale[..., f : f + 1]
            length = length * bone_scale[..., f : f + 1]
        local = radius[..., None, :] * unit + (length[..., None, :] * top[:, None]) * ez
        local = local @ torch.as_tensor(_BONE_ROT[b], dtype=dtype).T
        verts.append(joints_t[..., j : j + 1, :] + local @ world_rot[j].transpose(-1, -2))
    return joints_t, torch.cat(verts, dim=-2), flag


def hand_forward(theta, alpha, root_t, *, clamp: bool = True):
    """Numpy convenience wrapper: returns (joints 21x3, TriMesh)."""
    with torch.no_grad():
        j, v, _ = hand_forward_torch(
            torch.as_tensor(np.asarray(theta, dtype=np.float64)),
            torch.as_tensor(np.asarray(alpha, dtype=np.float64)),
            torch.as_tensor(np.asarray(root_t, dtype=np.float64)),
            clamp=clamp,
        )
    return j.numpy(), TriMesh(v.numpy(), HAND_FACES)


def finger_of_joint(j: int) -> int:
    if j == 0:
        return -1
    return (j - 16) if j >= 16 else (j - 1) // 3
