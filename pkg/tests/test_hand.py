import numpy as np
import pytest
import torch

from homae.geometry import mesh_sdf_bruteforce, sample_surface_points
from homae.hand import HAND_FACES, NUM_VERTS, TEMPLATE_JOINTS, clamp_theta, hand_forward, hand_forward_torch

FINGER_MCP = [1, 4, 7, 10, 13]
FINGER_TIP = [16, 17, 18, 19, 20]


def test_rest_pose_equals_template():
    root = np.array([0.01, -0.02, 0.3])
    joints, mesh = hand_forward(np.zeros(48), np.zeros(10), root)
    np.testing.assert_allclose(joints, TEMPLATE_JOINTS + root, atol=1e-15)
    assert mesh.vertices.shape == (NUM_VERTS, 3)
    assert np.array_equal(mesh.faces, HAND_FACES)


def test_translation_equivariance(rng):
    theta = rng.uniform(-0.3, 0.3, 48)
    alpha = rng.normal(size=10)
    d = np.array([0.05, -0.01, 0.2])
    j0, m0 = hand_forward(theta, alpha, np.zeros(3))
    j1, m1 = hand_forward(theta, alpha, d)
    np.testing.assert_allclose(j1 - j0, np.broadcast_to(d, j0.shape), atol=1e-14)
    np.testing.assert_allclose(m1.vertices - m0.vertices, np.broadcast_to(d, m0.vertices.shape), atol=1e-14)


@pytest.mark.parametrize("finger", range(5))
def test_length_coefficient_scales_finger(finger):
    alpha = np.zeros(10)
    alpha[finger] = 1.0
    rest, _ = hand_forward(np.zeros(48), np.zeros(10), np.zeros(3))
    scaled, _ = hand_forward(np.zeros(48), alpha, np.zeros(3))
    d0 = np.linalg.norm(rest[FINGER_TIP[finger]] - rest[FINGER_MCP[finger]])
    d1 = np.linalg.norm(scaled[FINGER_TIP[finger]] - scaled[FINGER_MCP[finger]])
    assert d1 / d0 == pytest.approx(1.1, abs=1e-12)


def test_clamping_flags_out_of_range_joints():
    theta = torch.zeros(48, dtype=torch.float64)
    theta[3] = 5.0  # flexion of the first finger joint
    clamped, flag = clamp_theta(theta)
    assert flag and clamped[3] == pytest.approx(1.8)
    _, ok = clamp_theta(torch.zeros(48, dtype=torch.float64))
    assert not ok
    # the wrist is a global rotation and is never clamped
    theta = torch.zeros(48, dtype=torch.float64)
    theta[0] = 3.0
    assert not clamp_theta(theta)[1]


def test_surface_samples_on_hand_surface(rng):
    _, mesh = hand_forward(rng.uniform(0, 0.8, 48), rng.normal(size=10) * 0.5, np.array([0, 0, 0.3]))
    pts = sample_surface_points(mesh, 100, seed=1).points
    assert np.abs(mesh_sdf_bruteforce(mesh, pts)).max() < 1e-9


def test_joint_jacobian_matches_finite_differences(rng):
    theta = torch.tensor(rng.uniform(0.1, 0.9, 48))
    alpha = torch.tensor(rng.normal(size=10) * 0.3)
    root = torch.tensor([0.0, 0.0, 0.3], dtype=torch.float64)

    def f(x):
        return hand_forward_torch(x, alpha, root, clamp=False)[0].reshape(-1)

    J = torch.autograd.functional.jacobian(f, theta)
    eps = 1e-6
    for k in rng.choice(48, 12, replace=False):
        e = torch.zeros(48, dtype=torch.float64)
        e[k] = eps
        fd = (f(theta + e) - f(theta - e)) / (2 * eps)
        np.testing.assert_allclose(J[:, k].numpy(), fd.numpy(), rtol=1e-3, atol=1e-9)
