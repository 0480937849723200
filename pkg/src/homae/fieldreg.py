"""Multi-scale fusion, pixel-aligned features, Fourier encoding and SDF heads."""
from __future__ import annotations

import warnings

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import NonPositiveDepth, ShapeMismatch, UntrainedModelWarning
from .geometry import PointSet, TriMesh, mesh_sdf_bruteforce, project, sample_surface_points
from .layers import Mlp

FOURIER_BANDS = 5
FOURIER_DIM = 3 * 2 * FOURIER_BANDS


class FeatureFusion(nn.Module):
    """Concatenate decoder stages, map to C channels per token, upsample bilinearly."""

    def __init__(self, stage_dims: list[int], C: int, hidden: int = 256, mlp: nn.Module | None = None):
        super().__init__()
        self.C = C
        self.mlp = mlp if mlp is not None else Mlp([sum(stage_dims), hidden, C])

    def tokens(self, stages: list[torch.Tensor]) -> torch.Tensor:
        """Fused features at token resolution, (B, C, gh, gw)."""
        if not stages:
            raise ShapeMismatch("need at least one decoder stage")
        if len({tuple(s.shape[:3]) for s in stages}) != 1:
            raise ShapeMismatch("decoder stages disagree in batch/spatial size")
        return self.mlp(torch.cat(stages, dim=-1)).permute(0, 3, 1, 2)

    def forward(self, stages: list[torch.Tensor], size: tuple[int, int]) -> torch.Tensor:
        return upsample(self.tokens(stages), size)


def upsample(tokens: torch.Tensor, size) -> torch.Tensor:
    return F.interpolate(tokens, size=tuple(size), mode="bilinear", align_corners=False)


def fuse_multiscale(stages, fusion: FeatureFusion, size) -> torch.Tensor:
    """(B, gh, gw, C_l) stages -> dense (B, C, H, W) map."""
    return fusion(stages, size)


def normalize_points(p, center, half_extent: float):
    return (p - center) / half_extent


def denormalize_points(p, center, half_extent: float):
    return p * half_extent + center


def fourier_encode(p: torch.Tensor) -> torch.Tensor:
    """(..., 3) normalized points -> (..., 30); axis-major, then band, then (sin, cos)."""
    freqs = (2.0 ** torch.arange(FOURIER_BANDS, dtype=p.dtype, device=p.device)) * torch.pi
    ang = p[..., :, None] * freqs  # (..., 3, bands)
    enc = torch.stack([ang.sin(), ang.cos()], dim=-1)  # (..., 3, bands, 2)
    return enc.reshape(*p.shape[:-1], FOURIER_DIM)


def sample_image_features(fmap: torch.Tensor, K: torch.Tensor, points: torch.Tensor):
    """Bilinear lookup of ``fmap`` (B, C, H, W) at the projections of ``points`` (B, N, 3).

    Pixel centers sit at integer coordinates; projections outside the image are
    clamped to the border. Returns features (B, N, C) and an out-of-frame mask.
    """
    if (points[..., 2] <= 0).any():
        raise NonPositiveDepth("sample points must be in front of the camera")
    B, C, H, W = fmap.shape
    uv = project(K, points)
    oof = (uv[..., 0] < 0) | (uv[..., 0] > W - 1) | (uv[..., 1] < 0) | (uv[..., 1] > H - 1)
    gx = 2.0 * uv[..., 0] / (W - 1) - 1.0
    gy = 2.0 * uv[..., 1] / (H - 1) - 1.0
    grid = torch.stack([gx, gy], dim=-1)[:, :, None, :].to(fmap.dtype)
    out = F.grid_sample(fmap, grid, mode="bilinear", padding_mode="border", align_corners=True)
    return out[..., 0].transpose(1, 2), oof


def sample_token_features(tokens: torch.Tensor, size, K: torch.Tensor, points: torch.Tensor):
    """Same result as ``sample_image_features(upsample(tokens, size), K, points)``
    without materializing the dense map.

    Each of the four pixel centers around a projection is read from the token
    grid the way ``upsample`` would compute it, then blended bilinearly.
    """
    if (points[..., 2] <= 0).any():
        raise NonPositiveDepth("sample points must be in front of the camera")
    H, W = size
    uv = project(K, points)
    oof = (uv[..., 0] < 0) | (uv[..., 0] > W - 1) | (uv[..., 1] < 0) | (uv[..., 1] > H - 1)
    u = uv[..., 0].clamp(0, W - 1)
    v = uv[..., 1].clamp(0, H - 1)
    u0 = u.detach().floor().clamp(max=W - 2)
    v0 = v.detach().floor().clamp(max=H - 2)
    wu, wv = u - u0, v - v0
    corners = ((0, 0), (1, 0), (0, 1), (1, 1))
    gx = torch.stack([(2 * (u0 + du) + 1) / W - 1 for du, _ in corners], dim=-1)
    gy = torch.stack([(2 * (v0 + dv) + 1) / H - 1 for _, dv in corners], dim=-1)
    grid = torch.stack([gx, gy], dim=-1).to(tokens.dtype)  # (B, N, 4, 2)
    f = F.grid_sample(tokens, grid, mode="bilinear", padding_mode="border", align_corners=False)
    w = torch.stack([(1 - wu) * (1 - wv), wu * (1 - wv), (1 - wu) * wv, wu * wv], dim=-1).to(tokens.dtype)
    return (f * w[:, None]).sum(-1).transpose(1, 2), oof


class SDFHead(nn.Module):
    """Pointwise MLP on Fourier code, image feature and normalized coordinates."""

    def __init__(self, C: int, hidden: int = 128, layers: int = 3):
        super().__init__()
        self.in_dim = FOURIER_DIM + C + 3
        self.mlp = Mlp([self.in_dim] + [hidden] * layers + [1])

    def forward(self, gamma, img_feats, points):
        x = torch.cat([gamma, img_feats, points], dim=-1)
        if x.shape[-1] != self.in_dim:
            raise ShapeMismatch(f"SDF head expects width {self.in_dim}, got {x.shape[-1]}")
        return self.mlp(x)[..., 0]


def predict_sdf(head: SDFHead, gamma, img_feats, points) -> torch.Tensor:
    return head(gamma, img_feats, points)


def smooth_l1(pred, target, beta: float) -> torch.Tensor:
    return F.smooth_l1_loss(pred, target, reduction="none", beta=beta)


def sdf_loss(pred, gt, delta: float = 0.05, beta: float = 0.01) -> torch.Tensor:
    if pred.shape != gt.shape:
        raise ShapeMismatch(f"{tuple(pred.shape)} vs {tuple(gt.shape)}")
    return smooth_l1(pred.clamp(-delta, delta), gt.clamp(-delta, delta), beta).mean()


def voxel_grid(center, half_extent: float, resolution: int) -> np.ndarray:
    """Camera-frame grid nodes in x-major, then y, then z index order."""
    g = np.linspace(-1.0, 1.0, resolution)
    xs, ys, zs = np.meshgrid(g, g, g, indexing="ij")
    unit = np.stack([xs, ys, zs], axis=-1).reshape(-1, 3)
    return unit * half_extent + np.asarray(center, dtype=np.float64)


def voxel_sample_points(sdf_fn, center, half_extent: float, budget: int, resolution: int = 24, trained: bool = True) -> PointSet:
    """Evaluate ``sdf_fn`` on a resolution^3 grid and keep the ``budget`` nodes
    with the smallest |SDF| (ties resolved by grid index)."""
    grid = voxel_grid(center, half_extent, resolution)
    if budget > len(grid):
        raise ValueError(f"budget {budget} exceeds grid size {len(grid)}")
    if not trained:
        warnings.warn("voxel sampling with an untrained SDF head", UntrainedModelWarning)
    sdf = np.asarray(sdf_fn(grid), dtype=np.float64).reshape(-1)
    order = np.argsort(np.abs(sdf), kind="stable")[:budget]
    return PointSet(grid[order], meta={"grid_index": order, "sdf": sdf[order], "untrained": not trained})


def sdf_training_samples(mesh: TriMesh, n: int, seed: int, perturb: float = 0.02, volume=None):
    """Surface samples (label 0) plus copies displaced along face normals by
    U(-perturb, perturb), labelled with the brute-force oracle.

    ``volume = (center, half_extent, fraction)`` swaps that fraction of the
    displaced queries for points uniform in the cube, so the field is also
    pinned down far from the surface where voxel sampling looks.
    """
    ps = sample_surface_points(mesh, n, seed)
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 7]))
    normals = mesh.face_normals()[ps.meta["face_index"]]
    off = rng.uniform(-perturb, perturb, (n, 1))
    shifted = ps.points + off * normals
    n_vol = 0
    if volume is not None:
        center, half, frac = volume
        n_vol = int(round(n * frac))
        if n_vol:
            shifted[n - n_vol :] = np.asarray(center, dtype=np.float64) + rng.uniform(-half, half, (n_vol, 3))
    labels = mesh_sdf_bruteforce(mesh, shifted) if perturb > 0 or n_vol else np.zeros(n)
    return ps.points, shifted, labels
