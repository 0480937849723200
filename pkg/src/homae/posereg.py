"""Pose heads, pose losses and the weighted training objective."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch import nn

from .errors import ShapeMismatch
from .fieldreg import smooth_l1
from .hand import hand_forward, hand_forward_torch  # noqa: F401  (re-exported)
from .layers import Mlp, TransformerBlock

THETA_DIM, ALPHA_DIM = 48, 10
HAND_OUT = THETA_DIM + ALPHA_DIM + 3
OBJECT_OUT = 6

BETA_TRANSLATION = 0.01
BETA_ROTATION = 0.1


@dataclass
class PoseEstimate:
    theta: np.ndarray
    alpha: np.ndarray
    hand_root_t: np.ndarray
    object_r: np.ndarray
    object_t: np.ndarray
    scene_id: str = ""

    def __post_init__(self):
        dims = {"theta": THETA_DIM, "alpha": ALPHA_DIM, "hand_root_t": 3, "object_r": 3, "object_t": 3}
        for name, d in dims.items():
            arr = np.asarray(getattr(self, name), dtype=np.float64).reshape(-1)
            if arr.shape != (d,):
                raise ShapeMismatch(f"{name}: expected {d} values, got {arr.size}")
            if not np.isfinite(arr).all():
                raise ValueError(f"{name} contains non-finite values")
            setattr(self, name, arr)

    def to_json(self) -> str:
        keys = ("theta", "alpha", "hand_root_t", "object_r", "object_t")
        return json.dumps({"scene_id": self.scene_id, **{k: getattr(self, k).tolist() for k in keys}})

    @classmethod
    def from_json(cls, line: str) -> "PoseEstimate":
        d = json.loads(line)
        return cls(d["theta"], d["alpha"], d["hand_root_t"], d["object_r"], d["object_t"], scene_id=d.get("scene_id", ""))


@dataclass
class LossWeights:
    lambda1: float = 1.0
    lambda2: float = 1.0
    lambda3: float = 1.0
    lambda4: float = 1.0
    lambda5: float = 0.0

    def __post_init__(self):
        for k, v in asdict(self).items():
            if v < 0:
                raise ValueError(f"{k} must be non-negative, got {v}")


class PoseHead(nn.Module):
    """One transformer block over point tokens, mean pool, MLP regressor."""

    def __init__(self, C: int, out_dim: int, heads: int = 4):
        super().__init__()
        self.C = C
        self.block = TransformerBlock(C, heads, ff_dim=2 * C)
        self.norm = nn.LayerNorm(C)
        self.mlp = Mlp([C, C, out_dim])

    def forward(self, tokens: torch.Tensor) -> torch.Tensor:
        if tokens.shape[-1] != self.C:
            raise ShapeMismatch(f"pose head expects width {self.C}, got {tokens.shape[-1]}")
        x = self.block(tokens)
        return self.mlp(self.norm(x.mean(dim=-2)))


class HandHead(PoseHead):
    def __init__(self, C: int, heads: int = 4):
        super().__init__(C, HAND_OUT, heads)

    def forward(self, tokens):
        out = super().forward(tokens)
        return out[..., :THETA_DIM], out[..., THETA_DIM : THETA_DIM + ALPHA_DIM], out[..., THETA_DIM + ALPHA_DIM :]


class ObjectHead(PoseHead):
    def __init__(self, C: int, heads: int = 4):
        super().__init__(C, OBJECT_OUT, heads)

    def forward(self, tokens):
        out = super().forward(tokens)
        return out[..., :3], out[..., 3:]


def hand_head(head: HandHead, F_agg_h):
    return head(F_agg_h)


def object_head(head: ObjectHead, F_agg_o):
    return head(F_agg_o)


def _sl1_sum(pred, gt, beta):
    """Smooth-L1 summed over components, averaged over any leading batch dims."""
    pred = torch.as_tensor(pred, dtype=torch.float64) if not isinstance(pred, torch.Tensor) else pred
    gt = torch.as_tensor(gt, dtype=pred.dtype) if not isinstance(gt, torch.Tensor) else gt.to(pred.dtype)
    per = smooth_l1(pred, gt, beta).sum(dim=-1)
    return per.mean() if per.ndim else per


def _fields(p):
    if isinstance(p, PoseEstimate):
        return {k: getattr(p, k) for k in ("theta", "alpha", "hand_root_t", "object_r", "object_t")}
    return p


def pose_losses(pred, gt):
    """(L_mano, L_obj). Accepts PoseEstimate objects or dicts of (B, d) tensors."""
    p, g = _fields(pred), _fields(gt)
    L_mano = (
        _sl1_sum(p["theta"], g["theta"], BETA_ROTATION)
        + _sl1_sum(p["alpha"], g["alpha"], BETA_ROTATION)
        + _sl1_sum(p["hand_root_t"], g["hand_root_t"], BETA_TRANSLATION)
    )
    L_obj = _sl1_sum(p["object_r"], g["object_r"], BETA_ROTATION) + _sl1_sum(p["object_t"], g["object_t"], BETA_TRANSLATION)
    return L_mano, L_obj


def total_loss(L_rec, L_mano, L_obj, L_SDF, L_others=0.0, weights: LossWeights | None = None):
    w = weights or LossWeights()
    return w.lambda1 * L_rec + w.lambda2 * L_mano + w.lambda3 * L_obj + w.lambda4 * L_SDF + w.lambda5 * L_others
