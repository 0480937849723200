"""Implicit-explicit aggregation of per-point features."""
from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .errors import EmptyPointSet, ShapeMismatch
from .layers import Mlp


class PointEncoder(nn.Module):
    """PointNet-style encoder: shared per-point MLP, max-pooled global code
    broadcast back to every point, projected to width C."""

    def __init__(self, C: int, hidden: tuple[int, int] = (64, 128)):
        super().__init__()
        self.local = Mlp([3, hidden[0], hidden[1]], final_act=True)
        self.out = Mlp([2 * hidden[1], hidden[1], C])

    def forward(self, points: torch.Tensor) -> torch.Tensor:
        if points.shape[-2] == 0:
            raise EmptyPointSet("cannot encode an empty point set")
        h = self.local(points)
        g = h.max(dim=-2, keepdim=True).values.expand_as(h)
        return self.out(torch.cat([h, g], dim=-1))


def encode_points(encoder: PointEncoder, points: torch.Tensor) -> torch.Tensor:
    return encoder(points)


@dataclass
class AggregatedFeatures:
    F_agg: torch.Tensor
    beta: torch.Tensor
    gate: torch.Tensor


def gated_rows(F_img: torch.Tensor, F_3D: torch.Tensor | None, sdf: torch.Tensor, beta: torch.Tensor):
    """Concatenate features and scale each row by sigmoid(sdf / beta) / beta."""
    feats = F_img if F_3D is None else torch.cat([F_img, F_3D], dim=-1)
    gate = torch.sigmoid(sdf / beta)
    return feats * (gate / beta)[..., None], gate


class Aggregator(nn.Module):
    def __init__(self, C: int, explicit: bool = True, beta_init: float = 1.0):
        super().__init__()
        self.C = C
        self.explicit = explicit
        # softplus(beta_raw) = beta_init
        self.beta_raw = nn.Parameter(torch.tensor(math.log(math.expm1(beta_init))))
        self.proj = nn.Linear(2 * C if explicit else C, C)

    @property
    def beta(self) -> torch.Tensor:
        return F.softplus(self.beta_raw)

    def forward(self, F_img, F_3D, sdf) -> AggregatedFeatures:
        if F_img.shape[:-1] != sdf.shape or (F_3D is not None and F_3D.shape != F_img.shape):
            raise ShapeMismatch("image features, point features and SDF disagree in shape")
        beta = self.beta
        rows, gate = gated_rows(F_img, F_3D if self.explicit else None, sdf, beta)
        return AggregatedFeatures(self.proj(rows), beta, gate)


def aggregate(aggregator: Aggregator, F_img, F_3D, sdf) -> AggregatedFeatures:
    return aggregator(F_img, F_3D, sdf)


def gate_csv(sdf, gate) -> str:
    lines = ["point_index,sdf,gate"]
    lines += [f"{i},{float(s)!r},{float(g)!r}" for i, (s, g) in enumerate(zip(sdf.tolist(), gate.tolist()))]
    return "\n".join(lines) + "\n"
