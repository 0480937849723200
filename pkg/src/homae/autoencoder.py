"""Patch-embedding transformer encoder and token-wise MLP decoder."""
from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from . import instrument
from .errors import ShapeMismatch
from .layers import Mlp, TransformerBlock


def sincos_pos_embed(gh: int, gw: int, dim: int, dtype=torch.float32) -> torch.Tensor:
    """Fixed 2D sine-cosine embedding, shape (gh * gw, dim)."""
    quarter = dim // 4
    omega = 1.0 / (10000 ** (torch.arange(quarter, dtype=torch.float64) / max(quarter, 1)))
    ys, xs = torch.meshgrid(torch.arange(gh, dtype=torch.float64), torch.arange(gw, dtype=torch.float64), indexing="ij")
    parts = []
    for coord in (ys.reshape(-1), xs.reshape(-1)):
        ang = coord[:, None] * omega[None]
        parts += [ang.sin(), ang.cos()]
    emb = torch.cat(parts, dim=1)
    if emb.shape[1] < dim:
        emb = torch.cat([emb, torch.zeros(len(emb), dim - emb.shape[1], dtype=emb.dtype)], dim=1)
    return emb.to(dtype)


class Encoder(nn.Module):
    def __init__(self, patch: int = 14, width: int = 256, depth: int = 4, heads: int = 4, in_ch: int = 3, mlp_ratio: int = 2):
        super().__init__()
        self.patch = patch
        self.width = width
        self.embed = nn.Conv2d(in_ch, width, kernel_size=patch, stride=patch)
        self.blocks = nn.ModuleList([TransformerBlock(width, heads, ff_dim=mlp_ratio * width) for _ in range(depth)])
        self.norm = nn.LayerNorm(width)

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        """(B, 3, H, W) -> (B, H/14, W/14, width)."""
        if images.ndim != 4 or images.shape[2] % self.patch or images.shape[3] % self.patch:
            raise ShapeMismatch(f"image shape {tuple(images.shape)} not divisible by patch {self.patch}")
        x = self.embed(images)
        B, C, gh, gw = x.shape
        x = x.flatten(2).transpose(1, 2) + sincos_pos_embed(gh, gw, C, x.dtype)
        for blk in self.blocks:
            x = blk(x)
        return self.norm(x).reshape(B, gh, gw, C)


@dataclass
class DecoderOutput:
    stages: list[torch.Tensor]
    reconstruction: torch.Tensor | None


class DecoderStage(nn.Module):
    def __init__(self, width: int):
        super().__init__()
        self.norm = nn.LayerNorm(width)
        self.mlp = Mlp([width, 2 * width, width])

    def forward(self, x):
        return x + self.mlp(self.norm(x))


class Decoder(nn.Module):
    """L residual token-wise MLP stages; a linear head turns each final token
    into a patch x patch x 3 pixel block."""

    def __init__(self, width: int = 256, stages: int = 3, patch: int = 14, out_ch: int = 3):
        super().__init__()
        self.width = width
        self.patch = patch
        self.out_ch = out_ch
        self.stages = nn.ModuleList([DecoderStage(width) for _ in range(stages)])
        self.head = nn.Linear(width, patch * patch * out_ch)

    def forward(self, feats: torch.Tensor, reconstruct: bool = True) -> DecoderOutput:
        if feats.ndim != 4 or feats.shape[-1] != self.width:
            raise ShapeMismatch(f"decoder expects (B, gh, gw, {self.width}), got {tuple(feats.shape)}")
        x = feats
        outs = []
        for stage in self.stages:
            x = stage(x)
            outs.append(x)
        recon = self.unpatchify(self.head(x)) if reconstruct else None
        return DecoderOutput(outs, recon)

    def unpatchify(self, tokens: torch.Tensor) -> torch.Tensor:
        B, gh, gw, _ = tokens.shape
        p, c = self.patch, self.out_ch
        x = tokens.reshape(B, gh, gw, p, p, c).permute(0, 5, 1, 3, 2, 4)
        return x.reshape(B, c, gh * p, gw * p)


def reconstruction_loss(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Squared RGB-vector error summed over channels, averaged over pixels.

    Inputs are (B, 3, H, W); the batch is averaged as well.
    """
    instrument.count("reconstruction_loss")
    if pred.shape != target.shape:
        raise ShapeMismatch(f"{tuple(pred.shape)} vs {tuple(target.shape)}")
    return ((pred - target) ** 2).sum(dim=1).mean()


def psnr(pred, target, peak: float = 1.0) -> float:
    mse = float(((pred - target) ** 2).mean())
    return float("inf") if mse == 0 else 10.0 * torch.log10(torch.tensor(peak**2 / mse)).item()
