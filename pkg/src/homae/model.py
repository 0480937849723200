"""Full network: masked-image autoencoder, SDF heads, aggregation and pose heads."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import torch
from torch import nn

from .aggregation import Aggregator, PointEncoder
from .autoencoder import Decoder, Encoder
from .fieldreg import FeatureFusion, SDFHead, fourier_encode, normalize_points, sample_token_features, upsample
from .posereg import HandHead, ObjectHead


@dataclass
class ModelConfig:
    image_size: int = 112
    patch: int = 14
    enc_width: int = 256
    enc_depth: int = 4
    heads: int = 4
    dec_stages: int = 3
    C: int = 111
    fusion_hidden: int = 256
    sdf_hidden: int = 128
    sdf_layers: int = 3
    point_hidden: tuple[int, int] = (64, 128)
    cube_center: tuple[float, float, float] = (0.0, 0.0, 0.32)
    cube_half_extent: float = 0.25
    translation_scale: float = 0.1
    multiscale_fusion: bool = True
    explicit_geometry: bool = True

    def to_dict(self) -> dict:
        d = asdict(self)
        d["point_hidden"] = list(self.point_hidden)
        d["cube_center"] = list(self.cube_center)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["point_hidden"] = tuple(d.get("point_hidden", (64, 128)))
        d["cube_center"] = tuple(d.get("cube_center", (0.0, 0.0, 0.32)))
        return cls(**d)


@dataclass
class FusedMap:
    """Fused features kept at token resolution; ``dense()`` gives the H x W map."""

    tokens: torch.Tensor
    size: tuple[int, int]

    def dense(self) -> torch.Tensor:
        return upsample(self.tokens, self.size)


class PointBranch(nn.Module):
    """SDF head, point encoder and aggregator for one entity (hand or object)."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.sdf = SDFHead(cfg.C, cfg.sdf_hidden, cfg.sdf_layers)
        self.points = PointEncoder(cfg.C, cfg.point_hidden) if cfg.explicit_geometry else None
        self.agg = Aggregator(cfg.C, explicit=cfg.explicit_geometry)

    def sdf_at(self, fmap, K, pts, pn):
        feats, oof = sample_token_features(fmap.tokens, fmap.size, K, pts)
        return self.sdf(fourier_encode(pn), feats, pn), feats, oof

    def forward(self, fmap, K, pts, pn):
        sdf, feats, oof = self.sdf_at(fmap, K, pts, pn)
        f3d = self.points(pn) if self.points is not None else None
        agg = self.agg(feats, f3d, sdf)
        return sdf, agg, oof


class HOMAENet(nn.Module):
    def __init__(self, cfg: ModelConfig | None = None):
        super().__init__()
        self.cfg = cfg = cfg or ModelConfig()
        self.encoder = Encoder(cfg.patch, cfg.enc_width, cfg.enc_depth, cfg.heads)
        self.decoder = Decoder(cfg.enc_width, cfg.dec_stages, cfg.patch)
        n_fused = cfg.dec_stages if cfg.multiscale_fusion else 1
        self.fusion = FeatureFusion([cfg.enc_width] * n_fused, cfg.C, cfg.fusion_hidden)
        self.hand = PointBranch(cfg)
        self.object = PointBranch(cfg)
        self.hand_head = HandHead(cfg.C, cfg.heads)
        self.object_head = ObjectHead(cfg.C, cfg.heads)
        self.register_buffer("img_mean", torch.zeros(3))
        self.register_buffer("img_std", torch.ones(3))
        self.register_buffer("cube_center", torch.tensor(cfg.cube_center, dtype=torch.float32))

    # -- image side ------------------------------------------------------
    def standardize(self, images):
        """(B, 3, H, W) in [0, 1] -> standardized."""
        return (images - self.img_mean[:, None, None]) / self.img_std[:, None, None]

    def unstandardize(self, images):
        return images * self.img_std[:, None, None] + self.img_mean[:, None, None]

    def image_features(self, images, reconstruct: bool = True):
        """Standardized images -> (FusedMap, reconstruction or None)."""
        out = self.decoder(self.encoder(images), reconstruct=reconstruct)
        stages = out.stages if self.cfg.multiscale_fusion else out.stages[-1:]
        return FusedMap(self.fusion.tokens(stages), tuple(images.shape[-2:])), out.reconstruction

    # -- point side ------------------------------------------------------
    def normalize(self, pts):
        return normalize_points(pts, self.cube_center.to(pts.dtype), self.cfg.cube_half_extent)

    def sdf(self, which: str, fmap, K, pts):
        branch = self.hand if which == "hand" else self.object
        return branch.sdf_at(fmap, K, pts, self.normalize(pts))[0]

    def poses(self, fmap, K, hand_pts, obj_pts):
        sdf_h, agg_h, oof_h = self.hand(fmap, K, hand_pts, self.normalize(hand_pts))
        sdf_o, agg_o, oof_o = self.object(fmap, K, obj_pts, self.normalize(obj_pts))
        theta, alpha, th = self.hand_head(agg_h.F_agg)
        r, to = self.object_head(agg_o.F_agg)
        c = self.cube_center.to(th.dtype)
        s = self.cfg.translation_scale
        return {
            "theta": theta,
            "alpha": alpha,
            "hand_root_t": c + s * th,
            "object_r": r,
            "object_t": c + s * to,
            "sdf_hand": sdf_h,
            "sdf_object": sdf_o,
            "gate_hand": agg_h.gate,
            "gate_object": agg_o.gate,
            "oof_hand": oof_h,
            "oof_object": oof_o,
        }

    def forward(self, images, K, hand_pts, obj_pts, reconstruct: bool = True):
        fmap, recon = self.image_features(images, reconstruct)
        out = self.poses(fmap, K, hand_pts, obj_pts)
        out["reconstruction"] = recon
        out["fmap"] = fmap
        return out
