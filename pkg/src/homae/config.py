"""Run configuration with desk and paper profiles."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from .errors import ConfigRange
from .masking import MaskFillType
from .model import ModelConfig
from .posereg import LossWeights

PROFILES = {
    "desk": dict(image_size=112, patch=14, C=111, hand_budget=300, object_budget=100, batch_size=8, epochs=20),
    "paper": dict(image_size=224, patch=28, C=223, hand_budget=600, object_budget=200, batch_size=24, epochs=60),
}


@dataclass
class RunConfig:
    profile: str = "desk"
    seed: int = 0
    dataset: str | None = None
    out_dir: str = "runs/default"
    # synthetic data used when ``dataset`` is None
    train_count: int = 8
    # image and masking
    image_size: int = 112
    patch: int = 14  # mask patch size
    rho: int = 12
    mu: float = 0.5
    mask_fill: str = "gaussian_noise"
    # network
    enc_width: int = 256
    enc_depth: int = 4
    heads: int = 4
    dec_stages: int = 3
    C: int = 111
    multiscale_fusion: bool = True
    explicit_geometry: bool = True
    # points and SDF
    hand_budget: int = 300
    object_budget: int = 100
    sdf_pool: int = 2000
    sdf_perturb: float = 0.02
    sdf_volume_fraction: float = 0.25  # share of SDF queries drawn uniformly in the cube
    sdf_delta: float = 0.05
    sdf_beta: float = 0.01
    grid_resolution: int = 24
    cube_half_extent: float = 0.25
    cube_center: tuple = (0.0, 0.0, 0.32)
    # objective
    lambda1: float = 1.0
    lambda2: float = 1.0
    lambda3: float = 1.0
    lambda4: float = 1.0
    lambda5: float = 0.0
    # optimization
    lr: float = 1e-4
    lr_decay: float = 0.7
    lr_decay_epochs: int = 5
    batch_size: int = 8
    epochs: int = 20
    max_steps: int | None = None
    grad_clip: float = 1.0
    checkpoint_every: int = 1  # epochs
    keep_checkpoints: int = 2  # most recent epoch files kept; 0 keeps all
    debug_gates: bool = False

    def __post_init__(self):
        self.cube_center = tuple(float(c) for c in self.cube_center)
        if self.profile not in PROFILES:
            raise ConfigRange(f"unknown profile {self.profile!r}")
        try:
            MaskFillType(self.mask_fill)
        except ValueError:
            raise ConfigRange(f"mask_fill must be one of {[m.value for m in MaskFillType]}") from None
        grid = self.image_size // self.patch if self.patch > 0 else 0
        checks = [
            (self.image_size > 0 and self.image_size % 14 == 0, "image_size must be a positive multiple of 14"),
            (self.patch > 0 and self.image_size % self.patch == 0, "patch must divide image_size"),
            (0 <= self.rho <= grid * grid, f"rho must lie in [0, {grid * grid}]"),
            (0.0 <= self.mu <= 1.0, "mu must lie in [0, 1]"),
            (self.C > 0 and self.enc_width > 0 and self.heads > 0 and self.dec_stages >= 1, "network widths must be positive"),
            (self.hand_budget > 0 and self.object_budget > 0, "point budgets must be positive"),
            (self.sdf_pool >= max(self.hand_budget, self.object_budget), "sdf_pool must cover the point budgets"),
            (self.sdf_perturb >= 0 and self.sdf_delta > 0 and self.sdf_beta > 0, "SDF constants out of range"),
            (0.0 <= self.sdf_volume_fraction <= 1.0, "sdf_volume_fraction must be in [0, 1]"),
            (self.grid_resolution >= 2 and self.grid_resolution**3 >= max(self.hand_budget, self.object_budget), "grid_resolution too small for budgets"),
            (self.cube_half_extent > 0 and self.cube_center[2] - self.cube_half_extent > 0, "voxel cube must lie in front of the camera"),
            (self.lr > 0 and 0 < self.lr_decay <= 1 and self.lr_decay_epochs >= 1, "optimizer schedule out of range"),
            (self.batch_size >= 1 and self.epochs >= 1 and self.train_count >= 1, "batch_size, epochs, train_count must be >= 1"),
            (self.max_steps is None or self.max_steps >= 0, "max_steps must be non-negative"),
            (self.grad_clip > 0 and self.checkpoint_every >= 1 and self.keep_checkpoints >= 0, "grad_clip, checkpoint_every, keep_checkpoints out of range"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigRange(msg)
        self.weights()  # validates lambdas

    @classmethod
    def for_profile(cls, name: str = "desk", **overrides) -> "RunConfig":
        if name not in PROFILES:
            raise ConfigRange(f"unknown profile {name!r}")
        return cls(profile=name, **{**PROFILES[name], **overrides})

    def weights(self) -> LossWeights:
        try:
            return LossWeights(self.lambda1, self.lambda2, self.lambda3, self.lambda4, self.lambda5)
        except ValueError as exc:
            raise ConfigRange(str(exc)) from None

    def sdf_volume(self):
        if self.sdf_volume_fraction <= 0:
            return None
        return tuple(self.cube_center), self.cube_half_extent, self.sdf_volume_fraction

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            image_size=self.image_size,
            enc_width=self.enc_width,
            enc_depth=self.enc_depth,
            heads=self.heads,
            dec_stages=self.dec_stages,
            C=self.C,
            cube_center=self.cube_center,
            cube_half_extent=self.cube_half_extent,
            multiscale_fusion=self.multiscale_fusion,
            explicit_geometry=self.explicit_geometry,
        )

    def replace(self, **kw) -> "RunConfig":
        return replace(self, **kw)

    # -- serialization ---------------------------------------------------
    def to_dict(self) -> dict:
        d = asdict(self)
        d["cube_center"] = list(self.cube_center)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, d: dict, profile: str | None = None) -> "RunConfig":
        """Build from a plain dict; unknown keys are rejected."""
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigRange(f"unknown config keys: {unknown}")
        name = profile or d.get("profile", "desk")
        if name not in PROFILES:
            raise ConfigRange(f"unknown profile {name!r}")
        # profile defaults first, explicit keys override them
        return cls(**{**PROFILES[name], **d, "profile": name})

    @classmethod
    def from_json(cls, text: str, profile: str | None = None) -> "RunConfig":
        return cls.from_dict(json.loads(text), profile)

    @classmethod
    def load(cls, path, profile: str | None = None) -> "RunConfig":
        return cls.from_json(Path(path).read_text(), profile)

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())
