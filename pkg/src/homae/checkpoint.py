"""Checkpoint archive: parameters, architecture, standardization and train state."""
from __future__ import annotations

from pathlib import Path

import torch

from .config import RunConfig
from .errors import CheckpointVersionMismatch
from .model import HOMAENet, ModelConfig

CHECKPOINT_VERSION = 1


def save_checkpoint(path, model: HOMAENet, cfg: RunConfig, optimizer=None, epoch: int = 0, step: int = 0, extra: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "version": CHECKPOINT_VERSION,
        "model_config": model.cfg.to_dict(),
        "run_config": cfg.to_dict(),
        "state_dict": model.state_dict(),
        "img_mean": model.img_mean.tolist(),
        "img_std": model.img_std.tolist(),
        "epoch": epoch,
        "step": step,
        "torch_rng": torch.get_rng_state(),
        "optimizer": optimizer.state_dict() if optimizer is not None else None,
        "extra": extra or {},
    }
    tmp = path.with_suffix(".tmp")
    torch.save(payload, tmp)
    tmp.replace(path)
    return path


def read_checkpoint(path) -> dict:
    payload = torch.load(Path(path), map_location="cpu", weights_only=False)
    version = payload.get("version") if isinstance(payload, dict) else None
    if version != CHECKPOINT_VERSION:
        raise CheckpointVersionMismatch(f"{path}: checkpoint version {version!r}, expected {CHECKPOINT_VERSION}")
    return payload


def load_model(path) -> tuple[HOMAENet, RunConfig, dict]:
    payload = read_checkpoint(path)
    model = HOMAENet(ModelConfig.from_dict(payload["model_config"]))
    model.load_state_dict(payload["state_dict"])
    model.eval()
    return model, RunConfig.from_dict(payload["run_config"]), payload
