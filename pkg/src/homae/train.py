"""Training loop."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .aggregation import gate_csv
from .autoencoder import reconstruction_loss
from .checkpoint import read_checkpoint, save_checkpoint
from .config import RunConfig
from .data import make_batch, image_stats, prepare_samples
from .errors import NonFiniteLoss
from .fieldreg import sdf_loss
from .model import HOMAENet
from .posereg import pose_losses, total_loss
from .scenegen import SceneConfig, generate_scene, read_dataset, scene_seed

log = logging.getLogger(__name__)

LOSS_KEYS = ("L_rec", "L_mano", "L_obj", "L_SDF", "L_total")


@dataclass
class TrainResult:
    model: HOMAENet
    history: list[dict] = field(default_factory=list)
    checkpoint: Path | None = None
    samples: list = field(default_factory=list)


def load_scenes(cfg: RunConfig):
    """(scenes, scene_ids) from ``cfg.dataset`` or freshly generated."""
    if cfg.dataset:
        ds = read_dataset(cfg.dataset)
        return [ds[i] for i in range(len(ds))], [ds.scene_id(i) for i in range(len(ds))]
    sc = SceneConfig(image_size=cfg.image_size)
    scenes = [generate_scene(sc, seed=scene_seed(cfg.seed, i)) for i in range(cfg.train_count)]
    return scenes, [f"scene_{i:05d}" for i in range(len(scenes))]


def configure_determinism(seed: int) -> None:
    torch.manual_seed(seed)
    torch.use_deterministic_algorithms(True)


def epoch_lr(cfg: RunConfig, epoch: int) -> float:
    return cfg.lr * cfg.lr_decay ** (epoch // cfg.lr_decay_epochs)


def epoch_order(cfg: RunConfig, epoch: int, n: int) -> np.ndarray:
    return np.random.default_rng(np.random.SeedSequence([int(cfg.seed), int(epoch), 5])).permutation(n)


def compute_losses(model: HOMAENet, batch: dict, cfg: RunConfig, reconstruct: bool = True) -> tuple[dict, dict]:
    out = model(batch["images"], batch["K"], batch["hand_pts"], batch["obj_pts"], reconstruct=reconstruct)
    fmap = out["fmap"]
    hq = model.sdf("hand", fmap, batch["K"], batch["hand_query"])
    oq = model.sdf("object", fmap, batch["K"], batch["obj_query"])

    def sdf_term(pred_surf, pred_q, labels):
        pred = torch.cat([pred_surf, pred_q], dim=1)
        gt = torch.cat([torch.zeros_like(pred_surf), labels], dim=1)
        return sdf_loss(pred, gt, cfg.sdf_delta, cfg.sdf_beta)

    L_sdf = sdf_term(out["sdf_hand"], hq, batch["hand_labels"]) + sdf_term(out["sdf_object"], oq, batch["obj_labels"])
    L_mano, L_obj = pose_losses(out, batch["gt"])
    if reconstruct:
        L_rec = reconstruction_loss(out["reconstruction"], batch["targets"])
    else:
        L_rec = torch.zeros((), dtype=L_mano.dtype)
    L_total = total_loss(L_rec, L_mano, L_obj, L_sdf, 0.0, cfg.weights())
    return {"L_rec": L_rec, "L_mano": L_mano, "L_obj": L_obj, "L_SDF": L_sdf, "L_total": L_total}, out


def _dump_nonfinite(out_dir: Path, step: int, epoch: int, batch: dict, losses: dict) -> Path:
    path = out_dir / "nonfinite_dump.json"
    path.write_text(
        json.dumps(
            {
                "step": step,
                "epoch": epoch,
                "scene_ids": batch["scene_ids"],
                "losses": {k: v.item() for k, v in losses.items()},
                "input_finite": bool(torch.isfinite(batch["images"]).all()),
            },
            indent=2,
        )
    )
    return path


def run_training(cfg: RunConfig, scenes=None, scene_ids=None, resume=None, log_path=None, stop_after_epoch: int | None = None) -> TrainResult:
    """Train from scratch, or continue from ``resume`` (a checkpoint path).

    Every step appends one JSON line with the component losses and lr. A
    checkpoint is written every ``checkpoint_every`` epochs as
    ``epoch_XXXX.pt`` and copied to ``last.pt``.
    """
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    configure_determinism(cfg.seed)
    if scenes is None:
        scenes, scene_ids = load_scenes(cfg)
    scene_ids = scene_ids or [f"scene_{i:05d}" for i in range(len(scenes))]
    samples = prepare_samples(scenes, scene_ids, cfg.seed, cfg.sdf_pool, cfg.sdf_perturb, cfg.image_size, cfg.sdf_volume())
    mean, std = image_stats(samples)

    model = HOMAENet(cfg.model_config())
    model.img_mean.copy_(torch.as_tensor(mean, dtype=torch.float32))
    model.img_std.copy_(torch.as_tensor(std, dtype=torch.float32))
    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    start_epoch, step = 0, 0
    if resume is not None:
        payload = read_checkpoint(resume)
        model.load_state_dict(payload["state_dict"])
        optimizer.load_state_dict(payload["optimizer"])
        torch.set_rng_state(payload["torch_rng"])
        start_epoch, step = payload["epoch"] + 1, payload["step"]
    # standardization constants as stored in the model, so resumed runs match
    mean = model.img_mean.double().numpy()
    std = model.img_std.double().numpy()

    log_path = Path(log_path) if log_path else out_dir / "train_log.jsonl"
    mode = "a" if resume is not None else "w"
    steps_per_epoch = math.ceil(len(samples) / cfg.batch_size)
    max_steps = cfg.max_steps if cfg.max_steps is not None else cfg.epochs * steps_per_epoch
    result = TrainResult(model, samples=samples)
    model.train()
    with open(log_path, mode) as fh:
        epoch = start_epoch
        while step < max_steps:
            lr = epoch_lr(cfg, epoch)
            for g in optimizer.param_groups:
                g["lr"] = lr
            order = epoch_order(cfg, epoch, len(samples))
            for b in range(steps_per_epoch):
                if step >= max_steps:
                    break
                batch = make_batch(samples, order[b * cfg.batch_size : (b + 1) * cfg.batch_size], epoch, cfg, mean, std, train=True)
                losses, out = compute_losses(model, batch, cfg)
                if not all(torch.isfinite(v) for v in losses.values()):
                    dump = _dump_nonfinite(out_dir, step, epoch, batch, losses)
                    raise NonFiniteLoss(f"non-finite loss at step {step} (scenes {batch['scene_ids']}); see {dump}")
                optimizer.zero_grad(set_to_none=True)
                losses["L_total"].backward()
                torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
                optimizer.step()
                row = {"step": step, **{k: v.item() for k, v in losses.items()}, "lr": lr}
                fh.write(json.dumps(row) + "\n")
                result.history.append(row)
                if cfg.debug_gates and b == 0:
                    (out_dir / f"gates_{batch['scene_ids'][0]}.csv").write_text(
                        gate_csv(out["sdf_hand"][0].detach(), out["gate_hand"][0].detach())
                    )
                step += 1
            fh.flush()
            last_epoch = step >= max_steps or (stop_after_epoch is not None and epoch >= stop_after_epoch)
            if (epoch + 1) % cfg.checkpoint_every == 0 or last_epoch:
                path = save_checkpoint(out_dir / f"epoch_{epoch:04d}.pt", model, cfg, optimizer, epoch, step)
                save_checkpoint(out_dir / "last.pt", model, cfg, optimizer, epoch, step)
                result.checkpoint = out_dir / "last.pt"
                if cfg.keep_checkpoints:
                    _prune(out_dir, cfg.keep_checkpoints, current=path)
            if last_epoch:
                break
            epoch += 1
    model.eval()
    return result


def _prune(out_dir: Path, keep: int, current: Path) -> None:
    """Keep the ``keep`` most recent epoch checkpoints."""
    ckpts = sorted(out_dir.glob("epoch_*.pt"))
    for old in ckpts[:-keep]:
        if old != current:
            old.unlink()
