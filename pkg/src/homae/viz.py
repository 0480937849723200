"""Demo grids: ground truth | masked | reconstruction [| pose overlay]."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .data import make_batch
from .geometry import RigidPose, project
from .hand import hand_forward
from .scenegen import ObjectCatalog

JOINT_COLOR = (255, 40, 40)
CORNER_COLOR = (40, 120, 255)


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


def draw_markers(panel: np.ndarray, uv: np.ndarray, color, radius: int = 1) -> list[tuple[int, int]]:
    """Draw square markers centred on the rounded pixel of each (u, v); returns the centres."""
    H, W = panel.shape[:2]
    centres = []
    for u, v in np.asarray(uv):
        if not (np.isfinite(u) and np.isfinite(v)):
            continue
        cu, cv = int(round(u)), int(round(v))
        centres.append((cu, cv))
        panel[max(cv - radius, 0) : min(cv + radius + 1, H), max(cu - radius, 0) : min(cu + radius + 1, W)] = color
    return centres


@torch.no_grad()
def demo_rows(model, cfg, samples, epoch: int = 0, overlay: bool = True, catalog: ObjectCatalog | None = None):
    """Per sample a list of HxWx3 uint8 panels and the overlay marker centres."""
    catalog = catalog or ObjectCatalog.default()
    mean = model.img_mean.double().numpy()
    std = model.img_std.double().numpy()
    batch = make_batch(samples, list(range(len(samples))), epoch, cfg, mean, std, train=True)
    fmap, recon = model.image_features(batch["images"], reconstruct=True)
    masked = model.unstandardize(batch["images"]).permute(0, 2, 3, 1).double().numpy()
    recon = model.unstandardize(recon).permute(0, 2, 3, 1).double().numpy()
    out = None
    if overlay:
        # poses come from the unmasked inference path, as in evaluation
        clean = make_batch(samples, list(range(len(samples))), epoch, cfg, mean, std, train=False)
        cfmap, _ = model.image_features(clean["images"], reconstruct=False)
        out = model.poses(cfmap, clean["K"], clean["hand_pts"], clean["obj_pts"])
    rows, markers = [], []
    for i, s in enumerate(samples):
        gt = to_uint8(s.image)
        pm = batch["masks"][i].pixel_mask()
        mpanel = gt.copy()
        mpanel[pm] = to_uint8(masked[i][pm])
        row = [gt, mpanel, to_uint8(recon[i])]
        if overlay:
            K = s.K
            joints, _ = hand_forward(out["theta"][i].double().numpy(), out["alpha"][i].double().numpy(), out["hand_root_t"][i].double().numpy())
            pose = RigidPose(out["object_r"][i].double().numpy(), out["object_t"][i].double().numpy())
            corners = pose.apply(catalog[s.object_id].corners)
            panel = gt.copy()
            ok_j = joints[joints[:, 2] > 0]
            ok_c = corners[corners[:, 2] > 0]
            jc = draw_markers(panel, project(K, ok_j) if len(ok_j) else np.zeros((0, 2)), JOINT_COLOR)
            cc = draw_markers(panel, project(K, ok_c) if len(ok_c) else np.zeros((0, 2)), CORNER_COLOR)
            row.append(panel)
            markers.append({"scene_id": s.scene_id, "joints_uv": project(K, ok_j).tolist() if len(ok_j) else [], "joint_markers": jc, "corner_markers": cc})
        rows.append(row)
    return rows, markers, batch["masks"]


def emit_demo_grid(model, cfg, samples, out_path, epoch: int = 0, overlay: bool = False, catalog=None) -> Path:
    """Write a PNG with one row per sample at native resolution, plus a JSON
    sidecar with the masked cells (and overlay markers, if drawn)."""
    rows, markers, masks = demo_rows(model, cfg, samples, epoch, overlay, catalog)
    grid = np.concatenate([np.concatenate(r, axis=1) for r in rows], axis=0)
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(grid, mode="RGB").save(out_path)
    sidecar = {
        "panels": ["ground_truth", "masked", "reconstruction"] + (["overlay"] if overlay else []),
        "scenes": [
            {"scene_id": s.scene_id, "masked_cells": [list(c) for c in m.cells()], **({"overlay": markers[i]} if overlay else {})}
            for i, (s, m) in enumerate(zip(samples, masks))
        ],
    }
    out_path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2))
    return out_path
