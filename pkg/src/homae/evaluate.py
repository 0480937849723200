"""Inference and evaluation driver."""
from __future__ import annotations

from pathlib import Path

import numpy as np
import torch

from .checkpoint import load_model
from .config import RunConfig
from .data import SceneSample, make_batch, prepare_samples
from .fieldreg import voxel_sample_points
from .metrics import MetricsReport, evaluate_dataset
from .model import HOMAENet
from .posereg import PoseEstimate

MODES = ("gt", "voxel")
VOXEL_CHUNK = 4096


class ModelPredictor:
    """Runs the network without masking or reconstruction.

    ``gt`` mode feeds surface samples of the ground-truth meshes; ``voxel``
    mode picks points by the predicted SDF on a regular grid.
    """

    def __init__(self, model: HOMAENet, cfg: RunConfig, trained: bool = True):
        self.model = model.eval()
        self.cfg = cfg
        self.trained = trained

    @torch.no_grad()
    def _voxel_points(self, fmap, K, which: str, budget: int) -> np.ndarray:
        def sdf_fn(grid):
            pts = torch.as_tensor(grid, dtype=torch.float32)
            vals = [
                self.model.sdf(which, fmap, K, pts[i : i + VOXEL_CHUNK][None])[0]
                for i in range(0, len(pts), VOXEL_CHUNK)
            ]
            return torch.cat(vals).double().numpy()

        ps = voxel_sample_points(
            sdf_fn, self.cfg.cube_center, self.cfg.cube_half_extent, budget, self.cfg.grid_resolution, trained=self.trained
        )
        return ps.points

    @torch.no_grad()
    def predict_sample(self, sample: SceneSample, mode: str = "gt") -> PoseEstimate:
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
        mean = self.model.img_mean.double().numpy()
        std = self.model.img_std.double().numpy()
        batch = make_batch([sample], [0], 0, self.cfg, mean, std, train=False)
        fmap, _ = self.model.image_features(batch["images"], reconstruct=False)
        K = batch["K"]
        if mode == "gt":
            hand_pts, obj_pts = batch["hand_pts"], batch["obj_pts"]
        else:
            hand_pts = torch.as_tensor(self._voxel_points(fmap, K, "hand", self.cfg.hand_budget), dtype=torch.float32)[None]
            obj_pts = torch.as_tensor(self._voxel_points(fmap, K, "object", self.cfg.object_budget), dtype=torch.float32)[None]
        out = self.model.poses(fmap, K, hand_pts, obj_pts)
        return PoseEstimate(
            theta=out["theta"][0].double().numpy(),
            alpha=out["alpha"][0].double().numpy(),
            hand_root_t=out["hand_root_t"][0].double().numpy(),
            object_r=out["object_r"][0].double().numpy(),
            object_t=out["object_t"][0].double().numpy(),
            scene_id=sample.scene_id,
        )

    def predict(self, samples, mode: str = "gt") -> list[PoseEstimate]:
        return [self.predict_sample(s, mode) for s in samples]


class GroundTruthEcho:
    """Returns the ground-truth pose of every scene; checks evaluation plumbing."""

    def predict(self, samples, mode: str = "gt") -> list[PoseEstimate]:
        return [
            PoseEstimate(s.theta, s.alpha, s.root_t, s.object_r, s.object_t, scene_id=s.scene_id) for s in samples
        ]


def dataset_samples(dataset, cfg: RunConfig) -> list[SceneSample]:
    scenes = [dataset[i] for i in range(len(dataset))]
    ids = [dataset.scene_id(i) for i in range(len(dataset))]
    # evaluation uses surface points only; perturbed labels are not needed
    return prepare_samples(scenes, ids, cfg.seed, max(cfg.hand_budget, cfg.object_budget), 0.0, cfg.image_size)


def write_predictions(preds: list[PoseEstimate], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("".join(p.to_json() + "\n" for p in preds))
    return path


def run_eval(checkpoint_or_predictor, dataset, mode: str = "gt", report_path=None, predictions_path=None, group_by=None, cfg: RunConfig | None = None):
    """Predict every scene of ``dataset``, write JSON-lines predictions, score them.

    Returns (predictions, MetricsReport).
    """
    if isinstance(checkpoint_or_predictor, (str, Path)):
        model, ckpt_cfg, _ = load_model(checkpoint_or_predictor)
        cfg = cfg or ckpt_cfg
        predictor = ModelPredictor(model, cfg)
    else:
        predictor = checkpoint_or_predictor
        cfg = cfg or getattr(predictor, "cfg", None) or RunConfig()
    samples = dataset_samples(dataset, cfg)
    preds = predictor.predict(samples, mode)
    if predictions_path is None and report_path is not None:
        predictions_path = Path(report_path).with_suffix(".predictions.jsonl")
    if predictions_path is not None:
        write_predictions(preds, predictions_path)
    report = evaluate_dataset(preds, dataset, group_by=group_by)
    if report_path is not None:
        Path(report_path).write_text(report.to_json())
    return preds, report
