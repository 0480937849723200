"""Hand joint, hand mesh and object pose metrics, plus dataset-level scoring."""
from __future__ import annotations

import json
import math
from collections import defaultdict
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .errors import DuplicatePrediction, MissingPrediction, ShapeMismatch, UnknownObject
from .geometry import RigidPose, apply_similarity, sample_surface_points, umeyama_align
from .hand import hand_forward

AUC_THRESHOLDS_MM = np.arange(0.0, 51.0, 1.0)
ADDS_SAMPLES = 1000
ADDS_SEED = 1234
# absorbs alignment round-off so an exact match counts at the 0 mm threshold
AUC_TOL_MM = 1e-9


def _check_pair(pred, gt):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape or pred.ndim != 2 or pred.shape[1] != 3:
        raise ShapeMismatch(f"expected matching (N, 3) arrays, got {pred.shape} and {gt.shape}")
    return pred, gt


def mean_dist_mm(a, b) -> float:
    return float(np.linalg.norm(a - b, axis=1).mean() * 1000.0)


def procrustes(pred, gt) -> np.ndarray:
    """``pred`` after the least-squares similarity onto ``gt``."""
    s, R, t = umeyama_align(pred, gt)
    return apply_similarity(s, R, t, pred)


def scale_translation_align(pred, gt) -> np.ndarray:
    """``pred`` after the least-squares scale and translation (no rotation) onto ``gt``.

    The scale is kept non-negative: a negative scale is a point reflection,
    which the rotation-aligned variant cannot express either.
    """
    mp, mg = pred.mean(0), gt.mean(0)
    pc, gc = pred - mp, gt - mg
    denom = float((pc * pc).sum())
    s = max(float((pc * gc).sum()) / denom, 0.0) if denom > 0 else 1.0
    return s * pc + mg


def hand_joint_metrics(pred_joints, gt_joints) -> tuple[float, float, float]:
    """(MJE, PA-MJE, STMJE) in millimetres."""
    pred, gt = _check_pair(pred_joints, gt_joints)
    return (
        mean_dist_mm(pred, gt),
        mean_dist_mm(procrustes(pred, gt), gt),
        mean_dist_mm(scale_translation_align(pred, gt), gt),
    )


def auc(dists_mm, thresholds=AUC_THRESHOLDS_MM) -> float:
    """Normalized area under the fraction-within-threshold curve, in percent."""
    d = np.asarray(dists_mm, dtype=np.float64)
    pck = (d[None, :] <= thresholds[:, None] + AUC_TOL_MM).mean(1)
    return float(np.trapezoid(pck, thresholds) / (thresholds[-1] - thresholds[0]) * 100.0)


def f_score(pred, gt, tau_mm: float) -> float:
    """Harmonic mean of precision and recall at ``tau_mm`` using nearest neighbours, in percent."""
    d_pg = cKDTree(gt).query(pred)[0] * 1000.0
    d_gp = cKDTree(pred).query(gt)[0] * 1000.0
    precision = float((d_pg < tau_mm).mean())
    recall = float((d_gp < tau_mm).mean())
    if precision + recall == 0:
        return 0.0
    return 200.0 * precision * recall / (precision + recall)


def hand_mesh_metrics(pred_verts, gt_verts) -> dict:
    pred, gt = _check_pair(pred_verts, gt_verts)
    out = {}
    for prefix, p in (("", pred), ("pa_", procrustes(pred, gt))):
        d = np.linalg.norm(p - gt, axis=1) * 1000.0
        out[prefix + "v_pe"] = float(d.mean())
        out[prefix + "v_auc"] = auc(d)
        out[prefix + "f5"] = f_score(p, gt, 5.0)
        out[prefix + "f15"] = f_score(p, gt, 15.0)
    return out


_POINT_CACHE: dict[str, np.ndarray] = {}


def model_points(template) -> np.ndarray:
    """Fixed-seed surface samples of a catalog object, in its canonical frame."""
    key = json.dumps(template.to_dict(), sort_keys=True)
    if key not in _POINT_CACHE:
        _POINT_CACHE[key] = sample_surface_points(template.mesh, ADDS_SAMPLES, ADDS_SEED).points
    return _POINT_CACHE[key]


def object_pose_metrics(pred: RigidPose, gt: RigidPose, template, points: np.ndarray | None = None) -> dict:
    """OCE, MCE, OME, ADD-S and ADD (paired points), all in mm."""
    if template is None:
        raise UnknownObject("no catalog entry for this object")
    pts = model_points(template) if points is None else points
    corners = template.corners
    verts = template.mesh.vertices
    gt_pts, pred_pts = gt.apply(pts), pred.apply(pts)
    return {
        "oce": float(np.linalg.norm(pred.t - gt.t) * 1000.0),
        "mce": mean_dist_mm(pred.apply(corners), gt.apply(corners)),
        "ome": mean_dist_mm(pred.apply(verts), gt.apply(verts)),
        "add_s": float(cKDTree(pred_pts).query(gt_pts)[0].mean() * 1000.0),
        "add": mean_dist_mm(pred_pts, gt_pts),
    }


METRIC_KEYS = (
    "mje", "pa_mje", "stmje", "j_auc", "pa_j_auc", "v_pe", "pa_v_pe", "v_auc", "pa_v_auc",
    "f5", "f15", "pa_f5", "pa_f15", "oce", "mce", "ome", "add_s",
)


@dataclass
class MetricsReport:
    mje: float = 0.0
    pa_mje: float = 0.0
    stmje: float = 0.0
    j_auc: float = 0.0
    pa_j_auc: float = 0.0
    v_pe: float = 0.0
    pa_v_pe: float = 0.0
    v_auc: float = 0.0
    pa_v_auc: float = 0.0
    f5: float = 0.0
    f15: float = 0.0
    pa_f5: float = 0.0
    pa_f15: float = 0.0
    oce: float = 0.0
    mce: float = 0.0
    ome: float = 0.0
    add_s: float = 0.0
    n_scenes: int = 0
    groups: dict = field(default_factory=dict)

    @classmethod
    def from_rows(cls, rows: list[dict]) -> "MetricsReport":
        report = cls(n_scenes=len(rows))
        for k in METRIC_KEYS:
            # math.fsum in index order: exact and order-fixed
            setattr(report, k, math.fsum(r[k] for r in rows) / len(rows) if rows else 0.0)
        return report

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self) if f.name != "groups"}
        if self.groups:
            d["groups"] = {str(k): v.to_dict() for k, v in sorted(self.groups.items())}
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        d = dict(d)
        groups = {k: cls.from_dict(v) for k, v in d.pop("groups", {}).items()}
        return cls(**d, groups=groups)

    def to_table(self) -> str:
        cols = ("MJE", "PAMJE", "OCE", "MCE", "ADD-S")
        vals = (self.mje, self.pa_mje, self.oce, self.mce, self.add_s)
        rows = [("all", self.n_scenes, vals)]
        for k, g in sorted(self.groups.items(), key=lambda kv: str(kv[0])):
            rows.append((str(k), g.n_scenes, (g.mje, g.pa_mje, g.oce, g.mce, g.add_s)))
        lines = [f"{'group':<10}{'n':>6}" + "".join(f"{c:>9}" for c in cols)]
        for name, n, v in rows:
            lines.append(f"{name:<10}{n:>6}" + "".join(f"{x:>9.2f}" for x in v))
        return "\n".join(lines)


def scene_metrics(pred, scene, catalog) -> dict:
    """All per-scene metrics for one PoseEstimate against one Scene."""
    joints, mesh = hand_forward(pred.theta, pred.alpha, pred.hand_root_t)
    mje, pa_mje, stmje = hand_joint_metrics(joints, scene.hand_joints_gt)
    gt_d = np.linalg.norm(joints - scene.hand_joints_gt, axis=1) * 1000.0
    pa_d = np.linalg.norm(procrustes(joints, scene.hand_joints_gt) - scene.hand_joints_gt, axis=1) * 1000.0
    row = {"mje": mje, "pa_mje": pa_mje, "stmje": stmje, "j_auc": auc(gt_d), "pa_j_auc": auc(pa_d)}
    row.update(hand_mesh_metrics(mesh.vertices, scene.hand_mesh.vertices))
    template = catalog[scene.object_id]
    obj = object_pose_metrics(RigidPose(pred.object_r, pred.object_t), scene.object_pose, template)
    row.update({k: obj[k] for k in ("oce", "mce", "ome", "add_s")})
    return row


def read_predictions(path_or_lines) -> list:
    from .posereg import PoseEstimate

    if isinstance(path_or_lines, (str, Path)):
        lines = Path(path_or_lines).read_text().splitlines()
    else:
        lines = list(path_or_lines)
    return [p if isinstance(p, PoseEstimate) else PoseEstimate.from_json(p) for p in lines if not isinstance(p, str) or p.strip()]


def evaluate_dataset(predictions, dataset, catalog=None, group_by: str | None = None) -> MetricsReport:
    """Score one prediction per scene; per-scene metrics are averaged arithmetically."""
    preds = read_predictions(predictions)
    by_id: dict[str, object] = {}
    for p in preds:
        if p.scene_id in by_id:
            raise DuplicatePrediction(p.scene_id)
        by_id[p.scene_id] = p
    catalog = catalog or dataset.catalog
    rows, keys = [], []
    for i in range(len(dataset)):
        sid = dataset.scene_id(i)
        if sid not in by_id:
            raise MissingPrediction(sid)
        scene = dataset[i]
        rows.append(scene_metrics(by_id[sid], scene, catalog))
        keys.append(scene.object_id)
    report = MetricsReport.from_rows(rows)
    if group_by == "object_id":
        grouped = defaultdict(list)
        for k, r in zip(keys, rows):
            grouped[k].append(r)
        report.groups = {k: MetricsReport.from_rows(v) for k, v in sorted(grouped.items())}
    elif group_by is not None:
        raise ValueError(f"unsupported group_by {group_by!r}")
    return report
