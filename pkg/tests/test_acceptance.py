"""Acceptance suite: one recorded PASS/FAIL line per criterion.

Tolerances and budgets are pinned here; the overfit thresholds were frozen
after a single pilot run of the same configuration.
"""
import time
import warnings

import numpy as np
import pytest
import torch
from _acceptance_log import record
from _fd import fd_probe, probe_weights

from homae.aggregation import Aggregator, PointEncoder
from homae.autoencoder import Decoder, Encoder, psnr
from homae.config import RunConfig
from homae.data import make_batch
from homae.evaluate import GroundTruthEcho, ModelPredictor, run_eval
from homae.fieldreg import SDFHead, fourier_encode
from homae.geometry import (
    CameraIntrinsics,
    RigidPose,
    apply_similarity,
    axis_angle_to_matrix,
    backproject,
    box_mesh,
    icosphere,
    mesh_sdf_bruteforce,
    project,
    umeyama_align,
)
from homae.hand import hand_forward_torch
from homae.masking import apply_mask, build_mask, object_patch_range
from homae.metrics import (
    evaluate_dataset,
    f_score,
    hand_joint_metrics,
    object_pose_metrics,
    procrustes,
    scale_translation_align,
)
from homae.posereg import HandHead, ObjectHead
from homae.scenegen import ObjectCatalog, ObjectTemplate, SceneConfig, SceneList, generate_scene, scene_seed
from homae.train import load_scenes, run_training

# ---- pinned constants -----------------------------------------------------

MASK_DRAWS = 10_000
GAUSS_POOL_DRAWS = 500
GRAD_PROBES = 100
GRAD_TOL = 1e-3
NEST_TOL = 1e-9
METRIC_INSTANCES = 1000
ADDS_SPHERE_TOL_MM = 1.0

OVERFIT = dict(train_count=8, max_steps=2000, lr=1e-3, lr_decay_epochs=400, checkpoint_every=500)
OVERFIT_DROP = 0.90
OVERFIT_MJE_MM = 15.0
OVERFIT_ADDS_MM = 10.0
OVERFIT_PSNR_DB = 25.0
MODE_GAP = 0.20
FINE_GRID = 48
PSNR_MASK_EPOCHS = (10**6, 10**6 + 1)  # mask draws never used in training

ABLATION_TRAIN = 64
ABLATION_VAL = 500
ABLATION_STEPS = 400
ABLATION_BASE = dict(lr=5e-4, lr_decay_epochs=25)

DETERMINISM_STEP = 100


def timed(fn):
    t = time.perf_counter()
    out = fn()
    return out, time.perf_counter() - t


# ---- 1. published numbers -------------------------------------------------


def test_published_numbers_not_reproduced():
    record(
        "published benchmark numbers",
        None,
        "DexYCB / HO3Dv2 results (e.g. MJE 10.6 mm, ADD-S 11.8 mm; HO3Dv2 MJE 21.8 mm) need licensed datasets, "
        "MANO, pretrained DINOv2 weights and GPU-scale training; not reproduced at desk scale. "
        "Acceptance rests on the property suites below.",
    )


# ---- 2. masking -----------------------------------------------------------


def test_masking_suite():
    P, rho, mu, H = 28, 12, 0.5, 224
    rng = np.random.default_rng(2024)

    def run():
        failures = []
        pooled = []
        for k in range(MASK_DRAWS):
            x0, x1 = np.sort(rng.integers(0, H, 2))
            y0, y1 = np.sort(rng.integers(0, H, 2))
            box, seed = (int(x0), int(y0), int(x1), int(y1)), int(rng.integers(2**31))
            _, _, _, _, n_o = object_patch_range(box, P, (H, H))
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                m = build_mask(box, P, rho, mu, seed)
                again = build_mask(box, P, rho, mu, seed)
            cells = [tuple(c) for c in m.object_cells + m.background_cells]
            ok = (
                m.M.sum() == rho
                and len(m.object_cells) == min(6, n_o)
                and len(set(cells)) == rho
                and np.array_equal(m.M, again.M)
            )
            if not ok:
                failures.append((box, seed))
            if k < GAUSS_POOL_DRAWS:
                pooled.append(apply_mask(np.zeros((H, H, 3)), m, "gaussian_noise", seed)[m.pixel_mask()])
        return failures, np.concatenate(pooled)

    (failures, vals), secs = timed(run)
    mean, std = float(vals.mean()), float(vals.std())
    ok = not failures and abs(mean) <= 0.05 and 0.9 <= std <= 1.1 and secs < 60
    record(
        "masking suite",
        ok,
        f"{MASK_DRAWS} draws, {len(failures)} count/distinct/determinism failures; "
        f"gaussian fill mean {mean:+.4f} std {std:.4f} over {vals.size} values; {secs:.1f} s",
    )
    assert ok


# ---- 3. geometry oracles --------------------------------------------------


def _box_sdf(q, h):
    d = np.abs(q) - h
    return np.linalg.norm(np.maximum(d, 0), axis=1) + np.minimum(d.max(1), 0)


def test_geometry_oracle_suite():
    def run():
        out = {}
        g = np.linspace(-0.2, 0.2, 10)
        q = np.stack(np.meshgrid(g, g, g, indexing="ij"), -1).reshape(-1, 3)
        R = 0.1
        out["sphere"] = np.abs(mesh_sdf_bruteforce(icosphere(R, 3), q) - (np.linalg.norm(q, axis=1) - R)).max() / (2 * R)
        h = np.array([0.04, 0.03, 0.02])
        qb = np.stack(np.meshgrid(*[np.linspace(-2 * e, 2 * e, 10) for e in h], indexing="ij"), -1).reshape(-1, 3)
        out["box"] = np.abs(mesh_sdf_bruteforce(box_mesh(h), qb) - _box_sdf(qb, h)).max() / (2 * h.min())
        rng = np.random.default_rng(7)
        K = CameraIntrinsics(612.0, 608.0, 111.5, 113.0, 224, 224)
        uv = rng.uniform(-20, 240, (500, 2))
        z = rng.uniform(0.1, 2.0, 500)
        out["projection"] = np.abs(project(K, backproject(K, uv, z)) - uv).max()
        worst = 0.0
        for _ in range(100):
            X = rng.normal(size=(40, 3))
            R0 = axis_angle_to_matrix(rng.normal(size=3))
            s0, t0 = rng.uniform(0.2, 5.0), rng.normal(size=3)
            s, Rr, t = umeyama_align(X, apply_similarity(s0, R0, t0, X))
            worst = max(worst, abs(s - s0), np.abs(Rr - R0).max(), np.abs(t - t0).max())
        out["umeyama"] = worst
        return out

    out, secs = timed(run)
    ok = out["sphere"] < 0.02 and out["box"] < 0.02 and out["projection"] < 1e-8 and out["umeyama"] < 1e-8 and secs < 120
    record(
        "geometry oracles",
        ok,
        f"SDF max error / smallest dimension: sphere {out['sphere']:.4%}, box {out['box']:.4%} (10^3 grids); "
        f"projection round trip {out['projection']:.1e} px; Umeyama recovery {out['umeyama']:.1e}; {secs:.1f} s",
    )
    assert ok


# ---- 4. gradients ---------------------------------------------------------


def _grad_cases():
    torch.manual_seed(0)
    cases = {}

    enc = Encoder(patch=14, width=8, depth=1, heads=2)
    x = torch.rand(1, 3, 28, 28, requires_grad=True)
    w = probe_weights((1, 2, 2, 8))
    cases["encoder"] = (lambda: (enc(x) * w).sum(), [x] + list(enc.parameters()))

    dec = Decoder(width=8, stages=2, patch=14)
    F = torch.randn(1, 2, 2, 8, requires_grad=True)
    wd = probe_weights((1, 3, 28, 28))
    cases["decoder"] = (lambda: (dec(F).reconstruction * wd).sum(), [F] + list(dec.parameters()))

    head = SDFHead(5, hidden=8, layers=2)
    p = (torch.rand(6, 3) * 2 - 1).requires_grad_(True)
    feats = torch.randn(6, 5, requires_grad=True)
    ws = probe_weights((6,))
    cases["sdf head"] = (lambda: (head(fourier_encode(p), feats, p) * ws).sum(), [p, feats] + list(head.parameters()))

    enc3 = PointEncoder(8, hidden=(8, 16))
    agg = Aggregator(8)
    pts = torch.randn(4, 3, requires_grad=True)
    Fi = torch.randn(4, 8, requires_grad=True)
    sdf = torch.randn(4, requires_grad=True)
    wa = probe_weights((4, 8))
    cases["aggregation"] = (
        lambda: (agg(Fi, enc3(pts), sdf).F_agg * wa).sum(),
        [pts, Fi, sdf, agg.beta_raw] + list(agg.proj.parameters()) + list(enc3.parameters()),
    )
    cases["aggregation d/d beta"] = (lambda: (agg(Fi, enc3(pts), sdf).F_agg * wa).sum(), [agg.beta_raw])

    theta = (torch.rand(48) * 0.8 + 0.1).requires_grad_(True)
    alpha = (torch.randn(10) * 0.3).requires_grad_(True)
    root = torch.tensor([0.0, 0.0, 0.3], requires_grad=True)
    wj1, wj2 = probe_weights((21, 3), seed=3), probe_weights((21, 3), seed=4)
    # 61 inputs; two independent functionals give 122 probes
    cases["hand kinematics"] = (
        lambda: (hand_forward_torch(theta, alpha, root, clamp=False)[0] * wj1).sum(),
        [theta, alpha, root],
    )
    cases["hand kinematics (2nd functional)"] = (
        lambda: (hand_forward_torch(theta, alpha, root, clamp=False)[0] * wj2).sum(),
        [theta, alpha, root],
    )

    for name, cls in (("hand head", HandHead), ("object head", ObjectHead)):
        h = cls(8, heads=2)
        tok = torch.randn(6, 8, requires_grad=True)
        ws_ = [probe_weights(o.shape, seed=i) for i, o in enumerate(h(tok))]
        cases[name] = (
            (lambda h=h, tok=tok, ws_=ws_: sum((o * wi).sum() for o, wi in zip(h(tok), ws_))),
            [tok] + list(h.parameters()),
        )
    return cases


def test_gradient_suite(double_precision):
    def run():
        res = {}
        for name, (fn, tensors) in _grad_cases().items():
            n = GRAD_PROBES
            if name == "aggregation d/d beta":
                n = 1
            res[name] = fd_probe(fn, tensors, n_probes=n, seed=11)
        return res

    res, secs = timed(run)
    merged = {}
    for name, err in res.items():
        key = name.replace(" (2nd functional)", "")
        merged[key] = np.concatenate([merged.get(key, np.zeros(0)), err])
    ok = all(e.max() < GRAD_TOL for e in merged.values()) and secs < 300
    ok &= all(len(e) >= GRAD_PROBES for k, e in merged.items() if k != "aggregation d/d beta")
    parts = ", ".join(f"{k} {len(e)} probes max {e.max():.1e}" for k, e in merged.items())
    record("gradient suite", ok, f"{parts}; {secs:.1f} s")
    assert ok


# ---- 5. metrics -----------------------------------------------------------


def _rms(a, b):
    return float(np.sqrt(((a - b) ** 2).sum(1).mean()))


def test_metrics_suite(desk_scenes):
    rng = np.random.default_rng(99)
    catalog = ObjectCatalog.default()

    def run():
        out = {}
        bad_mean = bad_rms = 0
        info = {"gt+noise": 0, "independent": 0}
        for _ in range(METRIC_INSTANCES):
            gt = rng.normal(size=(21, 3)) * 0.05
            R = axis_angle_to_matrix(rng.normal(size=3))
            pred = rng.uniform(0.5, 1.5) * gt @ R.T + rng.normal(size=3) * 0.05 + rng.normal(size=(21, 3)) * 0.005
            mje, pa, st = hand_joint_metrics(pred, gt)
            bad_mean += not (pa <= st + NEST_TOL and st <= mje + NEST_TOL)
            for fam, p2 in (("gt+noise", gt + rng.normal(size=(21, 3)) * 0.01), ("independent", rng.normal(size=(21, 3)) * 0.05)):
                m2, pa2, st2 = hand_joint_metrics(p2, gt)
                info[fam] += not (pa2 <= st2 + NEST_TOL and st2 <= m2 + NEST_TOL)
                r = _rms(procrustes(p2, gt), gt), _rms(scale_translation_align(p2, gt), gt), _rms(p2, gt)
                bad_rms += not (r[0] <= r[1] + NEST_TOL and r[1] <= r[2] + NEST_TOL)
        out["nest_mean"], out["nest_rms"], out["nest_info"] = bad_mean, bad_rms, info

        worst_tr = 0.0
        adds_ok = True
        for oid in range(len(catalog)):
            for _ in range(20):
                gt = RigidPose(rng.normal(size=3), rng.normal(size=3) * 0.05 + [0, 0, 0.3])
                d = rng.normal(size=3) * 0.02
                m = object_pose_metrics(RigidPose(gt.r, gt.t + d), gt, catalog[oid])
                n = np.linalg.norm(d) * 1000
                worst_tr = max(worst_tr, abs(m["oce"] - n), abs(m["mce"] - n), abs(m["ome"] - n))
                adds_ok &= m["add_s"] <= n + 1e-9
        out["translation"], out["adds_le_d"] = worst_tr, adds_ok

        small = ObjectTemplate("sphere10", "sphere", {"radius": 0.01, "subdivisions": 4}, (1, 1, 1))
        gt = RigidPose(np.zeros(3), np.array([0.0, 0.0, 0.3]))
        worst_small = max(
            object_pose_metrics(RigidPose(rng.normal(size=3), gt.t.copy()), gt, small)["add_s"] for _ in range(20)
        )
        ball = next(t for t in catalog.templates if t.kind == "sphere")
        ball_val = max(object_pose_metrics(RigidPose(rng.normal(size=3), gt.t.copy()), gt, ball)["add_s"] for _ in range(20))
        out["sphere"], out["ball"] = worst_small, ball_val

        mono = True
        for _ in range(100):
            a, b = rng.normal(size=(80, 3)) * 0.02, rng.normal(size=(90, 3)) * 0.02
            s = [f_score(a, b, t) for t in np.arange(0, 40.5, 0.5)]
            mono &= all(x <= y for x, y in zip(s, s[1:]))
        out["f_mono"] = mono

        ds = SceneList(desk_scenes)
        from homae.evaluate import dataset_samples

        echo = GroundTruthEcho().predict(dataset_samples(ds, RunConfig.for_profile("desk")))
        r = evaluate_dataset(echo, ds)
        dist = max(abs(getattr(r, k)) for k in ("mje", "pa_mje", "stmje", "v_pe", "pa_v_pe", "oce", "mce", "ome", "add_s"))
        pct = min(getattr(r, k) for k in ("j_auc", "pa_j_auc", "v_auc", "pa_v_auc", "f5", "f15", "pa_f5", "pa_f15"))
        out["oracle"] = (dist, pct)
        return out

    out, secs = timed(run)
    ok = (
        out["nest_mean"] == 0
        and out["nest_rms"] == 0
        and out["translation"] < 1e-9
        and out["adds_le_d"]
        and out["sphere"] < ADDS_SPHERE_TOL_MM
        and out["f_mono"]
        and out["oracle"][0] < 1e-6
        and out["oracle"][1] > 100 - 1e-9
        and secs < 120
    )
    record(
        "metrics suite",
        ok,
        f"PA<=ST<=MJE violations {out['nest_mean']}/{METRIC_INSTANCES} (similarity-transformed GT + noise), "
        f"RMS-nesting violations {out['nest_rms']}/{2 * METRIC_INSTANCES} (all families); "
        f"translation identity max dev {out['translation']:.1e} mm, ADD-S <= |d| {out['adds_le_d']}; "
        f"rotated 10 mm sphere ADD-S max {out['sphere']:.3f} mm; F@tau monotone {out['f_mono']}; "
        f"oracle eval max distance {out['oracle'][0]:.1e} mm, min percent {out['oracle'][1]:.4f}; {secs:.1f} s",
    )
    info = out["nest_info"]
    record(
        "metrics suite (informational)",
        None,
        f"mean-distance ordering is not a theorem: violations on GT + small noise {info['gt+noise']}/{METRIC_INSTANCES}, "
        f"independent pairs {info['independent']}/{METRIC_INSTANCES}; catalog ball (35 mm) rotated ADD-S "
        f"{out['ball']:.2f} mm (1000-sample spacing floor)",
    )
    assert ok


# ---- 6. end-to-end overfit ------------------------------------------------


@pytest.fixture(scope="module")
def overfit(tmp_path_factory):
    cfg = RunConfig.for_profile("desk", out_dir=str(tmp_path_factory.mktemp("overfit")), **OVERFIT)
    scenes, ids = load_scenes(cfg)
    res, secs = timed(lambda: run_training(cfg, scenes, ids))
    return cfg, SceneList(scenes, ids), res, secs


def masked_psnr(model, cfg, samples):
    mean = model.img_mean.double().numpy()
    std = model.img_std.double().numpy()
    vals = []
    with torch.no_grad():
        for ep in PSNR_MASK_EPOCHS:
            b = make_batch(samples, list(range(len(samples))), ep, cfg, mean, std, train=True)
            _, rec = model.image_features(b["images"])
            img = model.unstandardize(rec).clamp(0, 1)
            gt = model.unstandardize(b["targets"])
            vals += [psnr(img[i], gt[i]) for i in range(len(img))]
    return float(np.mean(vals)), float(np.min(vals))


def test_end_to_end_overfit(overfit):
    cfg, ds, res, secs = overfit
    h = res.history
    drop = 1.0 - h[-1]["L_total"] / h[0]["L_total"]
    rec_ratio = h[-1]["L_rec"] / h[0]["L_rec"]
    (_, rep), eval_secs = timed(lambda: run_eval(ModelPredictor(res.model, cfg), ds, "gt", cfg=cfg))
    p_mean, p_min = masked_psnr(res.model, cfg, res.samples)
    ok = (
        len(h) <= 2000
        and drop >= OVERFIT_DROP
        and rec_ratio < 0.1
        and rep.mje < OVERFIT_MJE_MM
        and rep.add_s < OVERFIT_ADDS_MM
        and p_mean > OVERFIT_PSNR_DB
    )
    record(
        "end-to-end overfit",
        ok,
        f"{len(h)} steps in {secs / 60:.1f} min; L_total {h[0]['L_total']:.3f} -> {h[-1]['L_total']:.4f} "
        f"(drop {drop:.2%}, need >= {OVERFIT_DROP:.0%}); L_rec ratio {rec_ratio:.4f} (< 0.1); MJE {rep.mje:.2f} mm (< {OVERFIT_MJE_MM}), "
        f"ADD-S {rep.add_s:.2f} mm (< {OVERFIT_ADDS_MM}); masked-image reconstruction PSNR mean {p_mean:.2f} dB "
        f"(min {p_min:.2f}, need > {OVERFIT_PSNR_DB}); eval {eval_secs:.1f} s",
    )
    assert ok


def test_overfit_eval_mode_consistency(overfit):
    cfg, ds, res, _ = overfit
    _, gt_rep = run_eval(ModelPredictor(res.model, cfg), ds, "gt", cfg=cfg)
    (_, vox_rep), secs = timed(lambda: run_eval(ModelPredictor(res.model, cfg), ds, "voxel", cfg=cfg))
    gap = abs(vox_rep.mje - gt_rep.mje) / gt_rep.mje
    ok = gap < MODE_GAP
    record(
        "gt-points vs voxel-points MJE (overfit set)",
        ok,
        f"gt {gt_rep.mje:.2f} mm, voxel {vox_rep.mje:.2f} mm (G={cfg.grid_resolution}), relative gap {gap:.1%} "
        f"(need < {MODE_GAP:.0%}); ADD-S gt {gt_rep.add_s:.2f} / voxel {vox_rep.add_s:.2f} mm; {secs:.1f} s",
    )
    fine = cfg.replace(grid_resolution=FINE_GRID)
    _, fine_rep = run_eval(ModelPredictor(res.model, fine), ds, "voxel", cfg=fine)
    record(
        "voxel grid resolution (informational)",
        None,
        f"voxel MJE {fine_rep.mje:.2f} mm at G={FINE_GRID} "
        f"(relative gap {abs(fine_rep.mje - gt_rep.mje) / gt_rep.mje:.1%})",
    )
    assert ok


# ---- 7. ablation direction (informational) --------------------------------


def test_ablation_direction(tmp_path_factory):
    base = tmp_path_factory.mktemp("ablation")
    sc = SceneConfig(image_size=112)
    train_scenes = [generate_scene(sc, seed=scene_seed(1000, i)) for i in range(ABLATION_TRAIN)]
    train_ids = [f"train_{i:05d}" for i in range(ABLATION_TRAIN)]
    val = SceneList(
        [generate_scene(sc, seed=scene_seed(2000, i)) for i in range(ABLATION_VAL)],
        [f"val_{i:05d}" for i in range(ABLATION_VAL)],
    )
    variants = {
        "rho=12 gaussian": {},
        "rho=0": {"rho": 0},
        "zero fill": {"mask_fill": "zeros"},
        "mean fill": {"mask_fill": "mean"},
    }
    mje = {}
    t0 = time.perf_counter()
    for name, kw in variants.items():
        cfg = RunConfig.for_profile(
            "desk", out_dir=str(base / name.replace(" ", "_")), max_steps=ABLATION_STEPS, checkpoint_every=10**6, **ABLATION_BASE, **kw
        )
        res = run_training(cfg, train_scenes, train_ids)
        _, rep = run_eval(ModelPredictor(res.model, cfg), val, "gt", cfg=cfg)
        mje[name] = rep.mje
    secs = time.perf_counter() - t0
    ref = mje["rho=12 gaussian"]
    deltas = {k: v - ref for k, v in mje.items() if k != "rho=12 gaussian"}
    best = all(d >= 0 for d in deltas.values())
    record(
        "ablation direction (informational, non-blocking)",
        None,
        f"val MJE over {ABLATION_VAL} scenes after {ABLATION_STEPS} steps each on {ABLATION_TRAIN} training scenes: "
        f"gaussian {ref:.2f} mm; deltas (other - gaussian) "
        + ", ".join(f"{k} {d:+.2f} mm" for k, d in deltas.items())
        + f"; gaussian best: {best}; {secs / 60:.1f} min",
    )


# ---- 8. determinism -------------------------------------------------------


def test_determinism(tmp_path_factory, overfit):
    base = tmp_path_factory.mktemp("determinism")
    cfg0, ds, full, _ = overfit
    runs = []
    for k in range(2):
        cfg = cfg0.replace(out_dir=str(base / f"run{k}"), max_steps=DETERMINISM_STEP + 1, checkpoint_every=10**6)
        res = run_training(cfg, ds.scenes, ds.ids)
        _, rep = run_eval(ModelPredictor(res.model, cfg), ds, "gt", report_path=base / f"report{k}.json", cfg=cfg)
        runs.append((res.history[DETERMINISM_STEP]["L_total"], (base / f"report{k}.json").read_bytes()))
    same_loss = runs[0][0] == runs[1][0] == full.history[DETERMINISM_STEP]["L_total"]
    same_report = runs[0][1] == runs[1][1]
    ok = same_loss and same_report
    record(
        "determinism",
        ok,
        f"step-{DETERMINISM_STEP} L_total {runs[0][0]!r} vs {runs[1][0]!r} (overfit run {full.history[DETERMINISM_STEP]['L_total']!r}); "
        f"evaluation reports byte-identical: {same_report}",
    )
    assert ok
