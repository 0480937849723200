"""Turning scenes into training/eval tensors: SDF sample pools, masks, batches."""
from __future__ import annotations

import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
import torch

from .errors import ConfigRange, HomaeError
from .fieldreg import sdf_training_samples
from .masking import apply_mask, build_mask, sample_seed
from .scenegen import Scene


@dataclass
class SceneSample:
    scene_id: str
    index: int
    image: np.ndarray  # H x W x 3 in [0, 1]
    K: np.ndarray
    bbox: tuple
    object_id: int
    theta: np.ndarray
    alpha: np.ndarray
    root_t: np.ndarray
    object_r: np.ndarray
    object_t: np.ndarray
    hand_surface: np.ndarray
    hand_shifted: np.ndarray
    hand_labels: np.ndarray
    object_surface: np.ndarray
    object_shifted: np.ndarray
    object_labels: np.ndarray


def pool_seed(seed: int, index: int, which: int) -> int:
    return int(np.random.SeedSequence([int(seed), int(index), int(which), 0x9001]).generate_state(1)[0])


def prepare_sample(scene: Scene, scene_id: str, index: int, seed: int, pool: int, perturb: float, volume=None) -> SceneSample:
    try:
        hs, hp, hl = sdf_training_samples(scene.hand_mesh, pool, pool_seed(seed, index, 0), perturb, volume)
        os_, op, ol = sdf_training_samples(scene.object_mesh, pool, pool_seed(seed, index, 1), perturb, volume)
    except HomaeError as exc:
        raise type(exc)(f"{scene_id}: {exc}") from exc
    return SceneSample(
        scene_id=scene_id,
        index=index,
        image=np.asarray(scene.image, dtype=np.float32),
        K=scene.K.matrix(),
        bbox=tuple(scene.bbox),
        object_id=int(scene.object_id),
        theta=np.asarray(scene.theta),
        alpha=np.asarray(scene.alpha),
        root_t=np.asarray(scene.root_t),
        object_r=scene.object_pose.r.copy(),
        object_t=scene.object_pose.t.copy(),
        hand_surface=hs,
        hand_shifted=hp,
        hand_labels=hl,
        object_surface=os_,
        object_shifted=op,
        object_labels=ol,
    )


def _prepare(args):
    return prepare_sample(*args)


def num_workers() -> int:
    try:
        return max(0, int(os.environ.get("HOMAE_NUM_WORKERS", "0")))
    except ValueError:
        raise ConfigRange("HOMAE_NUM_WORKERS must be an integer") from None


def prepare_samples(scenes, scene_ids, seed: int, pool: int, perturb: float, image_size: int | None = None, volume=None) -> list[SceneSample]:
    """Per-scene pools depend only on (seed, index), so worker count cannot change them."""
    jobs = []
    for i, (scene, sid) in enumerate(zip(scenes, scene_ids)):
        if image_size is not None and scene.image.shape[:2] != (image_size, image_size):
            raise ConfigRange(f"{sid}: image is {scene.image.shape[:2]}, config expects {image_size}x{image_size}")
        jobs.append((scene, sid, i, seed, pool, perturb, volume))
    workers = num_workers()
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(workers) as ex:
            return list(ex.map(_prepare, jobs, chunksize=8))
    return [_prepare(j) for j in jobs]


def image_stats(samples: list[SceneSample]) -> tuple[np.ndarray, np.ndarray]:
    """Per-channel mean and std over all pixels of all samples."""
    px = np.concatenate([s.image.reshape(-1, 3).astype(np.float64) for s in samples])
    return px.mean(0), np.maximum(px.std(0), 1e-6)


def standardize(image: np.ndarray, mean, std) -> np.ndarray:
    return ((image - mean) / std).astype(np.float32)


def _pick(rng, n_pool: int, k: int) -> np.ndarray:
    return np.sort(rng.choice(n_pool, size=k, replace=False))


def make_batch(samples, indices, epoch: int, cfg, mean, std, train: bool = True) -> dict:
    """Assemble a batch. In training mode images are masked and SDF points are
    re-drawn from the pools with seeds fixed by (seed, epoch, scene index)."""
    imgs, targets, hand_pts, obj_pts, hand_q, hand_l, obj_q, obj_l, masks = ([] for _ in range(9))
    for i in indices:
        s = samples[i]
        std_img = standardize(s.image, mean, std)
        targets.append(std_img)
        if train:
            ms = sample_seed(cfg.seed, epoch, s.index)
            try:
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore")
                    mask = build_mask(s.bbox, cfg.patch, cfg.rho, cfg.mu, ms, image_shape=s.image.shape[:2])
            except HomaeError as exc:
                raise type(exc)(f"{s.scene_id}: {exc}") from exc
            masks.append(mask)
            imgs.append(apply_mask(std_img, mask, cfg.mask_fill, ms))
            rng = np.random.default_rng(np.random.SeedSequence([int(cfg.seed), int(epoch), int(s.index), 3]))
            hi = _pick(rng, len(s.hand_surface), cfg.hand_budget)
            oi = _pick(rng, len(s.object_surface), cfg.object_budget)
            hq = _pick(rng, len(s.hand_shifted), cfg.hand_budget)
            oq = _pick(rng, len(s.object_shifted), cfg.object_budget)
        else:
            imgs.append(std_img)
            hi = hq = np.arange(cfg.hand_budget)
            oi = oq = np.arange(cfg.object_budget)
        hand_pts.append(s.hand_surface[hi])
        obj_pts.append(s.object_surface[oi])
        hand_q.append(s.hand_shifted[hq])
        hand_l.append(s.hand_labels[hq])
        obj_q.append(s.object_shifted[oq])
        obj_l.append(s.object_labels[oq])

    def t(xs, perm=None):
        a = np.stack(xs)
        if perm:
            a = a.transpose(perm)
        return torch.from_numpy(np.ascontiguousarray(a, dtype=np.float32))

    chosen = [samples[i] for i in indices]
    return {
        "scene_ids": [s.scene_id for s in chosen],
        "images": t(imgs, (0, 3, 1, 2)),
        "targets": t(targets, (0, 3, 1, 2)),
        "K": t([s.K for s in chosen]),
        "hand_pts": t(hand_pts),
        "obj_pts": t(obj_pts),
        "hand_query": t(hand_q),
        "hand_labels": t(hand_l),
        "obj_query": t(obj_q),
        "obj_labels": t(obj_l),
        "gt": {
            "theta": t([s.theta for s in chosen]),
            "alpha": t([s.alpha for s in chosen]),
            "hand_root_t": t([s.root_t for s in chosen]),
            "object_r": t([s.object_r for s in chosen]),
            "object_t": t([s.object_t for s in chosen]),
        },
        "masks": masks,
    }
