"""Target-focused patch masking.

A fixed share of the masked patches is drawn from the grid cells covering the
object bounding box; the rest are drawn from every cell not yet masked,
anywhere in the image.
"""
from __future__ import annotations

import enum
import json
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import instrument
from .errors import BoxOutOfImage, InsufficientObjectPatches, ShapeMismatch

log = logging.getLogger(__name__)


class MaskFillType(str, enum.Enum):
    gaussian_noise = "gaussian_noise"
    zeros = "zeros"
    mean = "mean"


@dataclass
class PatchMask:
    M: np.ndarray
    P: int
    rho: int
    mu: float
    seed: int
    object_cells: list[tuple[int, int]] = field(default_factory=list)
    background_cells: list[tuple[int, int]] = field(default_factory=list)
    clamped: bool = False

    def cells(self) -> list[tuple[int, int]]:
        rows, cols = np.nonzero(self.M)
        return [(int(r), int(c)) for r, c in zip(rows, cols)]

    def pixel_mask(self) -> np.ndarray:
        return np.kron(self.M, np.ones((self.P, self.P), dtype=self.M.dtype)).astype(bool)

    def to_json(self) -> str:
        return json.dumps({"P": self.P, "rho": self.rho, "mu": self.mu, "seed": self.seed, "cells": self.cells()})


def object_patch_range(B, P: int, image_shape: tuple[int, int] | None = None):
    """Grid range covering bbox ``B = (x_min, y_min, x_max, y_max)``.

    Returns ``(x0, y0, x1, y1, n_o)`` with inclusive cell bounds.
    """
    x_min, y_min, x_max, y_max = (int(b) for b in B)
    if x_min < 0 or y_min < 0 or x_max < x_min or y_max < y_min:
        raise BoxOutOfImage(f"invalid box {tuple(B)}")
    if image_shape is not None:
        H, W = image_shape
        if x_max >= W or y_max >= H:
            raise BoxOutOfImage(f"box {tuple(B)} exceeds image {W}x{H}")
    x0, y0, x1, y1 = x_min // P, y_min // P, x_max // P, y_max // P
    return x0, y0, x1, y1, (x1 - x0 + 1) * (y1 - y0 + 1)


def build_mask(B, P: int, rho: int, mu: float, seed: int, image_shape=(224, 224)) -> PatchMask:
    H, W = image_shape
    if H % P or W % P:
        raise ShapeMismatch(f"image {W}x{H} not divisible by patch size {P}")
    gh, gw = H // P, W // P
    if not 0 <= rho <= gh * gw:
        raise ValueError(f"rho={rho} outside [0, {gh * gw}]")
    if not 0.0 <= mu <= 1.0:
        raise ValueError(f"mu={mu} outside [0, 1]")
    x0, y0, x1, y1, n_o = object_patch_range(B, P, image_shape)
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0]))

    n_obj = int(round(mu * rho))
    clamped = n_obj > n_o
    if clamped:
        warnings.warn(f"object region has {n_o} patches, fewer than {n_obj} requested", InsufficientObjectPatches)
        log.debug("clamping in-object masks %d -> %d", n_obj, n_o)
        n_obj = n_o

    M = np.zeros((gh, gw), dtype=np.uint8)
    region = np.array([(r, c) for r in range(y0, y1 + 1) for c in range(x0, x1 + 1)], dtype=np.int64).reshape(-1, 2)
    pick = rng.choice(len(region), size=n_obj, replace=False)
    obj_cells = [tuple(int(v) for v in region[i]) for i in pick]
    for r, c in obj_cells:
        M[r, c] = 1

    free = np.flatnonzero(M.reshape(-1) == 0)
    bg = rng.choice(free, size=rho - n_obj, replace=False)
    bg_cells = [(int(i // gw), int(i % gw)) for i in bg]
    for r, c in bg_cells:
        M[r, c] = 1
    return PatchMask(M, P, rho, mu, seed, obj_cells, bg_cells, clamped)


def apply_mask(image: np.ndarray, mask: PatchMask, fill: MaskFillType | str = MaskFillType.gaussian_noise, seed: int = 0) -> np.ndarray:
    """Replace every pixel of the masked patches according to ``fill``.

    ``image`` is H x W x 3 (standardized during training). Gaussian fill draws
    i.i.d. N(0, 1) values per pixel and channel; nothing is clamped here.
    """
    instrument.count("apply_mask")
    fill = MaskFillType(fill)
    H, W = image.shape[:2]
    if image.ndim != 3 or (H, W) != (mask.M.shape[0] * mask.P, mask.M.shape[1] * mask.P):
        raise ShapeMismatch(f"image shape {image.shape} does not match mask grid {mask.M.shape} x {mask.P}")
    out = image.copy()
    pm = mask.pixel_mask()
    if not pm.any():
        return out
    if fill is MaskFillType.gaussian_noise:
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), 1]))
        noise = rng.standard_normal((int(pm.sum()), image.shape[2]))
        out[pm] = noise.astype(image.dtype)
    elif fill is MaskFillType.zeros:
        out[pm] = 0
    else:
        out[pm] = image.reshape(-1, image.shape[2]).mean(0).astype(image.dtype)
    return out


def sample_seed(global_seed: int, epoch: int, index: int) -> int:
    """Per-sample seed that depends only on (seed, epoch, scene index)."""
    return int(np.random.SeedSequence([int(global_seed), int(epoch), int(index), 0x3A5C]).generate_state(1)[0])
