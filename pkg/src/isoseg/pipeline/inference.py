"""Whole-volume prediction by augmented, spline-weighted patch fusion."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from ..densenet import Model
from ..engine import Tensor, no_grad
from ..fusion import TRANSFORMS, FusionAccumulator, apply_transform, plan_patch_grid, regular_extent, spline_weights
from ..labeling import decide_exclusive, decide_single_label

# model outputs for a (N, C, p, p, p) batch of input patches
PatchFn = Callable[[np.ndarray], np.ndarray]


class PredictError(ValueError):
    pass


@dataclass
class Prediction:
    probs: np.ndarray  # (C, D, H, W) fused probabilities, cropped to the input extent
    labels: np.ndarray  # (D, H, W) uint8
    contributions: np.ndarray  # (D, H, W) number of fused predictions per voxel


def model_patch_fn(model: Model) -> PatchFn:
    def run(batch: np.ndarray) -> np.ndarray:
        with no_grad():
            out = model.forward(Tensor(batch.astype(model.head.weight.dtype, copy=False)), training=False)
        return out.data
    return run


def padded_extent(dims, patch: int, stride: int) -> tuple[int, int, int]:
    return tuple(regular_extent(d, patch, stride) for d in dims)


def fuse_volume(patch_fn: PatchFn, image: np.ndarray, patch: int, n_out: int, overlap: float = 0.5,
                augment: bool = True, batch_size: int = 8) -> tuple[np.ndarray, np.ndarray]:
    """Fused (n_out, D, H, W) probabilities and per-voxel contribution counts.

    The image is zero-padded at the far end of each axis up to a size the
    grid tiles exactly, predicted, then cropped back.
    """
    if image.ndim != 4:
        raise PredictError(f"expected a (C, D, H, W) image, got shape {image.shape}")
    stride = max(1, int(round(patch * (1 - overlap))))
    dims = image.shape[1:]
    full = padded_extent(dims, patch, stride)
    padded = np.zeros((image.shape[0],) + full, dtype=np.float32)
    padded[(slice(None),) + tuple(slice(0, d) for d in dims)] = image
    grid = plan_patch_grid(full, patch, overlap)
    transforms = TRANSFORMS if augment else ("identity",)
    jobs = [(o, t) for o in grid.origins for t in transforms]
    acc = FusionAccumulator(n_out, full, spline_weights(patch))
    for start in range(0, len(jobs), batch_size):
        chunk = jobs[start:start + batch_size]
        batch = np.stack([
            apply_transform(padded[(slice(None),) + tuple(slice(a, a + patch) for a in o)], t)
            for o, t in chunk])
        out = np.asarray(patch_fn(np.ascontiguousarray(batch)))
        if out.shape != (len(chunk), n_out) + (patch,) * 3:
            raise PredictError(f"patch function returned {out.shape}")
        # accumulate in job order so the result does not depend on batching
        for (o, t), probs in zip(chunk, out):
            acc.add(o, probs, t)
    crop = tuple(slice(0, d) for d in dims)
    return acc.finalize()[(slice(None),) + crop], acc.count[crop]


def decide(probs: np.ndarray, mode: str, mask: np.ndarray | None, threshold: float = 0.5) -> np.ndarray:
    if mode == "exclusive":
        return decide_exclusive(probs[0], probs[1], mask, threshold)
    if mode == "single":
        return decide_single_label(probs / probs.sum(axis=0, keepdims=True))
    raise PredictError(f"unknown mode {mode!r}")


def brain_mask(image: np.ndarray) -> np.ndarray:
    """Nonzero voxels in any channel (skull-stripped inputs are zero outside the brain)."""
    return (image != 0).any(axis=0)


def predict(model: Model, image: np.ndarray, mask: np.ndarray | None = None, threshold: float = 0.5,
            overlap: float = 0.5, augment: bool = True, batch_size: int = 8) -> Prediction:
    cfg = model.config
    if image.ndim != 4 or image.shape[0] != cfg.in_channels:
        raise PredictError(f"model expects {cfg.in_channels} input channels, image has shape {image.shape}")
    mode = "exclusive" if cfg.head == "sigmoid" else "single"
    probs, count = fuse_volume(model_patch_fn(model), image, cfg.patch_size, cfg.out_channels, overlap,
                               augment, batch_size)
    if mask is None:
        mask = brain_mask(image)
    return Prediction(probs, decide(probs, mode, mask, threshold), count)
