"""Overlapping patch grids, 180-degree rotation augmentation and weighted soft voting.

Weights come from a separable quadratic B-spline centred on the patch::

    B(t) = 3/4 - t^2                 |t| <= 1/2
         = (|t| - 3/2)^2 / 2         1/2 < |t| < 3/2
         = 0                         otherwise

Voxel ``i`` of an ``n``-voxel axis sits at ``t = 1.5 * (i - (n - 1) / 2) / (n / 2)``,
so the profile would reach zero exactly on the patch faces. Each axis
profile is divided by its maximum (centre voxels weigh 1) and floored at
``WEIGHT_FLOOR``; the 3D weight is the product of the three profiles.
"""
from __future__ import annotations

from dataclasses import dataclass
from itertools import product
from typing import Iterable, Sequence

import numpy as np

WEIGHT_FLOOR = 1e-3
TRANSFORMS = ("identity", "rot180-x", "rot180-y", "rot180-z")
# rotation axis (spatial index, last three array axes) for each transform
_ROTATION_AXIS = {"rot180-x": 2, "rot180-y": 1, "rot180-z": 0}


class PatchError(ValueError):
    pass


class FusionError(RuntimeError):
    pass


def _triple(v) -> tuple[int, int, int]:
    return (int(v),) * 3 if np.isscalar(v) else tuple(int(e) for e in v)


def axis_origins(length: int, patch: int, stride: int) -> list[int]:
    if patch > length:
        raise PatchError(f"patch extent {patch} exceeds volume extent {length}; zero-pad the volume first")
    origins = list(range(0, length - patch + 1, stride))
    if origins[-1] != length - patch:
        origins.append(length - patch)
    return origins


@dataclass
class PatchGrid:
    dims: tuple[int, int, int]
    patch: tuple[int, int, int]
    stride: tuple[int, int, int]
    axis_origins: tuple[list[int], list[int], list[int]]

    @property
    def origins(self) -> list[tuple[int, int, int]]:
        return list(product(*self.axis_origins))

    def coverage(self) -> np.ndarray:
        """Number of patches covering each voxel."""
        cov = np.zeros(self.dims, dtype=np.int32)
        for o in self.origins:
            cov[tuple(slice(a, a + p) for a, p in zip(o, self.patch))] += 1
        return cov

    def is_regular(self) -> bool:
        """True when every axis is tiled at exactly the nominal stride."""
        return all((d - p) % s == 0 for d, p, s in zip(self.dims, self.patch, self.stride))


def plan_patch_grid(dims: Sequence[int], patch, overlap: float = 0.5) -> PatchGrid:
    """Origins at multiples of the stride, last origin clamped to touch the border."""
    dims = _triple(dims) if np.isscalar(dims) else tuple(int(d) for d in dims)
    patch = _triple(patch)
    if not 0 <= overlap < 1:
        raise PatchError(f"overlap must lie in [0, 1), got {overlap}")
    stride = tuple(max(1, int(round(p * (1 - overlap)))) for p in patch)
    per_axis = tuple(axis_origins(d, p, s) for d, p, s in zip(dims, patch, stride))
    return PatchGrid(dims, patch, stride, per_axis)


def regular_extent(length: int, patch: int, stride: int) -> int:
    """Smallest extent >= ``length`` that the grid tiles without clamping."""
    if length <= patch:
        return patch
    steps = -(-(length - patch) // stride)
    return patch + steps * stride


def bspline2(t: np.ndarray) -> np.ndarray:
    a = np.abs(t)
    return np.where(a <= 0.5, 0.75 - a * a, np.where(a < 1.5, 0.5 * (a - 1.5) ** 2, 0.0))


def spline_profile(n: int) -> np.ndarray:
    if n < 2:
        raise PatchError(f"spline weights need an extent of at least 2, got {n}")
    i = np.arange(n, dtype=np.float64)
    t = 1.5 * (i - (n - 1) / 2.0) / (n / 2.0)
    w = bspline2(t)
    w = w / w.max()
    return np.maximum(w, WEIGHT_FLOOR)


def spline_weights(patch) -> np.ndarray:
    pd, ph, pw = _triple(patch)
    wd, wh, ww = spline_profile(pd), spline_profile(ph), spline_profile(pw)
    return wd[:, None, None] * wh[None, :, None] * ww[None, None, :]


def rotate180(arr: np.ndarray, axis: int) -> np.ndarray:
    """Rotate by 180 degrees about spatial ``axis`` (0, 1 or 2 of the last three axes)."""
    if axis not in (0, 1, 2):
        raise PatchError(f"rotation axis must be 0, 1 or 2, got {axis}")
    if arr.ndim < 3:
        raise PatchError("rotate180 needs at least three (spatial) axes")
    spatial = [arr.ndim - 3 + a for a in range(3) if a != axis]
    return np.flip(arr, axis=spatial)


def apply_transform(arr: np.ndarray, transform: str) -> np.ndarray:
    if transform == "identity":
        return arr
    if transform not in _ROTATION_AXIS:
        raise PatchError(f"unknown transform {transform!r}")
    return rotate180(arr, _ROTATION_AXIS[transform])


# every transform is its own inverse
invert_transform = apply_transform


class FusionAccumulator:
    """Weighted running sums of per-class probabilities over a volume."""

    def __init__(self, n_classes: int, dims: Sequence[int], weights: np.ndarray):
        self.dims = tuple(dims)
        self.weights = np.asarray(weights, dtype=np.float64)
        self.prob_sum = np.zeros((n_classes,) + self.dims, dtype=np.float64)
        self.weight_sum = np.zeros(self.dims, dtype=np.float64)
        self.count = np.zeros(self.dims, dtype=np.int32)

    def add(self, origin: Sequence[int], probs: np.ndarray, transform: str = "identity") -> None:
        probs = invert_transform(np.asarray(probs), transform)
        if probs.shape[1:] != self.weights.shape or probs.shape[0] != self.prob_sum.shape[0]:
            raise FusionError(f"prediction shape {probs.shape} does not match "
                              f"({self.prob_sum.shape[0]},) + {self.weights.shape}")
        region = tuple(slice(o, o + p) for o, p in zip(origin, self.weights.shape))
        self.prob_sum[(slice(None),) + region] += self.weights * probs
        self.weight_sum[region] += self.weights
        self.count[region] += 1

    def merge(self, other: "FusionAccumulator") -> None:
        self.prob_sum += other.prob_sum
        self.weight_sum += other.weight_sum
        self.count += other.count

    def finalize(self) -> np.ndarray:
        if np.any(self.weight_sum <= 0):
            raise FusionError("some voxels received no prediction; grid does not cover the volume")
        fused = self.prob_sum / self.weight_sum
        return np.clip(fused, 0.0, 1.0)


def fuse(predictions: Iterable[tuple[Sequence[int], str, np.ndarray]], grid: PatchGrid,
         weights: np.ndarray | None = None, n_classes: int | None = None) -> np.ndarray:
    """Fuse (origin, transform, probs) predictions into a (C, D, H, W) volume.

    ``fused(v) = sum_i w_i(v) p_i(v) / sum_i w_i(v)`` over the predictions covering ``v``.
    """
    weights = spline_weights(grid.patch) if weights is None else weights
    acc = None
    for origin, transform, probs in predictions:
        if acc is None:
            acc = FusionAccumulator(n_classes or probs.shape[0], grid.dims, weights)
        acc.add(origin, probs, transform)
    if acc is None:
        raise FusionError("no predictions to fuse")
    return acc.finalize()
