"""Intensity normalization, learning-rate schedule and cross-validation splits."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np


class PreprocessError(ValueError):
    pass


def normalize_intensity(volume: np.ndarray) -> np.ndarray:
    """Scale each channel so its nonzero voxels average to 1; zeros stay zero.

    ``volume`` is (C, D, H, W) or a single (D, H, W) channel.
    """
    vol = np.asarray(volume)
    single = vol.ndim == 3
    chans = vol[None] if single else vol
    out = np.empty(chans.shape, dtype=np.float32)
    for c in range(chans.shape[0]):
        ch = chans[c].astype(np.float64)
        nz = ch != 0
        if not nz.any():
            raise PreprocessError(f"channel {c} is all zero; cannot normalize")
        out[c] = ch / ch[nz].mean()
    return out[0] if single else out


@dataclass(frozen=True)
class StepDecay:
    base: float = 5e-4
    factor: float = 0.9
    interval: int = 500

    def __post_init__(self):
        if not (self.base > 0 and 0 < self.factor <= 1 and self.interval > 0):
            raise PreprocessError(f"invalid schedule {self}")


def lr_schedule(step: int, schedule: StepDecay | None = None) -> float:
    """``base * factor ** floor(step / interval)``."""
    if step < 0:
        raise PreprocessError(f"step must be non-negative, got {step}")
    s = schedule or StepDecay()
    return s.base * s.factor ** (step // s.interval)


@dataclass(frozen=True)
class FoldSplit:
    fold: int
    train: tuple[str, ...]
    validation: tuple[str, ...]


def kfold_split(ids: Sequence[str], k: int = 5, seed: int = 0) -> list[FoldSplit]:
    """Seeded shuffle, then contiguous folds whose sizes differ by at most one."""
    ids = list(ids)
    if len(set(ids)) != len(ids):
        raise PreprocessError("subject ids must be unique")
    if k < 2:
        raise PreprocessError(f"need at least 2 folds, got {k}")
    if len(ids) < k:
        raise PreprocessError(f"{len(ids)} subjects cannot fill {k} folds")
    order = np.random.Generator(np.random.PCG64(seed)).permutation(len(ids))
    shuffled = [ids[i] for i in order]
    bounds = np.linspace(0, len(ids), k + 1).round().astype(int)
    folds = [tuple(shuffled[a:b]) for a, b in zip(bounds[:-1], bounds[1:])]
    return [FoldSplit(i, tuple(s for j, f in enumerate(folds) if j != i for s in f), folds[i])
            for i in range(k)]
