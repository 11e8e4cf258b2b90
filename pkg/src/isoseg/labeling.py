"""Turning probability maps into label maps, and label bookkeeping.

Label codes: 0 background, 1 CSF, 2 GM, 3 WM.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .losses import ClassPrevalence

BACKGROUND, CSF, GM, WM = 0, 1, 2, 3
CLASS_NAMES = {BACKGROUND: "background", CSF: "csf", GM: "gm", WM: "wm"}
CLASS_CODES = {v: k for k, v in CLASS_NAMES.items()}
TISSUES = (CSF, GM, WM)


class DecisionError(ValueError):
    pass


@dataclass
class DecisionConfig:
    mode: str = "exclusive"
    threshold: float = 0.5
    codes: dict[str, int] = field(default_factory=lambda: dict(CLASS_CODES))

    def validate(self) -> None:
        if not 0 < self.threshold < 1:
            raise DecisionError(f"threshold must lie in (0, 1), got {self.threshold}")
        if self.mode not in ("exclusive", "single"):
            raise DecisionError(f"unknown decision mode {self.mode!r}")


def validate_labelmap(labels: np.ndarray, mask: np.ndarray | None = None) -> None:
    if labels.min(initial=0) < 0 or labels.max(initial=0) > 3:
        raise DecisionError("label codes must lie in {0, 1, 2, 3}")
    if mask is not None and np.any((labels != BACKGROUND) & ~mask.astype(bool)):
        raise DecisionError("tissue labels found outside the brain mask")


def decide_single_label(probs: np.ndarray, axis: int = 0) -> np.ndarray:
    """Per-voxel argmax over 4 softmax channels; ties go to the lower code."""
    probs = np.asarray(probs)
    sums = probs.sum(axis=axis)
    if np.abs(sums - 1).max() > 1e-5:
        raise DecisionError("single-label probabilities must sum to 1 per voxel")
    # np.argmax returns the first maximal index
    return np.argmax(probs, axis=axis).astype(np.uint8)


def decide_exclusive(prob_csf: np.ndarray, prob_wm: np.ndarray, mask: np.ndarray | None,
                     threshold: float = 0.5) -> np.ndarray:
    """Threshold independent CSF/WM maps; GM is whatever is left inside the mask.

    When both classes pass the threshold the larger probability wins, with
    CSF taking exact ties.
    """
    if mask is None:
        raise DecisionError("exclusive decisions need a brain mask to complement GM within")
    if prob_csf.shape != prob_wm.shape or prob_csf.shape != mask.shape:
        raise DecisionError(
            f"shape mismatch: csf {prob_csf.shape}, wm {prob_wm.shape}, mask {mask.shape}")
    mask = mask.astype(bool)
    csf = (prob_csf >= threshold) & (prob_csf >= prob_wm)
    wm = (prob_wm >= threshold) & (prob_wm > prob_csf)
    out = np.full(mask.shape, GM, dtype=np.uint8)
    out[csf] = CSF
    out[wm] = WM
    out[~mask] = BACKGROUND
    return out


def one_hot(labels: np.ndarray, n_classes: int = 4, axis: int = 0) -> np.ndarray:
    oh = np.stack([labels == c for c in range(n_classes)], axis=axis)
    return oh.astype(np.float32)


class LabelTargets:
    """Binary target accessor that records which class codes were read.

    Exclusive-mode training must never look at the GM channel; the counter
    makes that checkable.
    """

    def __init__(self, labels: np.ndarray):
        self._labels = labels
        self.reads: Counter[int] = Counter()

    def binary(self, code: int) -> np.ndarray:
        self.reads[code] += 1
        return (self._labels == code).astype(np.float32)

    def onehot(self, n_classes: int = 4, axis: int = 1) -> np.ndarray:
        for c in range(n_classes):
            self.reads[c] += 1
        return one_hot(self._labels, n_classes, axis)


def compute_prevalence(labelmaps: Iterable[np.ndarray], include_background: bool = False) -> ClassPrevalence:
    """Voxel counts of CSF/GM/WM (and optionally background) across label maps."""
    counts = {CLASS_NAMES[c]: 0 for c in ((BACKGROUND,) + TISSUES if include_background else TISSUES)}
    seen = False
    for lm in labelmaps:
        seen = True
        binc = np.bincount(np.asarray(lm, dtype=np.int64).ravel(), minlength=4)
        for c in TISSUES:
            counts[CLASS_NAMES[c]] += int(binc[c])
        if include_background:
            counts["background"] += int(binc[BACKGROUND])
    if not seen:
        raise DecisionError("no label maps given")
    if sum(counts[CLASS_NAMES[c]] for c in TISSUES) == 0:
        raise DecisionError("no labeled (non-background) voxels")
    return ClassPrevalence(counts)
