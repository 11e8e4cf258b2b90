"""Soft F-beta similarity losses and prevalence-driven beta selection.

For a probability map ``p`` and binary target ``g`` the soft counts are
``TP = sum(p g)``, ``FN = sum((1 - p) g)``, ``FP = sum(p (1 - g))`` and the score

    (TP + eps * empty) / (TP + b2/(1+b2) FN + 1/(1+b2) FP + eps),   b2 = beta**2

where ``empty`` is 1 only when the target has no foreground, so an empty
target predicted as empty scores 1. Counts are taken over the whole batch.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .engine import ContractError, Tensor
from .engine.tensor import as_tensor

DEFAULT_EPS = 1e-6
PROB_TOLERANCE = 1e-6

# Values the iSeg experiment pinned by hand; the formula gives different numbers.
PAPER_BETAS = {"csf": 1.5, "wm": 1.0}
PAPER_LAMBDA = 0.1
PAPER_PREVALENCE = {"csf": 0.2184, "gm": 0.467, "wm": 0.3145}


class LossConfigError(ValueError):
    pass


class PrevalenceError(ValueError):
    """Class prevalence and recall offset admit no finite positive beta."""


@dataclass
class ClassPrevalence:
    """Voxel counts per class; ``fractions`` are relative to all counted classes."""

    counts: dict[str, int]

    def __post_init__(self):
        for name, n in self.counts.items():
            if n < 0:
                raise ValueError(f"negative count for class {name!r}")

    @property
    def total(self) -> int:
        return int(sum(self.counts.values()))

    @property
    def fractions(self) -> dict[str, float]:
        total = self.total
        if total == 0:
            raise ValueError("no voxels counted")
        return {k: v / total for k, v in self.counts.items()}

    @classmethod
    def from_fractions(cls, fractions: Mapping[str, float], scale: int = 10**9) -> "ClassPrevalence":
        return cls({k: int(round(v * scale)) for k, v in fractions.items()})


@dataclass
class LossConfig:
    betas: dict[str, float] = field(default_factory=lambda: dict(PAPER_BETAS))
    recall_lambda: float = PAPER_LAMBDA
    eps: float = DEFAULT_EPS
    mode: str = "exclusive"

    def validate(self) -> None:
        if self.eps <= 0:
            raise LossConfigError(f"eps must be positive, got {self.eps}")
        if self.recall_lambda < 0:
            raise LossConfigError(f"lambda must be non-negative, got {self.recall_lambda}")
        if self.mode not in ("exclusive", "single"):
            raise LossConfigError(f"mode must be 'exclusive' or 'single', got {self.mode!r}")
        for name, b in self.betas.items():
            if not b > 0:
                raise LossConfigError(f"beta for {name!r} must be positive, got {b}")


def fbeta_coefficients(beta: float) -> tuple[float, float]:
    """(FN weight, FP weight) of the F-beta denominator."""
    b2 = beta * beta
    return b2 / (1.0 + b2), 1.0 / (1.0 + b2)


def _check_probs(probs: np.ndarray) -> None:
    lo, hi = float(probs.min()), float(probs.max())
    if lo < -PROB_TOLERANCE or hi > 1 + PROB_TOLERANCE:
        raise ContractError(f"probabilities outside [0, 1]: range [{lo}, {hi}]")


def soft_fbeta(probs, targets, beta: float, eps: float = DEFAULT_EPS) -> Tensor:
    """Differentiable soft F-beta score of ``probs`` against binary ``targets``."""
    probs = as_tensor(probs)
    targets = np.asarray(targets)
    if probs.shape != targets.shape:
        raise ContractError(f"shape mismatch: probs {probs.shape} vs targets {targets.shape}")
    if beta <= 0:
        raise LossConfigError(f"beta must be positive, got {beta}")
    _check_probs(probs.data)
    g = targets.astype(probs.dtype)
    a_fn, a_fp = fbeta_coefficients(beta)
    tp = (probs * g).sum()
    pos = float(g.sum())
    fn = pos - tp
    fp = probs.sum() - tp
    empty = 1.0 if pos == 0 else 0.0
    return (tp + eps * empty) / (tp + a_fn * fn + a_fp * fp + eps)


def soft_fbeta_value(probs: np.ndarray, targets: np.ndarray, beta: float, eps: float = DEFAULT_EPS) -> float:
    return soft_fbeta(np.asarray(probs, dtype=np.float64), targets, beta, eps).item()


def select_beta(prevalence: ClassPrevalence, name: str, recall_lambda: float = PAPER_LAMBDA) -> float:
    """Beta whose FN weight equals the share of all other classes plus ``recall_lambda``.

    ``beta = sqrt(((1 + lam) * total - n) / (n - lam * total))``.
    """
    total = prevalence.total
    n = prevalence.counts[name]
    num = (1.0 + recall_lambda) * total - n
    den = n - recall_lambda * total
    if den <= 0:
        raise PrevalenceError(
            f"prevalence/lambda incompatible for {name!r}: need N_z > lambda * total "
            f"({n} <= {recall_lambda} * {total})")
    if num <= 0:
        raise PrevalenceError(
            f"prevalence/lambda incompatible for {name!r}: need (1 + lambda) * total > N_z")
    return math.sqrt(num / den)


def select_beta_fraction(fraction: float, recall_lambda: float = 0.0) -> float:
    """:func:`select_beta` written in terms of the class fraction alone."""
    num = 1.0 + recall_lambda - fraction
    den = fraction - recall_lambda
    if den <= 0 or num <= 0:
        raise PrevalenceError(
            f"prevalence/lambda incompatible: fraction {fraction}, lambda {recall_lambda} "
            f"(need lambda < fraction < 1 + lambda)")
    return math.sqrt(num / den)


def multi_label_loss(probs: Tensor, targets: Mapping[str, np.ndarray] | Sequence[np.ndarray],
                     config: LossConfig, classes: Sequence[str] = ("csf", "wm")) -> Tensor:
    """Mean over trained classes of ``1 - F_beta``, each class with its own beta.

    ``probs`` is (N, len(classes), ...); channel ``i`` is scored against
    ``targets[classes[i]]`` (or ``targets[i]`` for a sequence).
    """
    if probs.shape[1] != len(classes):
        raise ContractError(f"expected {len(classes)} probability channels, got {probs.shape[1]}")
    total = None
    for i, name in enumerate(classes):
        if name not in config.betas:
            raise LossConfigError(f"no beta configured for class {name!r}")
        tgt = targets[name] if isinstance(targets, Mapping) else targets[i]
        term = 1.0 - soft_fbeta(probs[:, i], tgt, config.betas[name], config.eps)
        total = term if total is None else total + term
    return total * (1.0 / len(classes))


def single_label_loss(probs: Tensor, onehot: np.ndarray, beta: float = 1.0,
                      eps: float = DEFAULT_EPS) -> Tensor:
    """Macro-average over all classes (background included) of ``1 - F_beta``."""
    sums = probs.data.sum(axis=1)
    if np.abs(sums - 1).max() > 1e-5:
        raise ContractError("single-label probabilities must sum to 1 per voxel")
    if onehot.shape != probs.shape:
        raise ContractError(f"one-hot targets {onehot.shape} do not match probs {probs.shape}")
    n = probs.shape[1]
    total = None
    for c in range(n):
        term = 1.0 - soft_fbeta(probs[:, c], onehot[:, c], beta, eps)
        total = term if total is None else total + term
    return total * (1.0 / n)
