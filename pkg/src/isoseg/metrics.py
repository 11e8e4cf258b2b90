"""Overlap and surface-distance metrics, plus the paired t-test used to compare runs.

Surfaces are boundary voxels: foreground voxels with at least one
6-connected background neighbour, where anything outside the array counts
as background. Distances are Euclidean between voxel centres, scaled by the
per-axis spacing.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import ndimage, special


class MetricError(ValueError):
    pass


@dataclass
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


def confusion(pred: np.ndarray, truth: np.ndarray) -> ConfusionCounts:
    pred = np.asarray(pred, dtype=bool)
    truth = np.asarray(truth, dtype=bool)
    if pred.shape != truth.shape:
        raise MetricError(f"shape mismatch: {pred.shape} vs {truth.shape}")
    tp = int(np.count_nonzero(pred & truth))
    fp = int(np.count_nonzero(pred & ~truth))
    fn = int(np.count_nonzero(~pred & truth))
    return ConfusionCounts(tp, fp, fn, pred.size - tp - fp - fn)


def dsc(pred: np.ndarray, truth: np.ndarray) -> float:
    """Hard Dice ``2TP / (2TP + FP + FN)``; two empty masks score 1."""
    c = confusion(pred, truth)
    denom = 2 * c.tp + c.fp + c.fn
    if denom == 0:
        return 1.0
    return 2 * c.tp / denom


def sensitivity_specificity(pred: np.ndarray, truth: np.ndarray) -> tuple[float, float]:
    """(TP/(TP+FN), TN/(TN+FP)); an empty denominator gives 1.0."""
    c = confusion(pred, truth)
    sens = c.tp / (c.tp + c.fn) if c.tp + c.fn else 1.0
    spec = c.tn / (c.tn + c.fp) if c.tn + c.fp else 1.0
    return sens, spec


_SIX = ndimage.generate_binary_structure(3, 1)


def boundary(mask: np.ndarray) -> np.ndarray:
    mask = np.asarray(mask, dtype=bool)
    eroded = ndimage.binary_erosion(mask, structure=_SIX, border_value=0)
    return mask & ~eroded


def _spacing(spacing) -> tuple[float, float, float]:
    if spacing is None:
        return (1.0, 1.0, 1.0)
    if np.isscalar(spacing):
        return (float(spacing),) * 3
    return tuple(float(s) for s in spacing)


@dataclass
class SurfaceDistanceStats:
    pred_to_truth: np.ndarray  # d(p, R) for every boundary point p of the prediction
    truth_to_pred: np.ndarray  # d(q, P) for every boundary point q of the truth
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)

    @property
    def hausdorff(self) -> float:
        return float(max(self.pred_to_truth.max(), self.truth_to_pred.max()))

    @property
    def average(self) -> float:
        n = self.pred_to_truth.size + self.truth_to_pred.size
        return float((self.pred_to_truth.sum() + self.truth_to_pred.sum()) / n)


def surface_distances(pred: np.ndarray, truth: np.ndarray, spacing=None) -> SurfaceDistanceStats:
    pred = np.asarray(pred, dtype=bool)
    truth = np.asarray(truth, dtype=bool)
    if pred.shape != truth.shape:
        raise MetricError(f"shape mismatch: {pred.shape} vs {truth.shape}")
    if not pred.any() or not truth.any():
        raise MetricError("surface distance undefined: prediction or truth mask is empty")
    spacing = _spacing(spacing)
    bp, bt = boundary(pred), boundary(truth)
    to_truth = ndimage.distance_transform_edt(~bt, sampling=spacing)
    to_pred = ndimage.distance_transform_edt(~bp, sampling=spacing)
    return SurfaceDistanceStats(to_truth[bp], to_pred[bt], spacing)


def hausdorff(pred: np.ndarray, truth: np.ndarray, spacing=None) -> float:
    return surface_distances(pred, truth, spacing).hausdorff


def asd(pred: np.ndarray, truth: np.ndarray, spacing=None) -> float:
    return surface_distances(pred, truth, spacing).average


def paired_t_test(a: Sequence[float], b: Sequence[float]) -> tuple[float, float]:
    """Two-sided paired t-test; returns (t statistic, p-value).

    The p-value uses the Student-t tail through the regularized incomplete
    beta function: ``p = I_{df/(df+t^2)}(df/2, 1/2)``.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise MetricError("paired t-test needs two 1-D sequences of equal length")
    n = a.size
    if n < 2:
        raise MetricError("paired t-test needs at least two pairs")
    d = a - b
    sd = d.std(ddof=1)
    if sd == 0 or not np.isfinite(sd):
        raise MetricError("paired t-test degenerate: differences have zero variance")
    t = d.mean() / (sd / math.sqrt(n))
    df = n - 1
    p = float(special.betainc(df / 2.0, 0.5, df / (df + t * t)))
    return float(t), min(max(p, 0.0), 1.0)


CLASS_ORDER = ("csf", "gm", "wm")


@dataclass
class MetricsReport:
    """Per-subject, per-class metrics; layout mirrors a DSC/HD/ASD-per-class table."""

    subjects: list[str] = field(default_factory=list)
    rows: dict[str, dict[str, dict[str, float]]] = field(default_factory=dict)
    t_tests: dict[str, tuple[float, float] | str] = field(default_factory=dict)

    def add(self, subject: str, per_class: dict[str, dict[str, float]]) -> None:
        self.subjects.append(subject)
        self.rows[subject] = per_class

    def values(self, cls: str, metric: str) -> list[float]:
        return [self.rows[s][cls][metric] for s in self.subjects]

    def mean(self, cls: str, metric: str) -> float:
        vals = [v for v in self.values(cls, metric) if v is not None and np.isfinite(v)]
        return float(np.mean(vals)) if vals else float("nan")

    def to_tsv(self) -> str:
        metrics = ("dsc", "hd", "asd", "sensitivity", "specificity")
        header = ["subject"] + [f"{c}_{m}" for c in CLASS_ORDER for m in metrics]
        lines = ["\t".join(header)]
        for s in self.subjects:
            vals = [s] + [_fmt(self.rows[s][c][m]) for c in CLASS_ORDER for m in metrics]
            lines.append("\t".join(vals))
        lines.append("\t".join(["mean"] + [_fmt(self.mean(c, m)) for c in CLASS_ORDER for m in metrics]))
        return "\n".join(lines) + "\n"

    def to_text(self) -> str:
        head1 = f"{'':<12}" + "".join(f"| {c.upper():^26}" for c in CLASS_ORDER)
        head2 = f"{'subject':<12}" + "| {:>8}{:>9}{:>9} ".format("DSC", "HD", "ASD") * 3
        lines = [head1, head2, "-" * len(head2)]
        for s in self.subjects + ["mean"]:
            cells = []
            for c in CLASS_ORDER:
                get = (lambda m: self.mean(c, m)) if s == "mean" else (lambda m: self.rows[s][c][m])
                cells.append("| {:>8}{:>9}{:>9} ".format(
                    _fmt(100 * get("dsc"), 2), _fmt(get("hd"), 2), _fmt(get("asd"), 3)))
            lines.append(f"{s:<12}" + "".join(cells))
        for key, res in self.t_tests.items():
            if isinstance(res, str):
                lines.append(f"paired t-test {key}: {res}")
            else:
                lines.append(f"paired t-test {key}: t = {res[0]:.4f}, p = {res[1]:.4g}")
        return "\n".join(lines) + "\n"


def _fmt(v, digits: int = 6) -> str:
    if v is None or (isinstance(v, float) and not np.isfinite(v)):
        return "nan"
    return f"{v:.{digits}f}"


def class_metrics(pred_labels: np.ndarray, truth_labels: np.ndarray, code: int, spacing=None) -> dict[str, float]:
    p = pred_labels == code
    t = truth_labels == code
    out = {"dsc": dsc(p, t)}
    out["sensitivity"], out["specificity"] = sensitivity_specificity(p, t)
    if p.any() and t.any():
        sd = surface_distances(p, t, spacing)
        out["hd"], out["asd"] = sd.hausdorff, sd.average
    else:
        out["hd"] = out["asd"] = float("nan")
    return out
