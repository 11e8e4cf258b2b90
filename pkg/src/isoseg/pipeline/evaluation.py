"""Per-subject, per-class evaluation of label maps and paired comparisons."""
from __future__ import annotations

from typing import Mapping

import numpy as np

from ..labeling import CLASS_NAMES, TISSUES
from ..metrics import MetricError, MetricsReport, class_metrics, paired_t_test

DEGENERATE = "degenerate (zero variance of differences) / not significant"


class EvaluationError(ValueError):
    pass


def evaluate(predictions: Mapping[str, np.ndarray], truths: Mapping[str, np.ndarray],
             spacing=None) -> MetricsReport:
    """DSC, HD, ASD, sensitivity and specificity for CSF, GM and WM of every subject."""
    if set(predictions) != set(truths):
        missing = sorted(set(truths) - set(predictions))
        extra = sorted(set(predictions) - set(truths))
        raise EvaluationError(f"subject mismatch: missing predictions {missing}, unmatched {extra}")
    report = MetricsReport()
    for name in sorted(predictions):
        p, t = np.asarray(predictions[name]), np.asarray(truths[name])
        if p.shape != t.shape:
            raise EvaluationError(f"{name}: prediction shape {p.shape} != truth shape {t.shape}")
        report.add(name, {CLASS_NAMES[c]: class_metrics(p, t, c, spacing) for c in TISSUES})
    return report


def compare(a: MetricsReport, b: MetricsReport, cls: str, metric: str = "dsc"):
    """Paired t-test of ``a`` against ``b``; a string verdict when the test is degenerate."""
    if a.subjects != b.subjects:
        raise EvaluationError("reports cover different subjects")
    try:
        return paired_t_test(a.values(cls, metric), b.values(cls, metric))
    except MetricError as exc:
        if "zero variance" in str(exc):
            return DEGENERATE
        raise


def compare_all(a: MetricsReport, b: MetricsReport, label_a: str = "a", label_b: str = "b",
                metric: str = "dsc") -> dict:
    """Attach t-tests for every class to ``a`` and return them."""
    out = {}
    for c in TISSUES:
        name = CLASS_NAMES[c]
        out[f"{name} {metric} {label_a} vs {label_b}"] = compare(a, b, name, metric)
    a.t_tests.update(out)
    return out
