"""Cross-validated comparison of exclusive multi-label and single-label training on phantoms.

Both modes share the trunk configuration, seed, schedule and folds; only
the head, the supervised channels and the decision rule differ.
"""
from __future__ import annotations

import hashlib
import logging
import time
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from ..labeling import CLASS_NAMES, TISSUES
from ..metrics import MetricsReport, dsc
from ..phantom import Subject, phantom_cohort
from .config import TrainingConfig
from .evaluation import compare_all, evaluate
from .inference import predict
from .preprocess import kfold_split, normalize_intensity
from .training import train

log = logging.getLogger(__name__)

MODES = ("exclusive", "single")


@dataclass
class ExperimentSettings:
    n_subjects: int = 10
    phantom_seed: int = 0
    split_seed: int = 0
    dims: tuple[int, int, int] = (48, 48, 48)
    csf_floor: float = 0.85
    min_wm_wins: int = 4


@dataclass
class FoldOutcome:
    fold: int
    validation: tuple[str, ...]
    dsc: dict[str, dict[str, float]]  # mode -> class -> mean over validation subjects
    best_epoch: dict[str, int]
    seconds: dict[str, float]

    @property
    def exclusive_wm_wins(self) -> bool:
        return self.dsc["exclusive"]["wm"] >= self.dsc["single"]["wm"]


@dataclass
class ExperimentResult:
    settings: ExperimentSettings
    folds: list[FoldOutcome]
    reports: dict[str, MetricsReport]
    predictions: dict[str, dict[str, np.ndarray]] = field(repr=False)
    seconds: float = 0.0

    @property
    def wm_wins(self) -> int:
        return sum(f.exclusive_wm_wins for f in self.folds)

    def mean_dsc(self, mode: str, cls: str) -> float:
        return float(np.mean([f.dsc[mode][cls] for f in self.folds]))

    @property
    def passed(self) -> bool:
        s = self.settings
        return self.wm_wins >= s.min_wm_wins and all(self.mean_dsc(m, "csf") >= s.csf_floor for m in MODES)

    def fingerprint(self) -> str:
        """Hash of every predicted label map and fold metric, for bitwise reproducibility checks."""
        h = hashlib.sha256()
        for mode in MODES:
            for name in sorted(self.predictions[mode]):
                h.update(name.encode())
                h.update(self.predictions[mode][name].tobytes())
        for f in self.folds:
            for mode in MODES:
                for cls in ("csf", "gm", "wm"):
                    h.update(np.float64(f.dsc[mode][cls]).tobytes())
        return h.hexdigest()

    def summary(self) -> str:
        lines = ["fold\tvalidation\texcl_csf\texcl_gm\texcl_wm\tsingle_csf\tsingle_gm\tsingle_wm\twm_excl>=single"]
        for f in self.folds:
            vals = [f"{f.dsc[m][c]:.4f}" for m in MODES for c in ("csf", "gm", "wm")]
            lines.append("\t".join([str(f.fold), ",".join(f.validation), *vals, str(f.exclusive_wm_wins)]))
        lines.append("")
        lines.append(f"exclusive WM DSC >= single-label in {self.wm_wins} of {len(self.folds)} folds "
                     f"(need {self.settings.min_wm_wins})")
        for m in MODES:
            lines.append(f"{m}: mean DSC csf {self.mean_dsc(m, 'csf'):.4f}, gm {self.mean_dsc(m, 'gm'):.4f}, "
                         f"wm {self.mean_dsc(m, 'wm'):.4f}")
        lines.append("")
        lines.append("exclusive multi-label, per subject:")
        lines.append(self.reports["exclusive"].to_text())
        lines.append(f"runtime {self.seconds:.1f} s; fingerprint {self.fingerprint()}")
        return "\n".join(lines) + "\n"


def prepare_cohort(settings: ExperimentSettings) -> list[Subject]:
    cohort = phantom_cohort(settings.n_subjects, settings.phantom_seed, dims=settings.dims)
    return [replace(s, image=normalize_intensity(s.image)) for s in cohort]


def run_experiment(config: TrainingConfig, settings: ExperimentSettings | None = None,
                   subjects: Sequence[Subject] | None = None) -> ExperimentResult:
    settings = settings or ExperimentSettings()
    t0 = time.perf_counter()
    subjects = list(subjects) if subjects is not None else prepare_cohort(settings)
    by_id = {s.name: s for s in subjects}
    splits = kfold_split(list(by_id), config.train.folds, settings.split_seed)
    predictions = {m: {} for m in MODES}
    folds = []
    for split in splits:
        train_set = [by_id[i] for i in split.train]
        val_set = [by_id[i] for i in split.validation]
        scores, best, secs = {}, {}, {}
        for mode in MODES:
            cfg = config.with_mode(mode)
            result = train(cfg, train_set, val_set)
            per_class = {CLASS_NAMES[c]: [] for c in TISSUES}
            for s in val_set:
                labels = predict(result.model, s.image, s.mask, cfg.train.threshold, cfg.train.overlap,
                                 cfg.train.augment).labels
                predictions[mode][s.name] = labels
                for c in TISSUES:
                    per_class[CLASS_NAMES[c]].append(dsc(labels == c, s.labels == c))
            scores[mode] = {k: float(np.mean(v)) for k, v in per_class.items()}
            best[mode], secs[mode] = result.best_epoch, result.seconds
            log.info("fold %d %s: dsc %s (best epoch %d, %.1f s)", split.fold, mode, scores[mode],
                     best[mode], secs[mode])
        folds.append(FoldOutcome(split.fold, split.validation, scores, best, secs))
    truths = {s.name: s.labels for s in subjects}
    reports = {m: evaluate(predictions[m], truths) for m in MODES}
    compare_all(reports["exclusive"], reports["single"], "exclusive", "single")
    return ExperimentResult(settings, folds, reports, predictions, time.perf_counter() - t0)
