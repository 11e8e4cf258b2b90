"""Patch-sampled mini-batch training with validation-based model selection."""
from __future__ import annotations

import logging
import time
from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..densenet import Model, build_model
from ..engine import Adam, NonFiniteError, Tensor
from ..fusion import TRANSFORMS, apply_transform
from ..labeling import CLASS_NAMES, CSF, TISSUES, WM, LabelTargets, compute_prevalence
from ..losses import PAPER_BETAS, multi_label_loss, select_beta, single_label_loss
from ..metrics import dsc
from ..phantom import Subject
from .config import TrainingConfig
from .inference import predict
from .preprocess import lr_schedule

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class EpochRecord:
    epoch: int
    step: int
    lr: float
    loss: float
    val_dsc: dict[str, float] | None = None

    @property
    def val_macro(self) -> float | None:
        return None if self.val_dsc is None else float(np.mean(list(self.val_dsc.values())))


@dataclass
class TrainResult:
    model: Model  # best-validation weights (final weights without validation data)
    history: list[EpochRecord]
    betas: dict[str, float]
    best_epoch: int
    best_macro_dsc: float | None
    target_reads: Counter = field(default_factory=Counter)
    seconds: float = 0.0

    def log_text(self) -> str:
        lines = ["epoch\tstep\tlr\tloss\tval_csf\tval_gm\tval_wm\tval_macro"]
        for r in self.history:
            v = r.val_dsc or {}
            cells = [f"{v[c]:.6f}" if c in v else "" for c in ("csf", "gm", "wm")]
            macro = "" if r.val_macro is None else f"{r.val_macro:.6f}"
            lines.append("\t".join([str(r.epoch), str(r.step), repr(r.lr), f"{r.loss:.8f}", *cells, macro]))
        return "\n".join(lines) + "\n"


def resolve_betas(config: TrainingConfig, subjects: Sequence[Subject]) -> dict[str, float]:
    """Per-class betas for the loss, from the configured source."""
    l = config.loss
    if config.mode == "single":
        return {"single": l.beta_single}
    if l.beta_source == "paper":
        return dict(PAPER_BETAS)
    if l.beta_source == "manual":
        return {"csf": l.beta_csf, "wm": l.beta_wm}
    prev = compute_prevalence(s.labels for s in subjects)
    return {name: select_beta(prev, name, l.recall_lambda) for name in ("csf", "wm")}


def _pad_to_patch(arr: np.ndarray, patch: int) -> np.ndarray:
    short = [(0, max(0, patch - e)) for e in arr.shape[-3:]]
    if not any(b for _, b in short):
        return arr
    return np.pad(arr, [(0, 0)] * (arr.ndim - 3) + short)


class PatchSampler:
    """Uniformly placed training patches with optional random 180-degree rotations."""

    def __init__(self, subjects: Sequence[Subject], patch: int, rng: np.random.Generator, augment: bool = True):
        if not subjects:
            raise TrainingError("no training subjects")
        self.images = [_pad_to_patch(s.image, patch) for s in subjects]
        self.labels = [_pad_to_patch(s.labels, patch) for s in subjects]
        self.patch = patch
        self.rng = rng
        self.augment = augment

    def sample(self, n: int) -> tuple[np.ndarray, np.ndarray]:
        xs, ys = [], []
        p = self.patch
        for _ in range(n):
            i = int(self.rng.integers(len(self.images)))
            img, lab = self.images[i], self.labels[i]
            o = [int(self.rng.integers(e - p + 1)) for e in lab.shape]
            region = tuple(slice(a, a + p) for a in o)
            x, y = img[(slice(None),) + region], lab[region]
            if self.augment:
                t = TRANSFORMS[int(self.rng.integers(len(TRANSFORMS)))]
                x, y = apply_transform(x, t), apply_transform(y, t)
            xs.append(x)
            ys.append(y)
        return np.ascontiguousarray(np.stack(xs)), np.ascontiguousarray(np.stack(ys))


def validation_dsc(model: Model, subjects: Sequence[Subject], threshold: float = 0.5,
                   overlap: float = 0.5, augment: bool = True) -> dict[str, float]:
    """Mean per-class DSC of fused whole-volume predictions."""
    scores = {CLASS_NAMES[c]: [] for c in TISSUES}
    for s in subjects:
        pred = predict(model, s.image, s.mask, threshold, overlap, augment).labels
        for c in TISSUES:
            scores[CLASS_NAMES[c]].append(dsc(pred == c, s.labels == c))
    return {k: float(np.mean(v)) for k, v in scores.items()}


def _snapshot(model: Model) -> dict[str, np.ndarray]:
    return {k: v.copy() for k, v in model.state_arrays().items()}


def _range(a: np.ndarray) -> str:
    return f"[{float(np.min(a)):.4g}, {float(np.max(a)):.4g}]"


def train(config: TrainingConfig, subjects: Sequence[Subject],
          val_subjects: Sequence[Subject] = ()) -> TrainResult:
    """Train a fresh model; subjects are expected to be intensity-normalized."""
    config.validate()
    t0 = time.perf_counter()
    tc = config.train
    mode = config.mode
    betas = resolve_betas(config, subjects)
    loss_cfg = config.loss_config(betas) if mode == "exclusive" else None
    model = build_model(config.model)
    params = model.parameters()
    opt = Adam(params, lr=tc.lr)
    sampler = PatchSampler(subjects, config.model.patch_size,
                           np.random.Generator(np.random.PCG64([tc.seed, 1])), tc.augment)
    drop_rng = np.random.Generator(np.random.PCG64([tc.seed, 2]))
    reads: Counter = Counter()

    best_state = _snapshot(model)
    best_macro, best_epoch = None, 0
    history: list[EpochRecord] = []
    step = 0
    for epoch in range(1, tc.epochs + 1):
        losses = []
        for _ in range(config.steps_per_epoch):
            x, y = sampler.sample(tc.batch_size)
            lr = lr_schedule(step, config.schedule)
            targets = LabelTargets(y)
            try:
                probs = model.forward(Tensor(x), training=True, rng=drop_rng)
                if mode == "exclusive":
                    loss = multi_label_loss(probs, {"csf": targets.binary(CSF), "wm": targets.binary(WM)},
                                            loss_cfg)
                else:
                    loss = single_label_loss(probs, targets.onehot(axis=1), betas["single"], config.loss.eps)
                value = loss.item()
                if not np.isfinite(value):
                    raise NonFiniteError(f"loss is {value}")
                opt.zero_grad()
                loss.backward()
            except NonFiniteError as exc:
                raise TrainingError(
                    f"non-finite value at step {step} (epoch {epoch}, lr {lr:.3g}): {exc}; "
                    f"input range {_range(x)}, target classes {sorted(np.unique(y).tolist())}") from exc
            opt.step(lr)
            reads.update(targets.reads)
            losses.append(value)
            step += 1
        record = EpochRecord(epoch, step, lr_schedule(max(step - 1, 0), config.schedule), float(np.mean(losses)))
        if val_subjects and (epoch % tc.val_every == 0 or epoch == tc.epochs):
            record.val_dsc = validation_dsc(model, val_subjects, tc.threshold, tc.overlap, tc.augment)
            if best_macro is None or record.val_macro > best_macro:
                best_macro, best_epoch = record.val_macro, epoch
                best_state = _snapshot(model)
        history.append(record)
        log.info("epoch %d step %d loss %.5f val %s", epoch, step, record.loss, record.val_dsc)

    if val_subjects:
        model.load_state_arrays(best_state)
    else:
        best_epoch = tc.epochs
    return TrainResult(model, history, betas, best_epoch, best_macro, reads, time.perf_counter() - t0)
