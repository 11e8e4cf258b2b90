"""Command-line entry point: ``isoseg <subcommand> ...``.

Failures print ``error[<category>]: <message>`` on stderr and exit with the
category's code, so scripts can branch on the kind of failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .densenet import ConfigError, count_parameters, load_model, save_model
from .engine import EngineError
from .engine.checkpoint import CheckpointError
from .fusion import FusionError, PatchError
from .labeling import DecisionError
from .losses import (PAPER_BETAS, PAPER_LAMBDA, PAPER_PREVALENCE, LossConfigError,
                     PrevalenceError, select_beta_fraction)
from .metrics import MetricError
from .phantom import PhantomError, PhantomSpec, export_histograms, generate_phantom
from .pipeline.config import ConfigFileError, TrainingConfig, load_config, preset
from .pipeline.evaluation import EvaluationError, compare_all, evaluate
from .pipeline.experiment import ExperimentSettings, run_experiment
from .pipeline.inference import PredictError, predict
from .pipeline.manifest import write_manifest
from .pipeline.preprocess import PreprocessError, kfold_split, normalize_intensity
from .pipeline.training import TrainingError, train
from .pipeline.volume_io import VolumeFormatError, load_cohort, load_subject, save_subject, save_volume

EXIT_CODES = {"usage": 2, "config": 3, "data": 4, "numeric": 5, "io": 6, "internal": 70}

_CATEGORIES = [
    ((ConfigFileError, ConfigError, LossConfigError, PrevalenceError), "config"),
    ((VolumeFormatError, CheckpointError, PreprocessError, PhantomError, PredictError, EvaluationError,
      DecisionError, PatchError), "data"),
    ((TrainingError, EngineError, FusionError, MetricError, FloatingPointError), "numeric"),
    ((OSError,), "io"),
]


class UsageError(ValueError):
    pass


def error_category(exc: BaseException) -> str:
    if isinstance(exc, UsageError):
        return "usage"
    for types, cat in _CATEGORIES:
        if isinstance(exc, types):
            return cat
    return "internal"


def _limit_threads() -> None:
    n = os.environ.get("ISOSEG_THREADS")
    if n is None:
        return
    try:
        count = int(n)
    except ValueError:
        raise UsageError(f"ISOSEG_THREADS must be an integer, got {n!r}") from None
    if count < 1:
        raise UsageError("ISOSEG_THREADS must be at least 1")
    from threadpoolctl import threadpool_limits
    threadpool_limits(count)


def _training_config(args) -> TrainingConfig:
    base = preset(args.preset, args.mode or "exclusive")
    cfg = load_config(args.config, base) if args.config else base
    if args.mode and cfg.mode != args.mode:
        cfg = cfg.with_mode(args.mode)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    for key in ("epochs", "patches_per_epoch"):
        value = getattr(args, key, None)
        if value is not None:
            setattr(cfg.train, key, value)
    cfg.validate()
    return cfg


def _normalized(subject):
    return dataclasses.replace(subject, image=normalize_intensity(subject.image))


def cmd_phantom(args) -> int:
    out = Path(args.out)
    for i in range(args.n):
        seed = args.seed + i
        spec = PhantomSpec(dims=tuple(args.dims), seed=seed)
        subject = generate_phantom(spec, name=f"phantom{seed:03d}")
        d = save_subject(out, subject)
        if args.histograms:
            (d / "histograms.tsv").write_text(export_histograms(subject).to_tsv())
        print(f"wrote {d}")
    return 0


def cmd_split(args) -> int:
    ids = args.ids or [s.name for s in load_cohort(args.data)]
    for f in kfold_split(ids, args.k, args.seed):
        print(f"fold {f.fold}\ttrain={','.join(f.train)}\tvalidation={','.join(f.validation)}")
    return 0


def _subjects_for_fold(args, cfg):
    cohort = [_normalized(s) for s in load_cohort(args.data)]
    if args.fold is None:
        return cohort, []
    by_id = {s.name: s for s in cohort}
    splits = kfold_split(list(by_id), cfg.train.folds, args.split_seed)
    if not 0 <= args.fold < len(splits):
        raise UsageError(f"fold must lie in [0, {len(splits) - 1}]")
    split = splits[args.fold]
    return [by_id[i] for i in split.train], [by_id[i] for i in split.validation]


def cmd_train(args) -> int:
    cfg = _training_config(args)
    train_set, val_set = _subjects_for_fold(args, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result = train(cfg, train_set, val_set)
    save_model(result.model, out / "model.ckpt")
    (out / "training_log.tsv").write_text(result.log_text())
    write_manifest(out / "manifest.txt", cfg, result.betas, {
        "train_subjects": ",".join(s.name for s in train_set),
        "validation_subjects": ",".join(s.name for s in val_set),
        "best_epoch": result.best_epoch,
        "best_macro_dsc": result.best_macro_dsc,
        "parameters": count_parameters(result.model),
        "seconds": f"{result.seconds:.1f}",
    })
    print(f"trained {cfg.mode} model for {cfg.train.epochs} epochs in {result.seconds:.1f} s; "
          f"best epoch {result.best_epoch}; checkpoint {out / 'model.ckpt'}")
    return 0


def cmd_predict(args) -> int:
    model = load_model(args.checkpoint)
    data = Path(args.data)
    subjects = [load_subject(data)] if (data / "t1.vol").exists() else load_cohort(data)
    out = Path(args.out)
    for s in subjects:
        t0 = time.perf_counter()
        pred = predict(model, normalize_intensity(s.image), s.mask, args.threshold, args.overlap,
                       not args.no_augment)
        d = out / s.name
        save_volume(d / "labels", pred.labels, s.spacing, "labels")
        names = ("csf", "wm") if model.config.head == "sigmoid" else ("background", "csf", "gm", "wm")
        for name, p in zip(names, pred.probs):
            save_volume(d / f"prob_{name}", p.astype(np.float32), s.spacing, f"probability {name}")
        print(f"{s.name}: predicted {s.image.shape[1:]} in {time.perf_counter() - t0:.2f} s -> {d}")
    return 0


def _label_maps(directory) -> dict[str, np.ndarray]:
    from .pipeline.volume_io import load_volume

    d = Path(directory)
    found = {p.parent.name: load_volume(p)[0] for p in sorted(d.glob("*/labels.vol"))}
    if not found:
        raise VolumeFormatError(f"no <subject>/labels.vol files under {d}")
    return found


def cmd_evaluate(args) -> int:
    truths = _label_maps(args.truth)
    preds = _label_maps(args.pred)
    truths = {k: v for k, v in truths.items() if k in preds} if args.subset else truths
    report = evaluate(preds, truths)
    if args.compare:
        other = evaluate(_label_maps(args.compare), truths)
        compare_all(report, other, Path(args.pred).name, Path(args.compare).name)
    if args.tsv:
        Path(args.tsv).write_text(report.to_tsv())
    print(report.to_text(), end="")
    return 0


def cmd_beta(args) -> int:
    fr = {"csf": args.csf, "gm": args.gm, "wm": args.wm}
    lam = args.recall_lambda
    print(f"class fractions of labeled voxels: csf {fr['csf']}, gm {fr['gm']}, wm {fr['wm']} "
          f"(sum {sum(fr.values()):.6g}); lambda {lam}")
    print("beta with recall offset, sqrt((1 + lambda - f) / (f - lambda)):")
    derived = {}
    for name, f in fr.items():
        try:
            derived[name] = select_beta_fraction(f, lam)
            print(f"  {name}: {derived[name]:.6f}")
        except PrevalenceError as exc:
            print(f"  {name}: undefined ({exc})")
    print("beta from prevalence alone, sqrt((1 - f) / f):")
    for name, f in fr.items():
        print(f"  {name}: {select_beta_fraction(f):.6f}")
    print(f"pinned values used for training (beta_source = paper): "
          f"csf {PAPER_BETAS['csf']}, wm {PAPER_BETAS['wm']}")
    gaps = [f"{n} {derived[n]:.3f} vs {PAPER_BETAS[n]}" for n in PAPER_BETAS
            if n in derived and abs(derived[n] - PAPER_BETAS[n]) > 1e-3]
    if gaps:
        print(f"DISCREPANCY: formula values differ from the pinned values ({', '.join(gaps)})")
    return 0


def cmd_gradcheck(args) -> int:
    from .gradsuite import composed_network_check, run_op_checks

    t0 = time.perf_counter()
    results = run_op_checks(args.seed)
    if not args.ops_only:
        results += [composed_network_check(args.seed, head=h) for h in ("sigmoid", "softmax")]
    failed = 0
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        failed += not r.passed
        print(f"{status}  {r.name:32s} max rel err {r.error:.3e} (< {r.tolerance:g})  {r.seconds:.1f} s")
    print(f"{len(results) - failed}/{len(results)} checks passed in {time.perf_counter() - t0:.1f} s")
    return 0 if failed == 0 else EXIT_CODES["numeric"]


def cmd_experiment(args) -> int:
    cfg = _training_config(args)
    settings = ExperimentSettings(n_subjects=args.n, phantom_seed=args.phantom_seed,
                                  split_seed=args.split_seed, dims=tuple(args.dims))
    result = run_experiment(cfg, settings)
    text = result.summary()
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "summary.txt").write_text(text)
        (out / "exclusive.tsv").write_text(result.reports["exclusive"].to_tsv())
        (out / "single.tsv").write_text(result.reports["single"].to_tsv())
        write_manifest(out / "manifest.txt", cfg, None, {"subjects": args.n, "phantom_seed": args.phantom_seed,
                                                         "split_seed": args.split_seed})
    print(text, end="")
    return 0


def _add_training_args(p) -> None:
    p.add_argument("--config", help="INI-style config file; keys override the preset")
    p.add_argument("--preset", default="toy", choices=("toy", "paper"))
    p.add_argument("--mode", choices=("exclusive", "single"))
    p.add_argument("--seed", type=int, help="overrides the model and training seed")
    p.add_argument("--epochs", type=int)
    p.add_argument("--patches-per-epoch", dest="patches_per_epoch", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="isoseg", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phantom", help="generate synthetic two-channel phantoms")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dims", type=int, nargs=3, default=(48, 48, 48))
    p.add_argument("--histograms", action="store_true", help="also write per-class intensity histograms")
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("split", help="print seeded k-fold splits")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--data", help="cohort directory")
    g.add_argument("--ids", nargs="+")
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train", help="train a model on a cohort (optionally one fold of it)")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--fold", type=int, help="train on the other folds, validate on this one")
    p.add_argument("--split-seed", dest="split_seed", type=int, default=0)
    _add_training_args(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="segment a subject or cohort with a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--overlap", type=float, default=0.5)
    p.add_argument("--no-augment", action="store_true")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="DSC / HD / ASD report for predicted label maps")
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--compare", help="second prediction directory for a paired t-test")
    p.add_argument("--tsv", help="write the tab-separated table here")
    p.add_argument("--subset", action="store_true", help="only evaluate truth subjects that were predicted")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("beta", help="per-class F-beta weights from class prevalence")
    p.add_argument("--csf", type=float, default=PAPER_PREVALENCE["csf"])
    p.add_argument("--gm", type=float, default=PAPER_PREVALENCE["gm"])
    p.add_argument("--wm", type=float, default=PAPER_PREVALENCE["wm"])
    p.add_argument("--lambda", dest="recall_lambda", type=float, default=PAPER_LAMBDA)
    p.set_defaults(func=cmd_beta)

    p = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--ops-only", action="store_true", help="skip the composed-network checks")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("experiment", help="cross-validated exclusive vs single-label comparison on phantoms")
    p.add_argument("--n", type=int, default=10)
    p.add_argument("--phantom-seed", dest="phantom_seed", type=int, default=0)
    p.add_argument("--split-seed", dest="split_seed", type=int, default=0)
    p.add_argument("--dims", type=int, nargs=3, default=(48, 48, 48))
    p.add_argument("--out")
    _add_training_args(p)
    p.set_defaults(func=cmd_experiment)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        _limit_threads()
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - every failure maps to an exit category
        cat = error_category(exc)
        print(f"error[{cat}]: {exc}", file=sys.stderr)
        if cat == "internal":
            logging.getLogger(__name__).exception("unexpected failure")
        return EXIT_CODES[cat]


if __name__ == "__main__":
    sys.exit(main())
