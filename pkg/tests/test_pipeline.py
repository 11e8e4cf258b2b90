from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from isoseg.densenet import build_model, toy_config
from isoseg.labeling import BACKGROUND, CSF, GM, WM
from isoseg.phantom import PhantomSpec, generate_phantom
from isoseg.pipeline import (ConfigFileError, EvaluationError, PredictError, TrainingError, VolumeFormatError,
                             compare, evaluate, fuse_volume, kfold_split, load_subject, load_volume, lr_schedule,
                             normalize_intensity, parse_config, predict, preset, save_subject, save_volume, train)
from isoseg.pipeline.config import TrainingConfig, TrainSettings
from isoseg.pipeline.evaluation import DEGENERATE
from isoseg.pipeline.preprocess import PreprocessError, StepDecay


@pytest.fixture(scope="module")
def tiny_subject():
    s = generate_phantom(PhantomSpec(dims=(16, 16, 16), seed=0))
    s.image = normalize_intensity(s.image)
    return s


def _tiny_config(mode="exclusive", epochs=2, dropout=0.2, augment=True, seed=0):
    cfg = TrainingConfig(model=replace(toy_config(patch_size=16), dropout=dropout, seed=seed),
                         train=TrainSettings(epochs=epochs, patches_per_epoch=2, batch_size=2, augment=augment,
                                             seed=seed, val_every=1))
    return cfg.with_mode(mode)


# volume io

def test_volume_round_trip_bitwise(tmp_path):
    vol = np.random.default_rng(0).standard_normal((3, 4, 5)).astype(np.float32)
    save_volume(tmp_path / "a", vol, (1.0, 0.5, 2.0), "t1")
    back, meta = load_volume(tmp_path / "a.vol")
    assert back.tobytes() == vol.tobytes()
    assert meta["dims"] == (3, 4, 5) and meta["spacing"] == (1.0, 0.5, 2.0) and meta["role"] == "t1"
    lab = np.arange(60, dtype=np.uint8).reshape(3, 4, 5)
    save_volume(tmp_path / "b", lab)
    assert load_volume(tmp_path / "b")[0].tobytes() == lab.tobytes()


def test_volume_bad_payload(tmp_path):
    save_volume(tmp_path / "a", np.zeros((2, 2, 2), np.float32))
    (tmp_path / "a.vol").write_bytes(b"\0" * 5)
    with pytest.raises(VolumeFormatError, match="payload"):
        load_volume(tmp_path / "a")


def test_subject_round_trip(tmp_path, tiny_subject):
    d = save_subject(tmp_path, tiny_subject)
    s = load_subject(d)
    assert s.image.tobytes() == tiny_subject.image.tobytes()
    assert s.labels.tobytes() == tiny_subject.labels.tobytes()
    assert np.array_equal(s.mask, tiny_subject.mask)


# preprocessing

def test_normalize_hand_case():
    v = np.zeros((1, 2, 2, 2), np.float32)
    v[0, 0, 0, 0], v[0, 1, 1, 1] = 2, 4
    out = normalize_intensity(v)
    assert out[0, 0, 0, 0] == np.float32(2 / 3) and out[0, 1, 1, 1] == np.float32(4 / 3)
    assert np.count_nonzero(out) == 2


@given(st.integers(0, 2 ** 31))
def test_normalize_unit_mean_idempotent_zero_preserving(seed):
    rng = np.random.default_rng(seed)
    v = (rng.random((2, 6, 6, 6)) * 100).astype(np.float32)
    v[:, rng.random((6, 6, 6)) < 0.3] = 0
    out = normalize_intensity(v)
    for ch in range(2):
        nz = out[ch][out[ch] != 0]
        assert abs(nz.astype(np.float64).mean() - 1) <= 1e-6
    np.testing.assert_array_equal(out == 0, v == 0)
    assert np.abs(normalize_intensity(out) - out).max() <= 1e-7


def test_normalize_all_zero_raises():
    with pytest.raises(PreprocessError):
        normalize_intensity(np.zeros((2, 3, 3, 3), np.float32))


def test_lr_schedule_values():
    assert lr_schedule(0) == 0.0005
    assert lr_schedule(499) == 0.0005
    assert lr_schedule(500) == 0.0005 * 0.9
    assert lr_schedule(1000) == 0.0005 * 0.9 ** 2
    lrs = [lr_schedule(s) for s in range(0, 5000, 37)]
    assert all(a >= b for a, b in zip(lrs, lrs[1:]))
    with pytest.raises(PreprocessError):
        StepDecay(interval=0)


def test_kfold_split():
    ids = [f"s{i}" for i in range(10)]
    folds = kfold_split(ids, 5, seed=3)
    assert [len(f.validation) for f in folds] == [2] * 5
    assert sorted(i for f in folds for i in f.validation) == sorted(ids)
    for f in folds:
        assert not set(f.train) & set(f.validation) and len(f.train) == 8
    assert kfold_split(ids, 5, seed=3) == folds
    with pytest.raises(PreprocessError):
        kfold_split(ids[:4], 5)


# configuration

def test_config_round_trip_and_unknown_key():
    cfg = preset("toy", "single")
    assert parse_config(cfg.to_text()) == cfg
    with pytest.raises(ConfigFileError, match="unknown"):
        parse_config("[train]\nepochz = 3\n")
    with pytest.raises(ConfigFileError):
        parse_config("[train]\nmode = exclusive\n", base=preset("toy", "single")).validate()


def test_mode_head_mismatch_rejected():
    cfg = preset("toy")
    with pytest.raises(ConfigFileError):
        TrainingConfig(model=cfg.model, train=replace(cfg.train, mode="single")).validate()


# training

def test_zero_epochs_returns_initialization(tiny_subject):
    cfg = _tiny_config(epochs=0)
    res = train(cfg, [tiny_subject])
    init = build_model(cfg.model).state_arrays()
    got = res.model.state_arrays()
    assert init.keys() == got.keys()
    assert all(init[k].tobytes() == got[k].tobytes() for k in init)


def test_exclusive_training_never_reads_gm(tiny_subject):
    res = train(_tiny_config(epochs=2), [tiny_subject])
    assert res.target_reads[GM] == 0
    assert res.target_reads[CSF] > 0 and res.target_reads[WM] > 0


def test_smoothed_training_loss_decreases(tiny_subject):
    # one full-volume patch without dropout or rotations: the data term is fixed
    res = train(_tiny_config(epochs=50, dropout=0.0, augment=False), [tiny_subject])
    loss = np.array([r.loss for r in res.history])
    smooth = np.convolve(loss, np.ones(5) / 5, mode="valid")
    assert np.all(np.diff(smooth) < 0)


def test_nan_input_aborts_with_diagnostic(tiny_subject):
    bad = replace(tiny_subject, image=np.full_like(tiny_subject.image, np.nan))
    with pytest.raises(TrainingError) as exc:
        train(_tiny_config(epochs=1), [bad])
    msg = str(exc.value)
    assert "step 0" in msg and "lr" in msg and "input range" in msg


def test_training_and_prediction_deterministic(tiny_subject):
    a = train(_tiny_config(epochs=2), [tiny_subject], [tiny_subject])
    b = train(_tiny_config(epochs=2), [tiny_subject], [tiny_subject])
    sa, sb = a.model.state_arrays(), b.model.state_arrays()
    assert all(sa[k].tobytes() == sb[k].tobytes() for k in sa)
    assert a.log_text() == b.log_text()
    pa = predict(a.model, tiny_subject.image, tiny_subject.mask)
    pb = predict(a.model, tiny_subject.image, tiny_subject.mask)
    assert pa.labels.tobytes() == pb.labels.tobytes() and pa.probs.tobytes() == pb.probs.tobytes()


def test_validation_history_and_selection(tiny_subject):
    res = train(_tiny_config(epochs=3), [tiny_subject], [tiny_subject])
    macros = [r.val_macro for r in res.history]
    assert all(m is not None for m in macros)
    assert res.best_macro_dsc == max(macros)
    assert res.history[res.best_epoch - 1].val_macro == res.best_macro_dsc


def test_single_mode_trains(tiny_subject):
    res = train(_tiny_config("single", epochs=1), [tiny_subject])
    assert res.betas == {"single": 1.0}
    assert res.model.config.head == "softmax"


# inference

def test_constant_stub_fuses_to_constant():
    image = np.ones((2, 20, 20, 20), np.float32)
    def stub(batch):
        out = np.empty((batch.shape[0], 2) + batch.shape[2:], np.float32)
        out[:, 0], out[:, 1] = 0.7, 0.2
        return out
    probs, count = fuse_volume(stub, image, 8, 2)
    assert np.abs(probs[0] - 0.7).max() <= 1e-6 and np.abs(probs[1] - 0.2).max() <= 1e-6
    assert count.min() >= 4


def test_predict_channel_mismatch():
    model = build_model(toy_config(patch_size=16))
    with pytest.raises(PredictError, match="channels"):
        predict(model, np.ones((3, 16, 16, 16), np.float32))


def test_predict_shapes_and_background(tiny_subject):
    model = build_model(toy_config(patch_size=16))
    pred = predict(model, tiny_subject.image[:, :15, :16, :13], tiny_subject.mask[:15, :16, :13])
    assert pred.labels.shape == (15, 16, 13) and pred.probs.shape == (2, 15, 16, 13)
    assert np.all(pred.labels[~tiny_subject.mask[:15, :16, :13]] == BACKGROUND)
    assert pred.contributions.min() >= 4


# evaluation

def test_evaluate_perfect_and_degenerate(tiny_subject):
    truths = {"a": tiny_subject.labels, "b": tiny_subject.labels}
    rep = evaluate(dict(truths), truths)
    for cls in ("csf", "gm", "wm"):
        assert rep.mean(cls, "dsc") == 1.0 and rep.mean(cls, "hd") == 0.0 and rep.mean(cls, "asd") == 0.0
    assert compare(rep, evaluate(dict(truths), truths), "wm") == DEGENERATE


def test_evaluate_subject_mismatch(tiny_subject):
    with pytest.raises(EvaluationError):
        evaluate({"a": tiny_subject.labels}, {"b": tiny_subject.labels})
