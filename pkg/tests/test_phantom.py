import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from isoseg.labeling import BACKGROUND, CLASS_NAMES, CSF, GM, TISSUES, WM
from isoseg.phantom import (PhantomError, PhantomSpec, achieved_fractions, export_histograms,
                            generate_phantom, phantom_cohort)


@pytest.fixture(scope="module")
def default_phantom():
    return generate_phantom(PhantomSpec(seed=0))


def test_same_seed_bitwise_identical():
    a = generate_phantom(PhantomSpec(dims=(32, 32, 32), seed=7))
    b = generate_phantom(PhantomSpec(dims=(32, 32, 32), seed=7))
    assert a.image.tobytes() == b.image.tobytes()
    assert a.labels.tobytes() == b.labels.tobytes()
    assert a.mask.tobytes() == b.mask.tobytes()
    c = generate_phantom(PhantomSpec(dims=(32, 32, 32), seed=8))
    assert c.labels.tobytes() != a.labels.tobytes()


def test_noise_free_unblurred_intensities_equal_means():
    spec = PhantomSpec(dims=(32, 32, 32), seed=1, noise=0.0, blur=0.0)
    s = generate_phantom(spec)
    for code in TISSUES:
        for ch in range(2):
            vals = s.image[ch][s.labels == code]
            assert np.all(vals == np.float32(spec.means[CLASS_NAMES[code]][ch]))
    assert np.all(s.image[:, ~s.mask] == 0)


def test_default_histogram_overlaps(default_phantom):
    h = export_histograms(default_phantom)
    for ch in ("t1", "t2"):
        assert h.overlap("gm", "wm", ch) > 0.5
        assert h.overlap("csf", "gm", ch) < 0.2
        assert h.overlap("csf", "wm", ch) < 0.2


def test_histogram_mass_conservation(default_phantom):
    h = export_histograms(default_phantom)
    for code in TISSUES:
        n = int((default_phantom.labels == code).sum())
        for ch in ("t1", "t2"):
            assert int(h.counts[(CLASS_NAMES[code], ch)].sum()) == n
    assert len(h.edges["t1"]) == 257
    rows = h.to_tsv().splitlines()
    assert len(rows) == 2 + 6


def test_single_intensity_class_fills_one_bin():
    s = generate_phantom(PhantomSpec(dims=(32, 32, 32), seed=2, noise=0.0, blur=0.0))
    h = export_histograms(s)
    for cls in ("csf", "gm", "wm"):
        c = h.counts[(cls, "t1")]
        assert np.count_nonzero(c) == 1


@settings(max_examples=6)
@given(st.integers(0, 10_000))
def test_partition_and_prevalence(seed):
    s = generate_phantom(PhantomSpec(dims=(32, 32, 32), seed=seed))
    assert np.all(np.isin(s.labels[s.mask], list(TISSUES)))
    assert np.all(s.labels[~s.mask] == BACKGROUND)
    fr = achieved_fractions(s.labels)
    target = PhantomSpec().target_fractions
    for k in target:
        assert abs(fr[k] - target[k]) <= 0.2 * target[k]
    assert np.all(s.image[:, s.mask] > 0)


def test_isointense_condition_enforced():
    spec = PhantomSpec(means={"csf": (60.0, 150.0), "gm": (100.0, 100.0), "wm": (130.0, 95.0)})
    with pytest.raises(PhantomError, match="isointense"):
        generate_phantom(spec)


def test_default_means_are_isointense():
    spec = PhantomSpec()
    spec.validate()
    for ch in range(2):
        gap = abs(spec.means["gm"][ch] - spec.means["wm"][ch])
        assert gap <= 0.5 * spec.stds["gm"][ch]


def test_unreachable_ratio_raises():
    with pytest.raises(PhantomError, match="attempts"):
        generate_phantom(PhantomSpec(dims=(4, 4, 4), ratio={"csf": 1.0, "gm": 1000.0, "wm": 1.0},
                                     max_retries=2))


def test_cohort_names_and_shapes():
    cohort = phantom_cohort(2, base_seed=3, dims=(24, 24, 24))
    assert [s.name for s in cohort] == ["phantom003", "phantom004"]
    assert cohort[0].image.shape == (2, 24, 24, 24) and cohort[0].image.dtype == np.float32
    assert cohort[0].labels.dtype == np.uint8 and cohort[0].mask.dtype == bool
