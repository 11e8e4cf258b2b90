import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from isoseg.fusion import (TRANSFORMS, WEIGHT_FLOOR, FusionAccumulator, FusionError, PatchError, apply_transform,
                           axis_origins, bspline2, fuse, plan_patch_grid, regular_extent, rotate180,
                           spline_profile, spline_weights)


def test_1d_grid_enumeration():
    origins = axis_origins(8, 4, 2)
    assert origins == [0, 2, 4]
    cov = np.zeros(8, int)
    for o in origins:
        cov[o:o + 4] += 1
    assert cov.tolist() == [1, 1, 2, 2, 2, 2, 1, 1]


def test_full_size_patch_single_origin():
    grid = plan_patch_grid((128, 128, 128), 128)
    assert grid.origins == [(0, 0, 0)]


def test_patch_larger_than_volume():
    with pytest.raises(PatchError, match="zero-pad"):
        plan_patch_grid((10, 40, 40), 16)


def test_last_origin_clamped():
    assert axis_origins(37, 16, 8) == [0, 8, 16, 21]


@given(st.integers(16, 80), st.integers(16, 80), st.integers(16, 80))
def test_every_voxel_covered(d, h, w):
    assert plan_patch_grid((d, h, w), 16).coverage().min() >= 1


@given(st.integers(1, 4), st.integers(1, 4), st.integers(1, 4), st.sampled_from([4, 8, 16]))
def test_interior_covered_exactly_eight_times_on_aligned_grids(a, b, c, patch):
    dims = tuple(patch + n * patch // 2 for n in (a, b, c))
    grid = plan_patch_grid(dims, patch)
    assert grid.is_regular()
    cov = grid.coverage()
    half = patch // 2
    interior = cov[half:-half, half:-half, half:-half]
    assert interior.size and np.all(interior == 8)


def test_regular_extent():
    assert regular_extent(48, 32, 16) == 48
    assert regular_extent(50, 32, 16) == 64
    assert regular_extent(20, 32, 16) == 32


def test_thirty_two_predictions_per_interior_voxel():
    patch = 8
    grid = plan_patch_grid((16, 16, 16), patch)  # three patches per axis
    acc = FusionAccumulator(1, grid.dims, spline_weights(patch))
    for o in grid.origins:
        for t in TRANSFORMS:
            acc.add(o, np.full((1, patch, patch, patch), 0.3), t)
    assert acc.count[4:12, 4:12, 4:12].min() == 32 and acc.count[4:12, 4:12, 4:12].max() == 32


def test_spline_profile_formula():
    assert bspline2(np.array([0.0]))[0] == 0.75
    assert bspline2(np.array([1.0]))[0] == 0.125
    assert bspline2(np.array([1.5]))[0] == 0.0
    p = spline_profile(8)
    i = np.arange(8)
    raw = bspline2(1.5 * (i - 3.5) / 4) / bspline2(np.array([1.5 * 0.5 / 4]))[0]
    np.testing.assert_allclose(p, np.maximum(raw, WEIGHT_FLOOR), rtol=1e-15)


def test_spline_weights_peak_symmetry_corner():
    w = spline_weights(9)
    assert w[4, 4, 4] == 1.0
    np.testing.assert_array_equal(w, w[::-1])
    np.testing.assert_array_equal(w, w[:, ::-1])
    np.testing.assert_array_equal(w, w[:, :, ::-1])
    # corner: t = 1.5 * 4 / 4.5 = 4/3, B = (4/3 - 3/2)^2 / 2 = 1/72, peak 3/4
    edge = (1 / 72) / 0.75
    assert w[0, 0, 0] == pytest.approx(edge ** 3, rel=1e-12)
    assert w.min() > 0


def test_profile_decreases_away_from_centre():
    p = spline_profile(16)
    assert np.all(np.diff(p[8:]) < 0) and np.all(np.diff(p[:8]) > 0)


def test_rotate180_hand_mapping():
    a, b, c, d = 1, 2, 3, 4
    vol = np.array([[[a, b], [c, d]]])  # out-of-plane axis 0
    np.testing.assert_array_equal(rotate180(vol, 0)[0], [[d, c], [b, a]])


@given(st.integers(0, 2 ** 31), st.sampled_from(TRANSFORMS))
def test_transforms_are_involutions(seed, t):
    x = np.random.default_rng(seed).standard_normal((2, 3, 4, 5))
    assert apply_transform(apply_transform(x, t), t).tobytes() == x.tobytes()


def test_rotation_of_constant_and_bad_axis():
    x = np.full((3, 3, 3), 2.0)
    assert rotate180(x, 1).tobytes() == x.tobytes()
    with pytest.raises(PatchError):
        rotate180(x, 3)


def test_constant_predictions_fuse_to_constant():
    grid = plan_patch_grid((24, 20, 16), 8)
    rng = np.random.default_rng(0)
    preds = [(o, t, np.full((2, 8, 8, 8), 0.37)) for o in grid.origins for t in TRANSFORMS]
    fused = fuse(preds, grid, weights=rng.uniform(0.1, 1, (8, 8, 8)))
    assert np.abs(fused - 0.37).max() <= 1e-12


def test_single_patch_fuses_to_itself():
    grid = plan_patch_grid((8, 8, 8), 8)
    p = np.random.default_rng(1).random((3, 8, 8, 8)).astype(np.float32)
    fused = fuse([((0, 0, 0), "identity", p)], grid)
    assert fused.astype(np.float32).tobytes() == p.tobytes()
    np.testing.assert_allclose(fused, p, rtol=1e-15)


def test_two_patch_overlap_hand_case():
    # two patches along the last axis, values 0 and 1, overlap on voxels 2..3
    grid = plan_patch_grid((4, 4, 6), 4)
    assert grid.axis_origins[2] == [0, 2]
    w = spline_weights(4)
    fused = fuse([((0, 0, 0), "identity", np.zeros((1, 4, 4, 4))),
                  ((0, 0, 2), "identity", np.ones((1, 4, 4, 4)))], grid, w)
    prof = spline_profile(4)
    for x in (2, 3):
        w1, w2 = prof[x], prof[x - 2]
        assert fused[0, 1, 1, x] == pytest.approx(w2 / (w1 + w2), rel=1e-12)
    assert fused[0, 0, 0, 0] == 0 and fused[0, 0, 0, 5] == 1


def test_fusion_order_independent_and_convex():
    grid = plan_patch_grid((12, 12, 12), 8)
    rng = np.random.default_rng(2)
    preds = [(o, t, rng.random((1, 8, 8, 8))) for o in grid.origins for t in TRANSFORMS]
    a = fuse(preds, grid)
    b = fuse(preds[::-1], grid)
    assert np.abs(a - b).max() <= 1e-12
    assert a.min() >= min(p.min() for *_, p in preds) and a.max() <= max(p.max() for *_, p in preds)


def test_rotation_equivariant_model_matches_unaugmented():
    vol = np.random.default_rng(3).random((1, 16, 16, 16))
    grid = plan_patch_grid(vol.shape[1:], 8)
    crop = lambda o: vol[(slice(None),) + tuple(slice(a, a + 8) for a in o)]
    plain = fuse([(o, "identity", crop(o)) for o in grid.origins], grid)
    augmented = fuse([(o, t, apply_transform(crop(o), t)) for o in grid.origins for t in TRANSFORMS], grid)
    np.testing.assert_allclose(augmented, plain, rtol=0, atol=1e-12)
    np.testing.assert_allclose(plain, vol, rtol=0, atol=1e-12)


def test_partial_merge_matches_serial():
    grid = plan_patch_grid((16, 16, 16), 8)
    rng = np.random.default_rng(4)
    preds = [(o, rng.random((1, 8, 8, 8))) for o in grid.origins]
    w = spline_weights(8)
    serial = FusionAccumulator(1, grid.dims, w)
    parts = [FusionAccumulator(1, grid.dims, w) for _ in range(2)]
    for i, (o, p) in enumerate(preds):
        serial.add(o, p)
        parts[i % 2].add(o, p)
    parts[0].merge(parts[1])
    np.testing.assert_allclose(parts[0].finalize(), serial.finalize(), atol=1e-12)


def test_uncovered_voxel_is_error():
    grid = plan_patch_grid((16, 8, 8), 8)
    acc = FusionAccumulator(1, grid.dims, spline_weights(8))
    acc.add((0, 0, 0), np.zeros((1, 8, 8, 8)))
    with pytest.raises(FusionError):
        acc.finalize()
