import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from isoseg.densenet import (ConfigError, Model, ModelConfig, build_model, compressed, count_parameters,
                             dense_block_forward, load_model, paper_config, save_model, toy_config,
                             transition_down, transition_up)
from isoseg.engine import Tensor, no_grad
from isoseg.engine.tensor import tsum
from isoseg.layers import Conv, DenseBlock, Module

PARAM_BAND = (1_120_000, 1_680_000)


def _input(shape, seed=0, dtype=np.float32):
    return Tensor(np.random.default_rng(seed).standard_normal(shape).astype(dtype))


def test_paper_scale_parameter_count_in_band():
    n = count_parameters(build_model(paper_config("sigmoid")))
    assert PARAM_BAND[0] <= n <= PARAM_BAND[1]


def test_exclusive_head_smaller_than_single_label_head():
    excl = count_parameters(build_model(paper_config("sigmoid")))
    single = count_parameters(build_model(paper_config("softmax")))
    assert excl < single
    # the heads differ only in the final 1x1 conv: 2 more outputs of (final_width + 1) scalars
    assert single - excl == 2 * (paper_config().final_width + 1)


def test_single_conv_count_is_220():
    class One(Module):
        def __init__(self):
            self.conv = Conv(2, 4, 3, np.random.default_rng(0))
    assert count_parameters(One()) == 220


def test_empty_module_counts_zero():
    assert count_parameters(Module()) == 0


def test_five_skips_at_paper_scale():
    model = build_model(paper_config())
    assert len(model.skips) == 5
    assert sorted(i for i, _ in model.skips) == list(range(5))


def test_toy_forward_shape_and_range():
    model = build_model(toy_config())
    with no_grad():
        out = model(_input((1, 2, 32, 32, 32)))
    assert out.shape == (1, 2, 32, 32, 32)
    assert out.data.min() >= 0 and out.data.max() <= 1


def test_softmax_head_sums_to_one():
    model = build_model(toy_config("softmax"))
    with no_grad():
        out = model(_input((1, 2, 32, 32, 32))).data
    assert out.shape[1] == 4
    np.testing.assert_allclose(out.sum(axis=1), 1, atol=1e-5)


def test_eval_forward_deterministic():
    model = build_model(toy_config())
    x = _input((1, 2, 32, 32, 32))
    with no_grad():
        a, b = model(x).data, model(x).data
    assert a.tobytes() == b.tobytes()


def test_indivisible_patch_is_config_error():
    with pytest.raises(ConfigError, match="divisible by 16"):
        build_model(toy_config(patch_size=40))


@pytest.mark.parametrize("field,value", [("compression", 0.0), ("compression", 1.5), ("growth_rate", 0),
                                         ("head", "tanh"), ("dropout", 1.0)])
def test_invalid_configs(field, value):
    cfg = dataclasses.replace(toy_config(), **{field: value})
    with pytest.raises(ConfigError):
        cfg.validate()


def test_config_dict_round_trip_rejects_unknown():
    cfg = toy_config()
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ConfigError):
        ModelConfig.from_dict({**cfg.to_dict(), "width": 3})


def _block(cin, k, layers, seed=0):
    return DenseBlock(cin, layers, k, 4 * k, 0.0, np.random.default_rng(seed), 0.9, 1e-5, np.float64)


def test_dense_block_24_plus_4x12_is_72():
    block = _block(24, 12, 4)
    assert block.cout == 72
    assert [l.cin for l in block.layers] == [24, 36, 48, 60]
    out = dense_block_forward(block, _input((1, 24, 4, 4, 4), dtype=np.float64), training=True)
    assert out.shape[1] == 72


def test_dense_block_channel_mismatch():
    with pytest.raises(ConfigError):
        dense_block_forward(_block(4, 2, 2), _input((1, 5, 4, 4, 4), dtype=np.float64))


def test_zeroing_later_layer_leaves_earlier_copies():
    block = _block(3, 2, 3)
    x = _input((1, 3, 4, 4, 4), dtype=np.float64)
    before = dense_block_forward(block, x, training=True).data
    for p in block.layers[2].parameters():
        p.data[...] = 0
    after = dense_block_forward(block, x, training=True).data
    np.testing.assert_array_equal(before[:, :7], after[:, :7])


def test_gradient_reaches_block_input():
    block = _block(3, 2, 3)
    x = Tensor(np.random.default_rng(1).standard_normal((2, 3, 4, 4, 4)), requires_grad=True)
    r = np.random.default_rng(2).standard_normal((2, 9, 4, 4, 4))
    tsum(dense_block_forward(block, x, training=True) * r).backward()
    assert np.abs(x.grad).min() > 0


def test_compression_ceiling_rule():
    assert compressed(72, 0.5) == 36
    assert compressed(7, 0.5) == 4
    assert compressed(13, 1.0) == 13


def test_transitions_round_trip_shape():
    cfg = dataclasses.replace(toy_config(), compression=1.0)
    model = build_model(cfg)
    td, tu = model.transitions_down[0], model.transitions_up[-1]
    assert td.cout == td.cin
    x = _input((1, td.cin, 8, 8, 8))
    down = transition_down(td, x, training=True)
    assert down.shape == (1, td.cin, 4, 4, 4)
    up = transition_up(tu, _input((1, tu.cin, 4, 4, 4)), training=True)
    assert up.shape[2:] == (8, 8, 8)


@settings(max_examples=8)
@given(levels=st.integers(1, 3), layers=st.integers(1, 2), growth=st.integers(1, 4),
       width=st.integers(2, 6), theta=st.sampled_from([0.5, 0.75, 1.0]), head=st.sampled_from(["sigmoid", "softmax"]))
def test_output_shape_equals_input_shape(levels, layers, growth, width, theta, head):
    patch = 2 * 2 ** levels
    cfg = ModelConfig(patch_size=patch, levels=levels, layers_per_block=layers, growth_rate=growth,
                      initial_width=width, final_width=width, compression=theta, head=head,
                      out_channels=2 if head == "sigmoid" else 4)
    model = build_model(cfg)
    with no_grad():
        out = model(_input((2, 2, patch, patch, patch)))
    assert out.shape == (2, cfg.out_channels, patch, patch, patch)


def test_every_parameter_receives_gradient():
    cfg = toy_config(patch_size=16)
    cfg.dropout = 0.0
    model = Model(cfg, dtype=np.float64)
    x = _input((2, 2, 16, 16, 16), dtype=np.float64)
    r = np.random.default_rng(3).standard_normal((2, 2, 16, 16, 16))
    tsum(model.forward(x, training=True) * r).backward()
    for name, p in model.named_parameters():
        assert p.grad is not None, name
        if name.endswith("conv.bias") and not name.startswith("head"):
            continue  # batch norm cancels biases of the conv feeding it
        assert np.abs(p.grad).max() > 0, name


def test_save_load_forward_bitwise(tmp_path):
    model = build_model(toy_config())
    x = _input((1, 2, 32, 32, 32))
    model.forward(x, training=True, rng=np.random.default_rng(0))  # move running stats off defaults
    path = save_model(model, tmp_path / "m.ckpt")
    clone = load_model(path)
    assert clone.config == model.config
    with no_grad():
        assert model(x).data.tobytes() == clone(x).data.tobytes()


@pytest.mark.slow
def test_paper_scale_forward_128():
    model = build_model(paper_config())
    with no_grad():
        out = model(np.zeros((1, 2, 128, 128, 128), dtype=np.float32))
    assert out.shape == (1, 2, 128, 128, 128)
