import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from isoseg.engine import ContractError, DimensionError, NonFiniteError, Tensor, concat_channels, no_grad
from isoseg.engine.gradcheck import finite_difference_check, relative_error
from isoseg.engine.tensor import log, relu, sigmoid, softmax, tsum


def test_sum_gradient_is_ones():
    x = Tensor(np.random.default_rng(0).standard_normal((3, 4)), requires_grad=True)
    x.sum().backward()
    np.testing.assert_array_equal(x.grad, np.ones((3, 4)))


def test_square_sum_gradient_is_twice_input():
    x = Tensor(np.random.default_rng(1).standard_normal((5,)), requires_grad=True)
    (x * x).sum().backward()
    np.testing.assert_allclose(x.grad, 2 * x.data, rtol=0, atol=0)


def test_non_scalar_backward_is_contract_error():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ContractError):
        (x * 2).backward()


def test_unreachable_parameter_gets_zero_gradient():
    a = Tensor(np.ones(2), requires_grad=True)
    b = Tensor(np.ones(2), requires_grad=True)
    a.sum().backward()
    assert b.grad is None or not b.grad.any()


def test_shared_subexpression_visited_once():
    x = Tensor(np.array([3.0]), requires_grad=True)
    y = x * x
    (y + y).sum().backward()
    np.testing.assert_allclose(x.grad, [12.0])


def test_nan_is_hard_failure():
    x = Tensor(np.array([-1.0, 1.0]), requires_grad=True)
    with np.errstate(invalid="ignore"), pytest.raises(NonFiniteError):
        log(x)


def test_no_grad_builds_no_graph():
    x = Tensor(np.ones(3), requires_grad=True)
    with no_grad():
        y = x * 2
    assert not y.requires_grad


def test_relu_sigmoid_softmax_basics():
    np.testing.assert_array_equal(relu(Tensor(np.array([-1.0, 0.0, 2.0]))).data, [0, 0, 2])
    assert sigmoid(Tensor(np.array([0.0]))).data[0] == 0.5
    np.testing.assert_array_equal(softmax(Tensor(np.array([[0.0, 0.0]])), axis=1).data, [[0.5, 0.5]])


def test_softmax_large_logits_do_not_overflow():
    out = softmax(Tensor(np.array([[1000.0, 0.0]])), axis=1).data
    np.testing.assert_allclose(out, [[1.0, 0.0]], atol=1e-300)
    assert np.isfinite(out).all()


@given(st.floats(-50, 50))
def test_sigmoid_is_two_class_softmax(z):
    s = sigmoid(Tensor(np.array([z]))).data[0]
    sm = softmax(Tensor(np.array([[0.0, z]])), axis=1).data[0, 1]
    assert abs(s - sm) <= 1e-12


@given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=8))
def test_softmax_sums_to_one(values):
    out = softmax(Tensor(np.array([values])), axis=1).data
    assert abs(out.sum() - 1) <= 1e-6


def test_concat_channel_count_and_identity():
    rng = np.random.default_rng(2)
    a = Tensor(rng.standard_normal((1, 4, 2, 2, 2)))
    b = Tensor(rng.standard_normal((1, 12, 2, 2, 2)))
    c = concat_channels([a, b])
    assert c.shape[1] == 16
    assert concat_channels([a]) is a
    np.testing.assert_array_equal(c.data[:, :4], a.data)
    np.testing.assert_array_equal(c.data[:, 4:], b.data)


def test_concat_spatial_mismatch_names_axis():
    a = Tensor(np.zeros((1, 2, 2, 2, 2)))
    b = Tensor(np.zeros((1, 2, 2, 3, 2)))
    with pytest.raises(DimensionError, match="axis 3"):
        concat_channels([a, b])


def test_concat_gradient_splits_by_channel():
    rng = np.random.default_rng(3)
    a = Tensor(rng.standard_normal((2, 2, 2, 2, 2)), requires_grad=True)
    b = Tensor(rng.standard_normal((2, 3, 2, 2, 2)), requires_grad=True)
    w = rng.standard_normal((2, 5, 2, 2, 2))
    tsum(concat_channels([a, b]) * w).backward()
    np.testing.assert_array_equal(a.grad, w[:, :2])
    np.testing.assert_array_equal(b.grad, w[:, 2:])


def test_gradcheck_exact_for_linear_op():
    rng = np.random.default_rng(4)
    x = Tensor(rng.standard_normal(6), requires_grad=True)
    w = rng.standard_normal(6)
    assert finite_difference_check(lambda: tsum(x * w), [x]) < 1e-10


def test_relative_error_floor():
    assert relative_error(np.array([0.0]), np.array([1e-12])) == pytest.approx(1e-4)
    assert relative_error(np.array([0.0]), np.array([1e-12]), floor=1e-6) == pytest.approx(1e-6)
