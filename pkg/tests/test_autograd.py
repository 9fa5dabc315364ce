import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from meshfield.autograd import (
    Tensor,
    concat,
    cosine_sim,
    gather_rows,
    matmul,
    maximum,
    minimum,
    segment_sum,
)
from meshfield.errors import ContractError, DimensionError, NumericError

from helpers import assert_grad_close, central_diff, naive_matmul

OP_TOL = 1e-6


def test_matmul_identity():
    a = Tensor([[1.0, 2.0], [3.0, 4.0]])
    out = matmul(Tensor(np.eye(2)), a)
    np.testing.assert_array_equal(out.data, a.data)


def test_matmul_against_naive_oracle():
    a = np.array([[1.0, 1.0]])
    b = np.array([[1.0, 2.0], [3.0, 4.0]])
    expected = naive_matmul(a, b)
    np.testing.assert_array_equal(expected, [[4.0, 6.0]])
    np.testing.assert_array_equal(matmul(Tensor(a), Tensor(b)).data, expected)

    rng = np.random.default_rng(7)
    a = rng.normal(size=(4, 3))
    b = rng.normal(size=(3, 5))
    np.testing.assert_allclose(matmul(Tensor(a), Tensor(b)).data, naive_matmul(a, b),
                               rtol=1e-13, atol=1e-13)


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 2\)"):
        matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 2))))


def test_matmul_gradient_matches_finite_differences():
    rng = np.random.default_rng(0)
    a0 = rng.normal(size=(3, 4))
    b0 = rng.normal(size=(4, 2))

    a = Tensor(a0, requires_grad=True)
    b = Tensor(b0, requires_grad=True)
    matmul(a, b).sum().backward()

    assert_grad_close(a.grad, central_diff(lambda x: (x @ b0).sum(), a0), OP_TOL)
    assert_grad_close(b.grad, central_diff(lambda x: (a0 @ x).sum(), b0), OP_TOL)


def test_broadcast_row_across_matrix():
    x = np.arange(12.0).reshape(4, 3)
    row = np.array([[1.0, 2.0, 3.0]])
    out = Tensor(x) * Tensor(row)
    np.testing.assert_array_equal(out.data, x * row)


def test_mul_by_zeros_annihilates():
    x = Tensor(np.arange(6.0).reshape(2, 3))
    out = x * Tensor(np.zeros((2, 3)))
    np.testing.assert_array_equal(out.data, np.zeros((2, 3)))


def test_elementwise_rejects_non_broadcastable():
    with pytest.raises(DimensionError):
        Tensor(np.ones((2, 3))) + Tensor(np.ones((2, 4)))
    with pytest.raises(DimensionError):
        Tensor(np.ones((2, 3))) * Tensor(np.ones((3, 3)))


@pytest.mark.parametrize("kind", ["add", "mul"])
def test_elementwise_broadcast_gradients_match_finite_differences(kind):
    rng = np.random.default_rng(3)
    x0 = rng.normal(size=(4, 3))
    r0 = rng.normal(size=(1, 3))

    def combine(a, b):
        return a + b if kind == "add" else a * b

    x = Tensor(x0, requires_grad=True)
    r = Tensor(r0, requires_grad=True)
    combine(x, r).sum().backward()

    assert x.grad.shape == x0.shape and r.grad.shape == r0.shape
    assert_grad_close(x.grad, central_diff(lambda v: combine(v, r0).sum(), x0), OP_TOL)
    assert_grad_close(r.grad, central_diff(lambda v: combine(x0, v).sum(), r0), OP_TOL)


def test_activation_values():
    assert Tensor(0.0).sigmoid().item() == 0.5
    assert Tensor(-3.0).relu().item() == 0.0
    assert Tensor(3.0).relu().item() == 3.0
    assert abs(Tensor(0.0).tanh().item()) == 0.0
    out = Tensor(np.array([100.0, -100.0])).sigmoid()
    assert np.all(out.data > 0.0) and np.all(out.data < 1.0)


def test_sigmoid_gradient_at_zero():
    x = Tensor(0.0, requires_grad=True)
    x.sigmoid().sum().backward()
    assert x.grad.item() == pytest.approx(0.25, abs=1e-15)


@pytest.mark.parametrize("name", ["relu", "sigmoid", "tanh", "sin", "cos", "softplus",
                                  "exp", "sqrt"])
def test_activation_gradients_match_finite_differences(name):
    rng = np.random.default_rng(11)
    x0 = rng.uniform(0.2, 2.0, size=(3, 4)) if name == "sqrt" else rng.normal(size=(3, 4))
    if name == "relu":
        x0 = x0 + np.sign(x0) * 0.05  # keep probes away from the kink

    x = Tensor(x0, requires_grad=True)
    getattr(x, name)().sum().backward()
    numeric = central_diff(lambda v: getattr(Tensor(v), name)().sum().item(), x0)
    assert_grad_close(x.grad, numeric, OP_TOL)


def test_mean_keeps_reduced_axis():
    x = Tensor([[1.0, 3.0], [5.0, 7.0]])
    out = x.mean(axis=0)
    assert out.shape == (1, 2)
    np.testing.assert_array_equal(out.data, [[3.0, 5.0]])


def test_mean_over_singleton_axis_is_identity():
    x = np.arange(5.0).reshape(1, 5)
    np.testing.assert_array_equal(Tensor(x).mean(axis=0).data, x)


def test_mean_axis_out_of_range():
    with pytest.raises(DimensionError):
        Tensor(np.ones((2, 2))).mean(axis=2)


def test_mean_gradient_distributes_one_over_n():
    x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    x.mean(axis=0).sum().backward()
    np.testing.assert_allclose(x.grad, np.full((2, 3), 0.5), rtol=0, atol=0)
    numeric = central_diff(lambda v: v.mean(axis=0).sum(), x.data)
    assert_grad_close(x.grad, numeric, OP_TOL)


def test_cosine_sim_self_is_one():
    rng = np.random.default_rng(5)
    v = rng.normal(size=8)
    assert cosine_sim(Tensor(v), Tensor(v)).item() == pytest.approx(1.0, abs=1e-12)


def test_cosine_sim_orthonormal_is_zero():
    e1 = np.array([1.0, 0.0, 0.0])
    e2 = np.array([0.0, 1.0, 0.0])
    assert cosine_sim(Tensor(e1), Tensor(e2)).item() == 0.0


def test_cosine_sim_zero_norm_raises():
    with pytest.raises(NumericError):
        cosine_sim(Tensor(np.zeros(3)), Tensor(np.ones(3)))


def test_cosine_sim_gradient_matches_finite_differences():
    rng = np.random.default_rng(9)
    a0 = rng.normal(size=6)
    b0 = rng.normal(size=6)
    a = Tensor(a0, requires_grad=True)
    b = Tensor(b0, requires_grad=True)
    cosine_sim(a, b).backward()
    assert_grad_close(a.grad, central_diff(lambda v: cosine_sim(Tensor(v), Tensor(b0)).item(), a0), OP_TOL)
    assert_grad_close(b.grad, central_diff(lambda v: cosine_sim(Tensor(a0), Tensor(v)).item(), b0), OP_TOL)


def test_backward_of_sum_is_ones():
    x = Tensor(np.arange(12.0).reshape(3, 4), requires_grad=True)
    x.sum().backward()
    np.testing.assert_array_equal(x.grad, np.ones((3, 4)))


def test_backward_of_sum_of_squares():
    x = Tensor([1.0, 2.0], requires_grad=True)
    (x * x).sum().backward()
    np.testing.assert_array_equal(x.grad, [2.0, 4.0])


def test_backward_rejects_non_scalar():
    x = Tensor(np.ones((2, 2)), requires_grad=True)
    with pytest.raises(ContractError):
        (x * 2.0).backward()


def test_backward_accumulates_across_calls():
    x = Tensor([1.0, 2.0], requires_grad=True)
    loss = (x * x).sum()
    loss.backward()
    loss.backward()
    np.testing.assert_array_equal(x.grad, [4.0, 8.0])
    x.zero_grad()
    assert x.grad is None


def test_grad_not_tracked_without_requires_grad():
    x = Tensor([1.0, 2.0])
    y = Tensor([3.0, 4.0], requires_grad=True)
    (x * y).sum().backward()
    assert x.grad is None
    np.testing.assert_array_equal(y.grad, [1.0, 2.0])


@settings(max_examples=30, deadline=None)
@given(rows=st.integers(1, 4), cols=st.integers(1, 4), seed=st.integers(0, 2**32 - 1),
       broadcast_rows=st.booleans(), broadcast_cols=st.booleans())
def test_broadcast_gradient_shape_matches_leaf_shape(rows, cols, seed, broadcast_rows,
                                                     broadcast_cols):
    rng = np.random.default_rng(seed)
    a = Tensor(rng.normal(size=(rows, cols)), requires_grad=True)
    b_shape = (1 if broadcast_rows else rows, 1 if broadcast_cols else cols)
    b = Tensor(rng.normal(size=b_shape), requires_grad=True)
    (a * b + b).sum().backward()
    assert a.grad.shape == a.shape
    assert b.grad.shape == b.shape


def test_determinism_bitwise():
    def run():
        rng = np.random.default_rng(1234)
        x = Tensor(rng.normal(size=(5, 5)), requires_grad=True)
        w = Tensor(rng.normal(size=(5, 5)), requires_grad=True)
        loss = (matmul(x, w).tanh() * x.sigmoid()).mean(axis=0).sum()
        loss.backward()
        return loss.item(), x.grad.copy(), w.grad.copy()

    l1, gx1, gw1 = run()
    l2, gx2, gw2 = run()
    assert l1 == l2
    assert np.array_equal(gx1, gx2) and np.array_equal(gw1, gw2)


def test_narrow_values_and_gradient():
    x0 = np.arange(12.0).reshape(3, 4)
    x = Tensor(x0, requires_grad=True)
    out = x.narrow(1, 1, 2)
    np.testing.assert_array_equal(out.data, x0[:, 1:3])
    out.sum().backward()
    expected = np.zeros((3, 4))
    expected[:, 1:3] = 1.0
    np.testing.assert_array_equal(x.grad, expected)
    with pytest.raises(DimensionError):
        x.narrow(1, 3, 2)


def test_concat_and_reshape_gradients():
    rng = np.random.default_rng(2)
    a0, b0 = rng.normal(size=(2, 3)), rng.normal(size=(2, 2))
    a = Tensor(a0, requires_grad=True)
    b = Tensor(b0, requires_grad=True)
    out = concat([a, b], axis=1).reshape(10)
    (out * out).sum().backward()
    np.testing.assert_allclose(a.grad, 2 * a0, rtol=1e-15)
    np.testing.assert_allclose(b.grad, 2 * b0, rtol=1e-15)


def test_gather_rows_scatters_gradient():
    x = Tensor(np.arange(8.0).reshape(4, 2), requires_grad=True)
    idx = np.array([0, 2, 2, 3])
    out = gather_rows(x, idx)
    np.testing.assert_array_equal(out.data, x.data[idx])
    out.sum().backward()
    np.testing.assert_array_equal(x.grad, [[1, 1], [0, 0], [2, 2], [1, 1]])


def test_segment_sum_values_and_gradient():
    x = Tensor(np.arange(8.0).reshape(4, 2), requires_grad=True)
    seg = np.array([0, 0, 2, 2])
    out = segment_sum(x, seg, 3)
    np.testing.assert_array_equal(out.data, [[2, 4], [0, 0], [10, 12]])
    (out * Tensor([[1.0, 1.0], [5.0, 5.0], [2.0, 2.0]])).sum().backward()
    np.testing.assert_array_equal(x.grad, [[1, 1], [1, 1], [2, 2], [2, 2]])


def test_min_max_clamp_gradients():
    rng = np.random.default_rng(4)
    a0 = rng.normal(size=(3, 3))
    b0 = rng.normal(size=(3, 3))
    a = Tensor(a0, requires_grad=True)
    b = Tensor(b0, requires_grad=True)
    (minimum(a, b) + maximum(a, b)).sum().backward()
    # min + max = a + b identically, so both gradients are all ones
    np.testing.assert_array_equal(a.grad, np.ones((3, 3)))
    np.testing.assert_array_equal(b.grad, np.ones((3, 3)))

    x = Tensor(np.array([-2.0, 0.3, 2.0]), requires_grad=True)
    x.clamp(0.0, 1.0).sum().backward()
    np.testing.assert_array_equal(x.grad, [0.0, 1.0, 0.0])


def test_composite_chain_gradient_matches_finite_differences():
    rng = np.random.default_rng(21)
    x0 = rng.normal(size=(4, 3))
    w0 = rng.normal(size=(3, 3))

    def f(x_np):
        x = Tensor(x_np, requires_grad=False)
        w = Tensor(w0)
        h = matmul(x, w).tanh()
        return (h * h).mean(axis=0).sum().item()

    x = Tensor(x0, requires_grad=True)
    h = matmul(x, Tensor(w0)).tanh()
    (h * h).mean(axis=0).sum().backward()
    assert_grad_close(x.grad, central_diff(f, x0), OP_TOL)
