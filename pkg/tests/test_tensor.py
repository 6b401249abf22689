import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from comve import tensor as T
from comve.tensor import ShapeError, Tensor

from helpers import check_gradients, finite_difference_grads, relative_error


class TestMatmul:
    def test_identity(self):
        a = Tensor(np.eye(2))
        b = Tensor([[1.0, 2.0], [3.0, 4.0]])
        np.testing.assert_array_equal(T.matmul(a, b).data, b.data)

    def test_hand_product(self):
        a = Tensor([[1.0, 2.0], [3.0, 4.0]])
        b = Tensor([[5.0, 6.0], [7.0, 8.0]])
        np.testing.assert_array_equal(
            T.matmul(a, b).data, [[19.0, 22.0], [43.0, 50.0]])

    def test_zeros_annihilate(self):
        rng = np.random.default_rng(0)
        out = T.matmul(Tensor(np.zeros((2, 3))), Tensor(rng.normal(size=(3, 4))))
        assert out.shape == (2, 4)
        np.testing.assert_array_equal(out.data, np.zeros((2, 4)))

    def test_mismatch_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 4\)"):
            T.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 4))))


class TestSoftmax:
    def test_uniform(self):
        out = T.softmax(Tensor([0.0, 0.0, 0.0]), axis=0)
        np.testing.assert_allclose(out.data, [1 / 3] * 3, rtol=0, atol=1e-15)

    def test_log_two(self):
        out = T.softmax(Tensor([0.0, math.log(2.0)]), axis=0)
        np.testing.assert_allclose(out.data, [1 / 3, 2 / 3], atol=1e-15)

    @given(st.lists(st.floats(-50, 50), min_size=2, max_size=6),
           st.floats(-100, 100))
    @settings(max_examples=50, deadline=None)
    def test_shift_invariance_and_normalization(self, values, shift):
        x = Tensor(values)
        a = T.softmax(x, axis=0).data
        b = T.softmax(Tensor([v + shift for v in values]), axis=0).data
        np.testing.assert_allclose(a, b, atol=1e-12)
        assert abs(a.sum() - 1.0) <= 1e-12
        assert ((a >= 0) & (a <= 1)).all()

    def test_rows_sum_to_one_2d(self):
        rng = np.random.default_rng(1)
        out = T.softmax(Tensor(rng.normal(size=(4, 7)) * 30), axis=-1).data
        np.testing.assert_allclose(out.sum(axis=-1), np.ones(4), atol=1e-12)

    def test_bad_axis(self):
        with pytest.raises(ShapeError):
            T.softmax(Tensor([1.0, 2.0]), axis=3)


class TestCrossEntropy:
    def test_uniform_logits(self):
        logits = Tensor(np.zeros((1, 4)))
        loss = T.cross_entropy(logits, [2])
        assert loss.item() == pytest.approx(math.log(4.0), rel=1e-12)

    def test_confident_correct(self):
        loss = T.cross_entropy(Tensor([[30.0, 0.0, 0.0]]), [0])
        assert loss.item() == pytest.approx(0.0, abs=1e-12)

    def test_mean_over_batch(self):
        row = [0.3, -1.2, 0.7]
        single = T.cross_entropy(Tensor([row]), [1]).item()
        double = T.cross_entropy(Tensor([row, row]), [1, 1]).item()
        assert double == pytest.approx(single, rel=1e-15)

    def test_out_of_range_target(self):
        with pytest.raises(IndexError):
            T.cross_entropy(Tensor(np.zeros((1, 3))), [3])


class TestBackward:
    def test_sum_gradient(self):
        x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
        T.tensor_sum(x).backward()
        np.testing.assert_array_equal(x.grad, [1.0, 1.0, 1.0])

    def test_square_gradient(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        T.tensor_sum(x * x).backward()
        np.testing.assert_array_equal(x.grad, [2.0, 4.0])

    def test_accumulates_until_zeroed(self):
        x = Tensor([1.0, 1.0], requires_grad=True)
        T.tensor_sum(x).backward()
        T.tensor_sum(x).backward()
        np.testing.assert_array_equal(x.grad, [2.0, 2.0])
        x.zero_grad()
        assert x.grad is None

    def test_non_scalar_loss_rejected(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with pytest.raises(ValueError, match="scalar"):
            (x * x).backward()

    def test_composite_graph_matches_finite_differences(self):
        rng = np.random.default_rng(7)
        x = Tensor(rng.normal(size=(2, 3)), requires_grad=True, name="x")
        y = Tensor(rng.normal(size=(3, 2)), requires_grad=True, name="y")

        def loss():
            z = T.tanh(T.matmul(x, y))
            return T.tensor_sum(T.softmax(z, axis=-1) * z)

        worst = check_gradients(loss, [x, y], tol=1e-5)
        assert worst < 1e-5


def _rand(rng, shape):
    return Tensor(rng.normal(size=shape), requires_grad=True)


# Every differentiable op, checked against central differences on small
# random tensors (<= 16 elements each).
OP_CASES = {
    "add_broadcast": lambda rng: (
        lambda a, b: T.tensor_sum(T.tanh(a + b)),
        [_rand(rng, (2, 3)), _rand(rng, (3,))]),
    "mul_broadcast": lambda rng: (
        lambda a, b: T.tensor_sum(T.tanh(a * b)),
        [_rand(rng, (2, 3)), _rand(rng, (2, 1))]),
    "mul_scalar": lambda rng: (
        lambda a: T.tensor_sum(T.tanh(a * 0.7)), [_rand(rng, (4,))]),
    "matmul": lambda rng: (
        lambda a, b: T.tensor_sum(T.tanh(T.matmul(a, b))),
        [_rand(rng, (2, 3)), _rand(rng, (3, 2))]),
    "matmul_batched": lambda rng: (
        lambda a, b: T.tensor_sum(T.tanh(T.matmul(a, b))),
        [_rand(rng, (2, 2, 2)), _rand(rng, (2, 2, 2))]),
    "reshape_transpose": lambda rng: (
        lambda a: T.tensor_sum(T.tanh(T.transpose(T.reshape(a, (3, 2)), (1, 0)))),
        [_rand(rng, (2, 3))]),
    "sum_axis": lambda rng: (
        lambda a: T.tensor_sum(T.tanh(T.tensor_sum(a, axis=1))),
        [_rand(rng, (3, 4))]),
    "mean": lambda rng: (
        lambda a: T.tensor_mean(a * a), [_rand(rng, (3, 4))]),
    "tanh": lambda rng: (lambda a: T.tensor_sum(T.tanh(a)), [_rand(rng, (5,))]),
    "gelu": lambda rng: (lambda a: T.tensor_sum(T.gelu(a)), [_rand(rng, (6,))]),
    "softmax": lambda rng: (
        lambda a: T.tensor_sum(T.softmax(a, axis=-1) * T.constant(
            np.arange(8, dtype=float).reshape(2, 4))),
        [_rand(rng, (2, 4))]),
    "log_softmax": lambda rng: (
        lambda a: T.tensor_sum(T.log_softmax(a, axis=-1) * T.constant(
            np.arange(8, dtype=float).reshape(2, 4))),
        [_rand(rng, (2, 4))]),
    "layer_norm": lambda rng: (
        lambda x, g, b: T.tensor_sum(T.layer_norm(x, g, b) * T.constant(
            np.arange(8, dtype=float).reshape(2, 4))),
        [_rand(rng, (2, 4)), _rand(rng, (4,)), _rand(rng, (4,))]),
    "embedding": lambda rng: (
        lambda t: T.tensor_sum(T.tanh(T.embedding(t, np.array([[0, 2], [1, 1]])))),
        [_rand(rng, (3, 2))]),
    "gather_last": lambda rng: (
        lambda a: T.tensor_sum(T.gather_last(a, np.array([1, 0, 2]))),
        [_rand(rng, (3, 4))]),
    "take_position": lambda rng: (
        lambda a: T.tensor_sum(T.tanh(T.take_position(a, 1, axis=1))),
        [_rand(rng, (2, 3, 2))]),
    "dropout_fixed_mask": lambda rng: (
        lambda a: T.tensor_sum(T.dropout(a, 0.5, np.random.default_rng(11))),
        [_rand(rng, (4, 4))]),
    "cross_entropy": lambda rng: (
        lambda a: T.cross_entropy(a, np.array([1, 3])), [_rand(rng, (2, 4))]),
}


@pytest.mark.parametrize("name", sorted(OP_CASES))
def test_op_gradient_matches_finite_differences(name):
    rng = np.random.default_rng(hash(name) % (2**32))
    build, params = OP_CASES[name](rng)
    check_gradients(lambda: build(*params), params, tol=1e-5)


class TestHygiene:
    def test_row_major_float64(self):
        x = Tensor(np.arange(6).reshape(2, 3).T)
        assert x.data.dtype == np.float64
        assert x.data.flags["C_CONTIGUOUS"]

    def test_finite_outputs_on_finite_inputs(self):
        rng = np.random.default_rng(3)
        x = Tensor(rng.normal(size=(3, 5)) * 200)
        for out in (T.softmax(x, -1), T.log_softmax(x, -1), T.gelu(x),
                    T.tanh(x), T.matmul(x, Tensor(rng.normal(size=(5, 2))))):
            assert np.isfinite(out.data).all()

    def test_no_grad_without_requires_grad(self):
        x = Tensor([1.0, 2.0])
        y = Tensor([3.0, 4.0], requires_grad=True)
        T.tensor_sum(x * y).backward()
        assert x.grad is None
        np.testing.assert_array_equal(y.grad, [1.0, 2.0])

    def test_oracle_self_check(self):
        # the finite-difference helper itself on a known derivative
        x = Tensor([0.5, -0.3])
        (num,) = finite_difference_grads(
            lambda: T.tensor_sum(x * x), [x])
        assert relative_error(num, 2 * x.data) < 1e-9
