"""Engine tests: forward values, backward rules, finite-difference properties."""

import math

import numpy as np
import pytest

from poirec.tensor import (LOG_FLOOR, ShapeError, Tensor, add, concat, const,
                           elementwise_mul, exp, finite_diff_check, gather_rows,
                           leaky_relu, log, matmul, mean, neg, param, relu, reshape,
                           scalar_mul, segment_softmax, segment_sum, softmax,
                           stack_scalars, sum_, transpose)


class TestForwardValues:
    def test_softmax_symmetry(self):
        out = softmax(const([0.0, 0.0, 0.0]), axis=0)
        np.testing.assert_allclose(out.data, [1 / 3] * 3)

    def test_softmax_analytic(self):
        out = softmax(const([0.0, math.log(3.0)]), axis=0)
        np.testing.assert_allclose(out.data, [0.25, 0.75], atol=1e-12)

    def test_leaky_relu_definition(self):
        out = leaky_relu(const([-1.0, 2.0]), 0.2)
        np.testing.assert_allclose(out.data, [-0.2, 2.0])

    def test_log_clamps_at_floor(self):
        out = log(const([0.0, 1e-15, 1.0]))
        assert out.data[0] == math.log(LOG_FLOOR)
        assert out.data[1] == math.log(LOG_FLOOR)
        assert out.data[2] == 0.0

    def test_gather_rows_values_and_range_check(self):
        t = const(np.arange(6.0).reshape(3, 2))
        np.testing.assert_allclose(gather_rows(t, [2, 0, 2]).data,
                                   [[4, 5], [0, 1], [4, 5]])
        with pytest.raises(IndexError):
            gather_rows(t, [3])

    def test_segment_softmax_groups(self):
        out = segment_softmax(const([0.0, 0.0, 1.0, 5.0]), [0, 0, 0, 1], 2)
        expected = np.exp([0.0, 0.0, 1.0]) / np.exp([0.0, 0.0, 1.0]).sum()
        np.testing.assert_allclose(out.data[:3], expected)
        assert out.data[3] == 1.0  # singleton segment

    def test_segment_sum_buckets(self):
        out = segment_sum(const(np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])), [1, 1, 0], 3)
        np.testing.assert_allclose(out.data, [[5, 6], [4, 6], [0, 0]])

    def test_softmax_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            softmax(const([np.inf, 0.0]), axis=0)


class TestShapeErrors:
    def test_errors_name_op_and_shapes(self):
        a, b = const(np.zeros((2, 3))), const(np.zeros((4, 2)))
        with pytest.raises(ShapeError, match=r"matmul.*2, 3.*4, 2"):
            matmul(a, b)
        with pytest.raises(ShapeError, match="add"):
            add(const(np.zeros(3)), const(np.zeros(4)))
        with pytest.raises(ShapeError, match="concat"):
            concat([const(np.zeros((2, 2))), const(np.zeros((2, 3)))], axis=0)

    def test_backward_requires_scalar(self):
        x = param(np.ones(3))
        with pytest.raises(ShapeError, match="backward"):
            scalar_mul(x, 2.0).backward()


class TestBackwardRules:
    def test_sum_gives_ones(self):
        x = param(np.arange(4.0))
        sum_(x).backward()
        np.testing.assert_allclose(x.grad, np.ones(4))

    def test_mean_gives_inverse_n(self):
        x = param(np.arange(5.0))
        mean(x).backward()
        np.testing.assert_allclose(x.grad, np.full(5, 0.2))

    def test_fanout_accumulates_to_sum_of_paths(self):
        # y = sum(x) + sum(x * x): grads add across the two consumers
        x = param(np.array([1.0, -2.0, 3.0]))
        add(sum_(x), sum_(elementwise_mul(x, x))).backward()
        np.testing.assert_allclose(x.grad, 1.0 + 2.0 * x.data)

    def test_grads_accumulate_across_backward_calls(self):
        x = param(np.ones(2))
        sum_(x).backward()
        sum_(x).backward()
        np.testing.assert_allclose(x.grad, [2.0, 2.0])

    def test_gather_scatter_adds_duplicate_indices(self):
        table = param(np.zeros((3, 2)))
        sum_(gather_rows(table, [1, 1, 0])).backward()
        np.testing.assert_allclose(table.grad, [[1, 1], [2, 2], [0, 0]])


def _fd(build, leaves, tol=1e-6):
    err = finite_diff_check(build, leaves)
    assert err < tol, f"finite-difference error {err}"


class TestGradientsMatchFiniteDifferences:
    """Every registered primitive, reduced to a scalar through a generic
    weighting so all output entries influence the loss."""

    def setup_method(self):
        self.rng = np.random.default_rng(123)
        self._weights = {}

    def weighted(self, t):
        # Weighting consts are frozen per shape so loss_fn stays deterministic
        # across the repeated evaluations inside finite_diff_check.
        key = t.data.shape
        if key not in self._weights:
            self._weights[key] = const(self.rng.normal(size=key))
        return sum_(elementwise_mul(t, self._weights[key]))

    def test_matmul_2d_2d(self):
        a, b = param(self.rng.normal(size=(3, 4))), param(self.rng.normal(size=(4, 2)))
        _fd(lambda: self.weighted(matmul(a, b)), [a, b])

    def test_matmul_2d_1d(self):
        a, b = param(self.rng.normal(size=(3, 4))), param(self.rng.normal(size=4))
        _fd(lambda: self.weighted(matmul(a, b)), [a, b])

    def test_matmul_1d_2d(self):
        a, b = param(self.rng.normal(size=4)), param(self.rng.normal(size=(4, 3)))
        _fd(lambda: self.weighted(matmul(a, b)), [a, b])

    def test_add_with_row_broadcast(self):
        a, b = param(self.rng.normal(size=(3, 4))), param(self.rng.normal(size=4))
        _fd(lambda: self.weighted(add(a, b)), [a, b])

    def test_elementwise_mul_with_column_broadcast(self):
        a, b = param(self.rng.normal(size=(5, 3))), param(self.rng.normal(size=(5, 1)))
        _fd(lambda: self.weighted(elementwise_mul(a, b)), [a, b])

    def test_elementwise_mul_scalar_broadcast(self):
        a, b = param(self.rng.normal(size=4)), param(self.rng.normal(size=()))
        _fd(lambda: self.weighted(elementwise_mul(a, b)), [a, b])

    def test_scalar_mul_neg_exp(self):
        a = param(self.rng.normal(size=(2, 3)))
        _fd(lambda: self.weighted(exp(neg(scalar_mul(a, 0.7)))), [a])

    def test_concat_axis0_and_axis1(self):
        a, b = param(self.rng.normal(size=(2, 3))), param(self.rng.normal(size=(2, 3)))
        _fd(lambda: self.weighted(concat([a, b], axis=0)), [a, b])
        _fd(lambda: self.weighted(concat([a, b], axis=1)), [a, b])

    def test_relu_and_leaky_off_kink(self):
        a = param(self.rng.normal(size=(3, 3)) + np.sign(self.rng.normal(size=(3, 3))) * 0.5)
        _fd(lambda: self.weighted(relu(a)), [a])
        _fd(lambda: self.weighted(leaky_relu(a, 0.2)), [a])

    def test_log_positive_inputs(self):
        a = param(self.rng.uniform(0.5, 2.0, size=5))
        _fd(lambda: self.weighted(log(a)), [a])

    def test_mean_sum_axes(self):
        a = param(self.rng.normal(size=(3, 4)))
        for axis in (None, 0, 1):
            _fd(lambda ax=axis: self.weighted(mean(a, axis=ax)), [a])
            _fd(lambda ax=axis: self.weighted(sum_(a, axis=ax)), [a])

    def test_softmax_axes(self):
        a = param(self.rng.normal(size=(3, 4)))
        for axis in (0, 1):
            _fd(lambda ax=axis: self.weighted(softmax(a, axis=ax)), [a])

    def test_transpose_reshape(self):
        a = param(self.rng.normal(size=(3, 4)))
        _fd(lambda: self.weighted(transpose(a)), [a])
        _fd(lambda: self.weighted(reshape(a, (2, 6))), [a])

    def test_gather_rows_duplicates(self):
        a = param(self.rng.normal(size=(4, 3)))
        _fd(lambda: self.weighted(gather_rows(a, [0, 2, 2, 1])), [a])

    def test_segment_sum(self):
        a = param(self.rng.normal(size=(5, 2)))
        _fd(lambda: self.weighted(segment_sum(a, [0, 1, 1, 2, 0], 3)), [a])

    def test_segment_softmax(self):
        a = param(self.rng.normal(size=6))
        _fd(lambda: self.weighted(segment_softmax(a, [0, 0, 1, 1, 1, 2], 3)), [a])

    def test_three_layer_composite(self):
        W1 = param(self.rng.normal(size=(5, 4)))
        W2 = param(self.rng.normal(size=(4, 5)))
        W3 = param(self.rng.normal(size=(2, 4)))
        x = const(self.rng.normal(size=4))

        def build():
            h1 = relu(matmul(W1, x))
            h2 = leaky_relu(matmul(W2, h1), 0.2)
            out = softmax(matmul(W3, h2), axis=0)
            return neg(log(sum_(elementwise_mul(out, const(np.array([1.0, 0.0]))))))
        err = finite_diff_check(build, [W1, W2, W3])
        assert err < 1e-4


class TestSoftmaxInvariants:
    def test_rows_sum_to_one_and_nonnegative(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            x = const(rng.normal(scale=5, size=(4, 6)))
            p = softmax(x, axis=1).data
            assert (p >= 0).all()
            np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-9)

    def test_shift_invariance(self):
        rng = np.random.default_rng(8)
        for _ in range(50):
            x = rng.normal(size=7)
            a = softmax(const(x), axis=0).data
            b = softmax(const(x + 123.456), axis=0).data
            assert np.abs(a - b).max() < 1e-9


class TestFiniteDiffCheck:
    def test_quadratic_is_tight(self):
        x = param(np.array([0.3, -1.2, 2.0]))
        err = finite_diff_check(lambda: scalar_mul(sum_(elementwise_mul(x, x)), 0.5), [x])
        assert err < 1e-9

    def test_constant_loss_reports_zero(self):
        x = param(np.ones(3))
        err = finite_diff_check(lambda: const(np.array(1.5)), [x])
        assert err == 0.0


class TestDeterminism:
    def test_identical_builds_are_bitwise_identical(self):
        def run():
            rng = np.random.default_rng(42)
            a = param(rng.normal(size=(3, 3)))
            b = param(rng.normal(size=3))
            loss = sum_(softmax(matmul(a, b), axis=0))
            loss.backward()
            return a.data.copy(), a.grad.copy()
        d1, g1 = run()
        d2, g2 = run()
        assert (d1 == d2).all() and (g1 == g2).all()

    def test_stack_scalars(self):
        xs = [param(np.array(float(i))) for i in range(3)]
        out = stack_scalars(xs)
        np.testing.assert_allclose(out.data, [0.0, 1.0, 2.0])
        mean(out).backward()
        assert all(abs(float(x.grad) - 1 / 3) < 1e-12 for x in xs)
