import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ttada import tensor as tc
from ttada.errors import NumericError, ShapeError, ValidationError
from ttada.tensor import Tape, Tensor, backward, finite_diff_grad, max_relative_error


def rand(shape, seed, lo=-2.0, hi=2.0):
    rng = np.random.default_rng(seed)
    return rng.uniform(lo, hi, size=shape)


def grad_of(op, *arrays, wrt=0, eps=1e-5):
    """Analytic gradient of sum(op(...)) vs central finite differences."""
    tensors = [Tensor(a, requires_grad=(i == wrt)) for i, a in enumerate(arrays)]
    tape = Tape()
    with tape:
        loss = tc.sum_all(op(*tensors))
    backward(loss, tape)
    analytic = tensors[wrt].grad.copy()

    def f(probe):
        args = [Tensor(a) for a in arrays]
        args[wrt] = probe
        return tc.sum_all(op(*args)).item()

    numeric = finite_diff_grad(f, tensors[wrt], eps)
    return max_relative_error(analytic, numeric.data)


class TestMatmul:
    def test_identity(self):
        out = tc.matmul(Tensor(np.eye(2)), Tensor([[1, 2], [3, 4]]))
        np.testing.assert_array_equal(out.data, [[1, 2], [3, 4]])

    def test_selector_row(self):
        out = tc.matmul(Tensor([[1.0, 0.0]]), Tensor([[5.0], [7.0]]))
        np.testing.assert_array_equal(out.data, [[5.0]])

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(3, 4\).*\(5, 2\)"):
            tc.matmul(Tensor(np.zeros((3, 4))), Tensor(np.zeros((5, 2))))

    @pytest.mark.parametrize("wrt", [0, 1])
    def test_grad_matches_finite_differences(self, wrt):
        err = grad_of(tc.matmul, rand((3, 4), 1), rand((4, 2), 2), wrt=wrt)
        assert err <= 1e-6


class TestSoftmaxRows:
    def test_symmetry(self):
        out = tc.softmax_rows(Tensor([[0.0, 0.0]]))
        np.testing.assert_allclose(out.data, [[0.5, 0.5]])

    def test_stability_under_shift(self):
        out = tc.softmax_rows(Tensor([[1000.0, 1000.0]]))
        np.testing.assert_allclose(out.data, [[0.5, 0.5]])

    def test_matches_scalar_oracle(self):
        # Independent scalar-math evaluation of softmax([1, 2, 3]).
        exps = [math.exp(v) for v in (1.0, 2.0, 3.0)]
        expected = [e / sum(exps) for e in exps]
        out = tc.softmax_rows(Tensor([[1.0, 2.0, 3.0]]))
        np.testing.assert_allclose(out.data[0], expected, atol=1e-12)

    def test_nan_rejected(self):
        with pytest.raises(NumericError):
            tc.softmax_rows(Tensor([[np.nan, 1.0]]))

    def test_grad(self):
        # sum(softmax) is constant, so weight the entries to get a
        # non-degenerate objective.
        weights = rand((3, 5), 30)

        def op(a):
            return tc.mul_elem(tc.softmax_rows(a), Tensor(weights))

        assert grad_of(op, rand((3, 5), 3)) <= 1e-6

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.integers(1, 6), st.integers(2, 9))
    def test_rows_sum_to_one_in_open_interval(self, seed, r, c):
        # Row spreads below ~36 log-units keep every float64 entry strictly
        # inside (0, 1); beyond that the winner rounds to exactly 1.0.
        out = tc.softmax_rows(Tensor(rand((r, c), seed, -15, 15)))
        np.testing.assert_allclose(out.data.sum(axis=1), 1.0, atol=1e-12)
        assert np.all(out.data > 0) and np.all(out.data < 1)

    def test_extreme_spread_stays_in_closed_interval(self):
        # Beyond ~float64 exp range the tiny entries underflow; rows must
        # still sum to 1 with every entry in [0, 1].
        out = tc.softmax_rows(Tensor([[-400.0, 400.0]]))
        np.testing.assert_allclose(out.data.sum(axis=1), 1.0, atol=1e-12)
        assert np.all(out.data >= 0) and np.all(out.data <= 1)


class TestMeanRows:
    def test_two_one_hots(self):
        out = tc.mean_rows(Tensor([[1.0, 0.0], [0.0, 1.0]]))
        np.testing.assert_array_equal(out.data, [[0.5, 0.5]])

    def test_single_row_identity(self):
        row = rand((1, 4), 4)
        np.testing.assert_array_equal(tc.mean_rows(Tensor(row)).data, row)

    def test_against_bruteforce_column_sums(self):
        a = rand((5, 3), 5)
        expected = np.array([[sum(a[i, j] for i in range(5)) / 5 for j in range(3)]])
        np.testing.assert_allclose(tc.mean_rows(Tensor(a)).data, expected, atol=1e-15)

    def test_empty_rejected(self):
        with pytest.raises(ValidationError):
            tc.mean_rows(Tensor(np.zeros((0, 3))))

    def test_grad_distributes_evenly(self):
        x = Tensor(rand((4, 3), 6), requires_grad=True)
        tape = Tape()
        with tape:
            loss = tc.sum_all(tc.mean_rows(x))
        backward(loss, tape)
        np.testing.assert_allclose(x.grad, np.full((4, 3), 0.25))


class TestL2NormalizeRows:
    def test_three_four_five(self):
        out = tc.l2_normalize_rows(Tensor([3.0, 4.0]))
        np.testing.assert_allclose(out.data, [[0.6, 0.8]], atol=1e-15)

    def test_unit_row_unchanged(self):
        out = tc.l2_normalize_rows(Tensor([[1.0, 0.0]]))
        np.testing.assert_allclose(out.data, [[1.0, 0.0]])

    def test_norms_are_one(self):
        out = tc.l2_normalize_rows(Tensor(rand((6, 5), 7)))
        np.testing.assert_allclose(
            np.linalg.norm(out.data, axis=1), 1.0, atol=1e-12
        )

    def test_degenerate_row_rejected(self):
        with pytest.raises(NumericError, match="row 1"):
            tc.l2_normalize_rows(Tensor([[1.0, 1.0], [0.0, 0.0]]))

    def test_grad(self):
        assert grad_of(lambda a: tc.l2_normalize_rows(a), rand((2, 6), 8)) <= 1e-6


class TestConcatRows:
    def test_stacks(self):
        out = tc.concat_rows(Tensor([[1.0]]), Tensor([[2.0]]))
        np.testing.assert_array_equal(out.data, [[1.0], [2.0]])

    def test_empty_left_is_identity(self):
        b = rand((3, 2), 9)
        out = tc.concat_rows(Tensor(np.zeros((0, 2))), Tensor(b))
        np.testing.assert_array_equal(out.data, b)

    def test_column_mismatch(self):
        with pytest.raises(ShapeError):
            tc.concat_rows(Tensor(np.zeros((1, 2))), Tensor(np.zeros((1, 3))))

    def test_grad_through_composite(self):
        def op(a, b):
            return tc.l2_normalize_rows(tc.concat_rows(a, b))

        assert grad_of(op, rand((2, 3), 10), rand((3, 3), 11), wrt=0) <= 1e-6
        assert grad_of(op, rand((2, 3), 10), rand((3, 3), 11), wrt=1) <= 1e-6


class TestGatherRows:
    def test_selects(self):
        a = rand((5, 3), 12)
        out = tc.gather_rows(Tensor(a), [4, 0, 0])
        np.testing.assert_array_equal(out.data, a[[4, 0, 0]])

    def test_out_of_range(self):
        with pytest.raises(ValidationError):
            tc.gather_rows(Tensor(np.zeros((2, 2))), [2])

    def test_grad_scatter_adds_duplicates(self):
        x = Tensor(rand((3, 2), 13), requires_grad=True)
        tape = Tape()
        with tape:
            loss = tc.sum_all(tc.gather_rows(x, [1, 1, 0]))
        backward(loss, tape)
        np.testing.assert_array_equal(x.grad, [[1.0, 1.0], [2.0, 2.0], [0.0, 0.0]])


class TestScalarOps:
    def test_log_of_one_is_zero(self):
        np.testing.assert_array_equal(tc.log_elem(Tensor([1.0])).data, [[0.0]])

    def test_log_nonpositive_identifies_index(self):
        with pytest.raises(NumericError, match=r"\(1, 0\)"):
            tc.log_elem(Tensor([[1.0, 2.0], [-1.0, 3.0]]))

    def test_sum_all(self):
        assert tc.sum_all(Tensor([[1.0, 2.0], [3.0, 4.0]])).item() == 10.0

    def test_clamp_min_forward_and_subgradient(self):
        x = Tensor([[0.5, 2.0]], requires_grad=True)
        tape = Tape()
        with tape:
            loss = tc.sum_all(tc.clamp_min(x, 1.0))
        assert loss.item() == 3.0
        backward(loss, tape)
        np.testing.assert_array_equal(x.grad, [[0.0, 1.0]])

    def test_neg_entropy_composite_grad(self):
        # -sum(p * log p) as built from the scalar primitives.
        def op(p):
            return tc.neg(tc.sum_all(tc.mul_elem(p, tc.log_elem(p))))

        assert grad_of(op, rand((1, 6), 14, 0.05, 1.0)) <= 1e-6

    @pytest.mark.parametrize(
        "op,n_args",
        [
            (tc.tanh_elem, 1),
            (tc.neg, 1),
            (lambda a: tc.scale(a, -2.5), 1),
            (tc.mul_elem, 2),
            (tc.add, 2),
            (tc.transpose, 1),
        ],
    )
    def test_grads(self, op, n_args):
        arrays = [rand((3, 4), 20 + i) for i in range(n_args)]
        for wrt in range(n_args):
            assert grad_of(op, *arrays, wrt=wrt) <= 1e-6


class TestBackward:
    def test_sum_gives_ones(self):
        x = Tensor(rand((3, 5), 15), requires_grad=True)
        tape = Tape()
        with tape:
            loss = tc.sum_all(x)
        backward(loss, tape)
        np.testing.assert_array_equal(x.grad, np.ones((3, 5)))

    def test_zero_scaled_loss_gives_zero_grad(self):
        x = Tensor(rand((2, 2), 16), requires_grad=True)
        tape = Tape()
        with tape:
            loss = tc.sum_all(tc.scale(x, 0.0))
        backward(loss, tape)
        np.testing.assert_array_equal(x.grad, np.zeros((2, 2)))

    def test_non_scalar_loss_rejected(self):
        x = Tensor(rand((2, 2), 17), requires_grad=True)
        tape = Tape()
        with tape:
            y = tc.scale(x, 2.0)
        with pytest.raises(ValidationError):
            backward(y, tape)

    def test_accumulates_without_reset(self):
        x = Tensor(rand((2, 3), 18), requires_grad=True)
        tape = Tape()
        with tape:
            loss = tc.sum_all(x)
        backward(loss, tape)
        backward(loss, tape)
        np.testing.assert_array_equal(x.grad, np.full((2, 3), 2.0))

    def test_no_grad_without_requires_grad(self):
        x = Tensor(rand((2, 2), 19))
        tape = Tape()
        with tape:
            loss = tc.sum_all(tc.tanh_elem(x))
        backward(loss, tape)
        assert x.grad is None

    def test_reused_tensor_accumulates_both_paths(self):
        x = Tensor(rand((2, 2), 21), requires_grad=True)
        tape = Tape()
        with tape:
            loss = tc.sum_all(tc.add(x, x))
        backward(loss, tape)
        np.testing.assert_array_equal(x.grad, np.full((2, 2), 2.0))

    def test_deterministic_repeat(self):
        def run():
            x = Tensor(rand((3, 3), 22), requires_grad=True)
            tape = Tape()
            with tape:
                y = tc.softmax_rows(tc.matmul(x, Tensor(rand((3, 4), 23))))
                loss = tc.sum_all(tc.mul_elem(y, y))
            backward(loss, tape)
            return x.grad.copy()

        np.testing.assert_array_equal(run(), run())


class TestFiniteDiffGrad:
    def test_sum_of_squares(self):
        f = lambda t: float((t.data**2).sum())
        grad = finite_diff_grad(f, Tensor([1.0, 2.0]), eps=1e-5)
        np.testing.assert_allclose(grad.data, [[2.0, 4.0]], atol=1e-8)

    def test_constant_function(self):
        grad = finite_diff_grad(lambda t: 7.0, Tensor(rand((2, 3), 24)), eps=1e-5)
        np.testing.assert_array_equal(grad.data, np.zeros((2, 3)))

    def test_agreement_on_random_composite_graphs(self):
        # Self-consistency sweep: random op chains, analytic vs numeric.
        worst = 0.0
        for trial in range(20):
            rng = np.random.default_rng(1000 + trial)
            r, c = int(rng.integers(2, 5)), int(rng.integers(2, 5))
            a0 = rng.uniform(-2, 2, size=(r, c))
            m = rng.uniform(-2, 2, size=(c, c))

            def build(t):
                y = tc.matmul(t, Tensor(m))
                y = tc.tanh_elem(y)
                y = tc.softmax_rows(y)
                y = tc.mul_elem(y, y)
                y = tc.mean_rows(y)
                return tc.sum_all(tc.l2_normalize_rows(y))

            x = Tensor(a0, requires_grad=True)
            tape = Tape()
            with tape:
                loss = build(x)
            backward(loss, tape)
            numeric = finite_diff_grad(lambda t: build(t).item(), x, 1e-5)
            worst = max(worst, max_relative_error(x.grad, numeric.data))
        assert worst <= 1e-5
