"""
Tests for tensors, reverse-mode gradients and random streams.
"""

import math
import threading

import numpy as np
import pytest

from chunkvid import tensor as T
from chunkvid.errors import DimensionError, FullyMaskedRowError, NumericError, ZeroNormError
from chunkvid.random_source import RandomSource
from chunkvid.tensor import Tensor

from oracles import numeric_grad, relative_error


def _check_gradient(op, shapes, seed, positive=False):
    """Compare backward() against central differences of sum(op(*xs) * weights)."""
    rng = np.random.default_rng(seed)
    xs = [rng.normal(size=s) for s in shapes]
    if positive:
        xs = [np.abs(x) + 0.5 for x in xs]
    out_shape = op(*[Tensor(x) for x in xs]).shape
    weights = rng.normal(size=out_shape)

    def scalar(*arrays):
        return float(np.sum(op(*[Tensor(a) for a in arrays]).data * weights))

    leaves = [Tensor(x, requires_grad=True) for x in xs]
    T.backward(T.sum(T.mul(op(*leaves), weights)))
    for k, leaf in enumerate(leaves):
        def f(x, k=k):
            arrays = list(xs)
            arrays[k] = x
            return scalar(*arrays)
        assert relative_error(leaf.grad, numeric_grad(f, xs[k])) <= 1e-4


class TestMatmul:
    """Test cases for matrix products."""

    def test_identity(self):
        """Identity times identity is identity."""
        out = T.matmul(np.eye(2), np.eye(2))
        assert np.array_equal(out.data, np.eye(2))

    def test_hand_product(self):
        """[[1,2],[3,4]]·[[0],[1]] = [[2],[4]]."""
        out = T.matmul([[1.0, 2.0], [3.0, 4.0]], [[0.0], [1.0]])
        assert np.array_equal(out.data, [[2.0], [4.0]])

    def test_shape_mismatch(self):
        """Inner dimensions must agree; the error names both shapes."""
        with pytest.raises(DimensionError) as exc:
            T.matmul(np.zeros((3, 2)), np.zeros((3, 2)))
        assert "(3, 2)" in exc.value.message

    def test_batched(self):
        """Leading axes broadcast like numpy."""
        a = np.arange(12.0).reshape(2, 2, 3)
        b = np.ones((3, 1))
        assert np.array_equal(T.matmul(a, b).data, np.matmul(a, b))


class TestMaskedSoftmax:
    """Test cases for masked softmax."""

    def test_symmetric(self):
        """Equal logits split evenly."""
        out = T.masked_softmax([0.0, 0.0], [0.0, 0.0])
        assert np.allclose(out.data, [0.5, 0.5])

    def test_single_survivor(self):
        """A masked position gets exactly zero."""
        out = T.masked_softmax([0.0, 0.0], [0.0, -np.inf])
        assert out.data[0] == 1.0
        assert out.data[1] == 0.0

    def test_closed_form(self):
        """logits [ln2, 0] give [2/3, 1/3]."""
        out = T.masked_softmax([math.log(2.0), 0.0], [0.0, 0.0])
        assert np.allclose(out.data, [2.0 / 3.0, 1.0 / 3.0], atol=1e-12)

    def test_fully_masked_row(self):
        """A row with no unmasked position is an error."""
        with pytest.raises(FullyMaskedRowError, match="fully masked attention row"):
            T.masked_softmax([[0.0, 1.0], [2.0, 3.0]], [[0.0, 0.0], [-np.inf, -np.inf]])

    def test_rows_are_distributions(self):
        """Rows are nonnegative and sum to one over unmasked positions."""
        rng = np.random.default_rng(3)
        for _ in range(50):
            logits = rng.normal(scale=20.0, size=(4, 7))
            mask = np.where(rng.uniform(size=(4, 7)) < 0.4, -np.inf, 0.0)
            mask[:, 0] = 0.0
            out = T.masked_softmax(logits, mask).data
            assert (out >= 0).all()
            assert np.allclose(out.sum(axis=-1), 1.0, atol=1e-9)
            assert (out[mask == -np.inf] == 0.0).all()

    def test_mask_shape_must_match(self):
        """Mask and logits have the same shape."""
        with pytest.raises(DimensionError):
            T.masked_softmax(np.zeros((2, 3)), np.zeros(3))


class TestBackward:
    """Test cases for reverse-mode gradients."""

    def test_sum(self):
        """d sum(x) / dx is all ones."""
        x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
        T.backward(T.sum(x))
        assert np.array_equal(x.grad, [1.0, 1.0, 1.0])

    def test_sum_of_squares(self):
        """d sum(x²) / dx = 2x."""
        x = Tensor([1.0, 2.0], requires_grad=True)
        T.backward(T.sum(T.square(x)))
        assert np.array_equal(x.grad, [2.0, 4.0])

    def test_accumulates(self):
        """Two backward passes without reset add up."""
        x = Tensor([1.0, 2.0], requires_grad=True)
        T.backward(T.sum(x))
        T.backward(T.sum(x))
        assert np.array_equal(x.grad, [2.0, 2.0])
        x.zero_grad()
        assert x.grad is None

    def test_non_scalar_loss(self):
        """Only scalar losses can be differentiated."""
        x = Tensor([1.0, 2.0], requires_grad=True)
        with pytest.raises(DimensionError):
            T.backward(T.square(x))

    def test_shared_subexpression(self):
        """A node used twice receives both contributions."""
        x = Tensor([3.0], requires_grad=True)
        y = T.square(x)
        T.backward(T.sum(T.add(y, y)))
        assert np.array_equal(x.grad, [12.0])

    def test_mean_matmul_finite_differences(self):
        """mean(W·x) matches finite differences on random small shapes."""
        rng = np.random.default_rng(11)
        for _ in range(10):
            m, k, n = rng.integers(1, 5, size=3)
            w0, x0 = rng.normal(size=(m, k)), rng.normal(size=(k, n))
            w = Tensor(w0, requires_grad=True)
            T.backward(T.mean(T.matmul(w, x0)))
            numeric = numeric_grad(lambda a: float(np.mean(a @ x0)), w0)
            assert relative_error(w.grad, numeric) <= 1e-4

    def test_no_grad(self):
        """Results computed under no_grad are not tracked."""
        x = Tensor([1.0], requires_grad=True)
        with T.no_grad():
            y = T.square(x)
        assert not y.requires_grad
        assert T.is_grad_enabled()

    def test_no_grad_is_per_thread(self):
        """Disabling recording in one thread leaves other threads recording."""
        seen = []
        with T.no_grad():
            worker = threading.Thread(target=lambda: seen.append(T.is_grad_enabled()))
            worker.start()
            worker.join()
        assert seen == [True]

    def test_detach(self):
        """Detached tensors stop gradient flow."""
        x = Tensor([2.0], requires_grad=True)
        T.backward(T.sum(T.add(T.square(x), T.square(x).detach())))
        assert np.array_equal(x.grad, [4.0])


class TestGradientCheck:
    """Every differentiable op against central differences."""

    @pytest.mark.parametrize("seed", range(10))
    def test_elementwise(self, seed):
        """add, sub, mul, scale, square, tanh, sigmoid, log."""
        _check_gradient(T.add, [(3, 4), (4,)], seed)
        _check_gradient(T.sub, [(2, 3), (2, 1)], seed)
        _check_gradient(T.mul, [(3, 2), (3, 2)], seed)
        _check_gradient(lambda a: T.scale(a, -1.7), [(5,)], seed)
        _check_gradient(T.square, [(2, 2)], seed)
        _check_gradient(T.tanh, [(3, 3)], seed)
        _check_gradient(T.sigmoid, [(4,)], seed)
        _check_gradient(T.log, [(3,)], seed, positive=True)

    @pytest.mark.parametrize("seed", range(10))
    def test_reductions(self, seed):
        """sum and mean, full and per-axis."""
        _check_gradient(T.sum, [(3, 4)], seed)
        _check_gradient(lambda a: T.sum(a, axis=1), [(3, 4)], seed)
        _check_gradient(T.mean, [(2, 5)], seed)
        _check_gradient(lambda a: T.mean(a, axis=0, keepdims=True), [(4, 3)], seed)

    @pytest.mark.parametrize("seed", range(10))
    def test_linear_algebra(self, seed):
        """matmul, masked softmax and layer norm."""
        mask = np.array([[0.0, 0.0, -np.inf, 0.0], [0.0, -np.inf, -np.inf, 0.0]])
        _check_gradient(T.matmul, [(3, 4), (4, 2)], seed)
        _check_gradient(T.matmul, [(2, 3, 4), (2, 4, 2)], seed)
        _check_gradient(lambda a: T.masked_softmax(a, mask), [(2, 4)], seed)
        _check_gradient(T.layer_norm, [(3, 6)], seed)

    @pytest.mark.parametrize("seed", range(10))
    def test_shape_plumbing(self, seed):
        """concatenate, reshape, transpose and index_select."""
        _check_gradient(lambda a, b: T.concatenate([a, b], axis=1), [(2, 3), (2, 2)], seed)
        _check_gradient(lambda a: T.reshape(a, (3, 4)), [(2, 6)], seed)
        _check_gradient(lambda a: T.transpose(a, (1, 2, 0)), [(2, 3, 4)], seed)
        _check_gradient(lambda a: T.index_select(a, [0, 2, 2], axis=1), [(2, 4)], seed)


class TestCosineSimilarity:
    """Test cases for cosine similarity."""

    def test_self(self):
        assert T.cosine_similarity([1.0, 0.0], [1.0, 0.0]) == 1.0

    def test_orthogonal(self):
        assert T.cosine_similarity([1.0, 0.0], [0.0, 1.0]) == 0.0

    def test_closed_form(self):
        """[1,1] vs [1,0] is 1/√2."""
        assert abs(T.cosine_similarity([1.0, 1.0], [1.0, 0.0]) - 1.0 / math.sqrt(2.0)) <= 1e-9

    def test_zero_vector(self):
        with pytest.raises(ZeroNormError, match="zero-norm embedding"):
            T.cosine_similarity([0.0, 0.0], [1.0, 0.0])


class TestFiniteness:
    """Non-finite values never survive an operation."""

    def test_non_finite_input(self):
        with pytest.raises(NumericError):
            Tensor([1.0, np.inf])

    def test_overflow(self):
        with pytest.raises(NumericError):
            T.square(Tensor([1e200]))

    def test_log_of_zero(self):
        with pytest.raises(NumericError):
            T.log(Tensor([0.0, 1.0]))

    def test_immutable(self):
        """Tensor data cannot be written in place."""
        x = Tensor([1.0, 2.0])
        with pytest.raises(ValueError):
            x.data[0] = 5.0


class TestRandomSource:
    """Test cases for splittable random streams."""

    def test_same_seed_same_draws(self):
        a = RandomSource(42).stream("noise", 3, 1).normal((5,))
        b = RandomSource(42).stream("noise", 3, 1).normal((5,))
        assert np.array_equal(a, b)

    def test_streams_independent_of_consumption(self):
        """Drawing from one stream does not move another."""
        root = RandomSource(7)
        first = root.stream("a").normal((3,))
        root.stream("b").normal((100,))
        assert np.array_equal(root.stream("a").normal((3,)), first)

    def test_distinct_keys_differ(self):
        root = RandomSource(7)
        assert not np.array_equal(root.stream("noise", 0, 0).normal((4,)),
                                  root.stream("noise", 0, 1).normal((4,)))

    def test_counter_advances(self):
        rng = RandomSource(1)
        before = rng.counter
        rng.normal((10,))
        assert rng.counter > before

    def test_sample_distinct(self):
        """Distinct, ascending and inside the population."""
        draws = RandomSource(5).sample_distinct(136, 64)
        assert len(set(draws.tolist())) == 64
        assert list(draws) == sorted(draws)
        assert draws.min() >= 0 and draws.max() < 136
