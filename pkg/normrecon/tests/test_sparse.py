import itertools
import math

import numpy as np
import pytest

from normrecon.errors import ShapeMismatchError, SystemSingularError
from normrecon.models.sparse import SparseMask
from normrecon.services import netmodel, sparse, wide


def _mask(bits) -> SparseMask:
    return SparseMask(np.array(bits, dtype=bool), 0.5)


class TestChooseSparsity:
    """Keep probability from the singularity bound."""

    def test_clamped_to_one(self):
        assert sparse.choose_sparsity(4, 1.0) == 1.0

    def test_scaling_in_d(self):
        """p shrinks like sqrt(log d / d)."""
        ratio = sparse.choose_sparsity(4000, 1.0) / sparse.choose_sparsity(1000, 1.0)
        assert ratio == pytest.approx(0.5 * math.sqrt(math.log(4000) / math.log(1000)))

    def test_invalid_arguments(self):
        with pytest.raises(ValueError):
            sparse.choose_sparsity(1, 1.0)
        with pytest.raises(ValueError):
            sparse.choose_sparsity(8, 0.0)


class TestMasks:
    """Bernoulli masks and sparsified weights."""

    def test_dense_mask_keeps_weights(self, rng):
        w = rng.standard_normal((3, 9))
        np.testing.assert_array_equal(sparse.sparsify(w, SparseMask.dense(w.shape)), w)

    def test_zero_mask(self, rng):
        w = rng.standard_normal((3, 9))
        mask = SparseMask(np.zeros((3, 9), dtype=bool), 0.1)
        np.testing.assert_array_equal(sparse.sparsify(w, mask), np.zeros((3, 9)))
        assert mask.zero_rows() == 3 and mask.zero_cols() == 9
        assert mask.density == 0.0

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            sparse.sparsify(np.ones((2, 2)), SparseMask.dense((2, 3)))

    @pytest.mark.parametrize("p", [0.0, -0.1, 1.5])
    def test_invalid_probability(self, p):
        with pytest.raises(ValueError):
            SparseMask(np.ones((2, 2), dtype=bool), p)

    def test_sampled_density(self, rng):
        mask = SparseMask.sample((200, 200), 0.3, rng)
        assert mask.density == pytest.approx(0.3, abs=0.02)


class TestBooleanEquivalence:
    """Invertibility of sparsified Khatri-Rao products follows the Boolean determinant."""

    def test_full_masks(self, rng):
        p_mat, q_mat = rng.uniform(-1, 1, (2, 4)), rng.uniform(-1, 1, (2, 4))
        result = sparse.check_boolean_equivalence(
            p_mat, q_mat, SparseMask.dense((2, 4)), SparseMask.dense((2, 4))
        )
        assert result == (1, 1)

    def test_zero_column(self, rng):
        p_mat, q_mat = rng.uniform(-1, 1, (2, 4)), rng.uniform(-1, 1, (2, 4))
        bits = np.ones((2, 4), dtype=bool)
        bits[:, 0] = False
        result = sparse.check_boolean_equivalence(p_mat, q_mat, _mask(bits), SparseMask.dense((2, 4)))
        assert result == (0, 0)

    def test_non_square_product(self, rng):
        with pytest.raises(ShapeMismatchError):
            sparse.check_boolean_equivalence(
                np.ones((2, 3)), np.ones((2, 3)), SparseMask.dense((2, 3)), SparseMask.dense((2, 3))
            )

    def test_random_supports_d2(self, rng):
        """Random d = 2 supports at several densities."""
        for trial in range(500):
            p = 0.3 + 0.6 * (trial % 3) / 2
            m1 = SparseMask.sample((2, 4), p, rng)
            m2 = SparseMask.sample((2, 4), p, rng)
            det_nonzero, bool_det = sparse.check_boolean_equivalence(
                rng.uniform(-1, 1, (2, 4)), rng.uniform(-1, 1, (2, 4)), m1, m2
            )
            assert det_nonzero == bool_det


class TestConstructSparse:
    """Wide construction over sparsified frozen weights."""

    def test_dense_limit_matches_wide(self, target4):
        """p = 1 reproduces the dense construction bit for bit."""
        sparse_stack, report = sparse.construct_sparse(target4, 1.0, seed=7)
        dense_stack, _ = wide.construct_wide(target4, seed=7)
        for a, b in zip(sparse_stack.pairs, dense_stack.pairs):
            np.testing.assert_array_equal(a.w_odd, b.w_odd)
            np.testing.assert_array_equal(a.w_even, b.w_even)
            np.testing.assert_array_equal(a.norm_odd.scale, b.norm_odd.scale)
            np.testing.assert_array_equal(a.norm_even.shift, b.norm_even.shift)
        assert report.kind == "sparse"
        assert all(layer.density == 1.0 for layer in report.layers)
        assert all(layer.zero_rows == 0 and layer.zero_cols == 0 for layer in report.layers)

    def test_union_bound(self, target4):
        _, report = sparse.construct_sparse(target4, 1.0, seed=7, layer_failure_rate=0.01)
        assert report.failure_rate_bound == pytest.approx(0.02)

    def test_very_sparse_weights_fail(self, target4):
        """At p = 0.05 most hidden units lose every input and the system is singular."""
        with pytest.raises(SystemSingularError) as excinfo:
            sparse.construct_sparse(target4, 0.05, seed=1, layer_failure_rate=0.6)
        report = excinfo.value.report
        assert report.kind == "sparse"
        assert report.failure_rate_bound == 1.0
        assert any(layer.zero_rows for layer in report.layers)

    @pytest.mark.parametrize("p", [0.0, 1.5])
    def test_invalid_probability(self, target4, p):
        with pytest.raises(ValueError):
            sparse.construct_sparse(target4, p, seed=0)

    def test_moderate_sparsity_when_solvable(self):
        """Whenever the sparse system is invertible the construction is exact."""
        g = netmodel.sample_target(4, 1, seed=21)
        for seed in range(10):
            try:
                _, report = sparse.construct_sparse(g, 0.9, seed=seed, verify_samples=500)
            except SystemSingularError:
                continue
            assert report.equivalence.max_abs_error <= 1e-6


class TestSingularityRate:
    """Monte-Carlo singularity estimates."""

    def test_dense_never_singular(self):
        estimate = sparse.estimate_singularity_rate(3, 1.0, 50, seed=0)
        assert estimate.failures == 0
        assert estimate.rate == 0.0

    def test_very_sparse_nearly_always_singular(self):
        estimate = sparse.estimate_singularity_rate(3, 0.01, 50, seed=0)
        assert estimate.rate >= 0.9

    def test_workers_do_not_change_estimate(self):
        serial = sparse.estimate_singularity_rate(3, 0.5, 40, seed=2)
        pooled = sparse.estimate_singularity_rate(3, 0.5, 40, seed=2, workers=4)
        assert serial.failures == pooled.failures

    def test_interval_contains_rate(self):
        estimate = sparse.estimate_singularity_rate(3, 0.5, 60, seed=4)
        low, high = estimate.wilson_interval
        assert 0.0 <= low <= estimate.rate <= high <= 1.0
        assert set(estimate.as_dict()) == {"trials", "failures", "rate", "interval"}

    def test_wilson_interval_edges(self):
        assert sparse.wilson_interval(0, 10)[0] == pytest.approx(0.0, abs=1e-12)
        assert sparse.wilson_interval(10, 10)[1] == pytest.approx(1.0, abs=1e-12)
        with pytest.raises(ValueError):
            sparse.wilson_interval(0, 0)

    def test_needs_trials(self):
        with pytest.raises(ValueError):
            sparse.estimate_singularity_rate(3, 0.5, 0)


@pytest.mark.slow
class TestSparseAcceptance:
    """Long-running checks of the sparse singularity bound."""

    def test_exhaustive_supports_d2(self):
        """Every pair of 2 x 4 supports, with random continuous entries."""
        rng = np.random.default_rng(0)
        supports = [np.array(bits, dtype=bool).reshape(2, 4) for bits in itertools.product([0, 1], repeat=8)]
        for bits1, bits2 in itertools.product(supports, repeat=2):
            det_nonzero, bool_det = sparse.check_boolean_equivalence(
                rng.uniform(-1, 1, (2, 4)), rng.uniform(-1, 1, (2, 4)), _mask(bits1), _mask(bits2)
            )
            assert det_nonzero == bool_det

    def test_random_supports_d3(self):
        rng = np.random.default_rng(1)
        for _ in range(10_000):
            m1 = SparseMask.sample((3, 9), 0.6, rng)
            m2 = SparseMask.sample((3, 9), 0.6, rng)
            det_nonzero, bool_det = sparse.check_boolean_equivalence(
                rng.uniform(-1, 1, (3, 9)), rng.uniform(-1, 1, (3, 9)), m1, m2
            )
            assert det_nonzero == bool_det

    @pytest.mark.parametrize("d", [8, 16])
    def test_rate_below_one_over_d(self, d):
        estimate = sparse.estimate_singularity_rate(d, sparse.choose_sparsity(d, 1.0), 200, seed=d, workers=4)
        assert estimate.wilson_interval[0] <= 1.0 / d
