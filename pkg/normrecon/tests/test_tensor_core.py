import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from normrecon.errors import (
    DimensionOverflowError,
    NonBooleanEntryError,
    ShapeMismatchError,
    SVDConvergenceError,
)
from normrecon.models.tensor import Distribution, SolveClassification
from normrecon.services import tensor_core


def _relative_error(lhs: np.ndarray, rhs: np.ndarray) -> float:
    return float(np.linalg.norm(lhs - rhs) / max(1.0, np.linalg.norm(lhs)))


def _permutation_oracle(b: np.ndarray) -> int:
    n = b.shape[0]
    return int(any(all(b[perm[col], col] for col in range(n)) for perm in itertools.permutations(range(n))))


matrix_entries = st.floats(-1.0, 1.0, allow_nan=False, allow_infinity=False)


class TestProducts:
    """Kronecker, Khatri-Rao and Hadamard products."""

    def test_khatri_rao_columns_are_kronecker_products(self, rng):
        """Column j of the Khatri-Rao product is kron(a[:, j], b[:, j])."""
        a, b = rng.standard_normal((3, 4)), rng.standard_normal((2, 4))
        product = tensor_core.khatri_rao(a, b)
        assert product.shape == (6, 4)
        for j in range(4):
            np.testing.assert_allclose(product[:, j], np.kron(a[:, j], b[:, j]))

    def test_khatri_rao_needs_equal_columns(self):
        """Mismatched column counts are rejected."""
        with pytest.raises(ShapeMismatchError):
            tensor_core.khatri_rao(np.ones((2, 3)), np.ones((2, 4)))

    def test_size_cap(self):
        """Products above the size cap raise DimensionOverflowError."""
        with pytest.raises(DimensionOverflowError) as excinfo:
            tensor_core.khatri_rao(np.ones((3, 2)), np.ones((3, 2)), size_cap=5)
        assert excinfo.value.shape == (9, 2)
        with pytest.raises(DimensionOverflowError):
            tensor_core.kron(np.ones((3, 3)), np.ones((3, 3)), size_cap=80)

    def test_kron_block_structure(self):
        """Block (i, j) of kron(a, b) is a[i, j] * b."""
        a = np.array([[1.0, 2.0], [3.0, 4.0]])
        b = np.eye(2)
        np.testing.assert_array_equal(tensor_core.kron(a, b)[2:, :2], 3.0 * np.eye(2))

    def test_hadamard_shape_mismatch(self):
        """Hadamard products need equal shapes."""
        with pytest.raises(ShapeMismatchError):
            tensor_core.hadamard(np.ones((2, 2)), np.ones((2, 3)))

    @settings(max_examples=100, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), shapes=st.tuples(*[st.integers(1, 4)] * 5))
    def test_mixed_product_identity(self, seed, shapes):
        """(A C) * (B D) = (A kron B)(C * D)."""
        n, p, m, q, cols = shapes
        rng = np.random.default_rng(seed)
        a, c = rng.standard_normal((n, p)), rng.standard_normal((p, cols))
        b, d = rng.standard_normal((m, q)), rng.standard_normal((q, cols))
        lhs = tensor_core.khatri_rao(a @ c, b @ d)
        rhs = tensor_core.kron(a, b) @ tensor_core.khatri_rao(c, d)
        assert _relative_error(lhs, rhs) <= 1e-10

    @settings(max_examples=100, deadline=None)
    @given(
        a=arrays(np.float64, (3, 4), elements=matrix_entries),
        b=arrays(np.float64, (2, 4), elements=matrix_entries),
        c=arrays(np.float64, (3, 4), elements=matrix_entries),
        d=arrays(np.float64, (2, 4), elements=matrix_entries),
    )
    def test_hadamard_khatri_rao_exchange(self, a, b, c, d):
        """(A * B) o (C * D) = (A o C) * (B o D)."""
        lhs = tensor_core.hadamard(tensor_core.khatri_rao(a, b), tensor_core.khatri_rao(c, d))
        rhs = tensor_core.khatri_rao(tensor_core.hadamard(a, c), tensor_core.hadamard(b, d))
        assert _relative_error(lhs, rhs) <= 1e-10

    def test_identity_producing_assignment(self):
        """Block rows of ones against tiled identities give the nm x nm identity."""
        n, m = 3, 4
        a = np.kron(np.eye(n), np.ones((1, m)))
        b = np.tile(np.eye(m), n)
        np.testing.assert_array_equal(tensor_core.khatri_rao(a, b), np.eye(n * m))

    def test_kron_rank_is_product_of_ranks(self, rng):
        """rank(A kron B) = rank(A) * rank(B)."""
        a = rng.standard_normal((3, 2)) @ rng.standard_normal((2, 3))
        b = rng.standard_normal((3, 3))
        assert tensor_core.numerical_rank(a) == 2
        assert tensor_core.numerical_rank(b) == 3
        assert tensor_core.numerical_rank(tensor_core.kron(a, b)) == 6

    @settings(max_examples=100, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), shapes=st.tuples(*[st.integers(1, 4)] * 6))
    def test_kron_mixed_product(self, seed, shapes):
        """(A1 A2) kron (B1 B2) = (A1 kron B1)(A2 kron B2)."""
        n, p, q, m, r, s = shapes
        rng = np.random.default_rng(seed)
        a1, a2 = rng.standard_normal((n, p)), rng.standard_normal((p, q))
        b1, b2 = rng.standard_normal((m, r)), rng.standard_normal((r, s))
        lhs = tensor_core.kron(a1 @ a2, b1 @ b2)
        rhs = tensor_core.kron(a1, b1) @ tensor_core.kron(a2, b2)
        assert _relative_error(lhs, rhs) <= 1e-10


class TestSVD:
    """Rank, condition estimates and the pseudo-inverse."""

    def test_pinv_of_zero_matrix(self):
        """A zero matrix yields the zero vector."""
        np.testing.assert_array_equal(tensor_core.pinv_solve(np.zeros((3, 2)), np.ones(3)), np.zeros(2))

    def test_pinv_minimum_norm(self):
        """The underdetermined x1 + x2 = 2 has minimum-norm solution (1, 1)."""
        np.testing.assert_allclose(tensor_core.pinv_solve(np.array([[1.0, 1.0]]), np.array([2.0])), [1.0, 1.0])

    def test_pinv_matrix_rhs(self, rng):
        """Several right-hand sides at once."""
        m = rng.standard_normal((4, 4))
        rhs = rng.standard_normal((4, 3))
        np.testing.assert_allclose(m @ tensor_core.pinv_solve(m, rhs), rhs, atol=1e-10)

    def test_rank_and_condition(self):
        """Singular matrices have infinite condition estimate and deficient rank."""
        singular = np.array([[1.0, 2.0], [2.0, 4.0]])
        assert tensor_core.numerical_rank(singular) == 1
        assert tensor_core.numerical_rank(np.eye(3)) == 3
        assert tensor_core.condition_estimate(tensor_core.singular_values(np.diag([4.0, 2.0]))) == pytest.approx(2.0)

    def test_non_finite_input(self):
        """NaN entries are reported instead of looping in LAPACK."""
        with pytest.raises(SVDConvergenceError):
            tensor_core.singular_values(np.array([[np.nan, 1.0], [0.0, 1.0]]))

    def test_svd_factor_reconstructs_low_rank(self, rng):
        """A rank-2 matrix equals the product of its rank-2 factors."""
        m = rng.standard_normal((5, 2)) @ rng.standard_normal((2, 4))
        left, right = tensor_core.svd_factor(m, 2)
        assert left.shape == (5, 2) and right.shape == (2, 4)
        np.testing.assert_allclose(left @ right, m, atol=1e-12)

    def test_svd_factor_rank_out_of_range(self):
        """The requested rank cannot exceed min(rows, cols)."""
        with pytest.raises(ShapeMismatchError):
            tensor_core.svd_factor(np.eye(3), 4)


class TestSolveSquare:
    """Rank-classified square solves."""

    def test_unique(self, rng):
        """Full-rank systems are solved to tolerance."""
        m = rng.standard_normal((6, 6)) + 6 * np.eye(6)
        x = rng.standard_normal(6)
        outcome = tensor_core.solve_square(m, m @ x)
        assert outcome.classification is SolveClassification.UNIQUE
        assert outcome.rank == 6
        assert not outcome.pseudo_inverse
        np.testing.assert_allclose(outcome.solution, x, atol=1e-10)
        assert outcome.residual <= 1e-8

    def test_infinite_carries_minimum_norm_solution(self):
        """Consistent rank-deficient systems return the minimum-norm solution."""
        outcome = tensor_core.solve_square(np.ones((2, 2)), np.array([2.0, 2.0]))
        assert outcome.classification is SolveClassification.INFINITE
        assert outcome.pseudo_inverse
        np.testing.assert_allclose(outcome.solution, [1.0, 1.0])

    def test_no_solution(self):
        """Inconsistent systems carry only the least-squares fit and its residual."""
        outcome = tensor_core.solve_square(np.ones((2, 2)), np.array([1.0, 2.0]))
        assert outcome.classification is SolveClassification.NO_SOLUTION
        assert outcome.solution is None
        np.testing.assert_allclose(outcome.least_squares, [0.75, 0.75])
        assert outcome.residual == pytest.approx(0.5)

    def test_rank_one_consistent_is_infinite(self):
        outcome = tensor_core.solve_square(np.array([[1.0, 2.0], [2.0, 4.0]]), np.array([3.0, 6.0]))
        assert outcome.classification is SolveClassification.INFINITE
        assert outcome.rank == 1
        np.testing.assert_allclose(outcome.solution, [0.6, 1.2])

    @pytest.mark.parametrize("seed", range(5))
    def test_ill_conditioned_never_unique_above_tolerance(self, seed):
        """Near-singular full-rank systems are Unique only when the residual meets tolerance."""
        rng = np.random.default_rng(seed)
        u, _ = np.linalg.qr(rng.standard_normal((6, 6)))
        v, _ = np.linalg.qr(rng.standard_normal((6, 6)))
        m = u @ np.diag(np.logspace(0, -14, 6)) @ v.T
        rhs = rng.standard_normal(6)
        outcome = tensor_core.solve_square(m, rhs)
        limit = tensor_core.SOLVER_TOLERANCE * (1.0 + np.max(np.abs(rhs)))
        assert outcome.rank == 6
        if outcome.residual > limit:
            assert outcome.classification is SolveClassification.NO_SOLUTION
            assert outcome.solution is None
            assert outcome.least_squares is not None
        else:
            assert outcome.classification is SolveClassification.UNIQUE
            assert np.max(np.abs(m @ outcome.solution - rhs)) <= limit

    def test_non_square_rejected(self):
        """solve_square requires a square matrix."""
        with pytest.raises(ShapeMismatchError):
            tensor_core.solve_square(np.ones((2, 3)), np.ones(2))

    def test_empty_system(self):
        """The 0 x 0 system has the empty unique solution."""
        outcome = tensor_core.solve_square(np.zeros((0, 0)), np.zeros(0))
        assert outcome.classification is SolveClassification.UNIQUE


class TestBooleanDeterminant:
    """Boolean determinant by recursion and by bipartite matching."""

    def test_small_cases(self):
        """Identity, permutation, all-ones and zero matrices."""
        assert tensor_core.boolean_det(np.eye(3, dtype=bool)) == 1
        assert tensor_core.boolean_det(np.eye(3)[[2, 0, 1]]) == 1
        assert tensor_core.boolean_det(np.ones((4, 4))) == 1
        assert tensor_core.boolean_det(np.zeros((3, 3))) == 0
        assert tensor_core.boolean_det(np.zeros((0, 0))) == 1

    def test_zero_column(self):
        """A zero column forces 0."""
        b = np.ones((3, 3))
        b[:, 1] = 0
        assert tensor_core.boolean_det(b) == 0

    def test_rejects_non_boolean(self):
        """Entries outside {0, 1} are rejected."""
        with pytest.raises(NonBooleanEntryError):
            tensor_core.boolean_det(np.array([[1, 2], [0, 1]]))
        with pytest.raises(ShapeMismatchError):
            tensor_core.boolean_det(np.ones((2, 3)))

    def test_unknown_method(self):
        with pytest.raises(ValueError):
            tensor_core.boolean_det(np.eye(2), method="permanent")

    def test_exhaustive_up_to_3x3(self):
        """Recursion and matching agree with the permutation oracle on every matrix up to 3 x 3."""
        for n in (1, 2, 3):
            for bits in itertools.product([0, 1], repeat=n * n):
                b = np.array(bits, dtype=bool).reshape(n, n)
                expected = _permutation_oracle(b)
                assert tensor_core.boolean_det(b, method="recursion") == expected
                assert tensor_core.boolean_det(b, method="matching") == expected

    def test_random_4x4(self):
        """Random 4 x 4 matrices at several densities."""
        rng = np.random.default_rng(0)
        for trial in range(10_000):
            b = rng.random((4, 4)) < (0.2 + 0.6 * (trial % 4) / 3)
            expected = _permutation_oracle(b)
            assert tensor_core.boolean_det(b, method="recursion") == expected
            assert tensor_core.boolean_det(b, method="matching") == expected

    def test_large_matrix_uses_matching(self):
        """Above the recursion limit auto switches to matching."""
        n = tensor_core.BOOLEAN_RECURSION_LIMIT + 5
        assert tensor_core.boolean_det(np.eye(n)) == 1
        singular = np.eye(n)
        singular[3, 3] = 0
        assert tensor_core.boolean_det(singular) == 0

    @settings(max_examples=200, deadline=None)
    @given(
        a=arrays(bool, (4, 4)),
        b=arrays(bool, (4, 4)),
    )
    def test_monotone_under_or(self, a, b):
        """Adding support never turns a 1 into a 0."""
        if tensor_core.boolean_det(a) == 1:
            assert tensor_core.boolean_det(a | b) == 1

    def test_boolean_khatri_rao_matches_support(self, rng):
        """The Boolean product is the support of the real product of 0/1 matrices."""
        a = rng.random((3, 9)) < 0.5
        b = rng.random((3, 9)) < 0.5
        expected = tensor_core.khatri_rao(a.astype(float), b.astype(float)) > 0
        np.testing.assert_array_equal(tensor_core.boolean_khatri_rao(a, b), expected)


class TestFullRankRate:
    """Random Khatri-Rao products have full rank."""

    @pytest.mark.parametrize("distribution", list(Distribution))
    @pytest.mark.parametrize("n,m", [(2, 2), (3, 2), (4, 4)])
    def test_always_full_rank(self, n, m, distribution):
        """Every draw is full rank under both distributions."""
        assert tensor_core.full_rank_rate(n, m, 200, distribution, seed=n * 10 + m) == 200

    @pytest.mark.slow
    @pytest.mark.parametrize("distribution", list(Distribution))
    @pytest.mark.parametrize("n,m", [(2, 2), (3, 2), (4, 4)])
    def test_always_full_rank_thousand_draws(self, n, m, distribution):
        """A thousand seeded draws per shape, none rank-deficient."""
        assert tensor_core.full_rank_rate(n, m, 1000, distribution, seed=1000 + n * 10 + m) == 1000
