"""
Dense linear algebra under every construction: Kronecker, Khatri-Rao and Hadamard
products, SVD-based rank and pseudo-inverse, LU solves classified by rank, and the
Boolean determinant.

Matrices are float64 numpy arrays. Every function is pure.
"""

import logging
from functools import lru_cache

import numpy as np
import scipy.linalg
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import maximum_bipartite_matching

from normrecon.constants import SIZE_CAP, SOLVER_TOLERANCE
from normrecon.errors import (
    DimensionOverflowError,
    NonBooleanEntryError,
    ShapeMismatchError,
    SVDConvergenceError,
)
from normrecon.helpers import SeedLike
from normrecon.models.tensor import Distribution, SolveClassification, SolveOutcome

logger = logging.getLogger(__name__)

EPS = np.finfo(np.float64).eps

# Above this size the memoized recursion (2^n states) is replaced by matching.
BOOLEAN_RECURSION_LIMIT = 20


def as_matrix(m) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeMismatchError(f"Expected a matrix, got an array with {m.ndim} dimensions")
    return m


def as_vector(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1:
        raise ShapeMismatchError(f"Expected a vector, got an array with {v.ndim} dimensions")
    return v


def check_size(rows: int, cols: int, size_cap: int | None = None):
    cap = SIZE_CAP if size_cap is None else size_cap
    if rows * cols > cap:
        raise DimensionOverflowError((rows, cols), cap)


def kron(a, b, size_cap: int | None = None) -> np.ndarray:
    """Kronecker product; block (i, j) of the result is a[i, j] * b."""
    a, b = as_matrix(a), as_matrix(b)
    check_size(a.shape[0] * b.shape[0], a.shape[1] * b.shape[1], size_cap)
    return np.kron(a, b)


def khatri_rao(a, b, size_cap: int | None = None) -> np.ndarray:
    """Column-wise Kronecker product: column j is kron(a[:, j], b[:, j])."""
    a, b = as_matrix(a), as_matrix(b)
    if a.shape[1] != b.shape[1]:
        raise ShapeMismatchError(
            f"Khatri-Rao needs equal column counts, got {a.shape[1]} and {b.shape[1]}"
        )
    check_size(a.shape[0] * b.shape[0], a.shape[1], size_cap)
    if a.shape[1] == 0:
        return np.zeros((a.shape[0] * b.shape[0], 0))
    return scipy.linalg.khatri_rao(a, b)


def hadamard(a, b) -> np.ndarray:
    a, b = as_matrix(a), as_matrix(b)
    if a.shape != b.shape:
        raise ShapeMismatchError(f"Hadamard product needs equal shapes, got {a.shape} and {b.shape}")
    return a * b


def svd(m: np.ndarray, compute_uv: bool = True):
    """Thin SVD, retrying with the slower but more robust gesvd driver."""
    for driver in ("gesdd", "gesvd"):
        try:
            return scipy.linalg.svd(
                m, full_matrices=False, compute_uv=compute_uv, lapack_driver=driver
            )
        except np.linalg.LinAlgError as e:
            logger.warning(f"[SVD] {driver} did not converge on a {m.shape} matrix: {e}")
        except ValueError as e:
            raise SVDConvergenceError(f"SVD rejected its input: {e}") from e
    raise SVDConvergenceError(f"SVD did not converge on a {m.shape[0]}x{m.shape[1]} matrix")


def rank_tolerance(singular_values: np.ndarray, shape: tuple[int, int]) -> float:
    """tau = max(rows, cols) * sigma_max * eps."""
    if singular_values.size == 0:
        return 0.0
    return max(shape) * float(singular_values[0]) * EPS


def singular_values(m) -> np.ndarray:
    m = as_matrix(m)
    if m.size == 0:
        return np.zeros(0)
    if not np.all(np.isfinite(m)):
        raise SVDConvergenceError("Matrix contains NaN or Inf entries")
    return svd(m, compute_uv=False)


def numerical_rank(m) -> int:
    m = as_matrix(m)
    s = singular_values(m)
    return int(np.sum(s > rank_tolerance(s, m.shape)))


def condition_estimate(s: np.ndarray) -> float:
    """sigma_max / sigma_min from precomputed singular values; inf when singular."""
    if s.size == 0:
        return 0.0
    if s[-1] == 0.0:
        return float("inf")
    return float(s[0] / s[-1])


def operator_norm(m) -> float:
    s = singular_values(m)
    return float(s[0]) if s.size else 0.0


def pinv_solve(m, rhs) -> np.ndarray:
    """
    Minimum-norm least-squares solution of m @ x = rhs via the SVD.

    Singular values at or below max(rows, cols) * sigma_max * eps are treated as zero,
    so a zero matrix yields the zero vector. ``rhs`` may be a vector or a matrix of
    right-hand sides.
    """
    m = as_matrix(m)
    rhs = np.asarray(rhs, dtype=np.float64)
    if rhs.shape[0] != m.shape[0]:
        raise ShapeMismatchError(f"Right-hand side has {rhs.shape[0]} rows, matrix has {m.shape[0]}")
    if m.size == 0:
        return np.zeros((m.shape[1],) + rhs.shape[1:])
    if not np.all(np.isfinite(m)):
        raise SVDConvergenceError("Matrix contains NaN or Inf entries")
    u, s, vt = svd(m)
    tau = rank_tolerance(s, m.shape)
    inverse = np.divide(1.0, s, out=np.zeros_like(s), where=s > tau)
    projected = u.T @ rhs
    if rhs.ndim == 1:
        return vt.T @ (inverse * projected)
    return vt.T @ (inverse[:, None] * projected)


def solve_square(m, rhs, tol: float = SOLVER_TOLERANCE) -> SolveOutcome:
    """
    Solve a square system and classify it by comparing rank(m) with rank([m | rhs]).

    Unique systems are solved by LU with partial pivoting (one step of iterative
    refinement when the first residual is above tolerance). A full-rank system whose
    refined residual stays above tol * (1 + ||rhs||_inf) is NoSolution to working
    precision and keeps its LU estimate as ``least_squares``. Infinite systems carry
    the minimum-norm solution; NoSolution carries none.
    """
    m, rhs = as_matrix(m), as_vector(rhs)
    n = m.shape[0]
    if m.shape != (n, n):
        raise ShapeMismatchError(f"solve_square needs a square matrix, got {m.shape}")
    if rhs.shape != (n,):
        raise ShapeMismatchError(f"Right-hand side has length {rhs.shape[0]}, expected {n}")
    if n == 0:
        return SolveOutcome(SolveClassification.UNIQUE, np.zeros(0), 0.0, 0.0, 0)

    s = singular_values(m)
    rank = int(np.sum(s > rank_tolerance(s, m.shape)))
    augmented_rank = numerical_rank(np.column_stack([m, rhs]))
    cond = condition_estimate(s)
    scale = 1.0 + float(np.max(np.abs(rhs)))

    if augmented_rank > rank:
        x = pinv_solve(m, rhs)
        residual = float(np.max(np.abs(m @ x - rhs)))
        return SolveOutcome(
            SolveClassification.NO_SOLUTION, None, residual, cond, rank, least_squares=x
        )

    if rank < n:
        x = pinv_solve(m, rhs)
        residual = float(np.max(np.abs(m @ x - rhs)))
        return SolveOutcome(
            SolveClassification.INFINITE, x, residual, cond, rank, pseudo_inverse=True
        )

    lu = scipy.linalg.lu_factor(m, check_finite=False)
    x = scipy.linalg.lu_solve(lu, rhs, check_finite=False)
    residual = float(np.max(np.abs(m @ x - rhs)))
    if residual > tol * scale:
        x = x + scipy.linalg.lu_solve(lu, rhs - m @ x, check_finite=False)
        residual = float(np.max(np.abs(m @ x - rhs)))
        if residual > tol * scale:
            logger.warning(
                f"[SOLVE] Residual {residual:.3e} above tolerance after refinement (cond {cond:.3e}); "
                f"no solution to working precision"
            )
            return SolveOutcome(
                SolveClassification.NO_SOLUTION, None, residual, cond, rank, least_squares=x
            )
    return SolveOutcome(SolveClassification.UNIQUE, x, residual, cond, rank)


def svd_factor(m, r: int) -> tuple[np.ndarray, np.ndarray]:
    """
    Truncated SVD factorization m ~ A @ B with A of shape rows x r and B of shape r x cols.

    The singular values are split evenly (sqrt on each side) so both factors have
    comparable scale.
    """
    m = as_matrix(m)
    if not 0 <= r <= min(m.shape):
        raise ShapeMismatchError(f"Rank {r} is outside [0, {min(m.shape)}] for a {m.shape} matrix")
    if not np.all(np.isfinite(m)):
        raise SVDConvergenceError("Matrix contains NaN or Inf entries")
    u, s, vt = svd(m)
    root = np.sqrt(s[:r])
    return u[:, :r] * root, root[:, None] * vt[:r]


def _as_boolean(b) -> np.ndarray:
    b = np.asarray(b)
    if b.ndim != 2 or b.shape[0] != b.shape[1]:
        raise ShapeMismatchError(f"Boolean determinant needs a square matrix, got shape {b.shape}")
    if b.dtype != bool and not np.all((b == 0) | (b == 1)):
        raise NonBooleanEntryError("Boolean determinant needs entries in {0, 1}")
    return b.astype(bool)


def _boolean_det_recursive(b: np.ndarray) -> int:
    n = b.shape[0]
    rows_by_column = [tuple(int(i) for i in np.flatnonzero(b[:, col])) for col in range(n)]

    @lru_cache(maxsize=None)
    def expand(used: int) -> bool:
        # Column to expand is the number of rows already consumed.
        col = bin(used).count("1")
        if col == n:
            return True
        return any(not used >> i & 1 and expand(used | 1 << i) for i in rows_by_column[col])

    return int(expand(0))


def boolean_det_matching(b) -> int:
    """1 iff the bipartite support graph of b has a perfect matching."""
    b = _as_boolean(b)
    if b.shape[0] == 0:
        return 1
    matching = maximum_bipartite_matching(csr_matrix(b), perm_type="column")
    return int(np.all(matching >= 0))


def boolean_det(b, method: str = "auto") -> int:
    """
    Boolean determinant: max over first-column expansions, recursively.

    ``method`` is "recursion" (memoized over the set of consumed rows),
    "matching" (perfect bipartite matching), or "auto" (recursion up to
    BOOLEAN_RECURSION_LIMIT, matching above).
    """
    b = _as_boolean(b)
    n = b.shape[0]
    if method == "matching" or (method == "auto" and n > BOOLEAN_RECURSION_LIMIT):
        return boolean_det_matching(b)
    if method not in ("recursion", "auto"):
        raise ValueError(f"Unknown Boolean determinant method: {method}")
    if n == 0:
        return 1
    return _boolean_det_recursive(b)


def boolean_khatri_rao(a, b) -> np.ndarray:
    """Khatri-Rao product over the {0, 1} semiring (AND for products)."""
    a, b = np.asarray(a, dtype=bool), np.asarray(b, dtype=bool)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ShapeMismatchError(f"Boolean Khatri-Rao needs equal column counts, got {a.shape} and {b.shape}")
    return (a[:, None, :] & b[None, :, :]).reshape(a.shape[0] * b.shape[0], a.shape[1])


def full_rank_rate(
    n: int,
    m: int,
    trials: int,
    distribution: Distribution = Distribution.UNIFORM,
    seed: SeedLike = None,
) -> int:
    """
    Count how many random draws of khatri_rao(A, B), A of shape n x nm and B of shape
    m x nm, have full numerical rank nm.

    Returns:
        Number of full-rank draws out of ``trials``.
    """
    rng = np.random.default_rng(seed)
    full = 0
    for _ in range(trials):
        a = distribution.sample(rng, (n, n * m))
        b = distribution.sample(rng, (m, n * m))
        full += numerical_rank(khatri_rao(a, b)) == n * m
    logger.info(f"[KR PROBE] ({n}, {m}) {distribution.value}: {full}/{trials} full rank")
    return full
