"""Dense least-squares and sample-moment kernel.

Every estimator in the package reduces to three primitives: a QR-based least
squares solve, residualizing a column on a design with an intercept, and the
unbiased sample covariance. Inputs are plain numpy arrays; nothing here keeps
state, so all functions are safe to call from worker threads.
"""
import numpy as np
from numpy.typing import NDArray
from scipy import linalg

from . import errors

# Pivots below RANK_TOL * max|pivot| are treated as exact collinearity.
RANK_TOL = 1e-10

Vector = NDArray[np.float64]
Matrix = NDArray[np.float64]


def as_vector(a, name: str = "vector") -> Vector:
    v = np.asarray(a, dtype=np.float64)
    if v.ndim != 1:
        raise errors.LengthMismatch(f"{name} must be one-dimensional, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise errors.NonFinite(f"{name} contains non-finite entries")
    return v


def as_matrix(a, name: str = "matrix") -> Matrix:
    m = np.asarray(a, dtype=np.float64)
    if m.ndim == 1:
        m = m[:, None]
    if m.ndim != 2:
        raise errors.LengthMismatch(f"{name} must be two-dimensional, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise errors.NonFinite(f"{name} contains non-finite entries")
    return m


def add_intercept(x) -> Matrix:
    x = as_matrix(x, "covariates")
    return np.column_stack([np.ones(x.shape[0]), x])


def _qr(a: Matrix, rank_tol: float) -> tuple[Matrix, Matrix]:
    n, k = a.shape
    if n < k:
        raise errors.RankDeficient(n, f"{n} rows cannot identify {k} coefficients")
    q, r = np.linalg.qr(a, mode="reduced")
    pivots = np.abs(np.diag(r))
    top = pivots.max() if k else 0.0
    if top == 0.0:
        raise errors.RankDeficient(0)
    small = np.flatnonzero(pivots < rank_tol * top)
    if small.size:
        raise errors.RankDeficient(int(small[0]))
    return q, r


def solve_least_squares(a, b, rank_tol: float = RANK_TOL) -> Vector:
    """Coefficients minimizing ||a @ beta - b||^2 via a thin QR factorization."""
    a = as_matrix(a, "design")
    b = as_vector(b, "response")
    if a.shape[0] != b.shape[0]:
        raise errors.LengthMismatch(f"design has {a.shape[0]} rows, response has {b.shape[0]}")
    q, r = _qr(a, rank_tol)
    return linalg.solve_triangular(r, q.T @ b, lower=False)


def inverse_gram(a, rank_tol: float = RANK_TOL) -> Matrix:
    """(a'a)^-1 computed from the R factor, used as the sandwich bread."""
    a = as_matrix(a, "design")
    _, r = _qr(a, rank_tol)
    r_inv = linalg.solve_triangular(r, np.eye(r.shape[0]), lower=False)
    return r_inv @ r_inv.T


def residualize(f, x) -> Vector:
    """Residual of f after projecting on the columns of x.

    x must already contain the intercept column (see `add_intercept`), so the
    residual is mean-zero.
    """
    f = as_vector(f, "instrument")
    x = as_matrix(x, "controls")
    return f - x @ solve_least_squares(x, f)


def projection_coefficients(f, x) -> Vector:
    return solve_least_squares(x, f)


def sample_cov(a, b) -> float:
    a = as_vector(a, "a")
    b = as_vector(b, "b")
    if a.shape[0] != b.shape[0]:
        raise errors.LengthMismatch(f"lengths differ: {a.shape[0]} vs {b.shape[0]}")
    n = a.shape[0]
    if n < 2:
        raise errors.LengthMismatch("sample covariance needs at least two observations")
    return float(np.dot(a - a.mean(), b - b.mean()) / (n - 1))


def sample_var(a) -> float:
    return sample_cov(a, a)
