"""Dense linear algebra on float64 numpy arrays.

Matrices are plain 2-D ``np.ndarray``; a vector is an ``(n, 1)`` column or a
1-D array where noted.  Factorizations follow one convention everywhere:
``S = R.T @ R`` with ``R`` upper triangular.
"""
import warnings

import numpy as np
import scipy.linalg

from ..errors import NotPositiveDefinite, NotSymmetric, ShapeMismatch, Singular

SYM_TOL = 1e-10
POWER_GUARD_SEED = 20240917
DENSE_SVD_LIMIT = 2048


def as_matrix(a) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 0:
        return a.reshape(1, 1)
    if a.ndim == 1:
        return a.reshape(-1, 1)
    if a.ndim != 2:
        raise ShapeMismatch(f"expected a matrix, got shape {a.shape}")
    return a


def _require_square(a, what="matrix"):
    if a.shape[0] != a.shape[1]:
        raise ShapeMismatch(f"{what} must be square, got {a.shape}")


def _require_symmetric(s):
    _require_square(s)
    scale = max(1.0, np.linalg.norm(s))
    if s.size and np.max(np.abs(s - s.T)) > SYM_TOL * scale:
        raise NotSymmetric(f"asymmetry {np.max(np.abs(s - s.T)):.3e} exceeds {SYM_TOL:g}")


def cholesky_factor(s) -> np.ndarray:
    """Upper-triangular ``R`` with ``R.T @ R == s``."""
    s = as_matrix(s)
    _require_symmetric(s)
    if s.shape[0] == 0:
        return np.zeros((0, 0))
    try:
        lower = np.linalg.cholesky(0.5 * (s + s.T))
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from None
    if np.any(np.diag(lower) <= 0.0) or not np.all(np.isfinite(lower)):
        raise NotPositiveDefinite("non-positive pivot in Cholesky factorization")
    return lower.T.copy()


def min_eigenvalue_sym(s) -> float:
    s = as_matrix(s)
    _require_symmetric(s)
    if s.shape[0] == 0:
        return float("inf")
    return float(np.linalg.eigvalsh(0.5 * (s + s.T))[0])


def spectral_norm(m, tol=1e-15, max_iter=50_000, dense_limit=DENSE_SVD_LIMIT) -> float:
    """Largest singular value of ``m``.

    Up to ``dense_limit`` on the smaller side this is a LAPACK singular value
    computation: power iteration stalls far short of 1e-8 relative accuracy
    when the top singular values cluster, as they do for near-isometric
    convolutions, and it always errs low.  Larger matrices use power
    iteration on ``m.T @ m`` from the normalized all-ones vector and from one
    fixed pseudo-random guard vector (in case the first start is orthogonal
    to the top singular vector); the larger Rayleigh quotient wins.  Both
    paths are deterministic.
    """
    m = as_matrix(m)
    if m.size == 0:
        return 0.0
    if min(m.shape) <= dense_limit:
        return float(scipy.linalg.svdvals(m)[0])
    n = m.shape[1]
    guard = np.random.default_rng(POWER_GUARD_SEED).normal(size=n)
    lams = [_power_iteration(m, v / np.linalg.norm(v), tol, max_iter) for v in (np.ones(n), guard)]
    lams = [x for x in lams if x is not None]
    if not lams:
        # both starts in the null space; sweep the basis instead
        starts = (np.eye(n)[j] for j in range(n))
        lams = [max((_power_iteration(m, e, tol, max_iter) or 0.0) for e in starts)]
    return float(np.sqrt(max(max(lams), 0.0)))


def _power_iteration(m, v, tol, max_iter):
    lam = 0.0
    stalled = 0
    for _ in range(max_iter):
        w = m.T @ (m @ v)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return None
        new = float(v @ w)
        v = w / nw
        if abs(new - lam) <= tol * new:
            stalled += 1
            if stalled >= 3:
                return new
        else:
            stalled = 0
        lam = new
    return lam


def solve_linear(a, b) -> np.ndarray:
    """Solve ``a @ x = b`` by LU with partial pivoting."""
    a = as_matrix(a)
    b = np.asarray(b, dtype=np.float64)
    vec = b.ndim == 1
    b = as_matrix(b)
    _require_square(a)
    if b.shape[0] != a.shape[0]:
        raise ShapeMismatch(f"solve: A is {a.shape}, B is {b.shape}")
    if a.shape[0] == 0:
        return np.zeros(b.shape)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
        lu, piv = scipy.linalg.lu_factor(a, check_finite=True)
    if np.min(np.abs(np.diag(lu))) < 1e-14 * np.linalg.norm(a):
        raise Singular("pivot below 1e-14 * ||A||_F")
    x = scipy.linalg.lu_solve((lu, piv), b)
    return x.ravel() if vec else x


def inverse(a) -> np.ndarray:
    a = as_matrix(a)
    return solve_linear(a, np.eye(a.shape[0]))


def solve_upper(r, b) -> np.ndarray:
    """``r^{-1} b`` for upper-triangular ``r``."""
    return scipy.linalg.solve_triangular(r, b, lower=False)


def symmetrize(s):
    return 0.5 * (s + s.T)
