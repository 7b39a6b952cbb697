"""Cayley transform onto column-orthonormal stacked matrices.

For any ``Y`` (n x n) and ``Z`` (m x n), with ``M = Y - Y^T + Z^T Z``::

    U = (I + M)^{-1} (I - M),    V = 2 Z (I + M)^{-1},    U^T U + V^T V = I.
"""
import numpy as np

from .errors import ShapeMismatch
from .numerics import autodiff as ad
from .numerics import linalg


def _check(y, z):
    if y.ndim != 2 or y.shape[0] != y.shape[1]:
        raise ShapeMismatch(f"Y must be square, got {y.shape}")
    if z.ndim != 2 or z.shape[1] != y.shape[0]:
        raise ShapeMismatch(f"Z must have {y.shape[0]} columns, got {z.shape}")


def cayley(Y, Z):
    """Return ``(U, V)``; linear solves only, no explicit inverse."""
    y = linalg.as_matrix(Y)
    z = linalg.as_matrix(Z) if np.ndim(Z) == 2 else np.asarray(Z, dtype=np.float64).reshape(-1, y.shape[0])
    _check(y, z)
    eye = np.eye(y.shape[0])
    m = y - y.T + z.T @ z
    u = linalg.solve_linear(eye + m, eye - m)
    # V (I + M) = 2 Z  <=>  (I + M)^T V^T = 2 Z^T
    v = linalg.solve_linear((eye + m).T, 2.0 * z.T).T
    return u, v


def cayley_stiefel(T):
    """Cayley of a tall ``m x n`` matrix: top ``n x n`` block is Y, the rest Z; returns ``[U; V]``."""
    t = linalg.as_matrix(T)
    m, n = t.shape
    if m < n:
        raise ShapeMismatch(f"cayley_stiefel needs rows >= cols, got {t.shape}")
    u, v = cayley(t[:n], t[n:])
    return np.vstack([u, v])


def cayley_ad(y, z):
    """Differentiable variant for graph nodes (also accepts arrays)."""
    n = ad._val(y).shape[0]
    _check(ad._val(y), ad._val(z))
    eye = np.eye(n)
    m = y - y.T + z.T @ z
    inv = ad.inverse(eye + m)
    return inv @ (eye - m), 2.0 * (z @ inv)


def cayley_stiefel_ad(t):
    m, n = ad._val(t).shape
    if m < n:
        raise ShapeMismatch(f"cayley_stiefel needs rows >= cols, got {(m, n)}")
    u, v = cayley_ad(t[:n], t[n:])
    if m == n:
        return u
    return ad.concatenate([u, v], axis=0)
