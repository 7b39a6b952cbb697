"""Direct parameterizations from free variables to layer weights.

Each layer function maps unconstrained variables to weights together with the
certificate matrices (Q, Lambda, P, F) that witness the layer's LMI.  All
functions run on plain arrays or on autodiff graph nodes alike, so the same
code serves numeric materialization and training.

Free-variable names used throughout (and in model files):

=============== ==================== =========================================
kind            names                shapes
=============== ==================== =========================================
dense_hidden    Y, Z, gamma, b       n x n, n_prev x n, n, n
dense_last      Y, Z, b              n x n, n_prev x n, n
conv            Y, Z, H, gamma, b    c x c, ell*c_in x c, nx x nx, c, c
conv_maxpool    Yt, H, gammat, l, b  ell*c_in x c, nx x nx, c, c, c
=============== ==================== =========================================
"""
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .cayley import cayley_ad, cayley_stiefel_ad
from .errors import ShapeMismatch, SingularPrev
from .numerics import autodiff as ad
from .statespace import f_matrix, gramian_sum, shift_matrices

GAMMA_CLAMP = 30.0
SQRT2 = float(np.sqrt(2.0))


@dataclass
class LayerCertificate:
    Q_prev: object
    Q: object
    lam: object  # diagonal of Lambda
    P: Optional[object] = None
    F: Optional[object] = None


@dataclass
class LayerParams:
    weight: object  # W for dense layers, stacked kernel Chat for conv layers
    bias: object
    L: Optional[object] = None
    cert: Optional[LayerCertificate] = None


def _col(v):
    return ad.reshape(v, (-1, 1))


def _row(v):
    return ad.reshape(v, (1, -1))


def _pos_diag(v):
    """exp of a clamped free vector; keeps Gamma and its inverse finite."""
    return ad.exp(ad.clip(v, -GAMMA_CLAMP, GAMMA_CLAMP))


def _sym(s):
    return 0.5 * (s + s.T)


def check_prev(L_prev):
    lv = ad._val(L_prev)
    if lv.ndim != 2 or lv.shape[0] != lv.shape[1]:
        raise ShapeMismatch(f"L_prev must be square, got {lv.shape}")
    if not np.all(np.isfinite(lv)):
        raise SingularPrev("L_prev has non-finite entries")
    s = np.linalg.svd(lv, compute_uv=False)
    if s.size and s.min() <= 1e-12 * max(1.0, s.max()):
        raise SingularPrev(f"L_prev is numerically singular (sigma_min={s.min():.3e})")


def _shape(x):
    return ad._val(x).shape


def _expect(fv, name, shape):
    if _shape(fv[name]) != tuple(shape):
        raise ShapeMismatch(f"free variable {name} has shape {_shape(fv[name])}, expected {tuple(shape)}")


def conv_factor(L_prev, H, ell, eps):
    """Gramian -> P -> F -> factor L^F with ``F = L^F^T L^F``.

    Returns ``(Q_prev, P, F, LF)``.  For ``ell == 1`` the state is empty,
    ``F = Q_prev`` and ``L_prev`` itself serves as the factor.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    c_in = _shape(L_prev)[0]
    q_prev = L_prev.T @ L_prev
    if ell == 1:
        return q_prev, None, q_prev, L_prev
    a, b = shift_matrices(ell, c_in)
    l_inv = ad.inverse(L_prev)
    x = _sym(gramian_sum(a, b, l_inv @ l_inv.T, H, eps, ell))
    p = _sym(ad.inverse(x))
    f = _sym(f_matrix(a, b, p, q_prev))
    return q_prev, p, f, ad.cholesky(f)


def dense_hidden(fv, L_prev) -> LayerParams:
    check_prev(L_prev)
    n_prev = _shape(L_prev)[0]
    n = _shape(fv["Y"])[0]
    _expect(fv, "Z", (n_prev, n))
    _expect(fv, "gamma", (n,))
    u, v = cayley_ad(fv["Y"], fv["Z"])
    g = _pos_diag(fv["gamma"])
    w = SQRT2 * (_col(1.0 / g) * (v.T @ L_prev))
    L = SQRT2 * (u * _row(g))
    cert = LayerCertificate(Q_prev=L_prev.T @ L_prev, Q=L.T @ L, lam=g * g)
    return LayerParams(w, fv["b"], L, cert)


def dense_last(fv, L_prev) -> LayerParams:
    check_prev(L_prev)
    n_prev = _shape(L_prev)[0]
    n = _shape(fv["Y"])[0]
    _expect(fv, "Z", (n_prev, n))
    _, v = cayley_ad(fv["Y"], fv["Z"])
    w = v.T @ L_prev
    cert = LayerCertificate(Q_prev=L_prev.T @ L_prev, Q=np.eye(n), lam=np.ones(n))
    return LayerParams(w, fv["b"], None, cert)


def conv_layer(fv, L_prev, ell, eps) -> LayerParams:
    check_prev(L_prev)
    c_in = _shape(L_prev)[0]
    c = _shape(fv["Y"])[0]
    _expect(fv, "Z", (ell * c_in, c))
    _expect(fv, "H", ((ell - 1) * c_in, (ell - 1) * c_in))
    _expect(fv, "gamma", (c,))
    q_prev, p, f, lf = conv_factor(L_prev, fv["H"], ell, eps)
    u, v = cayley_ad(fv["Y"], fv["Z"])
    g = _pos_diag(fv["gamma"])
    chat = SQRT2 * (_col(1.0 / g) * (v.T @ lf))
    L = SQRT2 * (u * _row(g))
    cert = LayerCertificate(Q_prev=q_prev, Q=L.T @ L, lam=g * g, P=p, F=f)
    return LayerParams(chat, fv["b"], L, cert)


def conv_layer_maxpool(fv, L_prev, ell, eps) -> LayerParams:
    check_prev(L_prev)
    c_in = _shape(L_prev)[0]
    c = _shape(fv["l"])[0]
    _expect(fv, "Yt", (ell * c_in, c))
    _expect(fv, "H", ((ell - 1) * c_in, (ell - 1) * c_in))
    _expect(fv, "gammat", (c,))
    q_prev, p, f, lf = conv_factor(L_prev, fv["H"], ell, eps)
    el = _pos_diag(fv["l"])
    gt = _pos_diag(fv["gammat"])
    q_diag = el * el
    lam = 0.5 * (gt * gt + q_diag)
    ut = cayley_stiefel_ad(fv["Yt"])
    chat = _col(gt / lam) * (ut.T @ lf)
    L = np.eye(c) * _row(el)
    cert = LayerCertificate(Q_prev=q_prev, Q=np.eye(c) * _row(q_diag), lam=lam, P=p, F=f)
    return LayerParams(chat, fv["b"], L, cert)


def lipschitz_dense(Yt, rho, b) -> LayerParams:
    """Single rho-Lipschitz affine layer ``W = rho * Cayley(Yt)^T``."""
    if not rho > 0:
        raise ValueError("rho must be positive")
    return LayerParams(rho * cayley_stiefel_ad(Yt).T, b)


def lipschitz_conv(Yt, H, rho, ell, eps, b) -> LayerParams:
    """Single rho-Lipschitz convolution; returns the stacked kernel as weight."""
    if not rho > 0:
        raise ValueError("rho must be positive")
    c_in = _shape(Yt)[0] // ell
    if _shape(Yt)[0] != ell * c_in:
        raise ShapeMismatch(f"Yt rows {_shape(Yt)[0]} not a multiple of ell={ell}")
    _, p, f, lf = conv_factor(rho * np.eye(c_in), H, ell, eps)
    chat = cayley_stiefel_ad(Yt).T @ lf
    return LayerParams(chat, b)
