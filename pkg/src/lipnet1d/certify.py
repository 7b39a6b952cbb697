"""LMI assembly and feasibility checks for Lipschitz certificates.

The certificate matrices come straight out of the parameterization, so checking
a model is a matter of assembling each layer's block matrix and testing its
smallest eigenvalue; no SDP solve is involved.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ModeError, ShapeMismatch
from .numerics.linalg import min_eigenvalue_sym, spectral_norm, symmetrize
from .statespace import f_matrix, shift_matrices, toeplitz_operator

DEFAULT_TOLERANCE = 1e-8


def _diag(lam):
    lam = np.asarray(lam, dtype=np.float64)
    return np.diag(lam) if lam.ndim == 1 else lam


def lmi_conv(A, B, C, D, P, Lam, Q_prev, Q):
    """Block matrix

        [[P - A'PA,   -A'PB,          -C' Lam ],
         [-B'PA,      Q_prev - B'PB,  -D' Lam ],
         [-Lam C,     -Lam D,         2Lam - Q]]
    """
    lam = _diag(Lam)
    A, B = np.asarray(A, float), np.asarray(B, float)
    nx = A.shape[0]
    C = np.asarray(C, float).reshape(lam.shape[0], nx)
    D = np.asarray(D, float)
    P = np.zeros((0, 0)) if nx == 0 else np.asarray(P, float)
    if P.shape != (nx, nx) or B.shape != (nx, D.shape[1]) or D.shape[0] != lam.shape[0]:
        raise ShapeMismatch("lmi_conv: inconsistent block shapes")
    f = f_matrix(A, B, P, np.asarray(Q_prev, float))
    chat = np.hstack([C, D])
    off = -lam @ chat
    return symmetrize(np.block([[f, off.T], [off, 2 * lam - np.asarray(Q, float)]]))


def lmi_dense(W, Lam, Q_prev, Q):
    lam = _diag(Lam)
    W = np.asarray(W, float)
    if W.shape != (lam.shape[0], np.shape(Q_prev)[0]):
        raise ShapeMismatch(f"lmi_dense: W {W.shape} vs Q_prev {np.shape(Q_prev)}")
    off = -lam @ W
    return symmetrize(np.block([[np.asarray(Q_prev, float), off.T], [off, 2 * lam - np.asarray(Q, float)]]))


def lmi_last(W, Q_prev):
    W = np.asarray(W, float)
    if W.shape[1] != np.shape(Q_prev)[0]:
        raise ShapeMismatch(f"lmi_last: W {W.shape} vs Q_prev {np.shape(Q_prev)}")
    return symmetrize(np.block([[np.asarray(Q_prev, float), -W.T], [-W, np.eye(W.shape[0])]]))


def avg_pool_lipschitz(ell: int) -> float:
    """Operator 2-norm of non-overlapping average pooling over windows of ``ell``."""
    if ell < 1:
        raise ValueError("pool size must be >= 1")
    return math.sqrt(1.0 / ell)  # correctly rounded for ell = 2


@dataclass
class LayerReport:
    index: int
    kind: str
    min_eig: float


@dataclass
class Certificate:
    layers: list
    rho: float
    rho_tilde: float
    mu: list
    rho_effective: float
    passed: bool
    tolerance: float
    lmis: list = field(default_factory=list, repr=False)

    @property
    def worst_min_eig(self):
        return min((r.min_eig for r in self.layers), default=float("inf"))

    def to_json(self):
        return {
            "layers": [{"index": r.index, "kind": r.kind, "min_eig": r.min_eig} for r in self.layers],
            "rho": self.rho,
            "rho_tilde": self.rho_tilde,
            "mu": list(self.mu),
            "rho_effective": self.rho_effective,
            "pass": self.passed,
            "tolerance": self.tolerance,
        }


def layer_lmis(model):
    """``[(index, kind, LMI matrix)]`` for every parameterized layer of a lip-mode model."""
    if model.config.mode != "lip":
        raise ModeError(f"{model.config.mode} models carry no certificate matrices; use product_bound")
    out = []
    cfg = model.config
    for i, (s, lp, (din, _)) in enumerate(zip(cfg.layers, model.theta.layers, cfg.dims())):
        if lp is None:
            continue
        c = lp.cert
        if s.kind == "dense_last":
            m = lmi_last(lp.weight, c.Q_prev)
        elif s.kind == "dense_hidden":
            m = lmi_dense(lp.weight, c.lam, c.Q_prev, c.Q)
        else:
            c_in = din[0]
            a, b = shift_matrices(s.ell, c_in)
            nx = a.shape[0]
            m = lmi_conv(a, b, lp.weight[:, :nx], lp.weight[:, nx:], c.P, c.lam, c.Q_prev, c.Q)
        out.append((i, s.kind, m))
    return out


def certify_network(model, tolerance=DEFAULT_TOLERANCE) -> Certificate:
    lmis = layer_lmis(model)
    reports = [LayerReport(i, kind, min_eigenvalue_sym(m)) for i, kind, m in lmis]
    mus = [m for m, s in zip(model.theta.mus, model.config.layers) if s.kind == "conv_avgpool"]
    rho_eff = model.theta.rho_tilde * math.prod(mus)
    passed = all(r.min_eig >= -tolerance for r in reports)
    return Certificate(reports, model.config.rho, model.theta.rho_tilde, mus, rho_eff, passed, tolerance,
                       [m for _, _, m in lmis])


def product_bound(model) -> float:
    """Product of per-layer operator norms (conv via explicit Toeplitz at the layer's length)."""
    bound = 1.0
    cfg = model.config
    for s, lp, (din, _) in zip(cfg.layers, model.theta.layers, cfg.dims()):
        if lp is None:
            continue
        if s.kind in ("conv", "conv_avgpool", "conv_maxpool"):
            bound *= spectral_norm(toeplitz_operator(lp.weight, s.ell, din[1]))
            if s.kind == "conv_avgpool":
                bound *= avg_pool_lipschitz(s.pool)
        else:
            bound *= spectral_norm(lp.weight)
    return bound
