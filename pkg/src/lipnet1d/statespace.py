"""State-space realization of causal 1D convolutions.

A kernel stack ``K_0 .. K_{l-1}`` (each ``c_out x c_in``) is realized as

    x_{k+1} = A x_k + B w_k,    y_k = C x_k + D w_k + bias

with the block-shift ``A``, the last-block selector ``B``, ``C = [K_{l-1} .. K_1]``
and ``D = K_0``.  The state stacks the last ``l - 1`` inputs oldest first.

The Gramian and ``F`` builders use plain operators only, so they accept numpy
arrays as well as autodiff graph nodes.
"""
from dataclasses import dataclass

import numpy as np

from .errors import NotPositiveDefinite, ShapeMismatch
from .numerics import linalg
from .numerics.autodiff import causal_conv


def shift_matrices(ell, c_in):
    """Return ``(A, B)`` for kernel size ``ell`` and ``c_in`` input channels."""
    nx = (ell - 1) * c_in
    a = np.eye(nx, k=c_in) if nx else np.zeros((0, 0))
    b = np.zeros((nx, c_in))
    if nx:
        b[-c_in:, :] = np.eye(c_in)
    return a, b


def stack_kernel(kernels):
    """``[K_0 .. K_{l-1}]`` -> ``Chat = [K_{l-1} .. K_1 K_0]``."""
    return np.concatenate(list(kernels)[::-1], axis=1)


def split_kernel(chat, ell):
    """Inverse of :func:`stack_kernel`; returns ``[K_0 .. K_{l-1}]``."""
    chat = np.asarray(chat)
    if chat.shape[1] % ell:
        raise ShapeMismatch(f"stacked kernel width {chat.shape[1]} not divisible by ell={ell}")
    c_in = chat.shape[1] // ell
    blocks = [chat[:, j * c_in:(j + 1) * c_in] for j in range(ell)]
    return blocks[::-1]


@dataclass(frozen=True)
class Realization:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    bias: np.ndarray
    ell: int
    c_in: int
    c_out: int

    @property
    def nx(self):
        return self.A.shape[0]

    @property
    def chat(self):
        return np.concatenate([self.C, self.D], axis=1)


@dataclass(frozen=True)
class GramianInputs:
    Q_prev: np.ndarray
    H: np.ndarray
    eps: float


def shift_realization(kernels, bias=None) -> Realization:
    kernels = [np.atleast_2d(np.asarray(k, dtype=np.float64)) for k in kernels]
    if not kernels:
        raise ShapeMismatch("kernel stack is empty")
    c_out, c_in = kernels[0].shape
    if any(k.shape != (c_out, c_in) for k in kernels):
        raise ShapeMismatch("kernels must share shape c_out x c_in")
    ell = len(kernels)
    bias = np.zeros(c_out) if bias is None else np.asarray(bias, dtype=np.float64).reshape(-1)
    if bias.shape != (c_out,):
        raise ShapeMismatch(f"bias has shape {bias.shape}, expected ({c_out},)")
    a, b = shift_matrices(ell, c_in)
    c = np.concatenate(kernels[:0:-1], axis=1) if ell > 1 else np.zeros((c_out, 0))
    return Realization(a, b, c, kernels[0].copy(), bias, ell, c_in, c_out)


def gramian_sum(a, b, q_prev_inv, h, eps, ell):
    """``sum_{k=0}^{ell-2} A^k (B Q^-1 B^T + H^T H + eps I) (A^T)^k`` for arrays or nodes."""
    nx = a.shape[0]
    term = b @ q_prev_inv @ b.T + h.T @ h + eps * np.eye(nx)
    x = term
    for _ in range(ell - 2):
        term = a @ term @ a.T
        x = x + term
    return x


def controllability_gramian(r: Realization, g: GramianInputs) -> np.ndarray:
    q_prev = linalg.as_matrix(g.Q_prev)
    h = linalg.as_matrix(g.H) if r.nx else np.zeros((0, 0))
    if q_prev.shape != (r.c_in, r.c_in) or h.shape != (r.nx, r.nx):
        raise ShapeMismatch(f"Q_prev {q_prev.shape} / H {h.shape} do not fit the realization")
    if not g.eps > 0:
        raise ValueError("eps must be positive")
    if r.nx == 0:
        return np.zeros((0, 0))
    x = gramian_sum(r.A, r.B, linalg.inverse(q_prev), h, g.eps, r.ell)
    x = linalg.symmetrize(x)
    if linalg.min_eigenvalue_sym(x) <= 0:
        raise NotPositiveDefinite("controllability Gramian is not positive definite")
    return x


def lyapunov_residual(x, r: Realization, g: GramianInputs) -> float:
    x = np.asarray(x, dtype=np.float64).reshape(r.nx, r.nx)
    h = np.asarray(g.H, dtype=np.float64).reshape(r.nx, r.nx)
    q_inv = linalg.inverse(linalg.as_matrix(g.Q_prev))
    res = x - r.A @ x @ r.A.T - r.B @ q_inv @ r.B.T - h.T @ h - g.eps * np.eye(r.nx)
    return float(np.linalg.norm(res))


def f_matrix(a, b, p, q_prev):
    """``[[P - A^T P A, -A^T P B], [-B^T P A, Q_prev - B^T P B]]`` for arrays or nodes."""
    nx, c = b.shape
    if nx == 0:
        return q_prev
    j = np.hstack([np.eye(nx), np.zeros((nx, c))])
    gab = np.hstack([a, b])
    k = np.hstack([np.zeros((c, nx)), np.eye(c)])
    return j.T @ p @ j - gab.T @ p @ gab + k.T @ q_prev @ k


def build_F(r: Realization, P, Q_prev) -> np.ndarray:
    p = np.asarray(P, dtype=np.float64).reshape(r.nx, r.nx)
    q_prev = linalg.as_matrix(Q_prev)
    if q_prev.shape != (r.c_in, r.c_in):
        raise ShapeMismatch(f"Q_prev has shape {q_prev.shape}, expected {(r.c_in, r.c_in)}")
    return linalg.symmetrize(f_matrix(r.A, r.B, p, q_prev))


def simulate(r: Realization, w) -> np.ndarray:
    """Run the recursion from a zero state; returns ``c_out x N`` outputs."""
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 2 or w.shape[0] != r.c_in or w.shape[1] < 1:
        raise ShapeMismatch(f"signal must be {r.c_in} x N with N >= 1, got {w.shape}")
    x = np.zeros(r.nx)
    out = np.empty((r.c_out, w.shape[1]))
    for k in range(w.shape[1]):
        out[:, k] = r.C @ x + r.D @ w[:, k] + r.bias
        x = r.A @ x + r.B @ w[:, k]
    return out


def toeplitz_operator(chat, ell, n):
    """Explicit ``(c_out*n) x (c_in*n)`` matrix of the front-padded convolution.

    Rows and columns are channel-major (index ``channel * n + t``).
    """
    chat = np.asarray(chat, dtype=np.float64)
    c_out, width = chat.shape
    c_in = width // ell
    basis = np.eye(c_in * n).reshape(c_in * n, c_in, n)
    cols = causal_conv(chat, basis, ell)  # (c_in*n, c_out, n)
    return cols.reshape(c_in * n, c_out * n).T
