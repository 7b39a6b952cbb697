"""Dense linear algebra and reverse-mode differentiation."""
from . import autodiff
from .autodiff import Graph, Node, eval_and_grad, grad_check
from .linalg import cholesky_factor, inverse, min_eigenvalue_sym, solve_linear, spectral_norm

__all__ = [
    "Graph", "Node", "autodiff", "cholesky_factor", "eval_and_grad", "grad_check",
    "inverse", "min_eigenvalue_sym", "solve_linear", "spectral_norm",
]
