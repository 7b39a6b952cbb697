"""Lipschitz-bounded 1D convolutional networks by direct parameterization."""

from .certify import Certificate, certify_network, product_bound
from .data import Dataset, load_csv, normalize, split, synth, write_csv
from .errors import (CertificateMismatch, FormatError, LengthMismatch, LipNetError, ModeError,
                     NonFiniteLoss, NotPositiveDefinite, NotSymmetric, ShapeMismatch, Singular,
                     SingularPrev)
from .network import LayerSpec, Model, ModelConfig, forward, load, materialize, predict, reference_config, save
from .robustness import AttackConfig, empirical_lipschitz_lb, pgd_l2, robust_accuracy_curve
from .train import TrainConfig, cross_entropy, train

__version__ = "0.1.0"
