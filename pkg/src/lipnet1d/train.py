"""Mini-batch gradient training over free variables (lip) or raw weights (vanilla, l2)."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .certify import certify_network
from .errors import NonFiniteLoss
from .network import Model, accuracy, apply_layers, materialize_vars
from .numerics import autodiff as ad
from .numerics.autodiff import Graph, eval_and_grad

HISTORY_HEADER = ["epoch", "train_loss", "train_acc", "test_acc"]


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 10
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps_opt: float = 1e-8
    l2_gamma: float = 0.0
    seed: int = 0
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.learning_rate < 0:
            raise ValueError("epochs >= 0, batch_size >= 1 and learning_rate >= 0 required")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError("optimizer must be 'adam' or 'sgd'")
        if self.l2_gamma < 0:
            raise ValueError("l2_gamma must be >= 0")


@dataclass
class History:
    rows: list = field(default_factory=list)
    checkpoints: list = field(default_factory=list)  # (epoch, passed, worst min eig)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(HISTORY_HEADER)
            for r in self.rows:
                w.writerow([r["epoch"], repr(r["train_loss"]), repr(r["train_acc"]), repr(r["test_acc"])])


def cross_entropy(logits, label) -> float:
    """``-log softmax(logits)[label]`` with max subtraction."""
    z = np.asarray(logits, dtype=np.float64).reshape(-1)
    z = z - z.max()
    return float(np.log(np.exp(z).sum()) - z[int(label)])


def loss_graph(model: Model, x, labels, l2_gamma=0.0):
    """Build the batch loss graph; leaves are named ``"<layer>.<var>"``."""
    g = Graph()
    leaves = [{name: g.leaf(f"{i}.{name}", v) for name, v in fv.items()}
              for i, fv in enumerate(model.free_vars)]
    theta = materialize_vars(model.config, leaves)
    logits = apply_layers(model.config, theta, g.constant(x))
    loss = ad.softmax_cross_entropy(logits, labels)
    if l2_gamma > 0:
        for lp in theta.layers:
            if lp is not None:
                loss = loss + l2_gamma * (ad.sum(lp.weight * lp.weight) + ad.sum(lp.bias * lp.bias))
    return g, loss


class Adam:
    def __init__(self, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = {}
        self.v = {}

    def step(self, params, grads):
        self.t += 1
        out = {}
        for k, p in params.items():
            g = grads[k]
            m = self.b1 * self.m.get(k, 0.0) + (1 - self.b1) * g
            v = self.b2 * self.v.get(k, 0.0) + (1 - self.b2) * g * g
            self.m[k], self.v[k] = m, v
            mhat = m / (1 - self.b1 ** self.t)
            vhat = v / (1 - self.b2 ** self.t)
            out[k] = p - self.lr * mhat / (np.sqrt(vhat) + self.eps)
        return out


class SGD:
    def __init__(self, lr):
        self.lr = lr

    def step(self, params, grads):
        return {k: p - self.lr * grads[k] for k, p in params.items()}


def _flat(model):
    return {f"{i}.{k}": v for i, fv in enumerate(model.free_vars) for k, v in fv.items()}


def _unflat(model, flat):
    return [{k: flat[f"{i}.{k}"] for k in fv} for i, fv in enumerate(model.free_vars)]


def train(model: Model, train_ds, cfg: TrainConfig, test_ds=None, on_checkpoint=None):
    """Train ``model`` in place (also returned) and return ``(model, history)``.

    In lip mode, every checkpoint certifies the model; ``on_checkpoint(epoch,
    model, certificate)`` is called when given.  Certificates are ``None`` for
    vanilla and l2 models.
    """
    mode = model.config.mode
    l2 = cfg.l2_gamma if mode == "l2" else 0.0
    opt = Adam(cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps_opt) if cfg.optimizer == "adam" \
        else SGD(cfg.learning_rate)
    rng = np.random.default_rng(cfg.seed)
    history = History()
    x_all, y_all = train_ds.signals, train_ds.labels
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(y_all))
        losses, weights = [], []
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            g, loss = loss_graph(model, x_all[idx], y_all[idx], l2)
            value, grads = eval_and_grad(g, loss)
            step += 1
            if not np.isfinite(value) or not all(np.all(np.isfinite(v)) for v in grads.values()):
                raise NonFiniteLoss(step, value)
            model.set_free_vars(_unflat(model, opt.step(_flat(model), grads)))
            losses.append(value)
            weights.append(len(idx))
        row = {
            "epoch": epoch,
            "train_loss": float(np.average(losses, weights=weights)),
            "train_acc": accuracy(model, x_all, y_all),
            "test_acc": accuracy(model, test_ds.signals, test_ds.labels) if test_ds is not None else float("nan"),
        }
        history.rows.append(row)
        if cfg.checkpoint_every and epoch % cfg.checkpoint_every == 0:
            cert = certify_network(model) if mode == "lip" else None
            if cert is not None:
                history.checkpoints.append((epoch, cert.passed, cert.worst_min_eig))
            if on_checkpoint is not None:
                on_checkpoint(epoch, model, cert)
    return model, history
