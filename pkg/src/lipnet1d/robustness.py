"""L2 PGD attacks, robust-accuracy curves and empirical Lipschitz lower bounds."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .network import Model, apply_layers, forward
from .numerics import autodiff as ad
from .numerics.autodiff import Graph, eval_and_grad

ATTACK_CHUNK = 256


@dataclass
class AttackConfig:
    eps: float
    steps: int = 40
    step_size: float | None = None  # default 2.5 * eps / steps
    restarts: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.eps < 0 or self.steps < 1 or self.restarts < 1:
            raise ValueError("eps >= 0, steps >= 1 and restarts >= 1 required")
        if self.step_size is None:
            self.step_size = 2.5 * self.eps / self.steps if self.eps > 0 else 1.0
        if self.step_size <= 0:
            raise ValueError("step_size must be > 0")


def _per_sample_loss(logits, labels):
    z = logits - logits.max(axis=1, keepdims=True)
    return np.log(np.exp(z).sum(axis=1)) - z[np.arange(len(labels)), labels]


def _input_grad(model, x, labels):
    g = Graph()
    xl = g.leaf("x", x)
    loss = ad.softmax_cross_entropy(apply_layers(model.config, model.theta, xl), labels)
    _, grads = eval_and_grad(g, loss)
    return grads["x"]


def _norms(d):
    return np.sqrt((d.reshape(len(d), -1) ** 2).sum(axis=1)).reshape(-1, *([1] * (d.ndim - 1)))


def _project(x, x0, eps):
    d = x - x0
    n = _norms(d)
    scale = np.where(n > eps, eps / np.where(n > 0, n, 1.0), 1.0)
    return x0 + d * scale


def _pgd_batch(model, x0, labels, cfg, rng):
    best = x0.copy()
    best_loss = _per_sample_loss(forward(model, x0), labels)
    for r in range(cfg.restarts):
        if r == 0:
            x = x0.copy()
        else:
            d = rng.normal(size=x0.shape)
            radius = cfg.eps * rng.uniform(size=(len(x0),) + (1,) * (x0.ndim - 1)) ** (1.0 / x0[0].size)
            x = x0 + d / _norms(d) * radius
        for _ in range(cfg.steps):
            g = _input_grad(model, x, labels)
            gn = _norms(g)
            x = _project(x + cfg.step_size * g / np.where(gn > 0, gn, 1.0), x0, cfg.eps)
            loss = _per_sample_loss(forward(model, x), labels)
            better = loss > best_loss
            best[better] = x[better]
            best_loss = np.where(better, loss, best_loss)
    return best


def pgd_l2(model: Model, x, label, cfg: AttackConfig):
    """Loss-maximizing point in the L2 ball of radius ``cfg.eps`` around ``x``.

    ``x`` is one signal ``(c, N)`` with an integer label, or a batch ``(B, c, N)``
    with a label array; the budget applies per signal.  The best iterate by loss
    over all restarts is returned, the start point included.
    """
    x0 = np.asarray(x, dtype=np.float64)
    single = x0.ndim == 2
    xb = x0[None] if single else x0
    labels = np.atleast_1d(np.asarray(label, dtype=np.int64))
    if cfg.eps == 0:
        return x0.copy()
    rng = np.random.default_rng(cfg.seed)
    out = np.concatenate([_pgd_batch(model, xb[i:i + ATTACK_CHUNK], labels[i:i + ATTACK_CHUNK], cfg, rng)
                          for i in range(0, len(xb), ATTACK_CHUNK)])
    return out[0] if single else out


def robust_accuracy_curve(model: Model, dataset, eps_list, cfg: AttackConfig | None = None):
    """``[(eps, accuracy)]`` under PGD.

    ``cfg`` supplies steps, restarts and seed; eps and the default step size are set per entry.
    """
    base = cfg or AttackConfig(eps=0.0)
    x, y = dataset.signals, dataset.labels
    curve = []
    for eps in eps_list:
        c = AttackConfig(float(eps), base.steps, None, base.restarts, base.seed)
        xa = pgd_l2(model, x, y, c) if eps > 0 else x
        pred = np.concatenate([forward(model, xa[i:i + 512]).argmax(axis=1) for i in range(0, len(xa), 512)])
        curve.append((float(eps), float(np.mean(pred == y))))
    return curve


def write_curve_csv(curve, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epsilon", "accuracy"])
        for eps, acc in curve:
            w.writerow([f"{eps:g}", repr(acc)])


# ------------------------------------------------------------------ Lipschitz lower bound

def jacobians(model: Model, x):
    """Input-output Jacobians ``(B, n_out, c*N)`` of the logits, one backward pass per output."""
    x = np.asarray(x, dtype=np.float64)
    g = Graph()
    xl = g.leaf("x", x)
    logits = apply_layers(model.config, model.theta, xl)
    n_out = ad._val(logits).shape[1]
    rows = []
    for k in range(n_out):
        _, grads = eval_and_grad(g, ad.sum(ad.slice_(logits, (slice(None), slice(k, k + 1)))))
        rows.append(grads["x"].reshape(len(x), -1))
    return np.stack(rows, axis=1)


def _jac_norms(model, x):
    return np.linalg.norm(jacobians(model, x), ord=2, axis=(1, 2))


def empirical_lipschitz_lb(model: Model, dataset, iters=20, seed=0, n_points=64):
    """Largest gain found: Jacobian norms at sampled points refined by local search, and random pair ratios.

    Every candidate is an attained difference quotient or a limit of one, so the
    result never exceeds a valid Lipschitz upper bound.
    """
    rng = np.random.default_rng(seed)
    sig = np.asarray(getattr(dataset, "signals", dataset), dtype=np.float64)
    idx = rng.choice(len(sig), size=min(n_points, len(sig)), replace=False)
    x = sig[idx]
    best = _jac_norms(model, x)
    scale = float(np.std(sig)) or 1.0
    # local search: random moves accepted when the Jacobian norm grows
    for it in range(iters):
        step = scale * 0.5 ** (it % 6)
        cand = x + step * rng.normal(size=x.shape) / np.sqrt(x[0].size)
        n = _jac_norms(model, cand)
        up = n > best
        x[up] = cand[up]
        best = np.where(up, n, best)
    lb = float(best.max())
    # random pair ratios over the data
    n_pairs = min(1000, len(sig) * (len(sig) - 1) // 2)
    if n_pairs:
        i = rng.integers(0, len(sig), size=n_pairs)
        j = rng.integers(0, len(sig), size=n_pairs)
        keep = i != j
        i, j = i[keep], j[keep]
        if len(i):
            fi = np.concatenate([forward(model, sig[i[k:k + 512]]) for k in range(0, len(i), 512)])
            fj = np.concatenate([forward(model, sig[j[k:k + 512]]) for k in range(0, len(j), 512)])
            num = np.linalg.norm(fi - fj, axis=1)
            den = np.linalg.norm((sig[i] - sig[j]).reshape(len(i), -1), axis=1)
            ok = den > 0
            if ok.any():
                lb = max(lb, float((num[ok] / den[ok]).max()))
    return lb
