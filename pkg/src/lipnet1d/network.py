"""Architecture description, materialization, inference and model files."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import param
from .errors import CertificateMismatch, FormatError, ShapeMismatch
from .numerics import autodiff as ad
from .statespace import split_kernel

SIGNATURE = "lipnet1d-model-v1"
THETA_SIGNATURE = "lipnet1d-theta-v1"

CONV_KINDS = ("conv", "conv_avgpool", "conv_maxpool")
DENSE_KINDS = ("dense_hidden", "dense_last")
KINDS = CONV_KINDS + DENSE_KINDS + ("flatten",)
MODES = ("lip", "vanilla", "l2")


@dataclass
class LayerSpec:
    kind: str
    out: int = 0
    ell: int = 1
    pool: int = 1

    def to_dict(self):
        d = {"kind": self.kind}
        if self.kind in CONV_KINDS:
            d.update(out=self.out, ell=self.ell)
        if self.kind in ("conv_avgpool", "conv_maxpool"):
            d["pool"] = self.pool
        if self.kind in DENSE_KINDS:
            d["out"] = self.out
        return d

    @classmethod
    def from_dict(cls, d, where="layers"):
        if not isinstance(d, dict) or d.get("kind") not in KINDS:
            raise FormatError(f"{where}.kind: expected one of {KINDS}")
        kw = {"kind": d["kind"]}
        for key in ("out", "ell", "pool"):
            if key in d:
                if not isinstance(d[key], int) or isinstance(d[key], bool) or d[key] < 1:
                    raise FormatError(f"{where}.{key}: expected a positive integer")
                kw[key] = d[key]
        return cls(**kw)


@dataclass
class ModelConfig:
    input_length: int
    input_channels: int
    layers: list
    rho: float = 10.0
    eps: float = 1e-6
    mode: str = "lip"

    def __post_init__(self):
        self.layers = [s if isinstance(s, LayerSpec) else LayerSpec.from_dict(s) for s in self.layers]
        self.validate()

    def validate(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if not self.rho > 0 or not self.eps > 0:
            raise ValueError("rho and eps must be positive")
        kinds = [s.kind for s in self.layers]
        if kinds.count("flatten") != 1:
            raise ValueError("exactly one flatten layer is required")
        if kinds.count("dense_last") != 1 or kinds[-1] != "dense_last":
            raise ValueError("exactly one dense_last layer is required, at the end")
        f = kinds.index("flatten")
        if any(k not in CONV_KINDS for k in kinds[:f]) or any(k not in DENSE_KINDS for k in kinds[f + 1:]):
            raise ValueError("conv layers must precede flatten and dense layers follow it")
        self.dims()

    def dims(self):
        """Per layer ``(input dims, output dims)``; conv dims are ``(channels, length)``."""
        out = []
        c, n = self.input_channels, self.input_length
        flat = None
        for i, s in enumerate(self.layers):
            if s.kind in CONV_KINDS:
                pool = s.pool if s.kind != "conv" else 1
                if n % pool:
                    raise ValueError(f"layer {i}: pool size {pool} does not divide length {n}")
                if s.kind == "conv_maxpool" and s.ell * c < s.out:
                    raise ValueError(f"layer {i}: conv_maxpool needs ell * c_in >= c_out")
                out.append(((c, n), (s.out, n // pool)))
                c, n = s.out, n // pool
            elif s.kind == "flatten":
                flat = c * n
                out.append(((c, n), (flat,)))
            else:
                out.append(((flat,), (s.out,)))
                flat = s.out
        return out

    @property
    def n_classes(self):
        return self.layers[-1].out

    def mus(self):
        """Lipschitz constants of the pooling stages (1 where there is none)."""
        from .certify import avg_pool_lipschitz

        return [avg_pool_lipschitz(s.pool) if s.kind == "conv_avgpool" else 1.0 for s in self.layers]

    def rho_tilde(self):
        return self.rho / math.prod(self.mus())

    def to_dict(self):
        return {
            "input_length": self.input_length,
            "input_channels": self.input_channels,
            "layers": [s.to_dict() for s in self.layers],
            "rho": self.rho,
            "eps": self.eps,
            "mode": self.mode,
        }

    @classmethod
    def from_dict(cls, d, where="config"):
        if not isinstance(d, dict):
            raise FormatError(f"{where}: expected an object")
        for key in ("input_length", "input_channels", "layers"):
            if key not in d:
                raise FormatError(f"{where}.{key}: missing")
        if not isinstance(d["layers"], list):
            raise FormatError(f"{where}.layers: expected a list")
        layers = [LayerSpec.from_dict(s, f"{where}.layers[{i}]") for i, s in enumerate(d["layers"])]
        try:
            return cls(int(d["input_length"]), int(d["input_channels"]), layers,
                       float(d.get("rho", 10.0)), float(d.get("eps", 1e-6)), d.get("mode", "lip"))
        except (TypeError, ValueError) as exc:
            raise FormatError(f"{where}: {exc}") from None


def reference_config(rho=10.0, mode="lip", input_length=128, n_classes=5, eps=1e-6):
    """Two causal conv (kernel 3) + average pool (2) stages, dense 60, dense n_classes."""
    return ModelConfig(
        input_length=input_length,
        input_channels=1,
        layers=[
            LayerSpec("conv_avgpool", out=2, ell=3, pool=2),
            LayerSpec("conv_avgpool", out=3, ell=3, pool=2),
            LayerSpec("flatten"),
            LayerSpec("dense_hidden", out=60),
            LayerSpec("dense_last", out=n_classes),
        ],
        rho=rho, eps=eps, mode=mode,
    )


# ------------------------------------------------------------------ free variables

def free_var_shapes(config: ModelConfig):
    shapes = []
    for s, ((din), (dout)) in zip(config.layers, config.dims()):
        if s.kind == "flatten":
            shapes.append({})
            continue
        if s.kind in CONV_KINDS:
            c_in, c = din[0], dout[0]
            nx = (s.ell - 1) * c_in
            if config.mode != "lip":
                shapes.append({"Chat": (c, s.ell * c_in), "b": (c,)})
            elif s.kind == "conv_maxpool":
                shapes.append({"Yt": (s.ell * c_in, c), "H": (nx, nx), "gammat": (c,), "l": (c,), "b": (c,)})
            else:
                shapes.append({"Y": (c, c), "Z": (s.ell * c_in, c), "H": (nx, nx), "gamma": (c,), "b": (c,)})
        else:
            n_in, n = din[0], dout[0]
            if config.mode != "lip":
                shapes.append({"W": (n, n_in), "b": (n,)})
            elif s.kind == "dense_hidden":
                shapes.append({"Y": (n, n), "Z": (n_in, n), "gamma": (n,), "b": (n,)})
            else:
                shapes.append({"Y": (n, n), "Z": (n_in, n), "b": (n,)})
    return shapes


def init_free_vars(config: ModelConfig, seed: int):
    """Matrices ~ N(0, 1/fan_in) with fan_in the row count (input width for W); vectors zero."""
    rng = np.random.default_rng(seed)
    out = []
    for shapes in free_var_shapes(config):
        fv = {}
        for name, shape in shapes.items():
            if len(shape) == 1:
                fv[name] = np.zeros(shape)
            else:
                fan_in = shape[1] if name in ("W", "Chat") else shape[0]
                fv[name] = rng.normal(0.0, 1.0 / math.sqrt(max(fan_in, 1)), size=shape)
        out.append(fv)
    return out


# ------------------------------------------------------------------ materialization

@dataclass
class Theta:
    layers: list  # LayerParams, or None for flatten
    rho_tilde: float | None = None
    mus: list = field(default_factory=list)

    def numeric(self):
        """Copy with every graph node replaced by its value."""
        def val(x):
            return None if x is None else np.array(ad._val(x))

        layers = []
        for lp in self.layers:
            if lp is None:
                layers.append(None)
                continue
            cert = None
            if lp.cert is not None:
                c = lp.cert
                cert = param.LayerCertificate(val(c.Q_prev), val(c.Q), val(c.lam), val(c.P), val(c.F))
            layers.append(param.LayerParams(val(lp.weight), val(lp.bias), val(lp.L), cert))
        return Theta(layers, self.rho_tilde, list(self.mus))


def materialize_vars(config: ModelConfig, free_vars) -> Theta:
    """Map free variables (arrays or graph nodes) to weights and certificates."""
    if config.mode != "lip":
        layers = [None if s.kind == "flatten" else
                  param.LayerParams(fv["Chat"] if s.kind in CONV_KINDS else fv["W"], fv["b"])
                  for s, fv in zip(config.layers, free_vars)]
        return Theta(layers)
    mus = config.mus()
    rho_tilde = config.rho / math.prod(mus)
    L = rho_tilde * np.eye(config.input_channels)
    layers = []
    for i, (s, fv, (din, _)) in enumerate(zip(config.layers, free_vars, config.dims())):
        try:
            if s.kind in ("conv", "conv_avgpool"):
                lp = param.conv_layer(fv, L, s.ell, config.eps)
            elif s.kind == "conv_maxpool":
                lp = param.conv_layer_maxpool(fv, L, s.ell, config.eps)
            elif s.kind == "flatten":
                # time-major flatten: Q_p expands to I_N (x) Q_p
                L = ad.block_diag_repeat(L, din[1])
                layers.append(None)
                continue
            elif s.kind == "dense_hidden":
                lp = param.dense_hidden(fv, L)
            else:
                lp = param.dense_last(fv, L)
        except Exception as exc:
            exc.layer_index = i
            exc.args = (f"layer {i} ({s.kind}): {exc}",)
            raise
        layers.append(lp)
        L = lp.L
    return Theta(layers, rho_tilde, mus)


# ------------------------------------------------------------------ model

class Model:
    """Configuration plus free variables; ``theta`` is kept in sync on every update."""

    def __init__(self, config: ModelConfig, free_vars, seed=0, normalization=None):
        self.config = config
        self.seed = int(seed)
        self.normalization = normalization
        self.set_free_vars(free_vars)

    @classmethod
    def init(cls, config: ModelConfig, seed=0):
        return cls(config, init_free_vars(config, seed), seed)

    def set_free_vars(self, free_vars):
        shapes = free_var_shapes(self.config)
        if len(free_vars) != len(shapes):
            raise ShapeMismatch(f"expected {len(shapes)} layers of free variables, got {len(free_vars)}")
        clean = []
        for i, (fv, sh) in enumerate(zip(free_vars, shapes)):
            if set(fv) != set(sh):
                raise ShapeMismatch(f"layer {i}: free variables {sorted(fv)} != {sorted(sh)}")
            d = {}
            for name, shape in sh.items():
                a = np.array(fv[name], dtype=np.float64).reshape(shape)
                d[name] = a
            clean.append(d)
        self.free_vars = clean
        self.theta = materialize_vars(self.config, clean)

    def copy(self):
        return Model(self.config, [{k: v.copy() for k, v in fv.items()} for fv in self.free_vars],
                     self.seed, None if self.normalization is None else dict(self.normalization))

    def preprocess(self, signals):
        """Apply the stored input normalization (identity when absent)."""
        x = np.asarray(signals, dtype=np.float64)
        if self.normalization is None:
            return x
        return (x - self.normalization["mean"]) / self.normalization["std"]


def materialize(model: Model) -> Theta:
    return materialize_vars(model.config, model.free_vars)


def apply_layers(config: ModelConfig, theta: Theta, x):
    """Forward through materialized layers; ``x`` is a (B, c, N) array or node."""
    for s, lp in zip(config.layers, theta.layers):
        if s.kind in CONV_KINDS:
            y = ad.causal_conv(lp.weight, x, s.ell) + ad.reshape(lp.bias, (1, -1, 1))
            x = ad.relu(y)
            if s.kind == "conv_avgpool":
                x = ad.avg_pool(x, s.pool)
            elif s.kind == "conv_maxpool":
                x = ad.max_pool(x, s.pool)
        elif s.kind == "flatten":
            b = ad._val(x).shape[0]
            x = ad.reshape(ad.permute(x, (0, 2, 1)), (b, -1))
        else:
            x = x @ lp.weight.T + ad.reshape(lp.bias, (1, -1))
            if s.kind == "dense_hidden":
                x = ad.relu(x)
    return x


def forward(model: Model, x):
    """Logits for one signal ``(c, N)`` or a batch ``(B, c, N)``."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 2
    xb = x[None] if single else x
    cfg = model.config
    if xb.ndim != 3 or xb.shape[1:] != (cfg.input_channels, cfg.input_length):
        raise ShapeMismatch(f"input shape {x.shape} does not match ({cfg.input_channels}, {cfg.input_length})")
    out = apply_layers(cfg, model.theta, xb)
    return out[0] if single else out


def predict(model: Model, x, batch_size=512):
    x = np.asarray(x, dtype=np.float64)
    return np.concatenate([forward(model, x[i:i + batch_size]).argmax(axis=1)
                           for i in range(0, len(x), batch_size)]) if len(x) else np.zeros(0, int)


def accuracy(model: Model, signals, labels):
    if len(labels) == 0:
        return float("nan")
    return float(np.mean(predict(model, signals) == np.asarray(labels)))


# ------------------------------------------------------------------ persistence

def _tolist(a):
    return np.asarray(a, dtype=np.float64).tolist()


def theta_export(model: Model):
    layers = []
    for i, (s, lp) in enumerate(zip(model.config.layers, model.theta.layers)):
        if lp is None:
            layers.append({"index": i, "kind": s.kind})
        elif s.kind in CONV_KINDS:
            layers.append({"index": i, "kind": s.kind,
                           "kernels": [_tolist(k) for k in split_kernel(lp.weight, s.ell)],
                           "bias": _tolist(lp.bias)})
        else:
            layers.append({"index": i, "kind": s.kind, "weight": _tolist(lp.weight), "bias": _tolist(lp.bias)})
    return layers


def to_document(model: Model):
    return {
        "signature": SIGNATURE,
        "config": model.config.to_dict(),
        "seed": model.seed,
        "normalization": model.normalization,
        "free_vars": [{k: _tolist(v) for k, v in fv.items()} for fv in model.free_vars],
        "theta": theta_export(model),
    }


def save(model: Model, path):
    Path(path).write_text(json.dumps(to_document(model)) + "\n")


def _array(value, shape, where):
    try:
        a = np.array(value, dtype=np.float64)
    except (TypeError, ValueError):
        raise FormatError(f"{where}: not a numeric array") from None
    if a.size == 0 and math.prod(shape) == 0:
        return np.zeros(shape)
    if a.shape != tuple(shape):
        raise FormatError(f"{where}: shape {a.shape}, expected {tuple(shape)}")
    if not np.all(np.isfinite(a)):
        raise FormatError(f"{where}: non-finite entries")
    return a


def from_document(doc, verify=True, tolerance=1e-8) -> Model:
    if not isinstance(doc, dict):
        raise FormatError("$: expected an object")
    if doc.get("signature") != SIGNATURE:
        raise FormatError(f"signature: expected {SIGNATURE!r}")
    config = ModelConfig.from_dict(doc.get("config"))
    seed = doc.get("seed", 0)
    if not isinstance(seed, int):
        raise FormatError("seed: expected an integer")
    norm = doc.get("normalization")
    if norm is not None:
        if not isinstance(norm, dict) or not all(isinstance(norm.get(k), (int, float)) for k in ("mean", "std")):
            raise FormatError("normalization: expected {mean, std} numbers")
        if not norm["std"] > 0:
            raise FormatError("normalization.std: must be positive")
    fvs = doc.get("free_vars")
    shapes = free_var_shapes(config)
    if not isinstance(fvs, list) or len(fvs) != len(shapes):
        raise FormatError(f"free_vars: expected a list of {len(shapes)} objects")
    free_vars = []
    for i, (fv, sh) in enumerate(zip(fvs, shapes)):
        if not isinstance(fv, dict) or set(fv) != set(sh):
            raise FormatError(f"free_vars[{i}]: expected keys {sorted(sh)}")
        free_vars.append({k: _array(fv[k], sh[k], f"free_vars[{i}].{k}") for k in sh})
    model = Model(config, free_vars, seed, norm)
    if verify:
        verify_theta(model, doc.get("theta"), tolerance)
        if config.mode == "lip":
            from .certify import certify_network

            cert = certify_network(model, tolerance)
            if not cert.passed:
                raise CertificateMismatch(f"certificate fails: min eigenvalue {cert.worst_min_eig:.3e}")
    return model


def verify_theta(model, stored, tolerance):
    if stored is None:
        return
    fresh = theta_export(model)
    if not isinstance(stored, list) or len(stored) != len(fresh):
        raise FormatError("theta: layer count does not match config")
    for i, (a, b) in enumerate(zip(stored, fresh)):
        if not isinstance(a, dict):
            raise FormatError(f"theta[{i}]: expected an object")
        for key in ("kernels", "weight", "bias"):
            if key not in b:
                continue
            if key not in a:
                raise FormatError(f"theta[{i}].{key}: missing")
            try:
                sa = np.array(a[key], dtype=np.float64)
            except (TypeError, ValueError):
                raise FormatError(f"theta[{i}].{key}: not a numeric array") from None
            sb = np.array(b[key])
            if sa.shape != sb.shape:
                raise FormatError(f"theta[{i}].{key}: shape {sa.shape}, expected {sb.shape}")
            dev = float(np.max(np.abs(sa - sb))) if sa.size else 0.0
            if not dev <= tolerance:
                raise CertificateMismatch(
                    f"theta[{i}].{key} deviates from the free variables by {dev:.3e}")


def load(path, verify=True, tolerance=1e-8) -> Model:
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"$: invalid JSON ({exc})") from None
    return from_document(doc, verify, tolerance)
