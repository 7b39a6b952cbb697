"""Small model builders shared by the test modules."""
import numpy as np

from lipnet1d.network import LayerSpec, Model, ModelConfig, free_var_shapes


def cfg(layers, n=8, c=1, rho=10.0, mode="lip", eps=1e-6):
    return ModelConfig(n, c, [LayerSpec(*l) for l in layers], rho=rho, eps=eps, mode=mode)


def model_with(config, fill):
    """Model whose free variables come from ``fill(layer_index, name, shape)``."""
    fvs = [{k: np.asarray(fill(i, k, s), dtype=float).reshape(s) for k, s in sh.items()}
           for i, sh in enumerate(free_var_shapes(config))]
    return Model(config, fvs)


def random_lip_config(rng):
    """Random conv/pool/dense architecture whose lengths divide evenly."""
    n = int(rng.choice([8, 12, 16]))
    c = int(rng.integers(1, 3))
    layers, length, ch = [], n, c
    for _ in range(int(rng.integers(1, 3))):
        kind = str(rng.choice(["conv", "conv_avgpool", "conv_maxpool"]))
        ell = int(rng.integers(1, 4))
        out = int(rng.integers(1, 4))
        pool = 1
        if kind != "conv":
            pool = 2 if length % 2 == 0 else 1
        if kind == "conv_maxpool":
            out = min(out, ell * ch)
        layers.append((kind, out, ell, pool))
        length //= pool
        ch = out
    layers.append(("flatten",))
    if rng.uniform() < 0.7:
        layers.append(("dense_hidden", int(rng.integers(2, 7))))
    layers.append(("dense_last", int(rng.integers(2, 5))))
    return cfg(layers, n=n, c=c, rho=float(rng.choice([0.5, 2.0, 10.0])))


def random_free_vars(config, rng, scale=1.0):
    return [{k: scale * rng.normal(size=s) for k, s in sh.items()} for sh in free_var_shapes(config)]
