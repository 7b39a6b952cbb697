import numpy as np
import pytest

from lipnet1d import param
from lipnet1d.errors import ShapeMismatch, SingularPrev
from lipnet1d.numerics import autodiff as ad, spectral_norm
from lipnet1d.numerics.autodiff import Graph, grad_check
from lipnet1d.statespace import split_kernel, toeplitz_operator

from oracles import (lmi_conv_blocks, lmi_dense_blocks, lmi_last_blocks, min_eig, shift_pair,
                     toeplitz_loops)

SQ2 = np.sqrt(2.0)


def dense_fv(rng, n_prev, n, scale=1.0, last=False):
    fv = {"Y": scale * rng.normal(size=(n, n)), "Z": scale * rng.normal(size=(n_prev, n)),
          "b": rng.normal(size=n)}
    if not last:
        fv["gamma"] = rng.normal(size=n)
    return fv


def conv_fv(rng, c_in, c, ell, scale=1.0):
    nx = (ell - 1) * c_in
    return {"Y": scale * rng.normal(size=(c, c)), "Z": scale * rng.normal(size=(ell * c_in, c)),
            "H": scale * rng.normal(size=(nx, nx)), "gamma": rng.normal(size=c), "b": rng.normal(size=c)}


def maxpool_fv(rng, c_in, c, ell, scale=1.0):
    nx = (ell - 1) * c_in
    return {"Yt": scale * rng.normal(size=(ell * c_in, c)), "H": scale * rng.normal(size=(nx, nx)),
            "gammat": rng.normal(size=c), "l": rng.normal(size=c), "b": rng.normal(size=c)}


def random_factor(rng, n):
    return np.triu(rng.normal(size=(n, n)), 1) + np.diag(rng.uniform(0.5, 2.0, size=n))


def conv_lmi(lp, ell, c_in):
    a, b = shift_pair(ell, c_in)
    c = lp.cert
    p = np.zeros((0, 0)) if c.P is None else c.P
    return lmi_conv_blocks(a, b, lp.weight, p, c.lam, c.Q_prev, c.Q)


# ---- dense_hidden

def test_dense_hidden_identity_case():
    fv = {"Y": np.zeros((1, 1)), "Z": np.zeros((1, 1)), "gamma": np.zeros(1), "b": np.zeros(1)}
    lp = param.dense_hidden(fv, np.eye(1))
    np.testing.assert_allclose(lp.weight, [[0.0]], atol=1e-15)
    np.testing.assert_allclose(lp.L, [[SQ2]], atol=1e-15)


def test_dense_hidden_lmi_random():
    rng = np.random.default_rng(31)
    L_prev = random_factor(rng, 4)
    lp = param.dense_hidden(dense_fv(rng, 4, 3), L_prev)
    np.testing.assert_allclose(lp.cert.Q, lp.L.T @ lp.L, atol=1e-12)
    assert min_eig(lmi_dense_blocks(lp.weight, lp.cert.lam, L_prev.T @ L_prev, lp.cert.Q)) >= -1e-8


def test_dense_hidden_gamma_shift():
    rng = np.random.default_rng(32)
    L_prev = random_factor(rng, 4)
    fv = dense_fv(rng, 4, 3)
    for shift in (-3.0, 0.0, 4.0):
        fv2 = dict(fv, gamma=fv["gamma"] + shift)
        lp = param.dense_hidden(fv2, L_prev)
        np.testing.assert_allclose(lp.cert.lam, np.exp(2 * fv2["gamma"]), rtol=1e-12)
        assert min_eig(lmi_dense_blocks(lp.weight, lp.cert.lam, L_prev.T @ L_prev, lp.cert.Q)) >= -1e-8


def test_dense_hidden_singular_prev():
    rng = np.random.default_rng(0)
    with pytest.raises(SingularPrev):
        param.dense_hidden(dense_fv(rng, 2, 2), np.array([[1.0, 1.0], [1.0, 1.0]]))


def test_gamma_clamp_keeps_weights_finite():
    rng = np.random.default_rng(1)
    fv = dense_fv(rng, 3, 2)
    fv["gamma"] = np.array([1e3, -1e3])
    lp = param.dense_hidden(fv, np.eye(3))
    assert np.all(np.isfinite(lp.weight)) and np.all(np.isfinite(lp.L))


def test_dense_shape_mismatch():
    rng = np.random.default_rng(2)
    with pytest.raises(ShapeMismatch):
        param.dense_hidden(dense_fv(rng, 3, 2), np.eye(4))


# ---- dense_last

def test_dense_last_zero_z():
    fv = {"Y": np.ones((2, 2)), "Z": np.zeros((3, 2)), "b": np.zeros(2)}
    np.testing.assert_allclose(param.dense_last(fv, np.eye(3)).weight, 0.0, atol=1e-15)


def test_dense_last_contractive_with_identity_prev():
    lp = param.dense_last(dense_fv(np.random.default_rng(34), 5, 3, last=True), np.eye(5))
    assert spectral_norm(lp.weight) <= 1 + 1e-9


def test_dense_last_lmi_random():
    rng = np.random.default_rng(33)
    L_prev = random_factor(rng, 4)
    lp = param.dense_last(dense_fv(rng, 4, 3, last=True), L_prev)
    assert min_eig(lmi_last_blocks(lp.weight, L_prev.T @ L_prev)) >= -1e-8


# ---- conv_layer

def test_conv_l1_equals_dense():
    rng = np.random.default_rng(35)
    L_prev = random_factor(rng, 3)
    fv = conv_fv(rng, 3, 2, 1)
    c = param.conv_layer(fv, L_prev, 1, 1e-6)
    d = param.dense_hidden({k: fv[k] for k in ("Y", "Z", "gamma", "b")}, L_prev)
    np.testing.assert_allclose(c.weight, d.weight, atol=1e-12)
    np.testing.assert_allclose(c.L, d.L, atol=1e-12)


def test_conv_lmi_random():
    rng = np.random.default_rng(37)
    L_prev = random_factor(rng, 1)
    lp = param.conv_layer(conv_fv(rng, 1, 2, 3), L_prev, 3, 1e-6)
    assert min_eig(conv_lmi(lp, 3, 1)) >= -1e-8


def test_conv_zero_free_vars():
    fv = {"Y": np.zeros((2, 2)), "Z": np.zeros((6, 2)), "H": np.zeros((4, 4)),
          "gamma": np.zeros(2), "b": np.zeros(2)}
    lp = param.conv_layer(fv, np.eye(2), 3, 1e-6)
    for k in split_kernel(lp.weight, 3):
        np.testing.assert_allclose(k, 0.0, atol=1e-15)
    np.testing.assert_allclose(lp.L, SQ2 * np.eye(2), atol=1e-15)


# ---- conv_layer_maxpool

def test_maxpool_scalar_identity_case():
    fv = {"Yt": np.zeros((1, 1)), "H": np.zeros((0, 0)), "gammat": np.array([0.3]),
          "l": np.array([-0.2]), "b": np.zeros(1)}
    L_prev = np.array([[1.7]])
    lp = param.conv_layer_maxpool(fv, L_prev, 1, 1e-6)
    gt, q = np.exp(0.3), np.exp(-0.4)
    lam = 0.5 * (gt ** 2 + q)
    np.testing.assert_allclose(lp.weight, [[gt / lam * 1.7]], rtol=1e-14)


def test_maxpool_lmi_and_diagonal_q():
    rng = np.random.default_rng(41)
    L_prev = random_factor(rng, 2)
    lp = param.conv_layer_maxpool(maxpool_fv(rng, 2, 3, 3), L_prev, 3, 1e-6)
    q = np.asarray(lp.cert.Q)
    assert np.all(q == np.diag(np.diag(q)))
    assert min_eig(conv_lmi(lp, 3, 2)) >= -1e-8


def test_maxpool_schur_identity():
    rng = np.random.default_rng(42)
    L_prev = random_factor(rng, 2)
    fv = maxpool_fv(rng, 2, 3, 2)
    lp = param.conv_layer_maxpool(fv, L_prev, 2, 1e-6)
    lam = np.diag(lp.cert.lam)
    f = lp.cert.F
    schur = 2 * lam - lp.cert.Q - lam @ lp.weight @ np.linalg.solve(f, lp.weight.T) @ lam
    gt = np.diag(np.exp(fv["gammat"]))
    u = param.cayley_stiefel_ad(fv["Yt"])
    np.testing.assert_allclose(schur, gt @ gt - gt @ u.T @ u @ gt, atol=1e-9)
    assert np.max(np.abs(schur)) <= 1e-9


# ---- single rho-Lipschitz layers

def test_lipschitz_dense_zero_square():
    lp = param.lipschitz_dense(np.zeros((3, 3)), 4.0, np.zeros(3))
    np.testing.assert_allclose(lp.weight, 4.0 * np.eye(3), atol=1e-14)


def test_lipschitz_dense_rho1():
    lp = param.lipschitz_dense(np.random.default_rng(43).normal(size=(7, 4)), 1.0, np.zeros(4))
    assert spectral_norm(lp.weight) <= 1 + 1e-9


def test_lipschitz_dense_square_isometry():
    lp = param.lipschitz_dense(np.random.default_rng(44).normal(size=(4, 4)), 2.5, np.zeros(4))
    np.testing.assert_allclose(np.linalg.svd(lp.weight, compute_uv=False), 2.5, rtol=1e-12)


def test_lipschitz_conv_l1_zero():
    lp = param.lipschitz_conv(np.zeros((3, 3)), np.zeros((0, 0)), 3.0, 1, 1e-6, np.zeros(3))
    np.testing.assert_allclose(lp.weight, 3.0 * np.eye(3), atol=1e-14)


def test_lipschitz_conv_toeplitz_norm():
    rng = np.random.default_rng(47)
    rho, ell, c_in, c = 2.0, 3, 2, 3
    lp = param.lipschitz_conv(rng.normal(size=(ell * c_in, c)), rng.normal(size=(4, 4)), rho, ell, 1e-6,
                              np.zeros(c))
    t = toeplitz_loops(split_kernel(lp.weight, ell), 32)
    np.testing.assert_allclose(toeplitz_operator(lp.weight, ell, 32), t, atol=0)
    assert np.linalg.norm(t, 2) <= rho * (1 + 1e-6)


def test_lipschitz_conv_rho_scaling():
    y = np.random.default_rng(48).normal(size=(4, 2))
    k1 = param.lipschitz_conv(y, np.zeros((0, 0)), 1.5, 1, 1e-6, np.zeros(2)).weight
    k2 = param.lipschitz_conv(y, np.zeros((0, 0)), 3.0, 1, 1e-6, np.zeros(2)).weight
    assert np.linalg.norm(k2) == pytest.approx(2 * np.linalg.norm(k1), rel=1e-12)


# ---- soundness over many draws

@pytest.mark.parametrize("kind", ["dense_hidden", "dense_last", "conv", "conv_maxpool"])
def test_soundness_100_draws(kind):
    rng = np.random.default_rng({"dense_hidden": 101, "dense_last": 102, "conv": 103, "conv_maxpool": 104}[kind])
    worst = np.inf
    for _ in range(100):
        c_in, c = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        ell = int(rng.integers(1, 5))
        scale = float(rng.choice([0.1, 1.0, 3.0]))
        L_prev = random_factor(rng, c_in)
        q_prev = L_prev.T @ L_prev
        if kind == "dense_hidden":
            lp = param.dense_hidden(dense_fv(rng, c_in, c, scale), L_prev)
            m = lmi_dense_blocks(lp.weight, lp.cert.lam, q_prev, lp.cert.Q)
        elif kind == "dense_last":
            lp = param.dense_last(dense_fv(rng, c_in, c, scale, last=True), L_prev)
            m = lmi_last_blocks(lp.weight, q_prev)
        elif kind == "conv":
            lp = param.conv_layer(conv_fv(rng, c_in, c, ell, scale), L_prev, ell, 1e-6)
            m = conv_lmi(lp, ell, c_in)
        else:
            c = min(c, ell * c_in)
            lp = param.conv_layer_maxpool(maxpool_fv(rng, c_in, c, ell, scale), L_prev, ell, 1e-6)
            m = conv_lmi(lp, ell, c_in)
        worst = min(worst, min_eig(m))
    assert worst >= -1e-8


# ---- gradients through each parameterization

def _leaves(g, fv):
    return {k: g.leaf(k, v) for k, v in fv.items()}


def _quad(lp, rng):
    w = rng.normal(size=ad._val(lp.weight).shape)
    return ad.sum(lp.weight * lp.weight) + ad.sum(lp.weight * w)


def test_grad_dense_hidden():
    rng = np.random.default_rng(51)
    g = Graph()
    lp = param.dense_hidden(_leaves(g, dense_fv(rng, 3, 2)), g.leaf("L", random_factor(rng, 3)))
    assert grad_check(g, _quad(lp, rng) + ad.sum(lp.L * lp.L)) <= 1e-5


def test_grad_conv():
    rng = np.random.default_rng(52)
    g = Graph()
    lp = param.conv_layer(_leaves(g, conv_fv(rng, 2, 2, 3)), g.leaf("L", random_factor(rng, 2)), 3, 1e-3)
    assert grad_check(g, _quad(lp, rng) + ad.sum(lp.L * lp.L)) <= 1e-5


def test_grad_conv_maxpool():
    rng = np.random.default_rng(53)
    g = Graph()
    lp = param.conv_layer_maxpool(_leaves(g, maxpool_fv(rng, 2, 2, 2)), g.leaf("L", random_factor(rng, 2)),
                                  2, 1e-3)
    assert grad_check(g, _quad(lp, rng) + ad.sum(lp.L * lp.L)) <= 1e-5
