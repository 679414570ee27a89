import math

import numpy as np
import pytest

from arboids.nn import (LEAKY_SLOPE, LOG_STD_MAX, Adam, Adapter, Dense, MeanEmbed, MLP, StaleCacheError,
                        activate, adapter_forward, copy_params, mean_embed, param_digest, sample_squashed,
                        soft_update, squash_forward, theta_from_pre)

from . import gradcheck, oracles


def _naive_dense(W, b, x, act):
    out = []
    for row in x:
        y = []
        for i in range(W.shape[0]):
            z = b[i] + sum(W[i, j] * row[j] for j in range(W.shape[1]))
            if act == "leaky_relu":
                z = z if z > 0 else LEAKY_SLOPE * z
            elif act == "tanh":
                z = math.tanh(z)
            y.append(z)
        out.append(y)
    return np.array(out)


def test_identity_linear_layer():
    d = Dense(3, 3, "linear", dtype=np.float64)
    d.W[...] = np.eye(3)
    d.b[...] = 0
    x = np.random.default_rng(0).normal(size=(5, 3))
    np.testing.assert_array_equal(d.forward(x)[0], x)


def test_leaky_relu_definition():
    assert activate(np.array([-1.0]), "leaky_relu")[0] == -0.01
    assert activate(np.array([2.0]), "leaky_relu")[0] == 2.0


def test_mlp_matches_naive_oracle():
    rng = np.random.default_rng(1)
    acts = ["leaky_relu", "tanh", "linear"]
    net = MLP([4, 6, 5, 3], acts, rng, dtype=np.float64)
    x = rng.normal(size=(7, 4))
    ref = x
    for layer, act in zip(net.layers, acts):
        ref = _naive_dense(layer.W, layer.b, ref, act)
    np.testing.assert_allclose(net.forward(x)[0], ref, atol=1e-12, rtol=0)


def test_dim_mismatch_rejected():
    with pytest.raises(ValueError):
        Dense(3, 2).forward(np.zeros((1, 4)))
    with pytest.raises(ValueError):
        Dense(0, 2)
    with pytest.raises(ValueError):
        Dense(2, 2, "relu6")


def test_stale_cache_rejected():
    net = MLP([3, 4, 1], ["leaky_relu", "linear"], np.random.default_rng(0))
    _, cache = net.forward(np.ones((2, 3), dtype=np.float32))
    net.bump()
    with pytest.raises(StaleCacheError):
        net.backward(cache, np.ones((2, 1), dtype=np.float32))


def test_backward_zero_and_linearity():
    rng = np.random.default_rng(2)
    net = MLP([3, 5, 2], ["tanh", "linear"], rng, dtype=np.float64)
    x = rng.normal(size=(4, 3))
    _, cache = net.forward(x)
    g0, dx0 = net.backward(cache, np.zeros((4, 2)))
    assert all(np.all(g == 0) for g in g0) and np.all(dx0 == 0)
    dy = rng.normal(size=(4, 2))
    g1, dx1 = net.backward(cache, dy)
    g2, dx2 = net.backward(cache, 2 * dy)
    for a, b in zip(g1, g2):
        np.testing.assert_allclose(b, 2 * a, rtol=1e-14)
    np.testing.assert_allclose(dx2, 2 * dx1, rtol=1e-14)


def test_mlp_gradient_finite_differences():
    rng = np.random.default_rng(3)
    net = MLP([3, 4, 4, 2], ["leaky_relu", "tanh", "linear"], rng, dtype=np.float64)
    x = rng.normal(size=(5, 3))
    w = rng.normal(size=(5, 2))

    def loss():
        return float(np.sum(net.forward(x)[0] * w))

    _, cache = net.forward(x)
    grads, dx = net.backward(cache, w)
    assert gradcheck._fd_check(net.parameters(), grads, loss, net.bump) < gradcheck.REL_TOL
    # input gradient
    h = gradcheck.H
    for idx in np.ndindex(x.shape):
        old = x[idx]
        x[idx] = old + h
        lp = loss()
        x[idx] = old - h
        lm = loss()
        x[idx] = old
        assert gradcheck.rel_error(dx[idx], (lp - lm) / (2 * h)) < gradcheck.REL_TOL


def test_mean_embed_properties():
    rng = np.random.default_rng(4)
    layer = Dense(3, 6, "leaky_relu", rng, dtype=np.float64)
    items = rng.normal(size=(4, 3))
    np.testing.assert_array_equal(mean_embed([items[0]], layer), layer.forward(items[:1])[0][0])
    np.testing.assert_array_equal(mean_embed(items[::-1], layer), mean_embed(items, layer))
    np.testing.assert_allclose(mean_embed([items[1]] * 3, layer), mean_embed([items[1]], layer), atol=1e-15)
    np.testing.assert_array_equal(mean_embed([], layer), np.zeros(6))


def test_mean_embed_batched_permutation_and_sizes():
    rng = np.random.default_rng(5)
    emb = MeanEmbed(3, 8, rng, dtype=np.float64)
    for k in range(0, 6):
        x = rng.normal(size=(2, k, 3))
        y, _ = emb.forward(x)
        assert y.shape == (2, 8)
    x = rng.normal(size=(3, 5, 3))
    y1, _ = emb.forward(x)
    for _ in range(20):
        np.testing.assert_array_equal(emb.forward(x[:, rng.permutation(5)])[0], y1)


def test_squash_deterministic_limit_and_bounds():
    mean = np.array([[0.3, -1.2]])
    a, _, _ = squash_forward(mean, np.full((1, 2), -20.0), np.array([[1.0, -1.0]]))
    np.testing.assert_allclose(a, np.tanh(mean), atol=1e-8)
    rng = np.random.default_rng(6)
    a, logp = sample_squashed(rng.normal(size=(1000, 2)), rng.uniform(-3, LOG_STD_MAX, (1000, 2)), rng)
    assert np.all(np.abs(a) < 1) and np.all(np.isfinite(logp))


def test_squash_fixed_seed_reproducible():
    m, s = np.zeros((3, 2)), np.zeros((3, 2))
    a1 = sample_squashed(m, s, np.random.default_rng(9))
    a2 = sample_squashed(m, s, np.random.default_rng(9))
    np.testing.assert_array_equal(a1[0], a2[0])
    np.testing.assert_array_equal(a1[1], a2[1])


def test_squash_log_prob_matches_numerical_density():
    rng = np.random.default_rng(7)
    h = 1e-6
    for _ in range(200):
        mean = rng.uniform(-0.5, 0.5, 2)
        log_std = rng.uniform(-2, -0.5, 2)
        xi = np.clip(rng.normal(size=2), -1.5, 1.5)
        a, logp, _ = squash_forward(mean[None], log_std[None], xi[None])
        ref = 0.0
        for k in range(2):
            u = mean[k] + math.exp(log_std[k]) * xi[k]
            jac = (math.tanh(u + h) - math.tanh(u - h)) / (2 * h)
            ref += math.log(oracles.gaussian_pdf(u, mean[k], math.exp(log_std[k]))) - math.log(jac)
        assert abs(logp[0] - ref) < 1e-5


def test_adapter_theta_range_and_limits():
    rng = np.random.default_rng(8)
    ad = Adapter(5, 4, rng=rng, dtype=np.float64)
    th = adapter_forward(rng.uniform(-1, 1, (10_000, 2)), rng.uniform(-1, 1, (10_000, 2)),
                         rng.normal(size=(10_000, 5)) * 10, ad)
    assert np.all((th >= 0) & (th <= 1))
    last = ad.net.layers[-1]
    last.W[...] = 0
    last.b[...] = 0
    ad.bump()
    assert adapter_forward(np.zeros(2), np.zeros(2), np.ones(5), ad)[0] == 0.5
    last.b[...] = 50
    ad.bump()
    assert adapter_forward(np.zeros(2), np.zeros(2), np.ones(5), ad)[0] == pytest.approx(1.0)
    assert theta_from_pre(0.0) == 0.5


def test_adapter_initial_theta_near_half():
    ad = Adapter(16, rng=np.random.default_rng(0))
    th = adapter_forward(np.zeros((4, 2)), np.zeros((4, 2)), np.ones((4, 16)), ad)
    assert np.all(np.abs(th - 0.5) < 0.05)


def test_soft_update_cases():
    rng = np.random.default_rng(9)
    t = [rng.normal(size=(3, 2)), rng.normal(size=4)]
    o = [rng.normal(size=(3, 2)), rng.normal(size=4)]
    t0 = [a.copy() for a in t]
    soft_update(t, o, 0.0)
    for a, b in zip(t, t0):
        np.testing.assert_array_equal(a, b)
    soft_update(t, o, 0.5)
    for a, b, c in zip(t, t0, o):
        np.testing.assert_allclose(a, 0.5 * (b + c), atol=1e-12)
    soft_update(t, o, 1.0)
    for a, c in zip(t, o):
        np.testing.assert_array_equal(a, c)
    with pytest.raises(ValueError):
        soft_update([np.zeros(3)], [np.zeros(4)], 0.5)


def test_adam_moves_against_gradient_and_copy_digest():
    rng = np.random.default_rng(10)
    a = MLP([2, 3, 1], ["tanh", "linear"], rng)
    b = MLP([2, 3, 1], ["tanh", "linear"], rng)
    assert param_digest(a) != param_digest(b)
    copy_params(b, a)
    assert param_digest(a) == param_digest(b)
    p = [np.array([1.0, -1.0])]
    Adam(p, lr=0.1).step([np.array([2.0, -3.0])])
    np.testing.assert_allclose(p[0], [0.9, -0.9])
    with pytest.raises(ValueError):
        Adam(p).step([])
