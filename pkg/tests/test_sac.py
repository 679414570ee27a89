import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from arboids.sac import (THETA_NOISE, LearnerConfig, ReplayBuffer, SACLearner, blend, explore_theta, replay_push,
                         replay_sample, split_obs, transition_shapes)

from . import gradcheck, oracles

N_POINTS = 20


# ---------------------------------------------------------------- gradient suite

@pytest.mark.parametrize("variant", ["arboids", "rp", "vanilla", "flat"])
def test_actor_gradients(variant):
    worst = max(gradcheck.actor_check(variant, seed)[0] for seed in range(N_POINTS))
    assert worst < gradcheck.REL_TOL


@pytest.mark.parametrize("variant", ["arboids", "rp", "vanilla", "flat"])
@pytest.mark.parametrize("which", [0, 1])
def test_critic_gradients(variant, which):
    worst = max(gradcheck.critic_check(variant, seed, which) for seed in range(N_POINTS))
    assert worst < gradcheck.REL_TOL


def test_theta_path_reaches_adapter():
    _, grads, L = gradcheck.actor_check("arboids", 0)
    n_adapter = len(L.actor.adapter.parameters())
    assert all(np.any(g != 0) for g in grads[-n_adapter:])


def _tiny(variant="arboids", seed=0, **kw):
    return gradcheck.tiny_learner(variant, seed) if not kw else SACLearner(
        variant, LearnerConfig(**{**gradcheck.TINY.__dict__, **kw}), seed, dtype=np.float64)


def test_adapter_gradient_zero_when_q_ignores_theta():
    L = _tiny()
    for c in L.critics:
        c.act.W[:, -1] = 0.0
        c.bump()
    rng = np.random.default_rng(1)
    _, grads, _ = L.actor_loss_and_grads(gradcheck.random_batch("arboids", rng), rng.normal(size=(8, 2)))
    for g in grads[-len(L.actor.adapter.parameters()):]:
        assert np.all(g == 0.0)


def test_entropy_only_gradient_when_q_constant():
    L = _tiny()
    for c in L.critics:
        c.act.W[...] = 0.0
        c.bump()
    rng = np.random.default_rng(2)
    batch = gradcheck.random_batch("arboids", rng)
    xi = rng.normal(size=(8, 2))
    _, grads, _ = L.actor_loss_and_grads(batch, xi)

    def entropy_term():
        mean, log_std, _, _ = L.actor.forward(split_obs(batch, "obs"))
        from arboids.nn import squash_forward
        return L.alpha * float(np.mean(squash_forward(mean, log_std, xi)[1]))

    assert gradcheck._fd_check(L.actor.parameters(), grads, entropy_term, L.actor.bump) < gradcheck.REL_TOL


def _scale_critics(L, c):
    for net in L.critics:
        last = net.trunk.layers[-1]
        last.W *= c
        last.b *= c
        net.bump()


def test_adapter_gradient_signs_survive_q_scaling():
    rng = np.random.default_rng(3)
    batch = gradcheck.random_batch("arboids", rng)
    xi = rng.normal(size=(8, 2))
    L = _tiny()
    k = len(L.actor.adapter.parameters())
    _, g1, _ = L.actor_loss_and_grads(batch, xi)
    _scale_critics(L, 7.5)
    _, g2, _ = L.actor_loss_and_grads(batch, xi)
    for a, b in zip(g1[-k:], g2[-k:]):
        np.testing.assert_array_equal(np.sign(a), np.sign(b))


def test_all_gradient_signs_survive_q_scaling_without_entropy():
    rng = np.random.default_rng(4)
    batch = gradcheck.random_batch("arboids", rng)
    xi = rng.normal(size=(8, 2))
    L = _tiny()
    L.log_alpha[...] = -np.inf
    _, g1, _ = L.actor_loss_and_grads(batch, xi)
    _scale_critics(L, 3.0)
    _, g2, _ = L.actor_loss_and_grads(batch, xi)
    for a, b in zip(g1, g2):
        np.testing.assert_array_equal(np.sign(a), np.sign(b))


# ---------------------------------------------------------------- critic targets

def test_done_and_zero_gamma_give_reward_target():
    rng = np.random.default_rng(5)
    L = _tiny()
    batch = gradcheck.random_batch("arboids", rng)
    batch["done"][:] = 1.0
    np.testing.assert_array_equal(L.critic_targets(batch, rng=rng), batch["reward"])
    L0 = _tiny(gamma=1e-300)
    batch["done"][:] = 0.0
    np.testing.assert_allclose(L0.critic_targets(batch, rng=rng), batch["reward"], atol=1e-12)


def test_hand_batch_critic_loss():
    L = _tiny(seed=6)
    rng = np.random.default_rng(6)
    batch = {k: v[:2] for k, v in gradcheck.random_batch("arboids", rng).items()}
    batch["done"][:] = (0.0, 1.0)
    xi = rng.normal(size=(2, 2))
    nxt = split_obs(batch, "next")
    mean, log_std, hid, _ = L.actor.forward(nxt)
    ls = np.clip(log_std, -20, 2)
    expected = 0.0
    for j in range(2):
        u = mean[j] + np.exp(ls[j]) * xi[j]
        a2 = np.tanh(u)
        logp = sum(math.log(oracles.gaussian_pdf(u[k], mean[j, k], math.exp(ls[j, k])))
                   - math.log(1 - a2[k] ** 2 + 1e-6) for k in range(2))
        th2 = L.actor.adapter.forward(a2[None], nxt["a_boids"][j:j + 1], hid[j:j + 1])[0]
        q1t = L.targets[0].forward({k: v[j:j + 1] for k, v in nxt.items()}, a2[None], th2)[0][0]
        q2t = L.targets[1].forward({k: v[j:j + 1] for k, v in nxt.items()}, a2[None], th2)[0][0]
        y = batch["reward"][j] + 0.99 * (1 - batch["done"][j]) * (min(q1t, q2t) - L.alpha * logp)
        obs = {k: v[j:j + 1] for k, v in split_obs(batch, "obs").items()}
        q = L.critics[0].forward(obs, batch["a_drl"][j:j + 1], batch["theta"][j:j + 1])[0][0]
        expected += 0.5 * (q - y) ** 2
    l1, _ = L.critic_update(batch, xi=xi)
    assert l1 == pytest.approx(expected, abs=1e-10)


def test_target_uses_min_of_twin_targets():
    L = _tiny(seed=7)
    rng = np.random.default_rng(7)
    batch = gradcheck.random_batch("arboids", rng)
    batch["done"][:] = 0.0
    xi = rng.normal(size=(8, 2))
    base = L.critic_targets(batch, xi=xi)

    def only(which):
        # push the other twin far above so the minimum is fully determined
        other = L.targets[1 - which].trunk.layers[-1]
        other.b += 1e4
        L.targets[1 - which].bump()
        y = L.critic_targets(batch, xi=xi)
        other.b -= 1e4
        L.targets[1 - which].bump()
        return y

    y1, y2 = only(0), only(1)
    assert np.any(y1 != y2)
    np.testing.assert_allclose(base, np.minimum(y1, y2), atol=1e-9)


def test_empty_batch_rejected():
    L = _tiny()
    batch = {k: v[:0] for k, v in gradcheck.random_batch("arboids", np.random.default_rng(0)).items()}
    with pytest.raises(ValueError):
        L.critic_update(batch, rng=np.random.default_rng(0))


# ---------------------------------------------------------------- temperature

def test_temperature_update_signs():
    L = _tiny()
    a0 = L.alpha
    L.temperature_update(np.full(16, 2.0))  # entropy exactly at target
    assert L.alpha == a0
    L.temperature_update(np.zeros(16))  # entropy above target
    assert L.alpha < a0
    a1 = L.alpha
    L.temperature_update(np.full(16, 5.0))  # below target
    assert L.alpha > a1


def test_alpha_stays_positive():
    L = SACLearner("rp", LearnerConfig(embed_width=4, hidden=4, adapter_width=4, act_width=4), 0)
    rng = np.random.default_rng(8)
    for _ in range(100_000):
        a = L.temperature_update(rng.normal(0, 20, 4))
        assert a > 0 and math.isfinite(a)


# ---------------------------------------------------------------- acting

def _obs(rng, n=3):
    # the learner acts in 32-bit, so build observations at that precision
    obs = {"items": rng.normal(size=(n, 2, 3)), "at": rng.normal(size=(n, 6)), "boids": rng.normal(size=(n, 8)),
           "a_boids": rng.uniform(-1, 1, (n, 2))}
    return {k: v.astype(np.float32) for k, v in obs.items()}


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_blend_identities(seed):
    rng = np.random.default_rng(seed)
    L = SACLearner("arboids", gradcheck.TINY, seed % 1000)
    obs = _obs(rng)
    a0, _, t0 = L.select_action(obs, "train", rng, theta_override=0.0)
    np.testing.assert_array_equal(a0, obs["a_boids"])
    assert np.all(t0 == 0)
    a1, drl, _ = L.select_action(obs, "eval", rng, theta_override=1.0)
    np.testing.assert_array_equal(a1, drl)
    a, drl, th = L.select_action(obs, "train", rng)
    assert np.all((th >= 0) & (th <= 1)) and np.all(np.abs(a) <= 1)
    np.testing.assert_array_equal(a, np.clip(blend(th, drl, obs["a_boids"]), -1, 1))


def test_blend_is_exact_at_endpoints():
    rng = np.random.default_rng(0)
    drl, boids = rng.uniform(-1, 1, (2, 50, 2))
    np.testing.assert_array_equal(blend(np.zeros(50), drl, boids), boids)
    np.testing.assert_array_equal(blend(np.ones(50), drl, boids), drl)


def test_theta_exploration_clip():
    class Fixed:
        def normal(self, mu, sigma, shape):
            return np.full(shape, 0.2)
    assert explore_theta(np.array([0.95]), Fixed())[0] == 1.0


@pytest.mark.parametrize("theta", [0.5, 0.95, 0.03])
def test_theta_exploration_moments(theta):
    rng = np.random.default_rng(11)
    draws = explore_theta(np.full(1_000_000, theta), rng)
    mean, var = oracles.clipped_gaussian_moments(theta, THETA_NOISE)
    assert abs(draws.mean() - mean) <= 0.01 * mean
    assert abs(draws.var() - var) <= 0.01 * var


def test_eval_mode_is_deterministic():
    L = SACLearner("arboids", gradcheck.TINY, 0)
    obs = _obs(np.random.default_rng(1))
    a1 = L.select_action(obs, "eval")
    a2 = L.select_action(obs, "eval")
    for x, y in zip(a1, a2):
        np.testing.assert_array_equal(x, y)
    with pytest.raises(ValueError):
        L.select_action(obs, "train")


def test_variant_action_rules():
    rng = np.random.default_rng(2)
    obs = _obs(rng)
    rp = SACLearner("rp", gradcheck.TINY, 0)
    a, drl, th = rp.select_action(obs, "eval")
    np.testing.assert_array_equal(a, np.clip(drl + obs["a_boids"], -1, 1))
    assert np.all(th == 1)
    van = SACLearner("vanilla", gradcheck.TINY, 0)
    a, drl, _ = van.select_action({k: v for k, v in obs.items() if k != "boids"}, "eval")
    np.testing.assert_array_equal(a, drl)


def test_team_size_independent_shapes():
    L = SACLearner("arboids", gradcheck.TINY, 0)
    rng = np.random.default_rng(3)
    for n in range(1, 7):
        obs = _obs(rng, n)
        obs["items"] = rng.normal(size=(n, n - 1, 3)).astype(np.float32)
        a, _, _ = L.select_action(obs, "eval")
        assert a.shape == (n, 2)


# ---------------------------------------------------------------- replay

def _transitions(n, value=0.0):
    return {k: np.full((n,) + s, value) for k, s in transition_shapes("arboids", 2).items()}


def test_replay_aggregates_agents():
    buf = ReplayBuffer(100, transition_shapes("arboids", 2))
    replay_push(buf, _transitions(3))
    assert len(buf) == 3


def test_replay_ring_eviction():
    buf = ReplayBuffer(4, transition_shapes("arboids", 2))
    for k in range(5):
        replay_push(buf, _transitions(1, float(k)))
    assert len(buf) == 4
    assert sorted(buf.data["reward"].tolist()) == [1.0, 2.0, 3.0, 4.0]


def test_replay_sampling_contract():
    buf = ReplayBuffer(50, transition_shapes("arboids", 2))
    for k in range(10):
        replay_push(buf, _transitions(3, float(k)))
    i1 = buf.sample_indices(20, np.random.default_rng(5))
    i2 = buf.sample_indices(20, np.random.default_rng(5))
    np.testing.assert_array_equal(i1, i2)
    assert len(set(i1.tolist())) == 20
    assert replay_sample(buf, 30, np.random.default_rng(0))["reward"].shape == (30,)
    with pytest.raises(ValueError):
        buf.sample(31, np.random.default_rng(0))
    with pytest.raises(ValueError):
        ReplayBuffer(0, {})


def test_update_and_freeze():
    L = SACLearner("arboids", gradcheck.TINY, 0)
    buf = ReplayBuffer(64, transition_shapes("arboids", 2))
    rng = np.random.default_rng(0)
    b = gradcheck.random_batch("arboids", rng, B=32)
    buf.push(b)
    m = L.update(buf, rng)
    assert set(m) == {"critic_loss", "actor_loss", "alpha", "mean_theta"} and L.updates == 1
    L.frozen = True
    with pytest.raises(RuntimeError):
        L.update(buf, rng)
