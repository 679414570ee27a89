"""Central finite-difference gradient checks for the learner's networks (64-bit)."""
import math

import numpy as np

from arboids.apf import ATTACKER_OBS_DIM
from arboids.sac import LearnerConfig, SACLearner, transition_shapes

H = 1e-5
REL_TOL = 1e-6
# Entries smaller than this are compared on an absolute scale (|g - fd| < 1e-9):
# round-off in a central difference at this step is ~1e-10, so a relative error on
# near-zero entries would measure noise rather than the gradient. A larger step
# crosses leaky-relu kinks instead.
FLOOR = 1e-3

TINY = LearnerConfig(embed_width=4, hidden=5, adapter_width=4, act_width=3, batch=8, buffer_capacity=8)


def rel_error(g, fd):
    return abs(g - fd) / max(abs(g), abs(fd), FLOOR)


def random_batch(variant, rng, B=8, n_teammates=2):
    shapes = transition_shapes(variant, n_teammates, ATTACKER_OBS_DIM)
    b = {k: rng.normal(size=(B,) + s) for k, s in shapes.items()}
    b["a_drl"] = np.tanh(b["a_drl"])
    b["theta"] = rng.uniform(0, 1, B)
    b["done"] = (rng.uniform(size=B) < 0.3).astype(float)
    for p in ("obs/", "next/"):
        if p + "a_boids" in b:
            b[p + "a_boids"] = np.clip(b[p + "a_boids"], -1, 1)
    return b


def tiny_learner(variant, seed):
    """64-bit learner at a random parameter point.

    The output layers are re-drawn at ordinary fan-in scale (training shrinks
    them by 0.01), so gradients are not all squeezed toward the floor.
    """
    rng = np.random.default_rng(10_000 + seed)
    L = SACLearner(variant, TINY, seed, flat_dim=ATTACKER_OBS_DIM, dtype=np.float64)
    layers = [L.actor.head] + ([L.actor.adapter.net.layers[-1]] if L.actor.adapter else [])
    for layer in layers:
        bnd = 1.0 / math.sqrt(layer.in_dim)
        layer.W[...] = rng.uniform(-bnd, bnd, layer.W.shape)
        layer.b[...] = rng.uniform(-bnd, bnd, layer.b.shape)
    L.actor.bump()
    L.log_alpha[...] = rng.uniform(-2, 0)
    return L


def _central(p, idx, loss_fn, bump, h):
    old = p[idx]
    p[idx] = old + h
    bump()
    lp = loss_fn()
    p[idx] = old - h
    bump()
    lm = loss_fn()
    p[idx] = old
    bump()
    return (lp - lm) / (2 * h)


def _fd_check(params, grads, loss_fn, bump):
    """Worst relative error over all entries.

    When the step straddles a leaky-relu kink the difference quotients at h and
    h/10 disagree with each other; only then is the step refined (down to h/100)
    and the smallest disagreement kept. A wrong gradient still fails, because
    its difference quotients are mutually consistent.
    """
    worst = 0.0
    for p, g in zip(params, grads):
        assert p.shape == g.shape
        for idx in np.ndindex(p.shape):
            fd = _central(p, idx, loss_fn, bump, H)
            err = rel_error(g[idx], fd)
            if err >= REL_TOL:
                fine = _central(p, idx, loss_fn, bump, H / 10)
                if rel_error(fine, fd) >= REL_TOL:
                    finer = _central(p, idx, loss_fn, bump, H / 100)
                    err = min(rel_error(g[idx], fine), rel_error(g[idx], finer))
            worst = max(worst, err)
    return worst


def actor_check(variant, seed):
    """Worst relative error of the actor (+adapter) loss gradient; returns (err, grads)."""
    L = tiny_learner(variant, seed)
    rng = np.random.default_rng(seed)
    batch = random_batch(variant, rng)
    xi = rng.normal(size=(8, 2))
    _, grads, _ = L.actor_loss_and_grads(batch, xi)
    err = _fd_check(L.actor.parameters(), grads, lambda: L.actor_loss_and_grads(batch, xi)[0], L.actor.bump)
    return err, grads, L


def critic_check(variant, seed, which=0):
    L = tiny_learner(variant, seed)
    rng = np.random.default_rng(seed)
    batch = random_batch(variant, rng)
    y = rng.normal(size=8) * 3
    _, grads = L.critic_loss_and_grads(batch, y)
    c = L.critics[which]
    err = _fd_check(c.parameters(), grads[which], lambda: L.critic_loss_and_grads(batch, y)[0][which], c.bump)
    return err
