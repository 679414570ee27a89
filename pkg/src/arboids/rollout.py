"""Defender and attacker policies, and the single-episode rollout shared by training and evaluation."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .apf import ApfParams, apf_action, attacker_features, attacker_observation
from .boids import BoidsWeights, team_boids
from .env import EngagementEnv, EngagementState, EpisodeOutcome, team_features
from .sac import SACLearner


@dataclass(frozen=True)
class BoidsSettings:
    weights: BoidsWeights = BoidsWeights()
    k_sur: float = 0.001
    k_yaw: float = 0.002
    literal: bool = False

    def evaluate(self, state: EngagementState):
        return team_boids(state.defenders_arr, state.attacker_arr[:2], self.weights, self.k_sur, self.k_yaw,
                          self.literal)


# ------------------------------------------------------------------ defender policies

class BoidsPolicy:
    name = "boids"
    needs_features = False

    def act(self, state, boids_out, feats, rng):
        return boids_out[1], None


class StaticPolicy:
    """Holds zero thrust on every defender."""

    name = "static"
    needs_features = False

    def __init__(self, bounds=(-500.0, 1000.0)):
        lo, hi = bounds
        self.a0 = 2.0 * (0.0 - lo) / (hi - lo) - 1.0

    def act(self, state, boids_out, feats, rng):
        return np.full((state.n, 2), self.a0), None


class LearnedPolicy:
    """Shared-parameter policy: all defenders go through one batched forward pass."""

    needs_features = True

    def __init__(self, learner: SACLearner, mode: str = "eval", theta_override: float | None = None):
        self.learner = learner
        self.mode = mode
        self.theta_override = theta_override
        self.name = learner.variant

    def act(self, state, boids_out, feats, rng):
        a_exec, a_drl, theta = self.learner.select_action(feats, self.mode, rng, self.theta_override)
        self.last_a_drl = a_drl
        return a_exec, (theta if self.learner.uses_adapter else None)


# ------------------------------------------------------------------ attacker policies

class ApfAttacker:
    name = "apf"

    def __init__(self, params: ApfParams = ApfParams()):
        self.params = params

    def act(self, state: EngagementState, config, rng=None):
        return apf_action(state.attacker_arr, state.defenders_arr[:, :2], (0.0, 0.0), self.params)


class StraightAttacker:
    """Full forward thrust on both thrusters (it spawns pointing at the target)."""

    name = "straight"

    def act(self, state, config, rng=None):
        return np.array([1.0, 1.0])


class LearnedAttacker:
    name = "learned"

    def __init__(self, learner: SACLearner, mode: str = "eval"):
        self.learner = learner
        self.mode = mode

    def features(self, state, config):
        return attacker_features(attacker_observation(state, config))

    def act(self, state, config, rng=None):
        f = self.features(state, config)[None, :]
        a_exec, _, _ = self.learner.select_action({"flat": f}, self.mode, rng)
        return a_exec[0]


# ------------------------------------------------------------------ rollout

@dataclass
class EpisodeRecord:
    outcome: EpisodeOutcome | None = None
    t_end: float = 0.0
    steps: int = 0
    returns: np.ndarray | None = None
    rows: list = field(default_factory=list)


def run_episode(env: EngagementEnv, defender: object, attacker: object, boids: BoidsSettings,
                rng: np.random.Generator, noise: bool = False, record: bool = False,
                state: EngagementState | None = None) -> EpisodeRecord:
    """Play one engagement to termination.

    With ``record`` each decision step adds one row per agent:
    (t, agent_id, role, x, y, psi, u, v, r, tau_left, tau_right, theta).
    """
    cfg = env.config
    if state is None:
        state = env.reset(rng=rng)
    rec = EpisodeRecord(returns=np.zeros(cfg.n_defenders))
    while state.terminal is None:
        boids_out = boids.evaluate(state)
        feats = team_features(state, boids_out, cfg, noise, rng) if defender.needs_features else None
        actions, theta = defender.act(state, boids_out, feats, rng)
        a_att = attacker.act(state, cfg, rng)
        if record:
            th = env.thrusts(actions, a_att)
            rows = [state.defenders_arr[i] for i in range(state.n)] + [state.attacker_arr]
            for k, row in enumerate(rows):
                is_att = k == state.n
                rec.rows.append((state.t, k, "attacker" if is_att else "defender", *row, th[k, 0], th[k, 1],
                                 None if (is_att or theta is None) else float(theta[k])))
        state, rewards, outcome = env.step(state, actions, a_att)
        rec.returns += rewards
        rec.steps += 1
    rec.outcome = state.terminal
    rec.t_end = state.t
    return rec
