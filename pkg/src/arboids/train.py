"""Training loops: curriculum defender training and alternating defender/attacker training."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import replace
from pathlib import Path

import numpy as np

from .apf import ATTACKER_OBS_DIM, attacker_reward
from .checkpoint import CheckpointError, load_learner, save_learner
from .config import ConfigError, RunConfig
from .env import EngagementEnv, team_features
from .evaluation import run_trials
from .rollout import ApfAttacker, BoidsPolicy, BoidsSettings, LearnedAttacker, LearnedPolicy, StaticPolicy, \
    StraightAttacker
from .sac import ReplayBuffer, SACLearner, transition_shapes

log = logging.getLogger(__name__)

POLICY_VARIANT = {"arboids": "arboids", "rp": "rp", "vanilla_sac": "vanilla"}


def curriculum_mean(step: int, base: float = 2.0, increment: float = 0.25, interval: int = 250_000,
                    levels: int = 4) -> float:
    """Piecewise-constant mean agility: +increment every ``interval`` steps, held at the last level."""
    if step < 0:
        raise ValueError("step must be non-negative")
    return base + increment * min(step // interval, levels - 1)


def sample_agility(mean: float, rng: np.random.Generator, half_width: float = 0.5) -> float:
    if mean - half_width <= 0:
        raise ValueError("agility interval must stay positive")
    return float(rng.uniform(mean - half_width, mean + half_width))


def boids_settings(cfg: RunConfig) -> BoidsSettings:
    return BoidsSettings(cfg.boids_weights(), cfg.boids.k_sur, cfg.boids.k_yaw, cfg.boids.unscaled_self_term)


def make_attacker(cfg: RunConfig, learner: SACLearner | None = None):
    kind = cfg.policy.attacker
    if kind == "apf":
        return ApfAttacker(cfg.apf_params())
    if kind == "straight":
        return StraightAttacker()
    if learner is None:
        if not cfg.policy.attacker_checkpoint:
            raise ConfigError("policy.attacker = 'learned' needs policy.attacker_checkpoint")
        learner, _ = load_learner(cfg.policy.attacker_checkpoint)
    return LearnedAttacker(learner)


def make_defender(cfg: RunConfig, learner: SACLearner | None = None):
    kind = cfg.policy.defender
    if kind == "boids":
        return BoidsPolicy()
    if kind == "static":
        return StaticPolicy(cfg.vessel.thrust_bounds)
    if learner is None:
        if not cfg.policy.checkpoint:
            raise ConfigError(f"policy.defender = {kind!r} needs policy.checkpoint")
        learner, _ = load_learner(cfg.policy.checkpoint)
        if learner.variant != POLICY_VARIANT[kind]:
            raise CheckpointError(f"checkpoint holds a {learner.variant!r} policy, config asks for {kind!r}")
    return LearnedPolicy(learner, "eval")


class RunDir:
    """Output layout: config.json, metrics.jsonl, checkpoints/, report.json."""

    def __init__(self, out, cfg: RunConfig):
        self.root = Path(out)
        try:
            (self.root / "checkpoints").mkdir(parents=True, exist_ok=True)
            (self.root / "config.json").write_text(cfg.to_json())
            self.metrics_path = self.root / "metrics.jsonl"
            self.metrics_path.write_text("")
        except OSError as exc:
            raise OSError(f"cannot write run directory {self.root}: {exc}") from exc

    def metric(self, row: dict):
        with open(self.metrics_path, "a") as fh:
            fh.write(json.dumps(row, sort_keys=True) + "\n")

    def checkpoint(self, name: str) -> Path:
        return self.root / "checkpoints" / name

    def report(self, data: dict):
        (self.root / "report.json").write_text(json.dumps(data, indent=2, sort_keys=True))


def _r(x):
    return None if x is None else round(float(x), 8)


def _push_defender(buffer, feats, a_drl, theta, rewards, next_feats, done):
    n = len(rewards)
    buffer.push({
        "obs/items": feats["items"], "obs/at": feats["at"], "obs/boids": feats["boids"],
        "obs/a_boids": feats["a_boids"],
        "next/items": next_feats["items"], "next/at": next_feats["at"], "next/boids": next_feats["boids"],
        "next/a_boids": next_feats["a_boids"],
        "a_drl": a_drl, "theta": theta, "reward": rewards, "done": np.full(n, float(done)),
    })


def evaluate_sr(cfg: RunConfig, defender, attacker, agility: float, episodes: int, seed: int):
    ecfg = cfg.engagement_config(agility=agility)
    stats, _ = run_trials(defender, attacker, ecfg, episodes, seed, cfg.vessel_params(), boids_settings(cfg),
                          cfg.engagement.eval_sector_width)
    return stats


def train(cfg: RunConfig, out, learner: SACLearner | None = None, attacker=None, total_steps: int | None = None,
          step0: int = 0, run: RunDir | None = None, tag: str = "") -> dict:
    """Train the shared defender policy against a fixed attacker.

    Returns a summary dict with the learner under ``"learner"``.
    """
    variant = POLICY_VARIANT.get(cfg.policy.defender)
    if variant is None:
        raise ValueError(f"policy.defender = {cfg.policy.defender!r} is not trainable")
    run = run or RunDir(out, cfg)
    lc = cfg.learner_config()
    seeds = np.random.SeedSequence(cfg.seed).spawn(5)
    if learner is None:
        learner = SACLearner(variant, lc, seed=int(seeds[0].generate_state(1)[0]))
    attacker = attacker or make_attacker(cfg)
    env_rng, act_rng, upd_rng, noise_rng = (np.random.default_rng(s) for s in seeds[1:])
    vessel = cfg.vessel_params()
    boids = boids_settings(cfg)
    n = cfg.engagement.n_defenders
    buffer = ReplayBuffer(lc.buffer_capacity, transition_shapes(learner.variant, n - 1))
    policy = LearnedPolicy(learner, "train")
    total = total_steps if total_steps is not None else cfg.train.total_steps
    tc = cfg.train
    cur = cfg.curriculum

    step = 0
    episodes = 0
    last = {"critic_loss": None, "actor_loss": None, "alpha": learner.alpha, "mean_theta": None}
    ep_returns = []
    theta_acc = []
    sr_history = []
    while step < total:
        if cur.enabled:
            agility = sample_agility(curriculum_mean(step0 + step, cur.base, cur.increment, cur.interval,
                                                     cur.levels), env_rng, cur.half_width)
        else:
            agility = cur.fixed_agility
        env = EngagementEnv(cfg.engagement_config(agility=agility), vessel)
        state = env.reset(rng=env_rng)
        boids_out = boids.evaluate(state)
        feats = team_features(state, boids_out, env.config, tc.observation_noise, noise_rng)
        ep_ret = np.zeros(n)
        while state.terminal is None and step < total:
            a_exec, a_drl, theta = learner.select_action(feats, "train", act_rng)
            theta_acc.append(float(np.mean(theta)))
            a_att = attacker.act(state, env.config, act_rng)
            state, rewards, outcome = env.step(state, a_exec, a_att)
            boids_out = boids.evaluate(state)
            nfeats = team_features(state, boids_out, env.config, tc.observation_noise, noise_rng)
            _push_defender(buffer, feats, a_drl, theta, rewards, nfeats, outcome is not None)
            feats = nfeats
            ep_ret += rewards
            step += 1
            if step > lc.warmup_steps and len(buffer) >= lc.batch:
                for _ in range(lc.updates_per_step):
                    last = learner.update(buffer, upd_rng)
            if step % tc.eval_every == 0:
                stats = evaluate_sr(cfg, LearnedPolicy(learner, "eval"), attacker, tc.eval_agility,
                                    tc.eval_episodes, cfg.seed + 7919 + step0 + step)
                sr_history.append((step0 + step, stats.success_rate))
                run.metric({"kind": "eval", "tag": tag, "step": step0 + step, "sr": stats.success_rate,
                            "collision_rate": stats.collision_rate, "breach_rate": stats.breach_rate})
            if step % tc.log_every == 0 or step == total:
                run.metric({"kind": "log", "tag": tag, "step": step0 + step, "episodes": episodes,
                            "warmup": step <= lc.warmup_steps, "updates": learner.updates,
                            "episode_return": _r(np.mean(ep_returns[-20:])) if ep_returns else None,
                            "alpha": _r(learner.alpha), "critic_loss": _r(last["critic_loss"]),
                            "actor_loss": _r(last["actor_loss"]),
                            "mean_theta": _r(np.mean(theta_acc)) if theta_acc and learner.uses_adapter else None,
                            "agility": _r(agility)})
                theta_acc = []
            if tc.checkpoint_every and step % tc.checkpoint_every == 0:
                save_learner(learner, run.checkpoint(f"{tag}step_{step0 + step:08d}.ckpt"), step0 + step)
        if state.terminal is not None:
            episodes += 1
            ep_returns.append(float(ep_ret.mean()))
    final = run.checkpoint(f"{tag}final.ckpt")
    save_learner(learner, final, step0 + step)
    summary = {"steps": step, "episodes": episodes, "updates": learner.updates, "sr_history": sr_history,
               "checkpoint": str(final), "variant": learner.variant}
    if not tag:
        run.report(summary)
    summary["learner"] = learner
    return summary


def _attacker_phase(cfg, att_learner, defender_learner, steps, buffer, rngs, run, step0, tag):
    env_rng, act_rng, upd_rng, noise_rng = rngs
    lc = att_learner.config
    env = EngagementEnv(cfg.engagement_config(), cfg.vessel_params())
    boids = boids_settings(cfg)
    defender = LearnedPolicy(defender_learner, "eval")
    attacker = LearnedAttacker(att_learner, "train")
    step = 0
    while step < steps:
        state = env.reset(rng=env_rng)
        obs = attacker.features(state, env.config)
        while state.terminal is None and step < steps:
            boids_out = boids.evaluate(state)
            feats = team_features(state, boids_out, env.config, False, None)
            d_act, _ = defender.act(state, boids_out, feats, act_rng)
            a_exec, a_drl, _ = att_learner.select_action({"flat": obs[None, :]}, "train", act_rng)
            prev = state
            state, _, outcome = env.step(state, d_act, a_exec[0])
            r = attacker_reward(prev, state, outcome, env.config.r_cap)
            nobs = attacker.features(state, env.config)
            buffer.push({"obs/flat": obs[None], "next/flat": nobs[None], "a_drl": a_drl, "theta": np.ones(1),
                         "reward": np.array([r]), "done": np.array([float(outcome is not None)])})
            obs = nobs
            step += 1
            if len(buffer) > lc.warmup_steps and len(buffer) >= lc.batch:
                att_learner.update(buffer, upd_rng)
            if step % cfg.alternating.eval_every == 0:
                _alt_eval(cfg, defender_learner, att_learner, run, step0 + step, tag)
    return step


def _alt_eval(cfg, defender_learner, att_learner, run, step, tag):
    stats = evaluate_sr(cfg, LearnedPolicy(defender_learner, "eval"), LearnedAttacker(att_learner, "eval"),
                        cfg.engagement.agility, cfg.alternating.eval_episodes, cfg.seed + 104729 + step)
    row = {"kind": "alt_eval", "tag": tag, "step": step, "defender_sr": stats.success_rate,
           "attacker_sr": stats.breach_rate, "collision_rate": stats.collision_rate}
    run.metric(row)
    return row


def alternating_train(cfg: RunConfig, out, schedule=None) -> dict:
    """Alternate defender and attacker learning; the idle side is frozen for the whole phase."""
    schedule = list(schedule if schedule is not None else cfg.alternating.phases)
    if not schedule or sum(s for _, s in schedule) <= 0:
        raise ValueError("schedule must contain steps")
    sides = [side for side, _ in schedule]
    if any(s not in ("defender", "attacker") for s in sides):
        raise ValueError("phase sides must be 'defender' or 'attacker'")
    if any(a == b for a, b in zip(sides, sides[1:])):
        raise ValueError("phases must alternate sides")
    variant = POLICY_VARIANT.get(cfg.policy.defender)
    if variant is None:
        raise ValueError("alternating training needs a learned defender policy")
    run = RunDir(out, cfg)
    lc = cfg.learner_config()
    if cfg.policy.checkpoint:
        defender, _ = load_learner(cfg.policy.checkpoint, lc)
    else:
        defender = SACLearner(variant, lc, seed=cfg.seed)
    att = SACLearner("flat", lc, seed=cfg.seed + 1, flat_dim=ATTACKER_OBS_DIM)
    # no curriculum while the opponent itself is learning
    fixed = cfg.model_copy(update={"curriculum": cfg.curriculum.model_copy(
        update={"enabled": False, "fixed_agility": cfg.engagement.agility})})
    att_buffer = ReplayBuffer(lc.buffer_capacity, transition_shapes("flat", flat_dim=ATTACKER_OBS_DIM))
    att_rngs = [np.random.default_rng(s) for s in np.random.SeedSequence(cfg.seed + 17).spawn(4)]
    step = 0
    phases = []
    for k, (side, steps) in enumerate(schedule):
        frozen = att if side == "defender" else defender
        before = frozen.digest()
        frozen.frozen = True
        tag = f"phase{k}_{side}_"
        if side == "defender":
            sub = fixed.model_copy(update={"seed": cfg.seed + 1000 * (k + 1)})
            train(sub, out, learner=defender, attacker=LearnedAttacker(att, "eval"), total_steps=steps,
                  step0=step, run=run, tag=tag)
        else:
            _attacker_phase(fixed, att, defender, steps, att_buffer, att_rngs, run, step, tag)
        frozen.frozen = False
        after = frozen.digest()
        if before != after:
            raise RuntimeError(f"frozen {('attacker' if side == 'defender' else 'defender')} changed in phase {k}")
        step += steps
        save_learner(defender, run.checkpoint(f"phase{k}_{side}_defender.ckpt"), step)
        save_learner(att, run.checkpoint(f"phase{k}_{side}_attacker.ckpt"), step)
        ev = _alt_eval(cfg, defender, att, run, step, tag)
        phases.append({"phase": k, "side": side, "steps": steps, "frozen_digest": before, **ev})
        log.info("phase %d (%s) done at step %d: %s", k, side, step, ev)
    report = {"phases": phases, "total_steps": step}
    run.report(report)
    return {**report, "defender": defender, "attacker": att}
