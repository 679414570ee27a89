"""Soft actor-critic with the adaptive residual blend.

Variants share one implementation:

* ``arboids``  executed action = theta * a_drl + (1 - theta) * a_boids, theta from the adapter
* ``rp``       executed action = clip(a_drl + a_boids), no adapter
* ``vanilla``  executed action = a_drl, Boids block removed from the state
* ``flat``     vanilla SAC over a flat observation vector (learned attacker)
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .nn import Actor, Adam, Critic, DefenderEncoder, FlatEncoder, copy_params, param_digest, soft_update, \
    squash_backward, squash_forward

VARIANTS = ("arboids", "rp", "vanilla", "flat")
THETA_NOISE = 0.1


@dataclass(frozen=True)
class LearnerConfig:
    gamma: float = 0.99
    lr: float = 1e-4
    batch: int = 4096
    buffer_capacity: int = 1_000_000
    tau: float = 0.005
    target_entropy: float = -2.0
    warmup_steps: int = 5000
    updates_per_step: int = 1
    init_alpha: float = 0.2
    embed_width: int = 64
    hidden: int = 256
    adapter_width: int = 64
    act_width: int = 64
    adapter_from: str = "penultimate"

    def __post_init__(self):
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")
        if self.batch < 1 or self.buffer_capacity < 1:
            raise ValueError("batch and buffer_capacity must be positive")


class ReplayBuffer:
    """Shared ring buffer; every defender's transition from a step goes into the same store."""

    def __init__(self, capacity: int, shapes: dict[str, tuple], dtype=np.float32):
        if capacity <= 0:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.data = {k: np.zeros((capacity,) + tuple(s), dtype=dtype) for k, s in shapes.items()}
        self.ptr = 0
        self.size = 0

    def __len__(self):
        return self.size

    def push(self, transitions: dict[str, np.ndarray]):
        """Push a block of transitions (leading axis = number of agents)."""
        n = len(next(iter(transitions.values())))
        idx = (self.ptr + np.arange(n)) % self.capacity
        for k, arr in self.data.items():
            arr[idx] = transitions[k]
        self.ptr = int((self.ptr + n) % self.capacity)
        self.size = min(self.size + n, self.capacity)

    def sample_indices(self, batch: int, rng: np.random.Generator) -> np.ndarray:
        if batch > self.size:
            raise ValueError(f"cannot sample {batch} from {self.size} stored transitions")
        return rng.choice(self.size, size=batch, replace=False)

    def sample(self, batch: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
        idx = self.sample_indices(batch, rng)
        return {k: v[idx] for k, v in self.data.items()}


def replay_push(buffer: ReplayBuffer, transitions_per_agent: dict[str, np.ndarray]):
    buffer.push(transitions_per_agent)


def replay_sample(buffer: ReplayBuffer, batch: int, rng: np.random.Generator):
    return buffer.sample(batch, rng)


def obs_keys(variant: str) -> tuple[str, ...]:
    if variant == "flat":
        return ("flat",)
    return ("items", "at", "boids", "a_boids")


def transition_shapes(variant: str, n_teammates: int = 2, flat_dim: int = 0) -> dict[str, tuple]:
    if variant == "flat":
        o = {"flat": (flat_dim,)}
    else:
        o = {"items": (n_teammates, 3), "at": (6,), "boids": (8,), "a_boids": (2,)}
    shapes = {f"obs/{k}": s for k, s in o.items()}
    shapes.update({f"next/{k}": s for k, s in o.items()})
    shapes.update({"a_drl": (2,), "theta": (), "reward": (), "done": ()})
    return shapes


def split_obs(batch: dict, prefix: str) -> dict:
    p = prefix + "/"
    return {k[len(p):]: v for k, v in batch.items() if k.startswith(p)}


def blend(theta, a_drl, a_boids):
    """Convex blend of DRL and Boids actions (unclipped)."""
    theta = np.asarray(theta)[..., None]
    return theta * a_drl + (1.0 - theta) * a_boids


def explore_theta(theta, rng: np.random.Generator, sigma: float = THETA_NOISE):
    return np.clip(theta + rng.normal(0.0, sigma, np.shape(theta)), 0.0, 1.0)


class SACLearner:
    def __init__(self, variant: str = "arboids", config: LearnerConfig | None = None, seed: int = 0,
                 flat_dim: int = 0, dtype=np.float32):
        if variant not in VARIANTS:
            raise ValueError(f"unknown variant {variant!r}")
        self.variant = variant
        self.config = cfg = config or LearnerConfig()
        self.dtype = dtype
        self.flat_dim = flat_dim
        rng = np.random.default_rng(seed)

        def encoder():
            if variant == "flat":
                return FlatEncoder(flat_dim, cfg.embed_width, rng, dtype)
            return DefenderEncoder(cfg.embed_width, use_boids=variant != "vanilla", rng=rng, dtype=dtype)

        self.actor = Actor(encoder(), cfg.hidden, adapter=variant == "arboids", adapter_width=cfg.adapter_width,
                           adapter_from=cfg.adapter_from, rng=rng, dtype=dtype)
        self.critics = [Critic(encoder(), cfg.hidden, cfg.act_width, rng=rng, dtype=dtype) for _ in range(2)]
        self.targets = [Critic(encoder(), cfg.hidden, cfg.act_width, rng=rng, dtype=dtype) for _ in range(2)]
        for t, c in zip(self.targets, self.critics):
            copy_params(t, c)
        self.actor_opt = Adam(self.actor.parameters(), cfg.lr)
        self.critic_opts = [Adam(c.parameters(), cfg.lr) for c in self.critics]
        self.log_alpha = np.array([np.log(cfg.init_alpha)])
        self.alpha_opt = Adam([self.log_alpha], cfg.lr)
        self.updates = 0
        self.frozen = False

    # ------------------------------------------------------------ helpers
    @property
    def alpha(self) -> float:
        return float(np.exp(self.log_alpha[0]))

    @property
    def uses_adapter(self) -> bool:
        return self.actor.adapter is not None

    def _cast(self, obs: dict) -> dict:
        return {k: np.asarray(v, dtype=self.dtype) for k, v in obs.items()}

    def _a_boids(self, obs, n):
        if self.variant in ("arboids", "rp"):
            return np.asarray(obs["a_boids"], dtype=np.float64)
        return np.zeros((n, 2))

    def policy(self, obs: dict, xi=None):
        """Actor + adapter pass. Returns (a_drl, logp, theta, caches)."""
        mean, log_std, hid, cache = self.actor.forward(obs)
        a, logp, sq = squash_forward(mean, log_std, xi)
        if self.uses_adapter:
            theta, ca = self.actor.adapter.forward(a, obs["a_boids"], hid)
        else:
            theta, ca = np.ones(len(mean), dtype=mean.dtype), None
        return a, logp, theta, (cache, sq, ca)

    # ------------------------------------------------------------ acting
    def select_action(self, obs: dict, mode: str = "train", rng: np.random.Generator | None = None,
                      theta_override: float | None = None):
        """Returns (a_exec, a_drl, theta_used) for a batch of agents sharing this policy."""
        obs = self._cast(obs)
        n = len(next(iter(obs.values())))
        if mode == "train":
            if rng is None:
                raise ValueError("train mode needs an rng")
            xi = rng.standard_normal((n, 2)).astype(self.dtype)
        elif mode == "eval":
            xi = None
        else:
            raise ValueError(f"unknown mode {mode!r}")
        a_drl, _, theta, _ = self.policy(obs, xi)
        a_drl = a_drl.astype(np.float64)
        theta = theta.astype(np.float64)
        a_boids = self._a_boids(obs, n)
        if self.variant == "arboids":
            if theta_override is not None:
                theta = np.full(n, float(theta_override))
            elif mode == "train":
                theta = explore_theta(theta, rng)
            a_exec = blend(theta, a_drl, a_boids)
        elif self.variant == "rp":
            a_exec = a_drl + a_boids
        else:
            a_exec = a_drl
        return np.clip(a_exec, -1.0, 1.0), a_drl, theta

    # ------------------------------------------------------------ losses
    def critic_targets(self, batch: dict, xi=None, rng=None) -> np.ndarray:
        cfg = self.config
        nxt = self._cast(split_obs(batch, "next"))
        B = len(batch["reward"])
        if xi is None:
            xi = rng.standard_normal((B, 2)).astype(self.dtype)
        a2, logp2, th2, _ = self.policy(nxt, xi)
        q1, _ = self.targets[0].forward(nxt, a2, th2)
        q2, _ = self.targets[1].forward(nxt, a2, th2)
        soft_v = np.minimum(q1, q2) - self.alpha * logp2
        return batch["reward"] + cfg.gamma * (1.0 - batch["done"]) * soft_v

    def critic_loss_and_grads(self, batch: dict, y: np.ndarray):
        obs = self._cast(split_obs(batch, "obs"))
        losses, grads = [], []
        B = len(y)
        for c in self.critics:
            q, cache = c.forward(obs, batch["a_drl"], batch["theta"])
            err = q - y
            losses.append(float(np.mean(err * err)))
            g, _, _ = c.backward(cache, (2.0 / B) * err)
            grads.append(g)
        return losses, grads

    def critic_update(self, batch: dict, rng: np.random.Generator | None = None, xi=None):
        if len(batch["reward"]) == 0:
            raise ValueError("empty batch")
        y = self.critic_targets(batch, xi=xi, rng=rng)
        losses, grads = self.critic_loss_and_grads(batch, y)
        for c, opt, g in zip(self.critics, self.critic_opts, grads):
            opt.step(g)
            c.bump()
        return tuple(losses)

    def actor_loss_and_grads(self, batch: dict, xi: np.ndarray):
        """Loss mean[alpha*logp - min(Q1, Q2)(s, a, theta(s))] and its gradient w.r.t. actor params."""
        obs = self._cast(split_obs(batch, "obs"))
        B = len(xi)
        alpha = self.alpha
        mean, log_std, hid, cache = self.actor.forward(obs)
        a, logp, sq = squash_forward(mean, log_std, xi)
        if self.uses_adapter:
            theta, ca = self.actor.adapter.forward(a, obs["a_boids"], hid)
        else:
            theta = np.ones(B, dtype=mean.dtype)
        q1, c1 = self.critics[0].forward(obs, a, theta)
        q2, c2 = self.critics[1].forward(obs, a, theta)
        use1 = q1 <= q2
        qmin = np.where(use1, q1, q2)
        loss = float(np.mean(alpha * logp - qmin))
        dq = np.full(B, -1.0 / B, dtype=mean.dtype)
        _, da1, dth1 = self.critics[0].backward(c1, np.where(use1, dq, 0.0), need_params=False)
        _, da2, dth2 = self.critics[1].backward(c2, np.where(use1, 0.0, dq), need_params=False)
        da = da1 + da2
        dtheta = dth1 + dth2
        dhid = dadapter = None
        if self.uses_adapter:
            dadapter, da_from_adapter, dhid = self.actor.adapter.backward(ca, dtheta)
            da = da + da_from_adapter
        dlogp = np.full(B, alpha / B, dtype=mean.dtype)
        dmean, dls = squash_backward(sq, da, dlogp)
        grads = self.actor.backward(cache, dmean, dls, dhid, dadapter)
        info = {"logp": logp, "theta": theta, "dtheta": dtheta}
        return loss, grads, info

    def actor_adapter_update(self, batch: dict, rng: np.random.Generator | None = None, xi=None):
        B = len(batch["reward"])
        if xi is None:
            xi = rng.standard_normal((B, 2)).astype(self.dtype)
        loss, grads, info = self.actor_loss_and_grads(batch, xi)
        self.actor_opt.step(grads)
        self.actor.bump()
        return loss, info

    def temperature_update(self, logp: np.ndarray) -> float:
        """One Adam step on log(alpha) for E[-logp] -> target entropy."""
        grad = -float(np.mean(np.asarray(logp, dtype=np.float64) + self.config.target_entropy))
        self.alpha_opt.step([np.array([grad])])
        return self.alpha

    def update(self, buffer: ReplayBuffer, rng: np.random.Generator) -> dict:
        if self.frozen:
            raise RuntimeError("learner is frozen")
        batch = buffer.sample(self.config.batch, rng)
        l1, l2 = self.critic_update(batch, rng)
        loss, info = self.actor_adapter_update(batch, rng)
        alpha = self.temperature_update(info["logp"])
        for t, c in zip(self.targets, self.critics):
            soft_update(t.parameters(), c.parameters(), self.config.tau)
            t.bump()
        self.updates += 1
        return {"critic_loss": 0.5 * (l1 + l2), "actor_loss": loss, "alpha": alpha,
                "mean_theta": float(np.mean(info["theta"]))}

    # ------------------------------------------------------------ state
    def modules(self) -> dict:
        return {"actor": self.actor, "critic1": self.critics[0], "critic2": self.critics[1],
                "target1": self.targets[0], "target2": self.targets[1]}

    def digest(self) -> str:
        """Hash of every network tensor and log_alpha; a frozen learner keeps it fixed."""
        h = hashlib.sha256()
        for name, mod in self.modules().items():
            h.update(name.encode())
            h.update(param_digest(mod).encode())
        h.update(np.ascontiguousarray(self.log_alpha).tobytes())
        return h.hexdigest()

    def optimizers(self) -> dict:
        return {"actor": self.actor_opt, "critic1": self.critic_opts[0], "critic2": self.critic_opts[1],
                "alpha": self.alpha_opt}
