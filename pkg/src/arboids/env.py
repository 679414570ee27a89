"""Target-defense engagement: reset, stepping, termination, observations and rewards.

The protected target sits at the world origin. Defenders start on a ring inside
the target region; the attacker spawns on the sensing circle and heads inward.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from numba import njit

from .boids import BoidsWeights, bearing_distance, team_boids
from .dynamics import VesselParams, VesselState, normalized_to_thrust, rk4_fleet, scale_bounds, wrap_angle

NONE, CAPTURE, COLLISION, BREACH, TIMEOUT = 0, 1, 2, 3, 4
_KIND_NAMES = {CAPTURE: "capture", COLLISION: "collision", BREACH: "breach", TIMEOUT: "timeout"}

DIST_SCALE = 60.0
FORCE_SCALE = 10.0


class EngagementError(ValueError):
    pass


@dataclass(frozen=True)
class EngagementConfig:
    r_cap: float = 5.0
    r0: float = 15.0
    rho_T: float = 60.0
    rho_A: float = 15.0
    r_collision: float = 3.0
    T_total: float = 60.0
    T_action: float = 0.2
    dt: float = 0.02
    n_defenders: int = 3
    spawn_sector: tuple[float, float] = (-math.pi, math.pi)
    noise_sigma_bearing: float = 0.02
    noise_sigma_distance: float = 0.5
    agility: float = 2.0
    formation_reward: bool = True

    def __post_init__(self):
        object.__setattr__(self, "spawn_sector", tuple(float(a) for a in self.spawn_sector))
        if not (0 < self.r_cap < self.r0 < self.rho_T):
            raise EngagementError("need 0 < r_cap < r0 < rho_T")
        if self.r_collision <= 0:
            raise EngagementError("r_collision must be positive")
        if self.n_defenders < 1:
            raise EngagementError("need at least one defender")
        if self.agility <= 0:
            raise EngagementError("agility must be positive")
        if self.dt <= 0 or self.T_action <= 0:
            raise EngagementError("dt and T_action must be positive")
        ratio = self.T_total / self.T_action
        if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio):
            raise EngagementError("T_action must divide T_total")
        sub = self.T_action / self.dt
        if abs(sub - round(sub)) > 1e-9 * max(1.0, sub):
            raise EngagementError("dt must divide T_action")
        lo, hi = self.spawn_sector
        if not lo <= hi:
            raise EngagementError("spawn_sector must be ordered")

    @property
    def substeps(self) -> int:
        return int(round(self.T_action / self.dt))

    @property
    def total_substeps(self) -> int:
        return int(round(self.T_total / self.dt))

    @property
    def max_decisions(self) -> int:
        return int(round(self.T_total / self.T_action))


@dataclass(frozen=True)
class EpisodeOutcome:
    kind: str  # capture | timeout | breach | collision
    defender_id: int | None = None
    pair: tuple[int, int] | None = None

    @property
    def success(self) -> bool:
        return self.kind in ("capture", "timeout")

    def __str__(self):
        if self.kind == "capture":
            return f"CaptureSuccess({self.defender_id})"
        if self.kind == "collision":
            return f"CollisionFailure{self.pair}"
        return {"timeout": "TimeoutSuccess", "breach": "BreachFailure"}[self.kind]


def _outcome_from_code(code, a, b) -> EpisodeOutcome | None:
    if code == NONE:
        return None
    if code == CAPTURE:
        return EpisodeOutcome("capture", defender_id=int(a))
    if code == COLLISION:
        return EpisodeOutcome("collision", pair=(int(a), int(b)))
    return EpisodeOutcome(_KIND_NAMES[code])


@dataclass
class EngagementState:
    """Rows of ``defenders`` and ``attacker`` are (x, y, psi, u, v, r)."""

    defenders_arr: np.ndarray
    attacker_arr: np.ndarray
    substep: int = 0
    dt: float = 0.02
    terminal: EpisodeOutcome | None = None
    last_thrust: np.ndarray | None = field(default=None, repr=False)

    @property
    def t(self) -> float:
        return self.substep * self.dt

    @property
    def defenders(self) -> list[VesselState]:
        return [VesselState.from_array(row) for row in self.defenders_arr]

    @property
    def attacker(self) -> VesselState:
        return VesselState.from_array(self.attacker_arr)

    @property
    def n(self) -> int:
        return self.defenders_arr.shape[0]

    def copy(self) -> "EngagementState":
        return replace(self, defenders_arr=self.defenders_arr.copy(), attacker_arr=self.attacker_arr.copy())


@njit(cache=True)
def _classify(states, n_def, r_cap, r_coll, r0, timed_out):
    ax = states[n_def, 0]
    ay = states[n_def, 1]
    best = 1e300
    best_i = -1
    for i in range(n_def):
        d = math.hypot(states[i, 0] - ax, states[i, 1] - ay)
        if d < best:
            best = d
            best_i = i
    if best < r_cap:
        return CAPTURE, best_i, -1
    best = 1e300
    bi = -1
    bj = -1
    for i in range(n_def):
        for j in range(i + 1, n_def):
            d = math.hypot(states[i, 0] - states[j, 0], states[i, 1] - states[j, 1])
            if d < best:
                best = d
                bi = i
                bj = j
    if bi >= 0 and best <= r_coll:
        return COLLISION, bi, bj
    if math.hypot(ax, ay) <= r0:
        return BREACH, -1, -1
    if timed_out:
        return TIMEOUT, -1, -1
    return NONE, -1, -1


@njit(cache=True)
def _advance(states, thrusts, coeffs, dt, nsub, n_def, r_cap, r_coll, r0, sub0, sub_end):
    for k in range(nsub):
        rk4_fleet(states, thrusts, coeffs, dt)
        code, a, b = _classify(states, n_def, r_cap, r_coll, r0, sub0 + k + 1 >= sub_end)
        if code != NONE:
            return code, a, b, k + 1
    return NONE, -1, -1, nsub


def check_termination(defender_positions, attacker_pos, t: float, config: EngagementConfig) -> EpisodeOutcome | None:
    """Classify a snapshot; precedence capture > collision > breach > timeout."""
    dp = np.asarray(defender_positions, dtype=np.float64).reshape(-1, 2)
    states = np.zeros((len(dp) + 1, 6))
    states[:-1, :2] = dp
    states[-1, :2] = attacker_pos
    code, a, b = _classify(states, len(dp), config.r_cap, config.r_collision, config.r0,
                           t >= config.T_total - 1e-9)
    return _outcome_from_code(code, a, b)


@njit(cache=True)
def _formation(pos, ax, ay):
    sx = 0.0
    sy = 0.0
    for i in range(pos.shape[0]):
        dx = ax - pos[i, 0]
        dy = ay - pos[i, 1]
        d = math.hypot(dx, dy)
        if d > 0:
            sx += dx / d
            sy += dy / d
    norm = math.hypot(sx, sy)
    if norm < 1e-9:
        return 0.0
    na = math.hypot(ax, ay)
    align = (ax * sx + ay * sy) / (na * norm) if na > 0 else 0.0
    return 0.5 * align - norm / pos.shape[0]


def formation_reward(defender_pos: np.ndarray, attacker_pos) -> float:
    """Shared formation term: alignment of the defenders' summed bearing with the threat axis, minus bunching."""
    pos = np.ascontiguousarray(defender_pos, dtype=np.float64).reshape(-1, 2)
    return float(_formation(pos, float(attacker_pos[0]), float(attacker_pos[1])))


def team_rewards(state: EngagementState, outcome: EpisodeOutcome | None, config: EngagementConfig) -> np.ndarray:
    n = state.n
    pos = state.defenders_arr[:, :2]
    ap = state.attacker_arr[:2]
    rewards = np.zeros(n)
    if outcome is not None:
        if outcome.kind == "breach":
            rewards[:] = -100.0
        elif outcome.kind == "capture":
            d = np.hypot(pos[:, 0] - ap[0], pos[:, 1] - ap[1])
            self_cap = (d <= config.r_cap) | (np.arange(n) == outcome.defender_id)
            rewards[:] = np.where(self_cap, 100.0, np.where(d <= 3.0 * config.r_cap, 50.0, 0.0))
        elif outcome.kind == "collision":
            rewards[list(outcome.pair)] -= 50.0
    if config.formation_reward:
        rewards += formation_reward(pos, ap)
    return rewards


def compute_reward(i: int, prev_state: EngagementState, new_state: EngagementState,
                   outcome: EpisodeOutcome | None, config: EngagementConfig) -> float:
    return float(team_rewards(new_state, outcome, config)[i])


@dataclass(frozen=True)
class Observation:
    s_D: list  # [(bearing, distance)] per teammate
    s_AT: tuple  # (phi_A, d_A, phi_T, d_T)
    s_Boids: tuple  # (f_sep, f_ali, f_coh, a_boids), forces in the body frame


def compute_observation(i: int, state: EngagementState, boids_out, config: EngagementConfig,
                        noise_on: bool = False, rng: np.random.Generator | None = None) -> Observation:
    """Local observation of defender ``i``.

    ``boids_out`` is the ``(forces, actions)`` pair returned by :func:`team_boids`.
    """
    me = state.defenders_arr[i]
    x, y, psi = me[0], me[1], me[2]
    s_d = [bearing_distance(o[0] - x, o[1] - y, psi) for j, o in enumerate(state.defenders_arr) if j != i]
    ax, ay = state.attacker_arr[:2]
    phi_a, d_a = bearing_distance(ax - x, ay - y, psi)
    phi_t, d_t = bearing_distance(-x, -y, psi)
    if noise_on:
        if rng is None:
            raise ValueError("noise requires an rng")
        nb = rng.normal(0.0, config.noise_sigma_bearing, 2)
        nd = rng.normal(0.0, config.noise_sigma_distance, 2)
        phi_a, phi_t = wrap_angle(phi_a + nb[0]), wrap_angle(phi_t + nb[1])
        d_a, d_t = max(d_a + nd[0], 0.0), max(d_t + nd[1], 0.0)
    forces, actions = boids_out
    c, s = math.cos(psi), math.sin(psi)
    rot = np.array([[c, s], [-s, c]])
    f_body = forces[i, :3] @ rot.T
    return Observation(s_d, (phi_a, d_a, phi_t, d_t),
                       (f_body[0], f_body[1], f_body[2], np.asarray(actions[i], dtype=np.float64).copy()))


def team_features(state: EngagementState, boids_out, config: EngagementConfig,
                  noise_on: bool = False, rng: np.random.Generator | None = None) -> dict:
    """Network-ready arrays for every defender, vectorised.

    Returns ``items`` (n, n-1, 3), ``at`` (n, 6), ``boids`` (n, 8), ``a_boids`` (n, 2).
    Angles are encoded as (sin, cos); distances and forces are divided by fixed scales.
    """
    d = state.defenders_arr
    n = d.shape[0]
    pos = d[:, :2]
    c = np.cos(d[:, 2])
    s = np.sin(d[:, 2])

    def local(dx, dy):
        # dx, dy broadcast over rows of defenders
        bx = c[:, None] * dx + s[:, None] * dy
        by = -s[:, None] * dx + c[:, None] * dy
        r = np.hypot(bx, by)
        safe = np.where(r > 0, r, 1.0)
        return np.where(r > 0, by / safe, 0.0), np.where(r > 0, bx / safe, 1.0), r

    if n > 1:
        diff = pos[None, :, :] - pos[:, None, :]
        sn, cs, r = local(diff[..., 0], diff[..., 1])
        off = ~np.eye(n, dtype=bool)
        items = np.stack([sn[off].reshape(n, n - 1), cs[off].reshape(n, n - 1),
                          r[off].reshape(n, n - 1) / DIST_SCALE], axis=-1)
    else:
        items = np.zeros((n, 0, 3))
    ap = state.attacker_arr[:2]
    targets = np.stack([ap[None, :] - pos, -pos], axis=1)  # (n, 2, 2)
    sn, cs, r = local(targets[..., 0], targets[..., 1])
    if noise_on:
        if rng is None:
            raise ValueError("noise requires an rng")
        ang = np.arctan2(sn, cs) + rng.normal(0.0, config.noise_sigma_bearing, (n, 2))
        sn, cs = np.sin(ang), np.cos(ang)
        r = np.maximum(r + rng.normal(0.0, config.noise_sigma_distance, (n, 2)), 0.0)
    at = np.stack([sn[:, 0], cs[:, 0], r[:, 0] / DIST_SCALE, sn[:, 1], cs[:, 1], r[:, 1] / DIST_SCALE], axis=1)
    forces, actions = boids_out
    fb_x = c[:, None] * forces[:, :3, 0] + s[:, None] * forces[:, :3, 1]
    fb_y = -s[:, None] * forces[:, :3, 0] + c[:, None] * forces[:, :3, 1]
    boids = np.concatenate([np.stack([fb_x, fb_y], axis=-1).reshape(n, 6) / FORCE_SCALE, actions], axis=1)
    return {"items": items, "at": at, "boids": boids, "a_boids": np.asarray(actions, dtype=np.float64)}


class EngagementEnv:
    """Holds the vessel models for one engagement configuration and advances states."""

    def __init__(self, config: EngagementConfig, vessel: VesselParams | None = None,
                 attacker_vessel: VesselParams | None = None):
        self.config = config
        self.vessel = vessel or VesselParams()
        base = attacker_vessel or self.vessel
        self.attacker_vessel = base.with_bounds(scale_bounds(self.vessel.thrust_bounds, config.agility))
        n = config.n_defenders
        self._coeffs = np.vstack([np.tile(self.vessel.coefficients(), (n, 1)),
                                  self.attacker_vessel.coefficients()[None, :]])

    def with_agility(self, agility: float) -> "EngagementEnv":
        return EngagementEnv(replace(self.config, agility=agility), self.vessel)

    def reset(self, seed=None, rng: np.random.Generator | None = None) -> EngagementState:
        cfg = self.config
        rng = rng if rng is not None else np.random.default_rng(seed)
        n = cfg.n_defenders
        ring = cfg.r0 / 2.0
        if n > 1 and 2.0 * ring * math.sin(math.pi / n) <= cfg.r_collision:
            raise EngagementError(f"{n} defenders on a {ring} m ring violate r_collision={cfg.r_collision}")
        offset = rng.uniform(-math.pi, math.pi)
        lo, hi = cfg.spawn_sector
        bearing = rng.uniform(lo, hi) if hi > lo else lo
        ang = offset + 2.0 * math.pi * np.arange(n) / n
        d = np.zeros((n, 6))
        d[:, 0] = ring * np.cos(ang)
        d[:, 1] = ring * np.sin(ang)
        d[:, 2] = [wrap_angle(a) for a in ang]
        a = np.zeros(6)
        a[0] = cfg.rho_T * math.cos(bearing)
        a[1] = cfg.rho_T * math.sin(bearing)
        a[2] = wrap_angle(bearing + math.pi)
        return EngagementState(d, a, 0, cfg.dt)

    def thrusts(self, defender_actions, attacker_action) -> np.ndarray:
        th = np.empty((self.config.n_defenders + 1, 2))
        th[:-1] = normalized_to_thrust(defender_actions, self.vessel.thrust_bounds)
        th[-1] = normalized_to_thrust(attacker_action, self.attacker_vessel.thrust_bounds)
        return th

    def step(self, state: EngagementState, defender_actions, attacker_action):
        """Advance one decision interval; returns ``(new_state, rewards, outcome)``."""
        cfg = self.config
        if state.terminal is not None:
            raise EngagementError("cannot step a terminal engagement")
        n = cfg.n_defenders
        defender_actions = np.asarray(defender_actions, dtype=np.float64).reshape(-1, 2)
        if defender_actions.shape[0] != n or state.n != n:
            raise EngagementError(f"expected {n} defender actions, got {defender_actions.shape[0]}")
        th = self.thrusts(defender_actions, attacker_action)
        states = np.vstack([state.defenders_arr, state.attacker_arr[None, :]])
        code, a, b, done = _advance(states, th, self._coeffs, cfg.dt, cfg.substeps, n, cfg.r_cap,
                                    cfg.r_collision, cfg.r0, state.substep, cfg.total_substeps)
        outcome = _outcome_from_code(code, a, b)
        new = EngagementState(states[:n], states[n], state.substep + done, cfg.dt, outcome, th)
        return new, team_rewards(new, outcome, cfg), outcome
