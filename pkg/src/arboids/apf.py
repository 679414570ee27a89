"""Scripted potential-field attacker and the scaffolding for a learned attacker."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .boids import bearing_distance, force_to_action
from .env import DIST_SCALE, EngagementConfig, EngagementState, EpisodeOutcome

EPS = 1e-6
ATTACKER_OBS_DIM = 11


@dataclass(frozen=True)
class ApfParams:
    k_attract: float = 800.0
    k_repulse: float = 1200.0
    sensing_range: float = 15.0
    k_sur: float = 0.001
    k_yaw: float = 0.002

    def __post_init__(self):
        if not (self.k_attract > 0 and self.k_repulse > 0 and self.sensing_range > 0):
            raise ValueError("APF gains and sensing range must be positive")


def apf_force(attacker_pos, defender_positions, target_pos, params: ApfParams) -> np.ndarray:
    xa = np.asarray(attacker_pos, dtype=np.float64)[:2]
    to_t = np.asarray(target_pos, dtype=np.float64) - xa
    dt = math.hypot(to_t[0], to_t[1])
    force = params.k_attract * to_t / dt if dt > 0 else np.zeros(2)
    rho = params.sensing_range
    for xd in np.asarray(defender_positions, dtype=np.float64).reshape(-1, 2):
        away = xa - xd
        d = math.hypot(away[0], away[1])
        if d > rho:
            continue
        if d < EPS:
            # saturate instead of diverging; direction undefined when exactly coincident
            if d == 0.0:
                continue
            mag = params.k_repulse / EPS**2
        else:
            mag = min(params.k_repulse * (1.0 / d - 1.0 / rho) / d**2, params.k_repulse / EPS**2)
        force = force + mag * away / d
    return force


def apf_action(attacker, defender_positions, target_pos, params: ApfParams) -> np.ndarray:
    """Normalized thruster action for the potential-field attacker.

    ``attacker`` is a VesselState or a (x, y, psi, ...) array.
    """
    arr = attacker.as_array() if hasattr(attacker, "as_array") else np.asarray(attacker, dtype=np.float64)
    f = apf_force(arr[:2], defender_positions, target_pos, params)
    return force_to_action(f, arr[2], params.k_sur, params.k_yaw)


def attacker_observation(state: EngagementState, config: EngagementConfig) -> np.ndarray:
    """Fixed-length, permutation-invariant attacker observation.

    Layout: [phi_T, d_T, u, v, r, n_seen/n, mean sin, mean cos, mean d/rho_A,
    nearest bearing, nearest d/rho_A]. Defenders outside rho_A are invisible; an
    empty set gives zeros in every defender slot.
    """
    a = state.attacker_arr
    x, y, psi = a[0], a[1], a[2]
    phi_t, d_t = bearing_distance(-x, -y, psi)
    out = np.zeros(ATTACKER_OBS_DIM)
    out[:5] = (phi_t, d_t, a[3], a[4], a[5])
    seen = []
    for row in state.defenders_arr:
        phi, d = bearing_distance(row[0] - x, row[1] - y, psi)
        if d <= config.rho_A:
            seen.append((phi, d))
    if seen:
        s = np.array(seen)
        out[5] = len(seen) / state.n
        out[6] = np.sin(s[:, 0]).mean()
        out[7] = np.cos(s[:, 0]).mean()
        out[8] = s[:, 1].mean() / config.rho_A
        k = int(np.argmin(s[:, 1]))
        out[9] = s[k, 0]
        out[10] = s[k, 1] / config.rho_A
    return out


def attacker_features(obs: np.ndarray) -> np.ndarray:
    """Scale a raw attacker observation for the network."""
    f = np.array(obs, dtype=np.float64, copy=True)
    f[..., 0] = f[..., 0] / math.pi
    f[..., 1] = f[..., 1] / DIST_SCALE
    f[..., 2:5] = f[..., 2:5] / np.array([5.0, 2.0, 1.0])
    f[..., 9] = f[..., 9] / math.pi
    return f


def attacker_reward(prev: EngagementState, new: EngagementState, outcome: EpisodeOutcome | None,
                    r_cap: float = 5.0) -> float:
    r = 0.0
    if outcome is not None:
        if outcome.kind == "breach":
            r += 100.0
        elif outcome.kind == "capture":
            r -= 100.0
    r += 0.1 * (math.hypot(*prev.attacker_arr[:2]) - math.hypot(*new.attacker_arr[:2]))
    ap = new.attacker_arr[:2]
    d = np.hypot(new.defenders_arr[:, 0] - ap[0], new.defenders_arr[:, 1] - ap[1])
    if np.any(d <= 2.0 * r_cap):
        r -= 1.0
    return r
