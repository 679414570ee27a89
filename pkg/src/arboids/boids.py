"""Extended Boids baseline: separation, alignment, cohesion plus attraction to the attacker."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .dynamics import world_to_body, wrap_angle

EPS = 1e-6


class DegenerateGeometryWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class BoidsWeights:
    k_sep: float = 10.0
    k_ali: float = 0.1
    k_coh: float = 0.1
    k_att: float = 0.5

    def __post_init__(self):
        for name in ("k_sep", "k_ali", "k_coh", "k_att"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


@dataclass(frozen=True)
class BoidsForces:
    f_sep: np.ndarray
    f_ali: np.ndarray
    f_coh: np.ndarray
    f_att: np.ndarray

    @property
    def f_total(self) -> np.ndarray:
        return total_force(self)


def _as2(v) -> np.ndarray:
    return np.asarray(v, dtype=np.float64).reshape(2)


def _rows(vs) -> np.ndarray:
    return np.asarray(vs, dtype=np.float64).reshape(-1, 2)


def separation_force(self_pos, neighbor_positions, k_sep: float) -> np.ndarray:
    diff = _rows(neighbor_positions) - _as2(self_pos)
    if len(diff) == 0:
        return np.zeros(2)
    dist = np.hypot(diff[:, 0], diff[:, 1])
    if np.any(dist <= EPS):
        warnings.warn("neighbour coincides with agent; separation denominator clamped", DegenerateGeometryWarning)
        dist = np.maximum(dist, EPS)
    return -k_sep * (diff / dist[:, None]).sum(axis=0)


def alignment_force(self_vel, neighbor_velocities, k_ali: float, literal: bool = False) -> np.ndarray:
    nv = _rows(neighbor_velocities)
    if len(nv) == 0:
        return np.zeros(2)
    if literal:
        return k_ali * nv.mean(axis=0) - _as2(self_vel)
    return k_ali * (nv.mean(axis=0) - _as2(self_vel))


def cohesion_force(self_pos, neighbor_positions, k_coh: float, literal: bool = False) -> np.ndarray:
    npos = _rows(neighbor_positions)
    if len(npos) == 0:
        return np.zeros(2)
    if literal:
        return k_coh * npos.mean(axis=0) - _as2(self_pos)
    return k_coh * (npos.mean(axis=0) - _as2(self_pos))


def attraction_force(self_pos, attacker_pos, k_att: float) -> np.ndarray:
    return k_att * (_as2(attacker_pos) - _as2(self_pos))


def total_force(forces: BoidsForces) -> np.ndarray:
    return forces.f_sep + forces.f_ali + forces.f_coh + forces.f_att


def force_to_action(f_world, psi: float, k_sur: float, k_yaw: float) -> np.ndarray:
    """Map a world-frame virtual force to normalized (left, right) thruster commands.

    Surge follows the body-x component, differential thrust the body-y component
    (a port-side force turns the hull CCW).
    """
    if not (k_sur > 0 and k_yaw > 0):
        raise ValueError("mapping gains must be positive")
    fb = world_to_body(f_world, psi)
    common = k_sur * fb[0]
    diff = k_yaw * fb[1]
    return np.array([min(max(common - diff, -1.0), 1.0), min(max(common + diff, -1.0), 1.0)])


def boids_forces(i: int, positions, velocities, attacker_pos, weights: BoidsWeights,
                 literal: bool = False) -> BoidsForces:
    """All four forces on defender ``i``; every other defender is a neighbour."""
    positions = _rows(positions)
    velocities = _rows(velocities)
    mask = np.arange(len(positions)) != i
    return BoidsForces(
        separation_force(positions[i], positions[mask], weights.k_sep),
        alignment_force(velocities[i], velocities[mask], weights.k_ali, literal),
        cohesion_force(positions[i], positions[mask], weights.k_coh, literal),
        attraction_force(positions[i], attacker_pos, weights.k_att),
    )


def team_boids(states: np.ndarray, attacker_pos, weights: BoidsWeights, k_sur: float, k_yaw: float,
               literal: bool = False):
    """Vectorised Boids evaluation for a whole team.

    ``states`` is (n, 6) rows of (x, y, psi, u, v, r). Returns ``(forces, actions)``
    where forces is (n, 4, 2) world-frame [sep, ali, coh, att] and actions is (n, 2).
    """
    n = states.shape[0]
    pos = states[:, :2]
    c = np.cos(states[:, 2])
    s = np.sin(states[:, 2])
    vel = np.stack([states[:, 3] * c - states[:, 4] * s, states[:, 3] * s + states[:, 4] * c], axis=1)
    forces = np.zeros((n, 4, 2))
    if n > 1:
        diff = pos[None, :, :] - pos[:, None, :]  # [i, j] = x_j - x_i
        dist = np.hypot(diff[..., 0], diff[..., 1])
        np.fill_diagonal(dist, 1.0)
        if np.any(dist <= EPS):
            warnings.warn("defenders coincide; separation denominator clamped", DegenerateGeometryWarning)
            dist = np.maximum(dist, EPS)
        unit = diff / dist[..., None]
        forces[:, 0] = -weights.k_sep * unit.sum(axis=1)
        mean_v = (vel.sum(axis=0)[None, :] - vel) / (n - 1)
        mean_x = (pos.sum(axis=0)[None, :] - pos) / (n - 1)
        if literal:
            forces[:, 1] = weights.k_ali * mean_v - vel
            forces[:, 2] = weights.k_coh * mean_x - pos
        else:
            forces[:, 1] = weights.k_ali * (mean_v - vel)
            forces[:, 2] = weights.k_coh * (mean_x - pos)
    forces[:, 3] = weights.k_att * (np.asarray(attacker_pos, dtype=np.float64)[None, :] - pos)
    total = forces.sum(axis=1)
    fbx = c * total[:, 0] + s * total[:, 1]
    fby = -s * total[:, 0] + c * total[:, 1]
    common = k_sur * fbx
    diff_ = k_yaw * fby
    actions = np.clip(np.stack([common - diff_, common + diff_], axis=1), -1.0, 1.0)
    return forces, actions


def bearing_distance(dx: float, dy: float, psi: float) -> tuple[float, float]:
    """Bearing (body frame, CCW from bow) and range to a world-frame offset."""
    c, s = math.cos(psi), math.sin(psi)
    bx = c * dx + s * dy
    by = -s * dx + c * dy
    return wrap_angle(math.atan2(by, bx)), math.hypot(dx, dy)
