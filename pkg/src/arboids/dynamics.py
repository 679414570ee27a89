"""Planar 3-DoF (surge, sway, yaw) vessel model with twin fixed thrusters.

State convention: world position (x, y), heading psi measured CCW from the
world +x axis, and body-frame velocities (u forward, v to port, r CCW).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, astuple

import numpy as np
from numba import njit

TWO_PI = 2.0 * math.pi


class DynamicsError(ValueError):
    """Raised for invalid dynamics inputs (non-finite values, bad bounds, bad dt)."""


@dataclass(frozen=True)
class VesselState:
    x: float = 0.0
    y: float = 0.0
    psi: float = 0.0
    u: float = 0.0
    v: float = 0.0
    r: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array(astuple(self), dtype=np.float64)

    @classmethod
    def from_array(cls, arr) -> "VesselState":
        return cls(*(float(a) for a in arr))


@dataclass(frozen=True)
class ThrustCommand:
    tau_left: float
    tau_right: float


@dataclass(frozen=True)
class VesselParams:
    """Scalar 3-DoF coefficients. Defaults are WAM-V-like guesses, not measured values."""

    mass: float = 180.0
    Iz: float = 250.0
    Xudot: float = 30.0
    Yvdot: float = 90.0
    Nrdot: float = 60.0
    du1: float = 70.0
    dv1: float = 400.0
    dr1: float = 300.0
    du2: float = 60.0
    dv2: float = 500.0
    dr2: float = 200.0
    b: float = 1.2
    thrust_bounds: tuple[float, float] = (-500.0, 1000.0)

    def __post_init__(self):
        object.__setattr__(self, "thrust_bounds", tuple(float(t) for t in self.thrust_bounds))
        if not (self.mass > 0 and self.Iz > 0):
            raise DynamicsError("mass and Iz must be positive")
        if not (self.mass > self.Xudot >= 0):
            raise DynamicsError("need mass > Xudot >= 0")
        if not (self.mass > self.Yvdot and self.Iz > self.Nrdot):
            raise DynamicsError("effective sway mass and yaw inertia must be positive")
        if self.b <= 0:
            raise DynamicsError("lever arm b must be positive")
        lo, hi = self.thrust_bounds
        if not (lo < 0 < hi):
            raise DynamicsError(f"thrust bounds must satisfy tau_min < 0 < tau_max, got {self.thrust_bounds}")

    def coefficients(self) -> np.ndarray:
        """Packed vector consumed by the compiled integrator."""
        return np.array(
            [
                self.mass - self.Xudot,
                self.mass - self.Yvdot,
                self.Iz - self.Nrdot,
                self.du1, self.du2,
                self.dv1, self.dv2,
                self.dr1, self.dr2,
                self.b,
            ],
            dtype=np.float64,
        )

    def with_bounds(self, bounds) -> "VesselParams":
        kw = {f: getattr(self, f) for f in self.__dataclass_fields__}
        kw["thrust_bounds"] = tuple(bounds)
        return VesselParams(**kw)


def wrap_angle(a: float) -> float:
    """Wrap to (-pi, pi]."""
    w = (a + math.pi) % TWO_PI - math.pi
    return math.pi if w == -math.pi else w


@njit(cache=True)
def _wrap(a):
    w = (a + math.pi) % (2.0 * math.pi) - math.pi
    if w == -math.pi:
        w = math.pi
    return w


@njit(cache=True)
def _rhs(s, tl, tr, c):
    psi = s[2]
    u = s[3]
    v = s[4]
    r = s[5]
    m11 = c[0]
    m22 = c[1]
    m33 = c[2]
    cp = math.cos(psi)
    sp = math.sin(psi)
    out = np.empty(6)
    out[0] = u * cp - v * sp
    out[1] = u * sp + v * cp
    out[2] = r
    out[3] = (tl + tr + m22 * v * r - (c[3] + c[4] * abs(u)) * u) / m11
    out[4] = (-m11 * u * r - (c[5] + c[6] * abs(v)) * v) / m22
    out[5] = (c[9] * (tr - tl) - (c[7] + c[8] * abs(r)) * r) / m33
    return out


@njit(cache=True)
def rk4_inplace(s, tl, tr, c, dt):
    """One classical RK4 step on a length-6 state array, heading wrapped afterwards."""
    k1 = _rhs(s, tl, tr, c)
    k2 = _rhs(s + 0.5 * dt * k1, tl, tr, c)
    k3 = _rhs(s + 0.5 * dt * k2, tl, tr, c)
    k4 = _rhs(s + dt * k3, tl, tr, c)
    for j in range(6):
        s[j] += dt / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j])
    s[2] = _wrap(s[2])


@njit(cache=True)
def rk4_fleet(states, thrusts, coeffs, dt):
    """Advance every row of ``states`` (N, 6) by one RK4 step."""
    for i in range(states.shape[0]):
        rk4_inplace(states[i], thrusts[i, 0], thrusts[i, 1], coeffs[i], dt)


def _check_finite(name, values):
    if not np.all(np.isfinite(values)):
        raise DynamicsError(f"non-finite {name}: {values}")


def clamp_thrust(cmd: ThrustCommand, bounds) -> ThrustCommand:
    lo, hi = bounds
    if not lo < hi:
        raise DynamicsError(f"invalid bounds {bounds}")
    return ThrustCommand(min(max(cmd.tau_left, lo), hi), min(max(cmd.tau_right, lo), hi))


def step_dynamics(state: VesselState, cmd: ThrustCommand, params: VesselParams, dt: float) -> VesselState:
    if not (dt > 0 and math.isfinite(dt)):
        raise DynamicsError(f"dt must be positive and finite, got {dt}")
    s = state.as_array()
    _check_finite("state", s)
    tau = np.array([cmd.tau_left, cmd.tau_right], dtype=np.float64)
    _check_finite("thrust", tau)
    lo, hi = params.thrust_bounds
    if np.any(tau < lo - 1e-9) or np.any(tau > hi + 1e-9):
        raise DynamicsError(f"thrust {tuple(tau)} outside bounds {params.thrust_bounds}")
    rk4_inplace(s, tau[0], tau[1], params.coefficients(), float(dt))
    return VesselState.from_array(s)


def world_to_body(vec, psi: float) -> np.ndarray:
    c, s = math.cos(psi), math.sin(psi)
    vx, vy = vec
    return np.array([c * vx + s * vy, -s * vx + c * vy])


def body_to_world(vec, psi: float) -> np.ndarray:
    c, s = math.cos(psi), math.sin(psi)
    bx, by = vec
    return np.array([c * bx - s * by, s * bx + c * by])


def scale_bounds(defender_bounds, agility: float) -> tuple[float, float]:
    """Attacker thrust limits as a constant multiple of the defender's."""
    if not agility > 0:
        raise DynamicsError(f"agility must be positive, got {agility}")
    lo, hi = defender_bounds
    return (agility * lo, agility * hi)


def normalized_to_thrust(a, bounds) -> np.ndarray:
    """Affine map of a in [-1, 1] onto [tau_min, tau_max] (per thruster, any shape)."""
    lo, hi = bounds
    a = np.clip(np.asarray(a, dtype=np.float64), -1.0, 1.0)
    return lo + (a + 1.0) * 0.5 * (hi - lo)
