"""Run configuration: JSON file, schema-checked, defaults pre-filled.

Unknown keys are rejected. A ``profile`` key selects a preset ("full" or
"desk") whose values sit between the built-in defaults and the file.
"""
from __future__ import annotations

import copy
import json
import math
from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, ValidationError, model_validator

from .apf import ApfParams
from .boids import BoidsWeights
from .dynamics import VesselParams
from .env import EngagementConfig
from .sac import LearnerConfig

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    pass


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", validate_assignment=True)


class VesselSection(_Section):
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


class EngagementSection(_Section):
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
    eval_sector_width: float = math.pi / 2
    noise_sigma_bearing: float = 0.02
    noise_sigma_distance: float = 0.5
    agility: float = 2.0


class BoidsSection(_Section):
    k_sep: float = 10.0
    k_ali: float = 0.1
    k_coh: float = 0.1
    k_att: float = 0.5
    k_sur: float = 0.001
    k_yaw: float = 0.002
    unscaled_self_term: bool = False


class ApfSection(_Section):
    k_attract: float = 800.0
    k_repulse: float = 1200.0
    k_sur: float = 0.001
    k_yaw: float = 0.002


class LearnerSection(_Section):
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
    adapter_from: Literal["penultimate", "first"] = "penultimate"


class CurriculumSection(_Section):
    enabled: bool = True
    base: float = 2.0
    increment: float = 0.25
    interval: int = 250_000
    levels: int = 4
    half_width: float = 0.5
    fixed_agility: float = 2.0


class TrainSection(_Section):
    total_steps: int = 1_000_000
    eval_every: int = 5000
    eval_episodes: int = 20
    eval_agility: float = 2.0
    log_every: int = 1000
    checkpoint_every: int = 100_000
    observation_noise: bool = True


class PolicySection(_Section):
    defender: Literal["boids", "rp", "vanilla_sac", "arboids", "static"] = "arboids"
    attacker: Literal["apf", "learned", "straight"] = "apf"
    checkpoint: Optional[str] = None
    attacker_checkpoint: Optional[str] = None
    formation_reward: bool = True


class AlternatingSection(_Section):
    phases: list[tuple[Literal["defender", "attacker"], int]] = [
        ("defender", 500_000), ("attacker", 500_000), ("defender", 500_000),
        ("attacker", 500_000), ("defender", 500_000)]
    eval_every: int = 5000
    eval_episodes: int = 20


class EvalSection(_Section):
    trials: int = 100
    workers: int = 1
    agilities: list[float] = [1.5, 2.0, 2.5, 3.0]
    team_sizes: list[int] = [2, 3, 4, 5, 6]
    record_trajectories: bool = False


class RunConfig(_Section):
    version: int = SCHEMA_VERSION
    profile: Literal["full", "desk"] = "full"
    seed: int = 0
    out: Optional[str] = None
    vessel: VesselSection = VesselSection()
    engagement: EngagementSection = EngagementSection()
    boids: BoidsSection = BoidsSection()
    apf: ApfSection = ApfSection()
    learner: LearnerSection = LearnerSection()
    curriculum: CurriculumSection = CurriculumSection()
    train: TrainSection = TrainSection()
    policy: PolicySection = PolicySection()
    alternating: AlternatingSection = AlternatingSection()
    eval: EvalSection = EvalSection()

    @model_validator(mode="after")
    def _invariants(self):
        if self.version != SCHEMA_VERSION:
            raise ValueError(f"unsupported config version {self.version}")
        # the typed builders below carry the domain invariants
        self.vessel_params()
        self.engagement_config()
        BoidsWeights(self.boids.k_sep, self.boids.k_ali, self.boids.k_coh, self.boids.k_att)
        if self.boids.k_sur <= 0 or self.boids.k_yaw <= 0:
            raise ValueError("boids.k_sur and boids.k_yaw must be positive")
        self.apf_params()
        self.learner_config()
        if self.curriculum.base - self.curriculum.half_width <= 0:
            raise ValueError("curriculum agility range must stay positive")
        sides = [s for s, _ in self.alternating.phases]
        if any(a == b for a, b in zip(sides, sides[1:])):
            raise ValueError("alternating.phases must alternate sides")
        return self

    # typed views ------------------------------------------------------
    def vessel_params(self) -> VesselParams:
        return VesselParams(**self.vessel.model_dump())

    def engagement_config(self, **overrides) -> EngagementConfig:
        kw = self.engagement.model_dump()
        kw.pop("eval_sector_width")
        kw["formation_reward"] = self.policy.formation_reward
        kw.update(overrides)
        return EngagementConfig(**kw)

    def boids_weights(self) -> BoidsWeights:
        b = self.boids
        return BoidsWeights(b.k_sep, b.k_ali, b.k_coh, b.k_att)

    def apf_params(self) -> ApfParams:
        a = self.apf
        return ApfParams(a.k_attract, a.k_repulse, self.engagement.rho_A, a.k_sur, a.k_yaw)

    def learner_config(self) -> LearnerConfig:
        return LearnerConfig(**self.learner.model_dump())

    def to_json(self) -> str:
        return json.dumps(self.model_dump(mode="json"), indent=2, sort_keys=True)


PROFILES: dict[str, dict] = {
    "full": {},
    "desk": {
        "train": {"total_steps": 100_000, "eval_every": 2500, "checkpoint_every": 25_000, "log_every": 1000},
        "curriculum": {"interval": 25_000},
        "learner": {"batch": 256, "hidden": 64, "embed_width": 32, "adapter_width": 32, "act_width": 32,
                    "buffer_capacity": 300_000, "warmup_steps": 2000},
    },
}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def _describe(exc: ValidationError) -> str:
    parts = []
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"])
        if err["type"] == "extra_forbidden":
            parts.append(f"unknown key {loc!r}")
        elif loc:
            parts.append(f"{loc}: {err['msg']}")
        else:
            parts.append(err["msg"])
    return "; ".join(parts)


def config_from_dict(data: dict) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("config root must be a JSON object")
    profile = data.get("profile", "full")
    if profile not in PROFILES:
        raise ConfigError(f"profile: unknown profile {profile!r}")
    merged = _merge(PROFILES[profile], data)
    try:
        return RunConfig.model_validate(merged)
    except ValidationError as exc:
        raise ConfigError(_describe(exc)) from None
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from None


def parse_config(path=None) -> RunConfig:
    """Load a JSON run config; ``None`` or an empty file gives the full default set."""
    if path is None:
        return config_from_dict({})
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc}") from exc
    if not text.strip():
        return config_from_dict({})
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p}: invalid JSON ({exc})") from exc
    return config_from_dict(data)


def with_overrides(cfg: RunConfig, overrides: dict) -> RunConfig:
    return config_from_dict(_merge(cfg.model_dump(mode="json"), overrides))
