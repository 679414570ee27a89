"""Trial batches, benchmark tables and trajectory export."""
from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, replace
from fractions import Fraction
from pathlib import Path

import numpy as np

from .dynamics import VesselParams
from .env import EngagementConfig, EngagementEnv
from .rollout import BoidsSettings, EpisodeRecord, run_episode

TRAJ_COLUMNS = ("t", "agent_id", "role", "x", "y", "psi", "u", "v", "r", "tau_left", "tau_right", "theta")
OUTCOME_KINDS = ("capture", "timeout", "breach", "collision")


@dataclass(frozen=True)
class TrialStats:
    n_trials: int
    success_rate: float
    capture_rate: float
    timeout_rate: float
    breach_rate: float
    collision_rate: float
    mean_time_to_capture: float
    seed: int
    counts: dict

    @classmethod
    def from_records(cls, records: list[EpisodeRecord], seed: int) -> "TrialStats":
        n = len(records)
        if n == 0:
            raise ValueError("no trials")
        counts = {k: 0 for k in OUTCOME_KINDS}
        for r in records:
            counts[r.outcome.kind] += 1
        frac = {k: Fraction(c, n) for k, c in counts.items()}
        cap_times = [r.t_end for r in records if r.outcome.kind == "capture"]
        return cls(n, float(frac["capture"] + frac["timeout"]), float(frac["capture"]), float(frac["timeout"]),
                   float(frac["breach"]), float(frac["collision"]),
                   float(np.mean(cap_times)) if cap_times else float("nan"), seed, counts)

    def to_dict(self) -> dict:
        return asdict(self)


def wilson_interval(successes: int, n: int, z: float = 1.959963984540054) -> tuple[float, float]:
    """95% Wilson score interval for a binomial proportion."""
    if n <= 0:
        raise ValueError("n must be positive")
    p = successes / n
    den = 1.0 + z * z / n
    centre = (p + z * z / (2 * n)) / den
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / den
    # the bounds touch 0 and 1 exactly at the extremes; avoid cancellation noise there
    lo = 0.0 if successes == 0 else max(0.0, centre - half)
    hi = 1.0 if successes == n else min(1.0, centre + half)
    return lo, hi


def trial_rngs(seed: int, n: int) -> list[np.random.Generator]:
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


def _trial_env(base: EngagementConfig, vessel: VesselParams, rng, sector_width: float | None) -> EngagementEnv:
    cfg = base
    if sector_width is not None:
        c = rng.uniform(-math.pi, math.pi)
        cfg = replace(base, spawn_sector=(c - sector_width / 2, c + sector_width / 2))
    return EngagementEnv(cfg, vessel)


def _run_chunk(args):
    (indices, seed, n_trials, config, vessel, defender, attacker, boids, sector_width, record) = args
    rngs = trial_rngs(seed, n_trials)
    out = []
    for i in indices:
        env = _trial_env(config, vessel, rngs[i], sector_width)
        out.append(run_episode(env, defender, attacker, boids, rngs[i], noise=False, record=record))
    return out


def run_trials(defender, attacker, config: EngagementConfig, n_trials: int, seed: int,
               vessel: VesselParams | None = None, boids: BoidsSettings | None = None,
               sector_width: float | None = math.pi / 2, workers: int = 1, record: bool = False):
    """Play ``n_trials`` noise-free episodes; deterministic in ``seed`` regardless of ``workers``.

    Returns ``(TrialStats, records)``.
    """
    vessel = vessel or VesselParams()
    boids = boids or BoidsSettings()
    common = (seed, n_trials, config, vessel, defender, attacker, boids, sector_width, record)
    if workers <= 1:
        records = _run_chunk((range(n_trials),) + common)
    else:
        chunks = [list(range(n_trials))[k::workers] for k in range(workers)]
        with ProcessPoolExecutor(workers) as pool:
            parts = list(pool.map(_run_chunk, [(c,) + common for c in chunks]))
        records = [None] * n_trials
        for c, part in zip(chunks, parts):
            for i, r in zip(c, part):
                records[i] = r
    return TrialStats.from_records(records, seed), records


def compare(policies: dict, attacker, config: EngagementConfig, agilities, team_sizes, n_trials: int, seed: int,
            vessel: VesselParams | None = None, boids: BoidsSettings | None = None,
            sector_width: float | None = math.pi / 2, fixed_agility: float = 2.0, fixed_n: int = 3,
            workers: int = 1) -> dict:
    """Success-rate tables over (policy x agility) at ``fixed_n`` and (policy x n) at ``fixed_agility``."""
    def cell(policy, agility, n):
        cfg = replace(config, agility=agility, n_defenders=n)
        stats, _ = run_trials(policy, attacker, cfg, n_trials, seed, vessel, boids, sector_width, workers)
        succ = stats.counts["capture"] + stats.counts["timeout"]
        lo, hi = wilson_interval(succ, n_trials)
        return {"sr": stats.success_rate, "ci95": [lo, hi], "stats": stats.to_dict()}

    report = {"n_trials": n_trials, "seed": seed, "fixed_n": fixed_n, "fixed_agility": fixed_agility,
              "agility_sweep": {}, "team_size_sweep": {}}
    for name, pol in policies.items():
        report["agility_sweep"][name] = {str(a): cell(pol, a, fixed_n) for a in agilities}
        report["team_size_sweep"][name] = {str(n): cell(pol, fixed_agility, n) for n in team_sizes}
    return report


def report_rows(report: dict) -> list[list]:
    rows = [["sweep", "policy", "value", "sr", "ci_low", "ci_high"]]
    for sweep in ("agility_sweep", "team_size_sweep"):
        for name, cells in report[sweep].items():
            for key, c in cells.items():
                rows.append([sweep, name, key, c["sr"], c["ci95"][0], c["ci95"][1]])
    return rows


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return str(int(v))
    return str(v)


def export_trajectories(record: EpisodeRecord, path):
    """Write one episode as CSV: one row per agent per decision step plus an outcome footer row."""
    path = Path(path)
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(TRAJ_COLUMNS)
            for row in record.rows:
                w.writerow([_fmt(v) for v in row])
            w.writerow([_fmt(record.t_end), "", f"outcome:{record.outcome}"] + [""] * (len(TRAJ_COLUMNS) - 3))
    except OSError as exc:
        raise OSError(f"cannot write trajectory file {path}: {exc}") from exc
    return path


def read_trajectories(path) -> tuple[list[dict], str]:
    """Parse a trajectory CSV back into typed rows and the outcome string."""
    rows, outcome = [], None
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            if rec["role"].startswith("outcome:"):
                outcome = rec["role"][len("outcome:"):]
                continue
            row = {"t": float(rec["t"]), "agent_id": int(rec["agent_id"]), "role": rec["role"]}
            for k in TRAJ_COLUMNS[3:]:
                row[k] = float(rec[k]) if rec[k] != "" else None
            rows.append(row)
    return rows, outcome
