"""Command-line entry point.

Exit codes: 0 success, 2 configuration, 3 I/O, 4 checkpoint, 5 runtime.
Every subcommand that takes ``--out`` writes ``config.json`` there first, which
is enough to rerun it.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from .checkpoint import CheckpointError, load_learner
from .config import ConfigError, RunConfig, parse_config, with_overrides
from .evaluation import compare, export_trajectories, report_rows, run_trials, wilson_interval
from .nn import StaleCacheError
from .rollout import LearnedPolicy
from .train import alternating_train, boids_settings, make_attacker, make_defender, train

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_CHECKPOINT, EXIT_RUNTIME = 0, 2, 3, 4, 5

log = logging.getLogger("arboids")


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _load(args) -> RunConfig:
    cfg = parse_config(args.config)
    over: dict = {}
    if getattr(args, "seed", None) is not None:
        over["seed"] = args.seed
    if getattr(args, "out", None) is not None:
        over["out"] = str(args.out)
    if getattr(args, "policy", None) is not None:
        over.setdefault("policy", {})["defender"] = args.policy
    if getattr(args, "checkpoint", None) is not None:
        over.setdefault("policy", {})["checkpoint"] = args.checkpoint
    if getattr(args, "attacker", None) is not None:
        over.setdefault("policy", {})["attacker"] = args.attacker
    if getattr(args, "trials", None) is not None:
        over.setdefault("eval", {})["trials"] = args.trials
    if getattr(args, "agility", None) is not None:
        over.setdefault("engagement", {})["agility"] = args.agility
    if getattr(args, "defenders", None) is not None:
        over.setdefault("engagement", {})["n_defenders"] = args.defenders
    if getattr(args, "steps", None) is not None:
        over.setdefault("train", {})["total_steps"] = args.steps
    return with_overrides(cfg, over) if over else cfg


def _out_dir(cfg: RunConfig) -> Path:
    if not cfg.out:
        raise ConfigError("out: an output directory is required (--out)")
    out = Path(cfg.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(cfg.to_json())
    except OSError as exc:
        raise OSError(f"cannot write to {out}: {exc}") from exc
    return out


def _write_json(path: Path, data):
    try:
        path.write_text(json.dumps(data, indent=2, sort_keys=True))
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def cmd_validate(args) -> int:
    print(_load(args).to_json())
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _load(args)
    out = _out_dir(cfg)
    summary = train(cfg, out)
    summary.pop("learner")
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def cmd_alt_train(args) -> int:
    cfg = _load(args)
    out = _out_dir(cfg)
    report = alternating_train(cfg, out)
    print(json.dumps({"phases": report["phases"], "total_steps": report["total_steps"]}, sort_keys=True))
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _load(args)
    out = _out_dir(cfg) if cfg.out else None
    stats, records = run_trials(make_defender(cfg), make_attacker(cfg), cfg.engagement_config(), cfg.eval.trials,
                                cfg.seed, cfg.vessel_params(), boids_settings(cfg), cfg.engagement.eval_sector_width,
                                cfg.eval.workers, record=cfg.eval.record_trajectories and out is not None)
    succ = stats.counts["capture"] + stats.counts["timeout"]
    result = {**stats.to_dict(), "ci95": list(wilson_interval(succ, stats.n_trials))}
    if out is not None:
        _write_json(out / "stats.json", result)
        if cfg.eval.record_trajectories:
            for k, rec in enumerate(records):
                export_trajectories(rec, out / f"trial_{k:04d}.csv")
    print(json.dumps(result, sort_keys=True))
    return EXIT_OK


def _policy_spec(spec: str):
    """``name`` for a scripted policy or ``name=checkpoint`` for a learned one."""
    name, _, path = spec.partition("=")
    if not path:
        if name not in ("boids", "static"):
            raise ConfigError(f"policy {name!r} needs a checkpoint (name=path)")
        return name, None
    learner, _ = load_learner(path)
    return name, learner


def cmd_compare(args) -> int:
    cfg = _load(args)
    out = _out_dir(cfg)
    policies = {}
    for spec in args.policies or ["boids"]:
        name, learner = _policy_spec(spec)
        if learner is None:
            policies[name] = make_defender(cfg.model_copy(update={"policy": cfg.policy.model_copy(
                update={"defender": name})}))
        else:
            policies[name] = LearnedPolicy(learner, "eval")
    report = compare(policies, make_attacker(cfg), cfg.engagement_config(), cfg.eval.agilities, cfg.eval.team_sizes,
                     cfg.eval.trials, cfg.seed, cfg.vessel_params(), boids_settings(cfg),
                     cfg.engagement.eval_sector_width, cfg.engagement.agility, cfg.engagement.n_defenders,
                     cfg.eval.workers)
    _write_json(out / "report.json", report)
    try:
        with open(out / "report.csv", "w", newline="") as fh:
            csv.writer(fh).writerows(report_rows(report))
    except OSError as exc:
        raise OSError(f"cannot write {out / 'report.csv'}: {exc}") from exc
    for row in report_rows(report)[1:]:
        print("{:16s} {:12s} {:>5s}  SR {:.3f}  [{:.3f}, {:.3f}]".format(*row[:3], *row[3:]))
    return EXIT_OK


def cmd_export(args) -> int:
    cfg = _load(args)
    out = _out_dir(cfg)
    _, records = run_trials(make_defender(cfg), make_attacker(cfg), cfg.engagement_config(), cfg.eval.trials,
                            cfg.seed, cfg.vessel_params(), boids_settings(cfg), cfg.engagement.eval_sector_width,
                            cfg.eval.workers, record=True)
    for k, rec in enumerate(records):
        path = export_trajectories(rec, out / f"trial_{k:04d}.csv")
        print(f"{path}  {rec.outcome}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="arboids", description="Multi-USV target defense lab.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out=True):
        sp.add_argument("--config", help="JSON run config (defaults when omitted)")
        sp.add_argument("--seed", type=int)
        if out:
            sp.add_argument("--out", help="output directory")
        return sp

    def engagement(sp):
        sp.add_argument("--agility", type=float, help="attacker agility")
        sp.add_argument("--defenders", type=int, help="number of defenders")
        sp.add_argument("--attacker", choices=["apf", "learned", "straight"])
        return sp

    policies = ["boids", "rp", "vanilla_sac", "arboids", "static"]
    sp = common(sub.add_parser("validate-config", help="check a config and print it with defaults filled"), out=False)
    sp.set_defaults(func=cmd_validate)

    sp = engagement(common(sub.add_parser("train", help="train a defender policy")))
    sp.add_argument("--policy", choices=["rp", "vanilla_sac", "arboids"])
    sp.add_argument("--steps", type=int, help="override train.total_steps")
    sp.set_defaults(func=cmd_train)

    sp = common(sub.add_parser("alt-train", help="alternating defender/attacker training"))
    sp.add_argument("--policy", choices=["rp", "vanilla_sac", "arboids"])
    sp.add_argument("--checkpoint", help="initial defender checkpoint")
    sp.add_argument("--agility", type=float)
    sp.set_defaults(func=cmd_alt_train)

    sp = engagement(common(sub.add_parser("eval", help="run evaluation trials")))
    sp.add_argument("--policy", choices=policies)
    sp.add_argument("--checkpoint", help="defender checkpoint for learned policies")
    sp.add_argument("--trials", type=int)
    sp.set_defaults(func=cmd_eval)

    sp = engagement(common(sub.add_parser("compare", help="success-rate tables over agility and team size")))
    sp.add_argument("--policy", dest="policies", action="append",
                    help="'boids', 'static' or name=checkpoint; repeatable")
    sp.add_argument("--trials", type=int)
    sp.set_defaults(func=cmd_compare)

    sp = engagement(common(sub.add_parser("export", help="record episodes to trajectory CSV files")))
    sp.add_argument("--policy", choices=policies)
    sp.add_argument("--checkpoint")
    sp.add_argument("--trials", type=int, help="number of episodes to export")
    sp.set_defaults(func=cmd_export)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CheckpointError as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, RuntimeError, StaleCacheError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
