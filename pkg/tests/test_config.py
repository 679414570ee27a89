import json

import pytest

from arboids.config import PROFILES, ConfigError, RunConfig, config_from_dict, parse_config, with_overrides


def test_empty_file_gives_defaults(tmp_path):
    p = tmp_path / "empty.json"
    p.write_text("")
    cfg = parse_config(p)
    e, b, lr = cfg.engagement, cfg.boids, cfg.learner
    assert (e.r_cap, e.r0, e.rho_T, e.rho_A, e.T_total, e.T_action, e.n_defenders) == (5, 15, 60, 15, 60, 0.2, 3)
    assert (b.k_sep, b.k_ali, b.k_coh, b.k_att) == (10, 0.1, 0.1, 0.5)
    assert (lr.lr, lr.batch, lr.gamma) == (1e-4, 4096, 0.99)
    assert cfg == parse_config(None)


def test_unknown_key_named(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"engagement": {"foo": 1}}))
    with pytest.raises(ConfigError, match="foo"):
        parse_config(p)
    with pytest.raises(ConfigError, match="foo"):
        config_from_dict({"foo": 1})


def test_invariant_rejections():
    with pytest.raises(ConfigError):
        config_from_dict({"engagement": {"r0": 4}})
    with pytest.raises(ConfigError, match="alternate"):
        config_from_dict({"alternating": {"phases": [["defender", 10], ["defender", 10]]}})
    with pytest.raises(ConfigError):
        config_from_dict({"curriculum": {"base": 0.5}})
    with pytest.raises(ConfigError):
        config_from_dict({"profile": "huge"})


def test_bad_files(tmp_path):
    with pytest.raises(ConfigError):
        parse_config(tmp_path / "missing.json")
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(ConfigError):
        parse_config(p)


def test_desk_profile_layering():
    cfg = config_from_dict({"profile": "desk", "train": {"total_steps": 7}})
    assert cfg.train.total_steps == 7
    assert cfg.train.eval_every == PROFILES["desk"]["train"]["eval_every"] == 2500
    assert cfg.curriculum.interval == 25_000


def test_echo_round_trip():
    cfg = with_overrides(config_from_dict({"profile": "desk"}), {"seed": 5, "policy": {"formation_reward": False}})
    again = config_from_dict(json.loads(cfg.to_json()))
    assert again == cfg
    assert not again.engagement_config().formation_reward


def test_ablation_flags_isolated():
    base = RunConfig()
    off = with_overrides(base, {"policy": {"formation_reward": False}, "curriculum": {"enabled": False}})
    a, b = base.model_dump(), off.model_dump()
    diff = {(s, k) for s in a if isinstance(a[s], dict) for k in a[s] if a[s][k] != b[s][k]}
    assert diff == {("policy", "formation_reward"), ("curriculum", "enabled")}
