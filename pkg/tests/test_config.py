import dataclasses

import pytest
import yaml

from pemsim.config import (ConfigError, RunConfig, config_from_dict, config_hash, dump_config,
                           load_config, validate_config, with_seed)


def test_defaults_valid():
    cfg = validate_config(RunConfig())
    assert cfg.scenario.n_cells == 3 and cfg.scenario.n_ues == 36 and cfg.scenario.n_paths == 4
    assert cfg.bf.n0 == 500 and cfg.bf.n_tx_list == (8, 16, 32, 64) and cfg.bf.n_trials >= 50
    assert cfg.rxbeam.scenario.n_tx == 16 and cfg.rxbeam.d_list == (2, 4, 8)
    assert cfg.rxbeam.scenario.bs_positions == ((0.0, 0.0),)
    assert len(cfg.rxbeam.traffic.gmm_means) == 3


def test_roundtrip(tmp_path):
    cfg = with_seed(RunConfig(), 99)
    dump_config(cfg, tmp_path / "c.yaml")
    back = load_config(tmp_path / "c.yaml")
    assert back == cfg
    assert config_hash(back) == config_hash(cfg)


def test_partial_overlay():
    cfg = config_from_dict({"bf": {"n_trials": 3}, "scenario": {"n_tx": 8}})
    assert cfg.bf.n_trials == 3 and cfg.scenario.n_tx == 8
    assert cfg.bf.n0 == 500 and cfg.scenario.n_ues == 36


def test_hash_sensitive():
    a = RunConfig()
    b = dataclasses.replace(a, bf=dataclasses.replace(a.bf, n_trials=7))
    assert config_hash(a) != config_hash(b)
    assert config_hash(a) == config_hash(RunConfig())


def test_seed_override():
    cfg = with_seed(RunConfig(), 7)
    assert cfg.seed == 7 and cfg.rxbeam.scenario.rng_seed == 7
    assert with_seed(cfg, None) is cfg


@pytest.mark.parametrize("data", [
    {"bogus": 1},
    {"scenario": {"n_txx": 3}},
    {"scenario": 5},
    {"scenario": {"n_tx": 0}},
    {"measurement": {"coverage_fraction": 0.0}},
    {"traffic": {"gmm_weights": [0.5]}},
    {"pem": {"max_iters": 0}},
    {"bf": {"n_trials": 0}},
    {"bf": {"schemes": ["NOPE"]}},
    {"bf": {"n0": 100}},
    {"rxbeam": {"d_list": [2, 17]}},
    {"gridize": {"floor_db": 3.0}},
    {"gridize": {"cell": 5}},
])
def test_invalid(data):
    with pytest.raises(ConfigError):
        config_from_dict(data)


def test_unreadable_and_malformed(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.yaml")
    (tmp_path / "bad.yaml").write_text("scenario: [unclosed\n")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "bad.yaml")


def test_empty_file_is_defaults(tmp_path):
    (tmp_path / "e.yaml").write_text("")
    assert load_config(tmp_path / "e.yaml") == RunConfig()


def test_dump_is_plain_yaml(tmp_path):
    dump_config(RunConfig(), tmp_path / "c.yaml")
    data = yaml.safe_load((tmp_path / "c.yaml").read_text())
    assert set(data) == {f.name for f in dataclasses.fields(RunConfig)}
