import json
import logging
import os

import pytest

from modules.config import (
    DEFAULT_CONFIG,
    ENV_OVERRIDES,
    RunConfig,
    apply_env,
    apply_flags,
    load_config,
    resolve_config,
    save_config,
)
from modules.errors import ConfigError


@pytest.fixture
def clean_env(monkeypatch):
    for var in ENV_OVERRIDES:
        monkeypatch.delenv(var, raising=False)
    yield
    # load_dotenv writes straight into os.environ
    for var in ENV_OVERRIDES:
        os.environ.pop(var, None)


def test_missing_file_gives_defaults(tmp_path):
    config = load_config(str(tmp_path / "absent.json"))
    assert config == DEFAULT_CONFIG
    config["bench"]["repeats"] = 99
    assert DEFAULT_CONFIG["bench"]["repeats"] == 3


def test_nested_sections_merge(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps({"epsilon": 0.25, "bench": {"kind": "lambda"}}))
    config = load_config(str(path))
    assert config["epsilon"] == 0.25
    assert config["bench"]["kind"] == "lambda"
    assert config["bench"]["k_grid"] == DEFAULT_CONFIG["bench"]["k_grid"]


def test_unknown_keys_are_ignored_with_a_warning(tmp_path, caplog):
    path = tmp_path / "config.json"
    path.write_text(json.dumps({"epsilonn": 0.2}))
    with caplog.at_level(logging.WARNING):
        config = load_config(str(path))
    assert "epsilonn" not in config
    assert "Ignoring unknown config key 'epsilonn'" in caplog.text


@pytest.mark.parametrize("text", ["{not json", "[1, 2]"])
def test_bad_files_raise(tmp_path, text):
    path = tmp_path / "config.json"
    path.write_text(text)
    with pytest.raises(ConfigError):
        load_config(str(path))


def test_save_and_reload(tmp_path):
    path = str(tmp_path / "config.json")
    config = load_config(None)
    config["seed"] = 12
    save_config(config, path)
    assert load_config(path) == config


def test_environment_overrides(monkeypatch, clean_env):
    monkeypatch.setenv("JOINSKETCH_SEED", "7")
    monkeypatch.setenv("JOINSKETCH_LOG_LEVEL", "DEBUG")
    config = apply_env(load_config(None))
    assert config["seed"] == 7
    assert config["log_level"] == "DEBUG"
    monkeypatch.setenv("JOINSKETCH_THREADS", "many")
    with pytest.raises(ConfigError):
        apply_env(load_config(None))


def test_dotenv_file_is_read(tmp_path, clean_env):
    dotenv = tmp_path / ".env"
    dotenv.write_text("JOINSKETCH_THREADS=3\nJOINSKETCH_OUTPUT_DIR=out\n")
    config = apply_env(load_config(None), str(dotenv))
    assert config["threads"] == 3
    assert config["output_dir"] == "out"


def test_flags_skip_unset_and_merge_sections():
    config = apply_flags(load_config(None), {"epsilon": 0.3, "seed": None, "bench": {"kind": "scaling"}})
    assert config["epsilon"] == 0.3
    assert config["seed"] == 0
    assert config["bench"]["kind"] == "scaling"
    assert config["bench"]["repeats"] == 3


def test_run_config_from_dict():
    rc = RunConfig.from_dict({
        "tables": ["data/orders.csv", {"name": "items", "path": "data/i.csv"}],
        "lambda": 2.5,
        "features": ["a", "b"],
        "target": "y",
        "sep": ";",
        "log_level": "debug",
    })
    assert [(t.name, t.path) for t in rc.tables] == [("orders", "data/orders.csv"), ("items", "data/i.csv")]
    assert rc.lam == 2.5
    assert rc.log_level == "DEBUG"
    assert rc.sep == ";"
    assert rc.bench["kind"] == "k"
    assert RunConfig.from_dict(rc.to_dict()) == rc


@pytest.mark.parametrize("override", [
    {"algorithm": "magic"},
    {"epsilon": 1.5},
    {"epsilon": "abc"},
    {"lambda": -1.0},
    {"k": 0},
    {"mode": "tiny"},
    {"seed": -1},
    {"threads": 0},
    {"sep": ""},
    {"sep": ";;"},
    {"validation_fraction": 1.0},
    {"bench": {"kind": "nope"}},
    {"features": ["a", "y"], "target": "y"},
    {"features": ["a", "a"]},
    {"tables": ["x/t.csv", "y/t.csv"]},
    {"tables": [{"name": "t"}]},
])
def test_run_config_validation(override):
    with pytest.raises(ConfigError):
        RunConfig.from_dict(override)


def test_require_problem():
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"tables": ["a.csv"]}).require_problem()
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"tables": ["a.csv", "b.csv", "c.csv"]}).require_problem()
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"tables": ["a.csv", "b.csv"], "target": "y"}).require_problem()
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"tables": ["a.csv", "b.csv"], "features": ["x"]}).require_problem()
    RunConfig.from_dict({"tables": ["a.csv", "b.csv"], "features": ["x"], "target": "y"}).require_problem()
    RunConfig.from_dict({"tables": ["a.csv", "b.csv", "c.csv"], "features": ["x"], "target": "y",
                         "algorithm": "general"}).require_problem()


def test_resolution_order(tmp_path, monkeypatch, clean_env):
    path = tmp_path / "config.json"
    path.write_text(json.dumps({"epsilon": 0.3, "seed": 1, "threads": 2}))
    monkeypatch.setenv("JOINSKETCH_SEED", "5")
    rc = resolve_config(str(path), {"epsilon": 0.2}, dotenv_path=str(tmp_path / "missing.env"))
    assert rc.epsilon == 0.2
    assert rc.seed == 5
    assert rc.threads == 2
