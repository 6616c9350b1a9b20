"""
Config - Run configuration for JoinSketch
Merges DEFAULT_CONFIG, a JSON config file, .env / environment overrides and
command-line flags into a validated RunConfig
"""

import copy
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional

from dotenv import load_dotenv

from modules.errors import ConfigError

logger = logging.getLogger(__name__)

ALGORITHMS = ("two-table", "general", "faq-exact", "materialize-oracle")
BENCH_KINDS = ("k", "lambda", "scaling")

DEFAULT_CONFIG: Dict[str, Any] = {
    "tables": [],
    "key_columns": None,
    "features": [],
    "target": None,
    "algorithm": "two-table",
    "epsilon": 0.5,
    "lambda": 0.0,
    "k": None,
    "mode": "dense",
    "seed": 0,
    "threads": 1,
    "output_dir": "reports",
    "normalize": True,
    "sep": ",",
    "validation_fraction": 0.1,
    "embed": {},
    "bench": {
        "kind": "k",
        "k_grid": [40, 80, 120, 160, 200],
        "lambda_grid": [0.0, 0.01, 0.1, 1.0, 10.0, 100.0],
        "n_grid": [10000, 31623, 100000],
        "repeats": 3,
    },
    "log_level": "INFO",
    "log_file": "joinsketch.log",
    "ledger": "joinsketch_runs.db",
}

ENV_OVERRIDES = {
    "JOINSKETCH_SEED": ("seed", int),
    "JOINSKETCH_THREADS": ("threads", int),
    "JOINSKETCH_LOG_LEVEL": ("log_level", str),
    "JOINSKETCH_OUTPUT_DIR": ("output_dir", str),
    "JOINSKETCH_LEDGER": ("ledger", str),
}


def load_config(path: Optional[str] = "config.json") -> Dict[str, Any]:
    """DEFAULT_CONFIG overlaid with the JSON file at path, if it exists"""
    config = copy.deepcopy(DEFAULT_CONFIG)
    if path is None:
        return config
    try:
        with open(path, "r") as f:
            loaded = json.load(f)
    except FileNotFoundError:
        logger.debug(f"No config file at {path}; using defaults")
        return config
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path} is not valid JSON: line {e.lineno}: {e.msg}") from e
    if not isinstance(loaded, dict):
        raise ConfigError(f"{path} must hold a JSON object")
    for key, value in loaded.items():
        if key not in DEFAULT_CONFIG:
            logger.warning(f"Ignoring unknown config key '{key}' in {path}")
            continue
        if isinstance(DEFAULT_CONFIG[key], dict) and isinstance(value, dict):
            config[key].update(value)
        else:
            config[key] = value
    return config


def save_config(config: Dict[str, Any], path: str = "config.json"):
    """Write the merged config back to disk"""
    with open(path, "w") as f:
        json.dump(config, f, indent=4)


def apply_env(config: Dict[str, Any], dotenv_path: Optional[str] = None) -> Dict[str, Any]:
    """Override config keys from .env and the process environment"""
    load_dotenv(dotenv_path)
    for var, (key, cast) in ENV_OVERRIDES.items():
        raw = os.getenv(var)
        if raw is None or raw == "":
            continue
        try:
            config[key] = cast(raw)
        except ValueError as e:
            raise ConfigError(f"{var}={raw!r} is not a valid {cast.__name__}") from e
        logger.debug(f"{var} overrides '{key}'")
    return config


def apply_flags(config: Dict[str, Any], flags: Dict[str, Any]) -> Dict[str, Any]:
    """Command-line values win over everything; None means the flag was not given"""
    for key, value in flags.items():
        if value is None:
            continue
        if isinstance(value, dict) and isinstance(config.get(key), dict):
            config[key] = {**config[key], **value}
        else:
            config[key] = value
    return config


@dataclass
class TableSpec:
    name: str
    path: str


@dataclass
class RunConfig:
    """Validated settings for one run or sweep"""
    tables: List[TableSpec] = field(default_factory=list)
    key_columns: Optional[List[str]] = None
    features: List[str] = field(default_factory=list)
    target: Optional[str] = None
    algorithm: str = "two-table"
    epsilon: float = 0.5
    lam: float = 0.0
    k: Optional[int] = None
    mode: str = "dense"
    seed: int = 0
    threads: int = 1
    output_dir: str = "reports"
    normalize: bool = True
    sep: str = ","
    validation_fraction: float = 0.1
    embed: Dict[str, Any] = field(default_factory=dict)
    bench: Dict[str, Any] = field(default_factory=dict)
    log_level: str = "INFO"
    log_file: str = "joinsketch.log"
    ledger: Optional[str] = "joinsketch_runs.db"

    @classmethod
    def from_dict(cls, config: Dict[str, Any]) -> "RunConfig":
        merged = copy.deepcopy(DEFAULT_CONFIG)
        merged.update(config)
        tables = []
        for i, entry in enumerate(merged["tables"]):
            if isinstance(entry, str):
                entry = {"name": Path(entry).stem, "path": entry}
            if not isinstance(entry, dict) or "path" not in entry:
                raise ConfigError(f"tables[{i}] needs a 'path'")
            tables.append(TableSpec(str(entry.get("name") or Path(entry["path"]).stem), str(entry["path"])))
        try:
            rc = cls(
                tables=tables,
                key_columns=list(merged["key_columns"]) if merged["key_columns"] else None,
                features=[str(c) for c in merged["features"]],
                target=merged["target"],
                algorithm=str(merged["algorithm"]),
                epsilon=float(merged["epsilon"]),
                lam=float(merged["lambda"]),
                k=int(merged["k"]) if merged["k"] is not None else None,
                mode=str(merged["mode"]),
                seed=int(merged["seed"]),
                threads=int(merged["threads"]),
                output_dir=str(merged["output_dir"]),
                normalize=bool(merged["normalize"]),
                sep=str(merged["sep"]),
                validation_fraction=float(merged["validation_fraction"]),
                embed=dict(merged["embed"] or {}),
                bench={**DEFAULT_CONFIG["bench"], **(merged["bench"] or {})},
                log_level=str(merged["log_level"]).upper(),
                log_file=str(merged["log_file"]),
                ledger=merged["ledger"] or None,
            )
        except (TypeError, ValueError) as e:
            raise ConfigError(f"Invalid config value: {e}") from e
        rc.validate()
        return rc

    def validate(self):
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"algorithm must be one of {ALGORITHMS}, got {self.algorithm!r}")
        if not 0.0 < self.epsilon < 1.0:
            raise ConfigError(f"epsilon must lie in (0, 1), got {self.epsilon}")
        if self.lam < 0:
            raise ConfigError(f"lambda must be non-negative, got {self.lam}")
        if self.k is not None and self.k < 1:
            raise ConfigError(f"k must be positive, got {self.k}")
        if self.mode not in ("dense", "sparse"):
            raise ConfigError(f"mode must be 'dense' or 'sparse', got {self.mode!r}")
        if self.seed < 0:
            raise ConfigError(f"seed must be non-negative, got {self.seed}")
        if self.threads < 1:
            raise ConfigError(f"threads must be positive, got {self.threads}")
        if len(self.sep) != 1:
            raise ConfigError(f"sep must be a single character, got {self.sep!r}")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise ConfigError(f"validation_fraction must lie in [0, 1), got {self.validation_fraction}")
        if self.bench.get("kind") not in BENCH_KINDS:
            raise ConfigError(f"bench kind must be one of {BENCH_KINDS}, got {self.bench.get('kind')!r}")
        if self.target is not None and self.target in self.features:
            raise ConfigError(f"target column {self.target!r} is also listed as a feature")
        if len(set(self.features)) != len(self.features):
            raise ConfigError("feature columns must be distinct")
        names = [t.name for t in self.tables]
        if len(set(names)) != len(names):
            raise ConfigError(f"table names must be unique, got {names}")

    def require_problem(self):
        """A regression run needs tables, features and exactly one target"""
        if len(self.tables) < 2:
            raise ConfigError("at least two tables are required")
        if self.algorithm == "two-table" and len(self.tables) != 2:
            raise ConfigError("the two-table algorithm takes exactly two tables")
        if not self.features:
            raise ConfigError("no feature columns given")
        if self.target is None:
            raise ConfigError("no target column given")

    def to_dict(self) -> Dict[str, Any]:
        return {
            "tables": [{"name": t.name, "path": t.path} for t in self.tables],
            "key_columns": self.key_columns,
            "features": list(self.features),
            "target": self.target,
            "algorithm": self.algorithm,
            "epsilon": self.epsilon,
            "lambda": self.lam,
            "k": self.k,
            "mode": self.mode,
            "seed": self.seed,
            "threads": self.threads,
            "output_dir": self.output_dir,
            "normalize": self.normalize,
            "sep": self.sep,
            "validation_fraction": self.validation_fraction,
            "embed": dict(self.embed),
            "bench": dict(self.bench),
            "log_level": self.log_level,
            "log_file": self.log_file,
            "ledger": self.ledger,
        }


def resolve_config(path: Optional[str] = "config.json", flags: Optional[Dict[str, Any]] = None,
                   dotenv_path: Optional[str] = None) -> RunConfig:
    """defaults < config file < environment < flags"""
    config = load_config(path)
    config = apply_env(config, dotenv_path)
    config = apply_flags(config, flags or {})
    rc = RunConfig.from_dict(config)
    logger.debug(f"Resolved config: algorithm={rc.algorithm}, epsilon={rc.epsilon}, seed={rc.seed}")
    return rc
