"""
Ingest - CSV loading and synthetic join data
Reads tables with exact float round-trip, dictionary-encodes string join keys,
min-max normalizes feature columns, and generates Zipf-skewed chain joins
"""

import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd

from modules.errors import ConfigError, DataError
from modules.join_core import Table

logger = logging.getLogger(__name__)

_LINE_PATTERN = re.compile(r"line (\d+)")


def min_max_normalize(values) -> np.ndarray:
    """Map each column to [0, 1]; constant columns map to 0"""
    values = np.asarray(values, dtype=np.float64)
    lo = values.min(axis=0) if len(values) else 0.0
    hi = values.max(axis=0) if len(values) else 0.0
    span = np.asarray(hi - lo, dtype=np.float64)
    safe = np.where(span > 0, span, 1.0)
    out = (values - lo) / safe
    return np.where(span > 0, out, 0.0)


def shared_columns(frames: Dict[str, pd.DataFrame]) -> List[str]:
    """Columns that appear in more than one table, in first-seen order"""
    seen: Dict[str, int] = {}
    for frame in frames.values():
        for c in frame.columns:
            seen[c] = seen.get(c, 0) + 1
    return [c for c, n in seen.items() if n > 1]


def read_frame(path: Union[str, Path], sep: str = ",") -> pd.DataFrame:
    """One CSV as a DataFrame; malformed rows raise DataError with the file line number"""
    if len(sep) != 1:
        raise ConfigError(f"the column delimiter must be one character, got {sep!r}")
    try:
        frame = pd.read_csv(path, sep=sep, float_precision="round_trip", skipinitialspace=True)
    except FileNotFoundError as e:
        raise ConfigError(f"table file not found: {path}") from e
    except pd.errors.EmptyDataError as e:
        raise DataError(f"{path} is empty") from e
    except pd.errors.ParserError as e:
        match = _LINE_PATTERN.search(str(e))
        raise DataError(f"{path}: malformed row: {e}", int(match.group(1)) if match else None) from e
    if frame.columns.duplicated().any():
        raise DataError(f"{path}: duplicate column names", 1)
    missing = frame.isna().to_numpy()
    if missing.any():
        row = int(np.argmax(missing.any(axis=1)))
        col = frame.columns[int(np.argmax(missing[row]))]
        raise DataError(f"{path}: missing value in column '{col}'", row + 2)
    return frame


def encode_keys(frames: Dict[str, pd.DataFrame], key_columns: Sequence[str]) -> Dict[str, Dict[str, int]]:
    """Replace non-numeric key columns by dense int codes shared across tables"""
    dictionaries = {}
    for column in key_columns:
        holders = [f for f in frames.values() if column in f.columns]
        if all(pd.api.types.is_numeric_dtype(f[column]) for f in holders):
            continue
        values = sorted(set().union(*(f[column].astype(str) for f in holders)))
        codes = {v: i for i, v in enumerate(values)}
        for f in holders:
            f[column] = f[column].astype(str).map(codes).astype(np.int64)
        dictionaries[column] = codes
        logger.info(f"Dictionary-encoded key column '{column}' with {len(codes)} values")
    return dictionaries


def _numeric(frame: pd.DataFrame, path) -> np.ndarray:
    for c in frame.columns:
        if pd.api.types.is_numeric_dtype(frame[c]):
            continue
        converted = pd.to_numeric(frame[c], errors="coerce")
        bad = converted.isna().to_numpy()
        if bad.any():
            row = int(np.argmax(bad))
            raise DataError(f"{path}: non-numeric value {frame[c].iloc[row]!r} in column '{c}'", row + 2)
        frame[c] = converted
    return frame.to_numpy(dtype=np.float64)


@dataclass
class IngestResult:
    tables: List[Table]
    key_columns: List[str]
    dictionaries: Dict[str, Dict[str, int]] = field(default_factory=dict)

    def by_name(self, name: str) -> Table:
        for t in self.tables:
            if t.name == name:
                return t
        raise ConfigError(f"no table named {name!r}")


def ingest(paths: Union[Sequence[str], Dict[str, str]], key_columns: Optional[Sequence[str]] = None,
           normalize: bool = False, sep: str = ",",
           dictionary_dir: Optional[Union[str, Path]] = None) -> IngestResult:
    """Load tables from CSV files

    paths maps table names to files (a plain list uses the file stems).
    Without key_columns the join keys are the columns shared by two or more
    tables. Feature columns are optionally min-max normalized; key columns
    never are. With dictionary_dir set, every string key dictionary is
    written there as a value,code CSV.
    """
    if not isinstance(paths, dict):
        paths = {Path(p).stem: p for p in paths}
    frames = {name: read_frame(path, sep) for name, path in paths.items()}
    keys = list(key_columns) if key_columns else shared_columns(frames)
    dictionaries = encode_keys(frames, keys)

    tables = []
    for name, frame in frames.items():
        data = _numeric(frame, paths[name])
        table_keys = [c for c in frame.columns if c in keys]
        if normalize and len(data):
            feature_idx = [i for i, c in enumerate(frame.columns) if c not in keys]
            data[:, feature_idx] = min_max_normalize(data[:, feature_idx])
        tables.append(Table(name, list(frame.columns), data, tuple(table_keys)))
        logger.info(f"Loaded table {name}: {data.shape[0]} rows, {data.shape[1]} columns")
    if dictionary_dir is not None and dictionaries:
        for path in save_dictionaries(dictionaries, dictionary_dir):
            logger.info(f"Saved key dictionary to {path}")
    return IngestResult(tables, keys, dictionaries)


def save_dictionaries(dictionaries: Dict[str, Dict[str, int]], directory: Union[str, Path]) -> List[Path]:
    """One value,code CSV per encoded key column"""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for column, codes in dictionaries.items():
        path = directory / f"{column}_dictionary.csv"
        pd.DataFrame({"value": list(codes.keys()), "code": list(codes.values())}).to_csv(path, index=False)
        written.append(path)
    return written


def write_table(table: Table, path: Union[str, Path]):
    frame = pd.DataFrame(table.data, columns=table.columns)
    for c in table.key_columns:
        frame[c] = frame[c].astype(np.int64)
    frame.to_csv(path, index=False)


@dataclass
class SynthShape:
    """Chain of m tables; table j joins table j+1 on column k{j}"""
    n: Union[int, List[int]] = 1000
    d: Union[int, List[int]] = 3
    cardinality: int = 100
    skew: float = 1.2
    m: int = 2

    def __post_init__(self):
        if self.m < 2:
            raise ConfigError(f"need at least two tables, got m={self.m}")
        self.n = [int(self.n)] * self.m if np.isscalar(self.n) else [int(v) for v in self.n]
        self.d = [int(self.d)] * self.m if np.isscalar(self.d) else [int(v) for v in self.d]
        if len(self.n) != self.m or len(self.d) != self.m:
            raise ConfigError("n and d need one entry per table")
        if min(self.n) < 1 or min(self.d) < 0 or self.cardinality < 1:
            raise ConfigError("table sizes and key cardinality must be positive")
        if self.skew < 0:
            raise ConfigError(f"skew must be non-negative, got {self.skew}")


def _draw_keys(n: int, cardinality: int, skew: float, rng) -> np.ndarray:
    if skew == 0:
        return np.arange(n, dtype=np.int64) % cardinality
    weights = 1.0 / np.arange(1, cardinality + 1, dtype=np.float64) ** skew
    return rng.choice(cardinality, size=n, p=weights / weights.sum()).astype(np.int64)


def synth_tables(shape: SynthShape, seed: int = 0) -> List[Table]:
    """In-memory tables for a chain join with Zipf-skewed keys and uniform [0, 1] features"""
    rng = np.random.default_rng(seed)
    tables = []
    for j in range(shape.m):
        key_names = ([f"k{j - 1}"] if j > 0 else []) + ([f"k{j}"] if j < shape.m - 1 else [])
        n = shape.n[j]
        keys = [_draw_keys(n, shape.cardinality, shape.skew, rng) for _ in key_names]
        features = rng.random((n, shape.d[j]))
        columns = key_names + [f"t{j}_x{q}" for q in range(shape.d[j])]
        data = np.column_stack(keys + [features]) if keys else features
        tables.append(Table(f"t{j}", columns, data, tuple(key_names)))
    return tables


def synth_generate(shape: SynthShape, seed: int, out_dir: Union[str, Path]) -> Dict[str, Path]:
    """Write synth_tables to out_dir/t{j}.csv and return name -> path"""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {}
    for table in synth_tables(shape, seed):
        path = out_dir / f"{table.name}.csv"
        write_table(table, path)
        paths[table.name] = path
    logger.info(f"Generated {shape.m} tables in {out_dir} (skew={shape.skew}, cardinality={shape.cardinality})")
    return paths
