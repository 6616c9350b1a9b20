"""
Join Core - Tables, join blocks and padded-table embeddings
Builds the block decomposition of a two-table equi-join and the
brute-force materialization oracle used to check every sketched path
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from modules.errors import (
    ConfigError,
    DataError,
    EmptyJoinError,
    InvariantViolation,
    MaterializationCapError,
)
from modules.sketch_kernels import hash64

logger = logging.getLogger(__name__)

DEFAULT_MATERIALIZE_CAP = 10 ** 7


@dataclass
class Table:
    """Numeric relation with named columns and designated join-key columns"""
    name: str
    columns: List[str]
    data: np.ndarray
    key_columns: Tuple[str, ...] = ()

    def __post_init__(self):
        self.columns = list(self.columns)
        self.key_columns = tuple(self.key_columns)
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim == 1 and len(self.columns) == 1:
            self.data = self.data.reshape(-1, 1)
        if len(set(self.columns)) != len(self.columns):
            raise DataError(f"table {self.name} has duplicate column names")
        if self.data.ndim != 2 or self.data.shape[1] != len(self.columns):
            raise DataError(
                f"table {self.name}: data shape {self.data.shape} does not match "
                f"{len(self.columns)} columns"
            )
        missing = [c for c in self.key_columns if c not in self.columns]
        if missing:
            raise ConfigError(f"table {self.name} has no key column(s) {missing}")

    @property
    def n_rows(self) -> int:
        return self.data.shape[0]

    def column_index(self, name: str) -> int:
        try:
            return self.columns.index(name)
        except ValueError:
            raise ConfigError(f"table {self.name} has no column {name!r}")

    def column(self, name: str) -> np.ndarray:
        return self.data[:, self.column_index(name)]

    def keys(self, columns: Sequence[str]) -> np.ndarray:
        """Key tuples as an exact int64 matrix (n x |columns|)"""
        idx = [self.column_index(c) for c in columns]
        raw = self.data[:, idx]
        if raw.size and (not np.all(np.isfinite(raw)) or np.any(raw != np.round(raw))):
            raise DataError(
                f"table {self.name}: join key columns {list(columns)} must hold integral values"
            )
        if raw.size and np.abs(raw).max() >= 2 ** 53:
            raise DataError(f"table {self.name}: join key values exceed exact float range")
        return raw.astype(np.int64)


@dataclass(frozen=True)
class ColumnPartition:
    """Join column layout and the columns each table contributes"""
    columns: Tuple[str, ...]
    assignment: Tuple[Tuple[str, ...], ...]

    @classmethod
    def for_tables(cls, tables: Sequence[Table]) -> "ColumnPartition":
        """Each column goes to the lowest-indexed table that has it"""
        order: List[str] = []
        assignment = []
        seen = set()
        for table in tables:
            mine = []
            for c in table.columns:
                if c not in seen:
                    seen.add(c)
                    order.append(c)
                    mine.append(c)
            assignment.append(tuple(mine))
        return cls(tuple(order), tuple(assignment))

    @property
    def d(self) -> int:
        return len(self.columns)

    def index(self, name: str) -> int:
        try:
            return self.columns.index(name)
        except ValueError:
            raise ConfigError(f"join has no column {name!r}")

    def positions(self, j: int) -> np.ndarray:
        return np.array([self.columns.index(c) for c in self.assignment[j]], dtype=np.int64)

    def owner(self, name: str) -> int:
        for j, cols in enumerate(self.assignment):
            if name in cols:
                return j
        raise ConfigError(f"join has no column {name!r}")


def pad_table(table: Table, partition: ColumnPartition, j: int) -> np.ndarray:
    """Embed table j into join column space, zeros outside its assigned columns"""
    padded = np.zeros((table.n_rows, partition.d))
    src = [table.column_index(c) for c in partition.assignment[j]]
    padded[:, partition.positions(j)] = table.data[:, src]
    return padded


@dataclass
class BlockIndex:
    """Blocks of a two-table join, in sorted key order

    Row lists are stored flat: block b owns rows1[start1[b]:start1[b] + sizes1[b]]
    of table 1 (ascending), likewise for table 2.
    """
    key_columns: Tuple[str, ...]
    keys: np.ndarray
    sizes1: np.ndarray
    sizes2: np.ndarray
    start1: np.ndarray
    start2: np.ndarray
    rows1: np.ndarray
    rows2: np.ndarray
    table_sizes: Tuple[int, int]
    offsets: np.ndarray = field(init=False)

    def __post_init__(self):
        self.offsets = np.concatenate([[0], np.cumsum(self.sizes, dtype=np.int64)])

    def __len__(self) -> int:
        return len(self.sizes1)

    @property
    def sizes(self) -> np.ndarray:
        return self.sizes1 * self.sizes2

    @property
    def N(self) -> int:
        return int(self.offsets[-1])

    def block_rows(self, b: int) -> Tuple[np.ndarray, np.ndarray]:
        r1 = self.rows1[self.start1[b]:self.start1[b] + self.sizes1[b]]
        r2 = self.rows2[self.start2[b]:self.start2[b] + self.sizes2[b]]
        return r1, r2

    def block_of_rows(self) -> Tuple[np.ndarray, np.ndarray]:
        """Block position of every table row, -1 for rows in no block"""
        out = []
        for rows, sizes, n in ((self.rows1, self.sizes1, self.table_sizes[0]),
                               (self.rows2, self.sizes2, self.table_sizes[1])):
            owner = np.full(n, -1, dtype=np.int64)
            owner[rows] = np.repeat(np.arange(len(sizes)), sizes)
            out.append(owner)
        return out[0], out[1]

    def key_of(self, b: int) -> Tuple[int, ...]:
        return tuple(int(v) for v in self.keys[b])


def build_block_index(T1: Table, T2: Table, key_columns: Sequence[str]) -> BlockIndex:
    """One block per key tuple present in both tables"""
    key_columns = tuple(key_columns)
    if not key_columns:
        raise DataError("join columns are empty; cross products are not supported")
    k1, k2 = T1.keys(key_columns), T2.keys(key_columns)
    n1, n2 = len(k1), len(k2)
    if n1 + n2 == 0:
        empty = np.zeros(0, dtype=np.int64)
        return BlockIndex(key_columns, np.zeros((0, len(key_columns)), dtype=np.int64),
                          empty, empty, empty, empty, empty, empty, (0, 0))
    uniq, inverse = np.unique(np.vstack([k1, k2]), axis=0, return_inverse=True)
    inverse = np.asarray(inverse).reshape(-1)
    inv1, inv2 = inverse[:n1], inverse[n1:]
    c1 = np.bincount(inv1, minlength=len(uniq))
    c2 = np.bincount(inv2, minlength=len(uniq))
    present = np.flatnonzero((c1 > 0) & (c2 > 0))

    def grouped(inv, counts):
        order = np.argsort(inv, kind="stable")
        mask = np.isin(inv[order], present)
        rows = order[mask]
        kept = counts[present]
        return rows.astype(np.int64), np.concatenate([[0], np.cumsum(kept)])[:-1].astype(np.int64), kept

    rows1, start1, sizes1 = grouped(inv1, c1)
    rows2, start2, sizes2 = grouped(inv2, c2)
    index = BlockIndex(key_columns, uniq[present], sizes1.astype(np.int64), sizes2.astype(np.int64),
                       start1, start2, rows1, rows2, (n1, n2))
    logger.info(f"Built block index on {list(key_columns)}: {len(index)} blocks, N={index.N}")
    return index


def join_row_ids(index: BlockIndex) -> np.ndarray:
    """(table-1 row, table-2 row) for every join row in canonical order"""
    out = np.zeros((index.N, 2), dtype=np.int64)
    for b in range(len(index)):
        r1, r2 = index.block_rows(b)
        lo, hi = index.offsets[b], index.offsets[b + 1]
        out[lo:hi, 0] = np.repeat(r1, len(r2))
        out[lo:hi, 1] = np.tile(r2, len(r1))
    return out


def materialize_join(index: BlockIndex, partition: ColumnPartition, tables: Sequence[Table],
                     cap: int = DEFAULT_MATERIALIZE_CAP) -> np.ndarray:
    """Stack J^(i) = A (x) 1 + 1 (x) B over blocks; testing oracle only"""
    if index.N > cap:
        raise MaterializationCapError(index.N, cap)
    P1, P2 = pad_table(tables[0], partition, 0), pad_table(tables[1], partition, 1)
    parts = []
    for b in range(len(index)):
        r1, r2 = index.block_rows(b)
        A, B = P1[r1], P2[r2]
        parts.append(np.kron(A, np.ones((len(r2), 1))) + np.kron(np.ones((len(r1), 1)), B))
    if not parts:
        return np.zeros((0, partition.d))
    return np.vstack(parts)


@dataclass
class RowSample:
    """Join rows drawn from a BlockIndex, by block position and (l1, l2)"""
    block: np.ndarray
    l1: np.ndarray
    l2: np.ndarray
    rows1: np.ndarray
    rows2: np.ndarray

    def __len__(self) -> int:
        return len(self.block)

    def flat(self, index: BlockIndex) -> np.ndarray:
        """Canonical global row numbers"""
        return index.offsets[self.block] + self.l1 * index.sizes2[self.block] + self.l2


def locate_rows(index: BlockIndex, flat) -> RowSample:
    """Map canonical global row numbers to block coordinates"""
    flat = np.asarray(flat, dtype=np.int64)
    block = np.searchsorted(index.offsets[1:], flat, side="right")
    within = flat - index.offsets[block]
    l1 = within // index.sizes2[block]
    l2 = within % index.sizes2[block]
    return RowSample(block, l1, l2,
                     index.rows1[index.start1[block] + l1],
                     index.rows2[index.start2[block] + l2])


def uniform_join_row_sample(index: BlockIndex, count: int, rng,
                            blocks: Optional[Sequence[int]] = None) -> RowSample:
    """count i.i.d. uniform join rows, with replacement, optionally from some blocks only"""
    rng = np.random.default_rng(rng)
    if blocks is None:
        if index.N == 0:
            raise EmptyJoinError("cannot sample rows from an empty join")
        return locate_rows(index, rng.integers(0, index.N, size=count))
    blocks = np.asarray(blocks, dtype=np.int64)
    cumulative = np.cumsum(index.sizes[blocks])
    if len(blocks) == 0 or cumulative[-1] == 0:
        raise EmptyJoinError("cannot sample rows from an empty set of blocks")
    g = rng.integers(0, cumulative[-1], size=count)
    pos = np.searchsorted(cumulative, g, side="right")
    within = g - np.concatenate([[0], cumulative])[pos]
    block = blocks[pos]
    l1 = within // index.sizes2[block]
    l2 = within % index.sizes2[block]
    return RowSample(block, l1, l2,
                     index.rows1[index.start1[block] + l1],
                     index.rows2[index.start2[block] + l2])


def split_blocks(index: BlockIndex, d: int, gamma: float) -> Tuple[np.ndarray, np.ndarray]:
    """Block positions with max side >= d*gamma (big) and the rest (small)"""
    threshold = d * gamma
    big_mask = np.maximum(index.sizes1, index.sizes2) >= threshold
    big, small = np.flatnonzero(big_mask), np.flatnonzero(~big_mask)
    n_total = sum(index.table_sizes)
    if len(big) > 2 * n_total / threshold:
        raise InvariantViolation(f"{len(big)} big blocks exceeds 2(n1+n2)/(d*gamma)")
    n_small = int(index.sizes[small].sum())
    if n_small > n_total * threshold:
        raise InvariantViolation(f"n_small={n_small} exceeds (n1+n2)*d*gamma")
    logger.debug(f"Split at d*gamma={threshold}: {len(big)} big, {len(small)} small blocks")
    return big, small


def split_by_key_hash(table: Table, columns: Sequence[str], fraction: float = 0.1,
                      seed: int = 0) -> np.ndarray:
    """Validation mask selecting about `fraction` of rows by a hash of their key tuple"""
    if not 0.0 <= fraction <= 1.0:
        raise ConfigError(f"validation fraction must lie in [0, 1], got {fraction}")
    keys = table.keys(columns)
    h = np.zeros(table.n_rows, dtype=np.uint64)
    for c in range(keys.shape[1]):
        h = hash64(seed, 7 + c, keys[:, c].astype(np.uint64) ^ h)
    u = (h >> np.uint64(11)).astype(np.float64) / float(1 << 53)
    return u < fraction


@dataclass
class TwoTableJoin:
    """Join handle: tables, block index, partition and padded tables"""
    tables: Tuple[Table, Table]
    key_columns: Tuple[str, ...]
    index: BlockIndex
    partition: ColumnPartition
    padded: Tuple[np.ndarray, np.ndarray]

    @classmethod
    def build(cls, T1: Table, T2: Table, key_columns: Optional[Sequence[str]] = None) -> "TwoTableJoin":
        if key_columns is None:
            key_columns = [c for c in T1.columns if c in T2.columns]
        key_columns = tuple(key_columns)
        index = build_block_index(T1, T2, key_columns)
        partition = ColumnPartition.for_tables([T1, T2])
        padded = (pad_table(T1, partition, 0), pad_table(T2, partition, 1))
        return cls((T1, T2), key_columns, index, partition, padded)

    @property
    def N(self) -> int:
        return self.index.N

    @property
    def d(self) -> int:
        return self.partition.d

    @property
    def columns(self) -> Tuple[str, ...]:
        return self.partition.columns

    def nnz(self) -> int:
        return int(np.count_nonzero(self.tables[0].data) + np.count_nonzero(self.tables[1].data))

    def block(self, b: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Padded block tables (A, B) and their table row ids"""
        r1, r2 = self.index.block_rows(b)
        return self.padded[0][r1], self.padded[1][r2], r1, r2

    def rows(self, sample: RowSample) -> np.ndarray:
        return self.padded[0][sample.rows1] + self.padded[1][sample.rows2]

    def materialize(self, cap: int = DEFAULT_MATERIALIZE_CAP) -> np.ndarray:
        return materialize_join(self.index, self.partition, self.tables, cap)

    def column_indices(self, names: Sequence[str]) -> List[int]:
        return [self.partition.index(c) for c in names]

    def to_query(self):
        """Same join as a general acyclic query"""
        from modules.general_join import JoinQuery
        shared = tuple(c for c in self.tables[0].columns if c in self.tables[1].columns)
        if set(shared) != set(self.key_columns):
            raise ConfigError(f"join keys {self.key_columns} differ from the shared columns {shared}; "
                              "a natural-join query cannot express it")
        return JoinQuery(list(self.tables))

    def describe(self) -> Dict[str, int]:
        return {
            "n1": self.tables[0].n_rows,
            "n2": self.tables[1].n_rows,
            "d": self.d,
            "blocks": len(self.index),
            "N": self.N,
        }
