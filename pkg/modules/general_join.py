"""
General Join - Acyclic multi-table joins evaluated without materialization
GYO acyclicity check, inside-out FAQ evaluation over semirings, the exact
gram matrix via FAQ, and DB-sketch algebras (TensorSketch, Kronecker,
counting) evaluated as FAQs over the join tree
"""

import functools
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import scipy.fft
import scipy.linalg
import scipy.sparse as sp

from modules.errors import (
    AlgebraLawError,
    ConfigError,
    CyclicQueryError,
    DataError,
    DimensionMismatchError,
    MaterializationCapError,
)
from modules.join_core import DEFAULT_MATERIALIZE_CAP, ColumnPartition, Table, pad_table
from modules.sketch_kernels import TensorSketchOp, normalize_seed, tensorsketch_rows

logger = logging.getLogger(__name__)

# elements per carrier batch handed to the inside-out engine
BATCH_BUDGET = 1 << 22


class JoinQuery:
    """Natural join of tables on their shared column names"""

    def __init__(self, tables: Sequence[Table]):
        if not tables:
            raise ConfigError("a join query needs at least one table")
        self.tables = list(tables)
        self.partition = ColumnPartition.for_tables(self.tables)
        names = [t.name for t in self.tables]
        if len(set(names)) != len(names):
            raise ConfigError(f"table names must be unique, got {names}")

    @property
    def m(self) -> int:
        return len(self.tables)

    @property
    def d(self) -> int:
        return self.partition.d

    @property
    def columns(self) -> Tuple[str, ...]:
        return self.partition.columns

    def join_columns(self, i: int) -> List[str]:
        """Columns of table i that some other table also has"""
        others = set()
        for j, t in enumerate(self.tables):
            if j != i:
                others.update(t.columns)
        return [c for c in self.tables[i].columns if c in others]

    def padded(self, i: int) -> np.ndarray:
        return pad_table(self.tables[i], self.partition, i)

    def __repr__(self) -> str:
        return " JOIN ".join(f"{t.name}({', '.join(t.columns)})" for t in self.tables)


def _gyo(q: JoinQuery) -> Tuple[bool, List[str], Dict[int, int], List[int]]:
    edges = {i: set(t.columns) for i, t in enumerate(q.tables)}
    parent: Dict[int, int] = {}
    trace: List[str] = []
    changed = True
    while changed:
        changed = False
        counts: Dict[str, int] = {}
        for cols in edges.values():
            for c in cols:
                counts[c] = counts.get(c, 0) + 1
        for i in sorted(edges):
            lonely = sorted(c for c in edges[i] if counts[c] == 1)
            for c in lonely:
                edges[i].discard(c)
                trace.append(f"remove column {c} (only in {q.tables[i].name})")
                changed = True
        for i in sorted(edges):
            host = next((j for j in sorted(edges) if j != i and edges[i] <= edges[j]), None)
            if host is not None:
                del edges[i]
                parent[i] = host
                trace.append(f"remove table {q.tables[i].name} (contained in {q.tables[host].name})")
                changed = True
                break
    return len(edges) <= 1, trace, parent, sorted(edges)


def check_acyclic(q: JoinQuery) -> Tuple[bool, List[str]]:
    """True iff GYO reduction empties the query, with the rule applications"""
    acyclic, trace, _, _ = _gyo(q)
    return acyclic, trace


@dataclass
class JoinPlan:
    """Join tree with DFS-preorder numbering and per-edge key groups

    For a non-root table c, child_gid[c] maps c's rows and parent_gid[c] maps
    its parent's rows into the n_groups[c] key tuples shared on that edge.
    """
    query: JoinQuery
    root: int
    parent: Dict[int, int]
    children: Dict[int, List[int]]
    order: List[int]
    shared: Dict[int, List[str]] = field(default_factory=dict)
    child_gid: Dict[int, np.ndarray] = field(default_factory=dict)
    parent_gid: Dict[int, np.ndarray] = field(default_factory=dict)
    n_groups: Dict[int, int] = field(default_factory=dict)
    trace: List[str] = field(default_factory=list)

    @classmethod
    def build(cls, q: JoinQuery) -> "JoinPlan":
        acyclic, trace, parent, remaining = _gyo(q)
        if not acyclic:
            raise CyclicQueryError(f"query {q!r} is cyclic; only acyclic joins are supported", trace)
        root = remaining[0] if remaining else 0
        children = {i: sorted(c for c, p in parent.items() if p == i) for i in range(q.m)}
        order: List[int] = []
        stack = [root]
        while stack:
            node = stack.pop()
            order.append(node)
            stack.extend(reversed(children[node]))
        plan = cls(q, root, parent, children, order, trace=trace)
        for child, par in parent.items():
            shared = [c for c in q.tables[child].columns if c in q.tables[par].columns]
            if not shared:
                raise DataError(
                    f"tables {q.tables[child].name} and {q.tables[par].name} share no column; "
                    f"cross products are not supported"
                )
            kc, kp = q.tables[child].keys(shared), q.tables[par].keys(shared)
            uniq, inverse = np.unique(np.vstack([kc, kp]), axis=0, return_inverse=True)
            inverse = np.asarray(inverse).reshape(-1)
            plan.shared[child] = shared
            plan.child_gid[child] = inverse[:len(kc)]
            plan.parent_gid[child] = inverse[len(kc):]
            plan.n_groups[child] = len(uniq)
        logger.debug(f"Join plan for {q!r}: root {q.tables[root].name}, order {order}")
        return plan

    @property
    def rho(self):
        """Multiplication order as a nested (left, right) expression over table indices"""
        def expr(node):
            out = node
            for c in self.children[node]:
                out = (out, expr(c))
            return out
        return expr(self.root)


def _indicator(gid: np.ndarray, n_groups: int) -> sp.csr_matrix:
    n = len(gid)
    return sp.csr_matrix((np.ones(n), (gid, np.arange(n))), shape=(n_groups, n))


def _sum_groups(values: np.ndarray, gid: np.ndarray, n_groups: int) -> np.ndarray:
    flat = values.reshape(len(values), -1)
    out = _indicator(gid, n_groups) @ flat
    return np.asarray(out).reshape((n_groups,) + values.shape[1:])


@dataclass(frozen=True)
class Semiring:
    """Commutative semiring with vectorized operations on row-major carrier arrays"""
    name: str
    add: Callable
    mul: Callable
    zero: Any
    one: Any
    dtype: Any = np.float64

    def ones(self, n: int, width: int = 1) -> np.ndarray:
        return np.full((n, width), self.one, dtype=self.dtype)

    def group_reduce(self, values: np.ndarray, gid: np.ndarray, n_groups: int) -> np.ndarray:
        if self.add is np.add:
            return _sum_groups(values, gid, n_groups)
        out = np.full((n_groups,) + values.shape[1:], self.zero, dtype=values.dtype)
        if isinstance(self.add, np.ufunc):
            self.add.at(out, gid, values)
            return out
        for g, v in zip(gid, values):
            out[g] = self.add(out[g], v)
        return out

    def total(self, values: np.ndarray):
        if len(values) == 0:
            return np.full(values.shape[1:], self.zero, dtype=self.dtype)
        if isinstance(self.add, np.ufunc):
            return self.add.reduce(values, axis=0)
        return functools.reduce(self.add, values)


SUM_PRODUCT = Semiring("sum-product", np.add, np.multiply, 0.0, 1.0)
COUNTING = Semiring("counting", np.add, np.multiply, 0, 1, np.int64)
MIN_PLUS = Semiring("min-plus", np.minimum, np.add, np.inf, 0.0)
MAX_PRODUCT = Semiring("max-product", np.maximum, np.multiply, 0.0, 1.0)
BOOLEAN = Semiring("boolean", np.logical_or, np.logical_and, False, True, np.bool_)

SEMIRINGS = {s.name: s for s in (SUM_PRODUCT, COUNTING, MIN_PLUS, MAX_PRODUCT, BOOLEAN)}


def _inside_out(plan: JoinPlan, ring, values: Dict[int, np.ndarray]):
    """Eliminate the join tree leaves-first; node values multiply children in preorder"""
    messages: Dict[int, np.ndarray] = {}
    for node in reversed(plan.order):
        val = values[node]
        for child in plan.children[node]:
            val = ring.mul(val, messages.pop(child)[plan.parent_gid[child]])
        if node == plan.root:
            return ring.total(val)
        messages[node] = ring.group_reduce(val, plan.child_gid[node], plan.n_groups[node])


def _row_values(table: Table, factor, ring: Semiring) -> np.ndarray:
    if factor is None:
        return ring.ones(table.n_rows)
    vals = factor(table) if callable(factor) else factor
    vals = np.asarray(vals)
    if len(vals) != table.n_rows:
        raise DimensionMismatchError(f"factor for {table.name} has {len(vals)} rows, table has {table.n_rows}")
    return vals.reshape(len(vals), 1) if vals.ndim == 1 else vals


def faq_eval(q: JoinQuery, semiring: Semiring, factors: Optional[Sequence] = None,
             plan: Optional[JoinPlan] = None):
    """(+)_{X in J} (x)_i F_i(X_i) by inside-out over the join tree

    factors[i] is an array of per-row carrier values for table i, a callable
    taking the table and returning one, or None for the multiplicative identity.
    """
    plan = plan or JoinPlan.build(q)
    factors = list(factors) if factors is not None else [None] * q.m
    if len(factors) != q.m:
        raise DimensionMismatchError(f"expected {q.m} factors, got {len(factors)}")
    values = {i: _row_values(t, factors[i], semiring) for i, t in enumerate(q.tables)}
    result = _inside_out(plan, semiring, values)
    result = np.asarray(result)
    return result.reshape(()).item() if result.size == 1 else result


def join_size(q: JoinQuery, plan: Optional[JoinPlan] = None) -> int:
    return int(faq_eval(q, COUNTING, plan=plan))


@dataclass
class GramMatrix:
    matrix: np.ndarray
    columns: Tuple[str, ...]
    evaluations: int = 0

    def sub(self, rows: Sequence[int], cols: Sequence[int]) -> np.ndarray:
        return self.matrix[np.ix_(rows, cols)]

    def index(self, name: str) -> int:
        return list(self.columns).index(name)


def gram_via_faq(q: JoinQuery, plan: Optional[JoinPlan] = None, vectorized: bool = True) -> GramMatrix:
    """J^T J with every upper-triangle entry a sum-product FAQ

    The vectorized path evaluates a batch of entries per inside-out pass with
    vector-valued carriers; it counts the same d(d+1)/2 entry evaluations.
    """
    plan = plan or JoinPlan.build(q)
    d = q.d
    owner = np.array([q.partition.owner(c) for c in q.columns])
    padded = [q.padded(i) for i in range(q.m)]
    pairs = [(a, b) for a in range(d) for b in range(a, d)]
    G = np.zeros((d, d))
    if vectorized:
        n_max = max(t.n_rows for t in q.tables) or 1
        step = max(1, BATCH_BUDGET // n_max)
        for lo in range(0, len(pairs), step):
            batch = pairs[lo:lo + step]
            values = {}
            for i in range(q.m):
                vals = np.ones((q.tables[i].n_rows, len(batch)))
                for p, (a, b) in enumerate(batch):
                    if owner[a] == i:
                        vals[:, p] *= padded[i][:, a]
                    if owner[b] == i:
                        vals[:, p] *= padded[i][:, b]
                values[i] = vals
            entries = np.atleast_1d(_inside_out(plan, SUM_PRODUCT, values))
            for p, (a, b) in enumerate(batch):
                G[a, b] = G[b, a] = entries[p]
    else:
        for a, b in pairs:
            factors = []
            for i in range(q.m):
                vals = np.ones(q.tables[i].n_rows)
                if owner[a] == i:
                    vals = vals * padded[i][:, a]
                if owner[b] == i:
                    vals = vals * padded[i][:, b]
                factors.append(vals)
            G[a, b] = G[b, a] = float(faq_eval(q, SUM_PRODUCT, factors, plan))
    logger.info(f"Gram via FAQ: {len(pairs)} entries over {q.m} tables")
    return GramMatrix(G, q.columns, len(pairs))


class DbSketchAlgebra:
    """Row encoders F_j with combine and accumulate operations

    Carriers are arrays with a leading row axis. encode_units gives F_j(e(X_j))
    for every row of table j; encode_rows gives F_j(v(X_j)) for given row values.
    """
    name = "algebra"

    def unit_size(self, j: int) -> int:
        return 1

    def encode_units(self, j: int, n: int) -> np.ndarray:
        raise NotImplementedError

    def encode_rows(self, j: int, values: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def mul(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        return x * y

    def group_reduce(self, values: np.ndarray, gid: np.ndarray, n_groups: int) -> np.ndarray:
        return _sum_groups(values, gid, n_groups)

    def total(self, values: np.ndarray) -> np.ndarray:
        return values.sum(axis=0)

    def zeros(self, dims: Sequence[int], width: int) -> np.ndarray:
        raise NotImplementedError

    def encode_matrix(self, j: int, M: np.ndarray) -> np.ndarray:
        """F_j of an explicit n_j x c matrix"""
        return self.total(self.encode_rows(j, np.asarray(M, dtype=np.float64)))

    def sketch_full(self, dims: Sequence[int], A: np.ndarray) -> np.ndarray:
        """F of an explicit matrix over the product domain, rows in mixed radix of dims"""
        raise NotImplementedError

    def finalize(self, value: np.ndarray) -> np.ndarray:
        return value


class TensorSketchAlgebra(DbSketchAlgebra):
    """TensorSketch held in the frequency domain: combine is a pointwise product"""
    name = "tensor-sketch"

    def __init__(self, op: TensorSketchOp):
        self.op = op
        self.k = op.k
        self.freqs = np.arange(op.k // 2 + 1)

    def unit_size(self, j: int) -> int:
        return len(self.freqs)

    def _spectra(self, j: int, n: int) -> np.ndarray:
        f = self.op.factor(j)
        ids = np.arange(n)
        phase = np.exp(-2j * np.pi * np.outer(f.buckets(ids), self.freqs) / self.k)
        return f.signs(ids)[:, None] * phase

    def encode_units(self, j: int, n: int) -> np.ndarray:
        return self._spectra(j, n)[:, :, None]

    def encode_rows(self, j: int, values: np.ndarray) -> np.ndarray:
        return self._spectra(j, len(values))[:, :, None] * values[:, None, :]

    def zeros(self, dims: Sequence[int], width: int) -> np.ndarray:
        return np.zeros((len(self.freqs), width), dtype=np.complex128)

    def sketch_full(self, dims: Sequence[int], A: np.ndarray) -> np.ndarray:
        A = np.asarray(A, dtype=np.float64)
        row_ids = np.column_stack(np.unravel_index(np.arange(A.shape[0]), tuple(dims)))
        op = TensorSketchOp(self.k, tuple(dims), self.op.seed)
        return scipy.fft.rfft(tensorsketch_rows(op, row_ids, A), n=self.k, axis=0)

    def finalize(self, value: np.ndarray) -> np.ndarray:
        return scipy.fft.irfft(value, n=self.k, axis=0)


class KroneckerAlgebra(DbSketchAlgebra):
    """Identity instantiation: F is the zero-padded matrix itself, combine is Kronecker"""
    name = "kronecker"

    def __init__(self, sizes: Sequence[int]):
        self.sizes = list(sizes)

    def unit_size(self, j: int) -> int:
        return self.sizes[j]

    def encode_units(self, j: int, n: int) -> np.ndarray:
        return np.eye(n)[:, :, None]

    def encode_rows(self, j: int, values: np.ndarray) -> np.ndarray:
        return np.eye(len(values))[:, :, None] * values[:, None, :]

    def mul(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        out = x[:, :, None, :] * y[:, None, :, :]
        return out.reshape(len(x), x.shape[1] * y.shape[1], out.shape[-1])

    def zeros(self, dims: Sequence[int], width: int) -> np.ndarray:
        return np.zeros((int(np.prod(dims)), width))

    def sketch_full(self, dims: Sequence[int], A: np.ndarray) -> np.ndarray:
        return np.asarray(A, dtype=np.float64)


class CountingAlgebra(DbSketchAlgebra):
    """Column sums: F(A) = 1^T A, combine is a scalar product"""
    name = "counting"

    def encode_units(self, j: int, n: int) -> np.ndarray:
        return np.ones((n, 1))

    def encode_rows(self, j: int, values: np.ndarray) -> np.ndarray:
        return np.asarray(values, dtype=np.float64)

    def zeros(self, dims: Sequence[int], width: int) -> np.ndarray:
        return np.zeros(width)

    def sketch_full(self, dims: Sequence[int], A: np.ndarray) -> np.ndarray:
        return np.asarray(A, dtype=np.float64).sum(axis=0)


def check_algebra_laws(algebra: DbSketchAlgebra, dims: Sequence[int] = (2, 3),
                       trials: int = 20, rng=None, width: int = 2) -> List[str]:
    """Randomized checks of linearity, Kronecker factorization and distributivity"""
    rng = np.random.default_rng(rng)
    dims = list(dims)
    n_full = int(np.prod(dims))
    violations = []

    def close(x, y):
        scale = max(np.abs(x).max(initial=0.0), np.abs(y).max(initial=0.0), 1.0)
        return np.allclose(x, y, rtol=1e-9, atol=1e-9 * scale)

    def lift(v):
        return np.asarray(v)[None]

    for t in range(trials):
        A1 = rng.standard_normal((n_full, width))
        A2 = rng.standard_normal((n_full, width))
        lhs = algebra.sketch_full(dims, A1 + A2)
        rhs = algebra.sketch_full(dims, A1) + algebra.sketch_full(dims, A2)
        if not close(lhs, rhs):
            violations.append(f"trial {t}: F(A1 + A2) != F(A1) (+) F(A2)")

        marked = int(rng.integers(len(dims)))
        factors = [rng.standard_normal((n, width if j == marked else 1)) for j, n in enumerate(dims)]
        product = functools.reduce(np.kron, factors)
        combined = functools.reduce(
            algebra.mul, [lift(algebra.encode_matrix(j, M)) for j, M in enumerate(factors)])[0]
        if not close(algebra.sketch_full(dims, product), combined):
            violations.append(f"trial {t}: F(A1 (x) ... (x) Am) != F1(A1) (.) ... (.) Fm(Am)")

        other = min(1, len(dims) - 1)
        a, b, c = (lift(algebra.encode_matrix(j, rng.standard_normal((dims[j], w))))
                   for j, w in ((0, 1), (other, width), (other, width)))
        left = algebra.mul(a, b + c)
        right = algebra.mul(a, b) + algebra.mul(a, c)
        if not close(left, right):
            violations.append(f"trial {t}: A (.) (B (+) C) != (A (.) B) (+) (A (.) C)")
    return violations


def dbsketch_eval(q: JoinQuery, algebra: DbSketchAlgebra, plan: Optional[JoinPlan] = None,
                  intercept: bool = False, check_laws: bool = True, rng=None) -> np.ndarray:
    """F(J) = (+)_i F(J_i), each F(J_i) an FAQ with F_i(v(X_i)) on table i and F_j(e(X_j)) elsewhere

    With intercept, a constant-one column owned by the root table is appended to J.
    """
    if check_laws:
        violations = check_algebra_laws(algebra, dims=[2 + j % 2 for j in range(q.m)], rng=rng)
        if violations:
            raise AlgebraLawError(violations)
    plan = plan or JoinPlan.build(q)
    dims = [t.n_rows for t in q.tables]
    width = q.d + (1 if intercept else 0)
    out = algebra.zeros(dims, width)
    units = {j: algebra.encode_units(j, dims[j]) for j in range(q.m)}
    for i in plan.order:
        cols = list(q.partition.positions(i))
        vals = q.padded(i)[:, cols]
        if intercept and i == plan.root:
            cols.append(q.d)
            vals = np.hstack([vals, np.ones((dims[i], 1))])
        if not cols:
            continue
        step = max(1, BATCH_BUDGET // max(1, max(dims) * algebra.unit_size(i)))
        for lo in range(0, len(cols), step):
            values = dict(units)
            values[i] = algebra.encode_rows(i, vals[:, lo:lo + step])
            part = _inside_out(plan, algebra, values)
            out[..., cols[lo:lo + step]] += part
    logger.info(f"DB-sketch ({algebra.name}) evaluated over {q.m} tables, width {width}")
    return algebra.finalize(out)


def materialize_query(q: JoinQuery, cap: int = DEFAULT_MATERIALIZE_CAP,
                      plan: Optional[JoinPlan] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Row-id tuples (table order) and the N x d join matrix, sorted by row ids in DFS order"""
    plan = plan or JoinPlan.build(q)
    n = join_size(q, plan)
    if n > cap:
        raise MaterializationCapError(n, cap)
    frames = {}
    for i, t in enumerate(q.tables):
        keys = q.join_columns(i)
        frame = pd.DataFrame(t.keys(keys), columns=keys) if keys else pd.DataFrame(index=range(t.n_rows))
        frame[f"__row{i}"] = np.arange(t.n_rows)
        frames[i] = frame
    merged = frames[plan.root]
    for node in plan.order[1:]:
        on = [c for c in q.join_columns(node) if c in merged.columns]
        merged = merged.merge(frames[node], on=on, how="inner")
    row_cols = [f"__row{i}" for i in plan.order]
    merged = merged.sort_values(row_cols, kind="mergesort")
    row_ids = merged[[f"__row{i}" for i in range(q.m)]].to_numpy(dtype=np.int64)
    J = np.zeros((len(row_ids), q.d))
    for i in range(q.m):
        J += q.padded(i)[row_ids[:, i]]
    return row_ids, J


def zero_padded_join(q: JoinQuery, plan: Optional[JoinPlan] = None,
                     cap: int = DEFAULT_MATERIALIZE_CAP) -> np.ndarray:
    """The join over the full product domain, rows in mixed radix of the DFS table order"""
    plan = plan or JoinPlan.build(q)
    dims = [q.tables[i].n_rows for i in plan.order]
    total = int(np.prod(dims))
    if total > cap:
        raise MaterializationCapError(total, cap)
    row_ids, J = materialize_query(q, cap, plan)
    out = np.zeros((total, q.d))
    if len(row_ids):
        out[np.ravel_multi_index(tuple(row_ids[:, plan.order].T), tuple(dims))] = J
    return out


def statistical_dimension(gram, lam: float) -> float:
    """sum_i s_i / (s_i + lambda) over eigenvalues s_i of the gram"""
    if lam < 0:
        raise ConfigError(f"lambda must be non-negative, got {lam}")
    matrix = gram.matrix if isinstance(gram, GramMatrix) else np.asarray(gram, dtype=np.float64)
    eig = np.clip(scipy.linalg.eigvalsh(matrix), 0.0, None)
    if lam == 0:
        return float(np.sum(eig > 1e-12 * max(eig.max(initial=0.0), 1e-300)))
    return float(np.sum(eig / (eig + lam)))


def exact_ridge(gram, U: Sequence[int], target: int, lam: float) -> np.ndarray:
    """argmin ||J_U x - b||^2 + lambda ||x||^2 from the gram, b the target column"""
    if lam < 0:
        raise ConfigError(f"lambda must be non-negative, got {lam}")
    G = gram.matrix if isinstance(gram, GramMatrix) else np.asarray(gram)
    U = list(U)
    A = G[np.ix_(U, U)] + lam * np.eye(len(U))
    rhs = G[U, target]
    try:
        return scipy.linalg.solve(A, rhs, assume_a="pos")
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError, ValueError):
        logger.warning("Ridge normal equations are singular; falling back to least squares")
        return scipy.linalg.lstsq(A, rhs)[0]


@dataclass
class RidgeSketch:
    """Sketched join SJ for a general acyclic query"""
    matrix: np.ndarray
    columns: Tuple[str, ...]
    k: int
    d_lambda: Optional[float]
    seed: int


def ridge_sketch_rows(d_lambda: float, m: int, epsilon: float, constant: float = 4.0,
                      m_power: float = 1.0) -> int:
    """k = constant * d_lambda * m**m_power / epsilon**2

    The worst-case bound scales as m**4 (m_power=4). The default scales
    linearly in m.
    """
    if m_power < 0:
        raise ConfigError(f"m_power must be non-negative, got {m_power}")
    return max(1, math.ceil(constant * max(d_lambda, 1.0) * m ** m_power / epsilon ** 2))


def general_ridge_sketch(q: JoinQuery, epsilon: float, lam: float, seed: int = 0,
                         k: Optional[int] = None, d_lambda: Optional[float] = None,
                         constant: float = 4.0, plan: Optional[JoinPlan] = None,
                         check_laws: bool = True, m_power: float = 1.0) -> RidgeSketch:
    """TensorSketch of the join through the DB-sketch FAQ, sized by the statistical dimension

    Without k or d_lambda the sketch is sized by d, an upper bound on d_lambda.
    """
    if lam < 0:
        raise ConfigError(f"lambda must be non-negative, got {lam}")
    if not 0 < epsilon < 1:
        raise ConfigError(f"epsilon must lie in (0, 1), got {epsilon}")
    seed = normalize_seed(seed)
    if k is None:
        k = ridge_sketch_rows(d_lambda if d_lambda is not None else q.d, q.m, epsilon, constant, m_power)
    op = TensorSketchOp(int(k), tuple(t.n_rows for t in q.tables), seed)
    SJ = dbsketch_eval(q, TensorSketchAlgebra(op), plan, check_laws=check_laws, rng=seed)
    logger.info(f"Ridge sketch: k={k} rows for lambda={lam}, epsilon={epsilon}")
    return RidgeSketch(SJ, q.columns, int(k), d_lambda, seed)
