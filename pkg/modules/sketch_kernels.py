"""
Sketch Kernels - Seeded random sketches used by every embedding path
CountSketch, OSNAP, TensorSketch and Gaussian projection operators
"""

import logging
from dataclasses import dataclass
from functools import cached_property
from typing import Tuple

import numpy as np
import scipy.fft
import scipy.linalg
import scipy.sparse as sp

from modules.errors import ConfigError, DimensionMismatchError

logger = logging.getLogger(__name__)

# 64-bit seed; operators built from equal seeds and parameters are identical
Seed = int

_MASK64 = (1 << 64) - 1
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_STREAM = np.uint64(0xD1B54A32D192ED03)
_S30, _S27, _S31, _S63 = np.uint64(30), np.uint64(27), np.uint64(31), np.uint64(63)

# hash streams inside one operator
_BUCKET_STREAM = 0
_SIGN_STREAM = 1


def _mix(z):
    z = z + _GOLDEN
    z = (z ^ (z >> _S30)) * _MIX1
    z = (z ^ (z >> _S27)) * _MIX2
    return z ^ (z >> _S31)


def normalize_seed(value) -> Seed:
    """Validate a user seed and return it as a 64-bit unsigned integer"""
    try:
        seed = int(value)
    except (TypeError, ValueError):
        raise ConfigError(f"seed must be an integer, got {value!r}")
    if seed < 0 or seed > _MASK64:
        raise ConfigError(f"seed must fit in 64 unsigned bits, got {seed}")
    return seed


def hash64(seed: Seed, stream: int, ids) -> np.ndarray:
    """Splitmix hash of integer ids under (seed, stream)"""
    ids = np.asarray(ids).astype(np.uint64)
    with np.errstate(over="ignore"):
        base = _mix(np.uint64(seed & _MASK64) ^ (np.uint64(stream) * _STREAM))
        return _mix(ids * _GOLDEN + base)


def derive_seed(seed: Seed, stream: int) -> Seed:
    """Independent sub-seed for one component of a run"""
    return int(hash64(seed, 0x5EED + stream, np.zeros(1, dtype=np.uint64))[0])


def _as_ids(ids, n: int, rows: int) -> np.ndarray:
    if ids is None:
        if rows != n:
            raise DimensionMismatchError(f"operator expects {n} input rows, got {rows}")
        return np.arange(rows, dtype=np.int64)
    ids = np.asarray(ids, dtype=np.int64).ravel()
    if len(ids) != rows:
        raise DimensionMismatchError(f"{len(ids)} ids given for {rows} rows")
    if rows and (ids.min() < 0 or ids.max() >= n):
        raise DimensionMismatchError(f"ids must lie in [0, {n})")
    return ids


def _as_2d(A):
    if sp.issparse(A):
        return A.tocsr(), False
    A = np.asarray(A, dtype=np.float64)
    if A.ndim == 1:
        return A.reshape(-1, 1), True
    return A, False


def _dense(M) -> np.ndarray:
    if sp.issparse(M):
        return M.toarray()
    return np.asarray(M)


@dataclass(frozen=True)
class CountSketchOp:
    """k x n CountSketch with one signed nonzero per input column"""
    k: int
    n: int
    seed: Seed = 0

    def __post_init__(self):
        if self.k < 1 or self.n < 0:
            raise ConfigError(f"invalid CountSketch shape k={self.k}, n={self.n}")

    def buckets(self, ids) -> np.ndarray:
        h = hash64(self.seed, _BUCKET_STREAM, ids)
        return (h % np.uint64(self.k)).astype(np.int64)

    def signs(self, ids) -> np.ndarray:
        h = hash64(self.seed, _SIGN_STREAM, ids)
        return 1.0 - 2.0 * (h >> _S63).astype(np.float64)


@dataclass(frozen=True)
class OsnapOp:
    """t x n OSNAP with s nonzeros of magnitude 1/sqrt(s) per input column"""
    t: int
    n: int
    s: int = 8
    seed: Seed = 0

    def __post_init__(self):
        if self.s < 1 or self.t < 1 or self.n < 0:
            raise ConfigError(f"invalid OSNAP shape t={self.t}, n={self.n}, s={self.s}")
        # one nonzero per stripe, so t must split into s equal stripes
        if self.t % self.s:
            object.__setattr__(self, "t", self.t + self.s - self.t % self.s)

    @property
    def stripe(self) -> int:
        return self.t // self.s

    def entries(self, ids) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(row, column position, value) triples, s per id"""
        ids = np.asarray(ids, dtype=np.int64)
        rows, cols, vals = [], [], []
        scale = 1.0 / np.sqrt(self.s)
        positions = np.arange(len(ids), dtype=np.int64)
        for r in range(self.s):
            sub = CountSketchOp(self.stripe, max(self.n, 1), derive_seed(self.seed, r))
            rows.append(r * self.stripe + sub.buckets(ids))
            cols.append(positions)
            vals.append(scale * sub.signs(ids))
        return np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)


@dataclass(frozen=True)
class TensorSketchOp:
    """TensorSketch to k rows over a product of factor domains"""
    k: int
    dims: Tuple[int, ...]
    seed: Seed = 0

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(x) for x in self.dims))
        if self.k < 1 or not self.dims:
            raise ConfigError(f"invalid TensorSketch k={self.k}, dims={self.dims}")

    def factor(self, j: int) -> CountSketchOp:
        return CountSketchOp(self.k, self.dims[j], derive_seed(self.seed, 100 + j))


@dataclass(frozen=True)
class GaussianOp:
    """d x t Gaussian matrix with entry variance 1/t"""
    d: int
    t: int
    seed: Seed = 0

    @cached_property
    def matrix(self) -> np.ndarray:
        rng = np.random.default_rng(self.seed)
        return rng.normal(0.0, 1.0 / np.sqrt(self.t), size=(self.d, self.t))


def countsketch_matrix(op: CountSketchOp, ids=None) -> sp.csr_matrix:
    """Explicit sparse k x n operator (or k x len(ids) over the given ids)"""
    n = op.n if ids is None else len(np.ravel(ids))
    ids = _as_ids(ids, op.n, n)
    cols = np.arange(n, dtype=np.int64)
    return sp.csr_matrix((op.signs(ids), (op.buckets(ids), cols)), shape=(op.k, n))


def osnap_matrix(op: OsnapOp, ids=None) -> sp.csr_matrix:
    n = op.n if ids is None else len(np.ravel(ids))
    ids = _as_ids(ids, op.n, n)
    rows, cols, vals = op.entries(ids)
    return sp.csr_matrix((vals, (rows, cols)), shape=(op.t, n))


def countsketch_apply(op: CountSketchOp, A, ids=None) -> np.ndarray:
    """Apply a CountSketch to the rows of A in O(nnz(A))"""
    A, was_vector = _as_2d(A)
    S = countsketch_matrix(op, _as_ids(ids, op.n, A.shape[0]))
    out = _dense(S @ A)
    return out.ravel() if was_vector else out


def osnap_apply(op: OsnapOp, A, ids=None) -> np.ndarray:
    """Apply an OSNAP transform to the rows of A"""
    A, was_vector = _as_2d(A)
    S = osnap_matrix(op, _as_ids(ids, op.n, A.shape[0]))
    out = _dense(S @ A)
    return out.ravel() if was_vector else out


def _cyclic(*pairs, k: int) -> np.ndarray:
    """Sum over pairs of length-k cyclic convolutions along axis 0"""
    acc = None
    for x, y in pairs:
        term = scipy.fft.rfft(x, n=k, axis=0) * scipy.fft.rfft(y, n=k, axis=0)
        acc = term if acc is None else acc + term
    return scipy.fft.irfft(acc, n=k, axis=0)


def tensorsketch_pair(op: TensorSketchOp, a, b) -> np.ndarray:
    """TensorSketch of the Kronecker product a (x) b without forming it"""
    if len(op.dims) != 2:
        raise DimensionMismatchError("tensorsketch_pair needs a two-factor operator")
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if (len(a), len(b)) != op.dims:
        raise DimensionMismatchError(f"expected factor dims {op.dims}, got {(len(a), len(b))}")
    ca = countsketch_apply(op.factor(0), a)
    cb = countsketch_apply(op.factor(1), b)
    return _cyclic((ca, cb), k=op.k)


def tensorsketch_block(op: TensorSketchOp, A, B, ids1=None, ids2=None) -> np.ndarray:
    """Sketch of the block A (x) 1 + 1 (x) B, column by column, never materialized

    Rows of the block are indexed (l1, l2) with l1 over A and l2 over B. ids1/ids2
    give the factor-domain ids of those rows (global table row ids), so one
    operator hashes a table row identically in every block.
    """
    A, _ = _as_2d(A)
    B, _ = _as_2d(B)
    if A.shape[1] != B.shape[1]:
        raise DimensionMismatchError(f"column counts differ: {A.shape[1]} vs {B.shape[1]}")
    f1, f2 = op.factor(0), op.factor(1)
    ids1 = _as_ids(ids1, f1.n, A.shape[0])
    ids2 = _as_ids(ids2, f2.n, B.shape[0])
    ca = countsketch_apply(f1, A, ids1)
    one_a = countsketch_apply(f1, np.ones((A.shape[0], 1)), ids1)
    cb = countsketch_apply(f2, B, ids2)
    one_b = countsketch_apply(f2, np.ones((B.shape[0], 1)), ids2)
    return _cyclic((ca, one_b), (one_a, cb), k=op.k)


def tensorsketch_rows(op: TensorSketchOp, row_ids, J) -> np.ndarray:
    """Induced CountSketch on explicit join rows: hash sum_j h_j mod k, sign prod_j s_j"""
    row_ids = np.asarray(row_ids, dtype=np.int64)
    J, _ = _as_2d(J)
    if row_ids.ndim != 2 or row_ids.shape != (J.shape[0], len(op.dims)):
        raise DimensionMismatchError(
            f"row ids must be {J.shape[0]}x{len(op.dims)}, got {row_ids.shape}"
        )
    buckets = np.zeros(J.shape[0], dtype=np.int64)
    signs = np.ones(J.shape[0])
    for j in range(len(op.dims)):
        f = op.factor(j)
        ids = _as_ids(row_ids[:, j], f.n, J.shape[0])
        buckets += f.buckets(ids)
        signs *= f.signs(ids)
    S = sp.csr_matrix((signs, (buckets % op.k, np.arange(J.shape[0]))), shape=(op.k, J.shape[0]))
    return _dense(S @ J)


def gaussian_project(op: GaussianOp, x) -> np.ndarray:
    """x^T G for a vector (or each row of a matrix) x"""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != op.d:
        raise DimensionMismatchError(f"expected dimension {op.d}, got {x.shape[-1]}")
    return x @ op.matrix


def spectral_distortion(gram, sketch_gram, rel_tol: float = 1e-10) -> np.ndarray:
    """Eigenvalues of (J^T J)^{+/2} (S J)^T (S J) (J^T J)^{+/2} on range(J^T J)"""
    gram = np.asarray(gram, dtype=np.float64)
    sketch_gram = np.asarray(sketch_gram, dtype=np.float64)
    if gram.shape != sketch_gram.shape:
        raise DimensionMismatchError(f"gram shapes differ: {gram.shape} vs {sketch_gram.shape}")
    w, V = scipy.linalg.eigh(gram)
    if w.size == 0 or w.max() <= 0:
        return np.zeros(0)
    keep = w > rel_tol * w.max()
    P = V[:, keep] / np.sqrt(w[keep])
    return scipy.linalg.eigvalsh(P.T @ sketch_gram @ P)


def is_subspace_embedding(eigs, epsilon: float) -> bool:
    eigs = np.asarray(eigs)
    return bool(np.all(eigs >= (1 - epsilon) ** 2) and np.all(eigs <= (1 + epsilon) ** 2))
