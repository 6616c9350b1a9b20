"""
Regression - Least squares and ridge regression over joins
Sketch-preconditioned gradient descent on two-table joins using implicit
gram products, with exact FAQ and brute-force baselines
"""

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from modules.errors import ConfigError, DimensionMismatchError, EmptyJoinError, RegressionDivergedError
from modules.general_join import (
    GramMatrix, JoinQuery, exact_ridge, general_ridge_sketch, gram_via_faq, materialize_query,
)
from modules.join_core import DEFAULT_MATERIALIZE_CAP, TwoTableJoin
from modules.sketch_kernels import OsnapOp, derive_seed, normalize_seed, osnap_apply
from modules.two_table_embed import EmbedConfig, embed_join

logger = logging.getLogger(__name__)


class GramOperator:
    """w -> w^T J^T J for a two-table join in O(nnz) per product

    Per block J^(i) = A (x) 1 + 1 (x) B, so w^T J^(i)T J^(i) expands into
    s2 (Aw)^T A + (1^T A w)(1^T B) + (1^T B w)(1^T A) + s1 (Bw)^T B.
    """

    def __init__(self, join: TwoTableJoin):
        self.join = join
        index = join.index
        self.d = join.d
        owner1, owner2 = index.block_of_rows()
        in1, in2 = owner1 >= 0, owner2 >= 0
        self.P1, self.P2 = join.padded[0][in1], join.padded[1][in2]
        self.owner1, self.owner2 = owner1[in1], owner2[in2]
        self.weight1 = index.sizes2[self.owner1].astype(np.float64)
        self.weight2 = index.sizes1[self.owner2].astype(np.float64)
        n_blocks = len(index)
        self.M1 = sp.csr_matrix((np.ones(len(self.owner1)), (self.owner1, np.arange(len(self.owner1)))),
                                shape=(n_blocks, len(self.owner1)))
        self.M2 = sp.csr_matrix((np.ones(len(self.owner2)), (self.owner2, np.arange(len(self.owner2)))),
                                shape=(n_blocks, len(self.owner2)))
        self.colsum1 = np.asarray(self.M1 @ self.P1)
        self.colsum2 = np.asarray(self.M2 @ self.P2)

    def product(self, w) -> np.ndarray:
        w = np.asarray(w, dtype=np.float64)
        if w.shape != (self.d,):
            raise DimensionMismatchError(f"w must have length {self.d}, got shape {w.shape}")
        a = self.P1 @ w
        b = self.P2 @ w
        out = (self.weight1 * a) @ self.P1
        out += (self.M1 @ a) @ self.colsum2
        out += (self.M2 @ b) @ self.colsum1
        out += (self.weight2 * b) @ self.P2
        return out

    def gram(self) -> np.ndarray:
        G = (self.P1 * self.weight1[:, None]).T @ self.P1
        cross = self.colsum1.T @ self.colsum2
        G += cross + cross.T
        G += (self.P2 * self.weight2[:, None]).T @ self.P2
        return G


def implicit_gram_product(join: TwoTableJoin, w, U: Optional[Sequence[int]] = None,
                          operator: Optional[GramOperator] = None) -> np.ndarray:
    """w^T J^T J_U without materializing J"""
    op = operator or GramOperator(join)
    out = op.product(w)
    return out if U is None else out[list(U)]


@dataclass
class RegressionConfig:
    epsilon: float = 0.1
    embed_epsilon: float = 0.5
    iteration_constant: float = 10.0
    step: str = "line-search"
    warm_start: bool = True
    osnap_mult: float = 20.0
    embed: Optional[EmbedConfig] = None
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.epsilon < 1.0:
            raise ConfigError(f"epsilon must lie in (0, 1), got {self.epsilon}")
        if self.step not in ("line-search", "unit"):
            raise ConfigError(f"step must be 'line-search' or 'unit', got {self.step!r}")
        self.seed = normalize_seed(self.seed)

    @property
    def max_iterations(self) -> int:
        return int(self.iteration_constant * math.ceil(math.log2(1.0 / self.epsilon)))


@dataclass
class RegressionProblem:
    """min ||J_U x - b|| with b = J e_target, a column of the join"""
    join: Union[TwoTableJoin, JoinQuery]
    features: Sequence[Union[str, int]]
    target: Union[str, int]
    epsilon: float = 0.1
    seed: int = 0

    def __post_init__(self):
        self.U = [self._resolve(f) for f in self.features]
        self.target_index = self._resolve(self.target)
        if not self.U:
            raise ConfigError("feature set U must be nonempty")
        if self.target_index in self.U:
            raise ConfigError(f"target column {self.target!r} is also a feature")
        if len(set(self.U)) != len(self.U):
            raise ConfigError("feature columns must be distinct")

    def _resolve(self, c) -> int:
        columns = list(self.join.columns)
        if isinstance(c, str):
            if c not in columns:
                raise ConfigError(f"join has no column {c!r}")
            return columns.index(c)
        c = int(c)
        if not 0 <= c < len(columns):
            raise ConfigError(f"column index {c} out of range for {len(columns)} columns")
        return c

    def weights(self, x) -> np.ndarray:
        """w with J w = J_U x - b"""
        w = np.zeros(len(self.join.columns))
        w[self.U] = x
        w[self.target_index] -= 1.0
        return w


@dataclass
class Preconditioner:
    """x = R z maps well-conditioned coordinates z back to feature space"""
    R: np.ndarray
    rank: int
    permutation: np.ndarray


@dataclass
class Solution:
    x: np.ndarray
    residual: float
    iterations: int = 0
    timings: List[Tuple[str, float, int]] = field(default_factory=list)
    history: List[float] = field(default_factory=list)
    objective: Optional[float] = None
    method: str = ""
    sketch_rows: int = 0


def _quadratic(gram: np.ndarray, w: np.ndarray) -> float:
    return float(w @ gram @ w)


def residual_norm(join: TwoTableJoin, U: Sequence[int], target: int, x,
                  operator: Optional[GramOperator] = None) -> float:
    """||J_U x - b|| through one implicit gram product"""
    w = np.zeros(join.d)
    w[list(U)] = x
    w[target] -= 1.0
    sq = float(implicit_gram_product(join, w, operator=operator) @ w)
    return math.sqrt(max(sq, 0.0))


def ridge_objective(gram, U: Sequence[int], target: int, x, lam: float) -> float:
    G = gram.matrix if isinstance(gram, GramMatrix) else np.asarray(gram)
    w = np.zeros(G.shape[0])
    w[list(U)] = x
    w[target] -= 1.0
    return max(_quadratic(G, w), 0.0) + lam * float(np.dot(x, x))


def relative_error(ours: float, baseline: float) -> float:
    """(ours - baseline) / baseline on squared residuals or objectives"""
    if baseline <= 0:
        return 0.0 if ours <= 0 else math.inf
    return (ours - baseline) / baseline


def build_preconditioner(SA: np.ndarray) -> Preconditioner:
    """Pivoted QR of the sketched design; dependent columns get zero rows in R"""
    n_cols = SA.shape[1]
    _, Rq, piv = scipy.linalg.qr(SA, mode="economic", pivoting=True)
    diag = np.abs(np.diag(Rq))
    tol = diag.max(initial=0.0) * max(SA.shape) * np.finfo(float).eps
    rank = int(np.sum(diag > tol))
    if rank < n_cols:
        logger.warning(f"Sketched design has rank {rank} < {n_cols}; dropping dependent columns")
    R = np.zeros((n_cols, rank))
    R[piv[:rank], :] = scipy.linalg.solve_triangular(Rq[:rank, :rank], np.eye(rank))
    return Preconditioner(R, rank, piv)


def solve_regression(p: RegressionProblem, cfg: Optional[RegressionConfig] = None) -> Solution:
    """(1+eps)-approximate least squares by sketch-preconditioned gradient descent"""
    if not isinstance(p.join, TwoTableJoin):
        raise ConfigError("solve_regression needs a two-table join")
    cfg = cfg or RegressionConfig(epsilon=p.epsilon, seed=p.seed)
    join, U, target = p.join, p.U, p.target_index
    if join.N == 0:
        raise EmptyJoinError("cannot regress over an empty join")
    timings = []

    start = time.perf_counter()
    embed_cfg = cfg.embed or EmbedConfig(epsilon=cfg.embed_epsilon, seed=derive_seed(cfg.seed, 11))
    embedding = embed_join(join, embed_cfg)
    timings.extend(embedding.timings)
    SJ = embedding.matrix
    SA, Sb = SJ[:, U], SJ[:, target]
    t = math.ceil(cfg.osnap_mult * len(U) / cfg.embed_epsilon ** 2)
    if SA.shape[0] > t:
        W = OsnapOp(t, SA.shape[0], embed_cfg.osnap_s, derive_seed(cfg.seed, 12))
        WSA = osnap_apply(W, SA)
    else:
        WSA = SA
    pre = build_preconditioner(WSA)
    timings.append(("precondition", time.perf_counter() - start, int(WSA.size)))

    start = time.perf_counter()
    operator = GramOperator(join)
    if cfg.warm_start and SA.shape[0]:
        x = scipy.linalg.lstsq(SA, Sb)[0]
    else:
        x = np.zeros(len(U))
    M = pre.R @ pre.R.T
    b_sq = float(operator.product(p.weights(np.zeros(len(U))))[target] * -1.0)
    floor = 1e-12 * max(b_sq, 1e-300)

    full = operator.product(p.weights(x))
    res_sq = float(full @ p.weights(x))
    history = [max(res_sq, 0.0)]
    growth = 0
    iterations = 0
    for iterations in range(1, cfg.max_iterations + 1):
        grad = full[U]
        direction = -(M @ grad)
        descent = float(grad @ direction)
        if descent >= 0 or not np.any(direction):
            iterations -= 1
            break
        if cfg.step == "unit":
            eta = 1.0
        else:
            w_dir = np.zeros(join.d)
            w_dir[U] = direction
            curvature = float(operator.product(w_dir)[U] @ direction)
            if curvature <= 0:
                iterations -= 1
                break
            eta = -descent / curvature
        x_new = x + eta * direction
        full_new = operator.product(p.weights(x_new))
        res_new = float(full_new @ p.weights(x_new))
        if res_new > res_sq + floor + 1e-9 * res_sq:
            growth += 1
            if growth >= 2:
                history.append(max(res_new, 0.0))
                raise RegressionDivergedError(
                    f"residual grew for 2 consecutive steps at iteration {iterations}",
                    iterations, np.sqrt(history),
                )
        else:
            growth = 0
        improved = res_sq - res_new
        x, full, res_sq = x_new, full_new, res_new
        history.append(max(res_sq, 0.0))
        if improved <= 1e-15 * res_sq + 1e-3 * floor and growth == 0:
            break
    timings.append(("solve", time.perf_counter() - start, join.nnz() * (iterations + 1)))

    residual = residual_norm(join, U, target, x, operator)
    logger.info(f"Regression: {iterations} iterations, residual {residual:.6g}, "
                f"sketch {embedding.k} rows")
    return Solution(x, residual, iterations, timings, [math.sqrt(h) for h in history],
                    method="two-table", sketch_rows=embedding.k)


def _gram_for(p: RegressionProblem) -> GramMatrix:
    query = p.join.to_query() if isinstance(p.join, TwoTableJoin) else p.join
    return gram_via_faq(query)


def solve_exact_faq(p: RegressionProblem, gram: Optional[GramMatrix] = None) -> Solution:
    """Normal equations from the exact gram computed by FAQ"""
    start = time.perf_counter()
    gram = gram or _gram_for(p)
    t_gram = time.perf_counter() - start
    G = gram.matrix
    A = G[np.ix_(p.U, p.U)]
    rhs = G[p.U, p.target_index]
    start = time.perf_counter()
    try:
        x = scipy.linalg.solve(A, rhs, assume_a="sym")
        if not np.all(np.isfinite(x)):
            raise np.linalg.LinAlgError("non-finite solution")
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError, ValueError):
        logger.warning("Gram system is singular; solving by least squares")
        x = scipy.linalg.lstsq(A, rhs)[0]
    objective = ridge_objective(G, p.U, p.target_index, x, 0.0)
    return Solution(x, math.sqrt(objective), 0,
                    [("gram", t_gram, G.size), ("solve", time.perf_counter() - start, A.size)],
                    objective=objective, method="faq-exact")


def solve_materialized(p: RegressionProblem, cap: int = DEFAULT_MATERIALIZE_CAP) -> Solution:
    """Brute force: materialize J and call a dense least-squares solver"""
    start = time.perf_counter()
    if isinstance(p.join, TwoTableJoin):
        J = p.join.materialize(cap)
    else:
        J = materialize_query(p.join, cap)[1]
    A, b = J[:, p.U], J[:, p.target_index]
    x = scipy.linalg.lstsq(A, b)[0] if len(J) else np.zeros(len(p.U))
    residual = float(np.linalg.norm(A @ x - b))
    return Solution(x, residual, 0, [("materialize-solve", time.perf_counter() - start, J.size)],
                    objective=residual ** 2, method="materialize-oracle")


def solve_ridge_sketched(p: RegressionProblem, lam: float, sketch: Optional[np.ndarray] = None,
                         gram: Optional[GramMatrix] = None, method: str = "general",
                         k: Optional[int] = None) -> Solution:
    """Solve (SJ_U^T SJ_U + lambda I) x = SJ_U^T Sb on a join sketch

    The sketch comes from the general DB-sketch path or the two-table
    embedding; a precomputed sketch can be reused across lambda values.
    """
    if lam < 0:
        raise ConfigError(f"lambda must be non-negative, got {lam}")
    timings = []
    start = time.perf_counter()
    if sketch is None:
        if method == "two-table":
            if not isinstance(p.join, TwoTableJoin):
                raise ConfigError("the two-table method needs a two-table join")
            sketch = embed_join(p.join, EmbedConfig(epsilon=max(p.epsilon, 0.01), seed=p.seed)).matrix
        elif method == "general":
            query = p.join.to_query() if isinstance(p.join, TwoTableJoin) else p.join
            sketch = general_ridge_sketch(query, p.epsilon, lam, p.seed, k=k).matrix
        else:
            raise ConfigError(f"unknown ridge method {method!r}")
    timings.append(("sketch", time.perf_counter() - start, int(sketch.size)))

    start = time.perf_counter()
    SA, Sb = sketch[:, p.U], sketch[:, p.target_index]
    A = SA.T @ SA + lam * np.eye(len(p.U))
    rhs = SA.T @ Sb
    try:
        x = scipy.linalg.solve(A, rhs, assume_a="sym")
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError, ValueError):
        logger.warning("Sketched ridge system is singular; solving by least squares")
        x = scipy.linalg.lstsq(A, rhs)[0]
    timings.append(("solve", time.perf_counter() - start, A.size))

    objective = ridge_objective(gram, p.U, p.target_index, x, lam) if gram is not None else None
    residual = math.sqrt(max(objective - lam * float(x @ x), 0.0)) if objective is not None else float("nan")
    return Solution(x, residual, 0, timings, objective=objective, method=f"ridge-{method}",
                    sketch_rows=sketch.shape[0])


def ridge_baseline(p: RegressionProblem, lam: float, gram: Optional[GramMatrix] = None) -> Solution:
    """Exact ridge solution from the FAQ gram"""
    gram = gram or _gram_for(p)
    x = exact_ridge(gram, p.U, p.target_index, lam)
    objective = ridge_objective(gram, p.U, p.target_index, x, lam)
    residual = math.sqrt(max(objective - lam * float(x @ x), 0.0))
    return Solution(x, residual, 0, objective=objective, method="ridge-exact")
