"""
Two Table Embed - Subspace embedding of a two-table join without materializing it
Big blocks are tensor-sketched and compacted; small blocks are sampled by
approximate generalized leverage scores
"""

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import scipy.linalg

from modules.errors import ConfigError
from modules.join_core import Table, TwoTableJoin, split_blocks, uniform_join_row_sample
from modules.l2_sampler import enumerate_nonzero, preprocess, sample_many
from modules.sketch_kernels import (
    CountSketchOp,
    GaussianOp,
    OsnapOp,
    TensorSketchOp,
    countsketch_apply,
    derive_seed,
    gaussian_project,
    normalize_seed,
    osnap_apply,
    tensorsketch_block,
)

logger = logging.getLogger(__name__)

PROVENANCE_COLUMNS = ["source", "block", "l1", "l2", "p"]


@dataclass
class EmbedConfig:
    """Constants of the embedding; every hidden O(.) constant is a field"""
    epsilon: float = 0.5
    mode: str = "dense"
    gamma: Optional[float] = None
    countsketch_mult: float = 40.0
    tensor_mult: float = 10.0
    osnap_s: int = 8
    osnap_mult: float = 20.0
    uniform_mult: float = 4.0
    sample_mult: float = 8.0
    gaussian_mult: float = 4.0
    compaction: bool = True
    kernel_tol: float = 1e-9
    threads: int = 1
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.epsilon < 1.0:
            raise ConfigError(f"epsilon must lie in (0, 1), got {self.epsilon}")
        if self.mode not in ("dense", "sparse"):
            raise ConfigError(f"mode must be 'dense' or 'sparse', got {self.mode!r}")
        if self.gamma is not None and self.gamma < 1:
            raise ConfigError(f"gamma must be at least 1, got {self.gamma}")
        if self.threads < 1:
            raise ConfigError(f"threads must be positive, got {self.threads}")
        self.seed = normalize_seed(self.seed)

    def gamma_for(self, d: int) -> float:
        if self.gamma is not None:
            return float(self.gamma)
        return 1.0 if self.mode == "dense" else float(d)

    def countsketch_rows(self, d: int) -> int:
        return math.ceil(self.countsketch_mult * d * d / self.epsilon ** 2)

    def tensor_rows(self, d: int) -> int:
        return math.ceil(self.tensor_mult * d * d / self.epsilon ** 2)

    def osnap_rows(self, d: int) -> int:
        return math.ceil(self.osnap_mult * d / self.epsilon ** 2)

    def uniform_count(self, n_total: int, d: int) -> int:
        return math.ceil(self.uniform_mult * n_total / self.gamma_for(d))

    def sample_count(self, d: int) -> int:
        g = self.gamma_for(d)
        return math.ceil(self.sample_mult * d * d * g * g * math.log(d + 1) / self.epsilon ** 2)

    def gaussian_cols(self, n: int) -> int:
        return max(1, math.ceil(self.gaussian_mult * math.log(max(n, 2))))


@dataclass
class LeverageEstimate:
    """Estimated generalized leverage scores for a set of small-join rows"""
    tau: np.ndarray
    kernel_escape: np.ndarray


@dataclass
class LeverageModel:
    """Factors from the uniform-sample SVD used to score any small-join row

    Z = V Sigma^+ G scores rows in the sample span; h = (I - V V^T) g detects
    rows with a component outside it.
    """
    V: np.ndarray
    sigma: np.ndarray
    Z: np.ndarray
    h: np.ndarray
    g_norm: float
    sample_size: int
    n_small: int
    kernel_tol: float = 1e-9

    def estimate(self, rows: np.ndarray) -> LeverageEstimate:
        rows = np.atleast_2d(rows)
        alpha = rows @ self.h
        norms = np.linalg.norm(rows, axis=1)
        escape = np.abs(alpha) > self.kernel_tol * norms * self.g_norm
        tau = np.where(escape, 1.0, np.sum((rows @ self.Z) ** 2, axis=1))
        return LeverageEstimate(tau, escape)


@dataclass
class Embedding:
    """Stacked sketch J~ = S* J with per-row provenance"""
    matrix: np.ndarray
    columns: Tuple[str, ...]
    provenance: pd.DataFrame
    timings: List[Tuple[str, float, int]] = field(default_factory=list)
    big_rows: int = 0
    stats: Dict[str, Any] = field(default_factory=dict)

    @property
    def k(self) -> int:
        return self.matrix.shape[0]

    def gram(self) -> np.ndarray:
        return self.matrix.T @ self.matrix

    def big_part(self) -> np.ndarray:
        return self.matrix[:self.big_rows]

    def small_part(self) -> np.ndarray:
        return self.matrix[self.big_rows:]


def _provenance(source, block, l1, l2, p) -> pd.DataFrame:
    n = len(block)
    return pd.DataFrame({
        "source": np.full(n, source, dtype=object),
        "block": np.asarray(block, dtype=np.int64),
        "l1": np.asarray(l1, dtype=np.int64),
        "l2": np.asarray(l2, dtype=np.int64),
        "p": np.asarray(p, dtype=np.float64),
    }, columns=PROVENANCE_COLUMNS)


def _exact_block(join: TwoTableJoin, b: int) -> np.ndarray:
    A, B, _, _ = join.block(b)
    return np.kron(A, np.ones((len(B), 1))) + np.kron(np.ones((len(A), 1)), B)


def _sketch_one_block(join: TwoTableJoin, b: int, t: int, seed: int) -> np.ndarray:
    A, B, ids1, ids2 = join.block(b)
    if len(A) * len(B) <= t:
        return _exact_block(join, b)
    op = TensorSketchOp(t, (join.tables[0].n_rows, join.tables[1].n_rows), derive_seed(seed, int(b)))
    return tensorsketch_block(op, A, B, ids1, ids2)


def embed_big(join: TwoTableJoin, big_blocks: Sequence[int], cfg: EmbedConfig) -> np.ndarray:
    """TensorSketch each big block, stack, then CountSketch the stack to k_cs rows

    Blocks with no more rows than the tensor sketch are kept exactly.
    """
    d = join.d
    big_blocks = np.asarray(big_blocks, dtype=np.int64)
    if len(big_blocks) == 0:
        return np.zeros((0, d))
    t = cfg.tensor_rows(d)
    seed = derive_seed(cfg.seed, 1)
    if cfg.threads > 1 and len(big_blocks) > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            parts = list(pool.map(lambda b: _sketch_one_block(join, b, t, seed), big_blocks))
    else:
        parts = [_sketch_one_block(join, b, t, seed) for b in big_blocks]
    stacked = np.vstack(parts)
    k_cs = cfg.countsketch_rows(d)
    if not cfg.compaction or stacked.shape[0] <= k_cs:
        return stacked
    op = CountSketchOp(k_cs, stacked.shape[0], derive_seed(cfg.seed, 2))
    logger.debug(f"Compacting {stacked.shape[0]} big-block rows to {k_cs}")
    return countsketch_apply(op, stacked)


def shared_tensor_sketch(join: TwoTableJoin, op: TensorSketchOp,
                         blocks: Optional[Sequence[int]] = None) -> np.ndarray:
    """Sum of per-block sketches under one shared operator (no compaction)"""
    blocks = range(len(join.index)) if blocks is None else blocks
    out = np.zeros((op.k, join.d))
    for b in blocks:
        A, B, ids1, ids2 = join.block(b)
        out += tensorsketch_block(op, A, B, ids1, ids2)
    return out


def estimate_leverage(join: TwoTableJoin, small_blocks: Sequence[int], cfg: EmbedConfig) -> LeverageModel:
    """Uniform sample, OSNAP, SVD and Gaussian projection over the small join"""
    d = join.d
    small_blocks = np.asarray(small_blocks, dtype=np.int64)
    n_small = int(join.index.sizes[small_blocks].sum())
    n_total = sum(join.index.table_sizes)
    m = max(1, min(n_small, cfg.uniform_count(n_total, d)))
    draws = uniform_join_row_sample(join.index, m, derive_seed(cfg.seed, 3), blocks=small_blocks)
    sample = join.rows(draws)
    t_os = cfg.osnap_rows(d)
    if m > t_os:
        sample = osnap_apply(OsnapOp(t_os, m, cfg.osnap_s, derive_seed(cfg.seed, 4)), sample)
    _, sigma, Vt = scipy.linalg.svd(sample, full_matrices=False)
    keep = sigma > (sigma.max() * max(sample.shape) * np.finfo(float).eps if sigma.size else 0)
    if not keep.any():
        logger.warning("Uniform sample of the small join is all zero; every nonzero row escapes")
    sigma, V = sigma[keep], Vt[keep].T
    G = GaussianOp(len(sigma), cfg.gaussian_cols(n_small), derive_seed(cfg.seed, 5))
    Z = gaussian_project(G, V / sigma) if len(sigma) else np.zeros((d, 1))
    g = np.random.default_rng(derive_seed(cfg.seed, 6)).standard_normal(d)
    h = g - V @ (V.T @ g)
    logger.info(f"Leverage model: m={m} uniform rows, rank {len(sigma)}, t={Z.shape[1]}")
    return LeverageModel(V, sigma, Z, h, float(np.linalg.norm(g)), m, n_small, cfg.kernel_tol)


def _kernel_escapes(join: TwoTableJoin, small_blocks, model: LeverageModel):
    """Small-join rows with a component outside the sample span"""
    forest = preprocess(join, model.h, small_blocks)
    if forest.total <= 0:
        return np.zeros(0, dtype=np.int64), np.zeros((0, 3), dtype=np.int64), np.zeros((0, join.d))
    index = join.index
    # per-block floor, scaled by the block's largest rows
    reach1 = np.maximum.reduceat(np.linalg.norm(join.padded[0], axis=1)[index.rows1], index.start1)
    reach2 = np.maximum.reduceat(np.linalg.norm(join.padded[1], axis=1)[index.rows2], index.start2)
    reach = (reach1 + reach2)[forest.blocks]
    floor = 1e-12 * (reach * model.g_norm) ** 2
    found = enumerate_nonzero(forest, min_mass=floor)
    if not found:
        return np.zeros(0, dtype=np.int64), np.zeros((0, 3), dtype=np.int64), np.zeros((0, join.d))
    coords = np.array([ids for ids, _ in found], dtype=np.int64)
    block, l1, l2 = coords[:, 0], coords[:, 1], coords[:, 2]
    rows1 = index.rows1[index.start1[block] + l1]
    rows2 = index.rows2[index.start2[block] + l2]
    rows = join.padded[0][rows1] + join.padded[1][rows2]
    escape = model.estimate(rows).kernel_escape
    flat = index.offsets[block] + l1 * index.sizes2[block] + l2
    return flat[escape], coords[escape], rows[escape]


def sample_small(join: TwoTableJoin, small_blocks: Sequence[int], model: LeverageModel,
                 cfg: EmbedConfig) -> Tuple[np.ndarray, pd.DataFrame]:
    """alpha leverage draws plus every kernel-escape row, scaled by 1/sqrt(p)"""
    d = join.d
    alpha = cfg.sample_count(d)
    esc_flat, esc_coords, esc_rows = _kernel_escapes(join, small_blocks, model)
    parts = [esc_rows]
    prov = [_provenance("small-kernel", esc_coords[:, 0], esc_coords[:, 1], esc_coords[:, 2],
                        np.ones(len(esc_coords)))]
    forest = preprocess(join, model.Z, small_blocks)
    if forest.total > 0 and np.any(forest.block_mass > 0):
        draws = sample_many(forest, alpha, derive_seed(cfg.seed, 7))
        index = join.index
        flat = index.offsets[draws.block] + draws.l1 * index.sizes2[draws.block] + draws.l2
        # escape rows are already included exactly; their draws contribute zero
        kept = ~np.isin(flat, esc_flat) & (draws.probability > 0)
        p = alpha * draws.probability[kept]
        rows = join.padded[0][draws.rows1[kept]] + join.padded[1][draws.rows2[kept]]
        parts.append(rows / np.sqrt(p)[:, None])
        prov.append(_provenance("small-sampled", draws.block[kept], draws.l1[kept], draws.l2[kept], p))
        logger.info(f"Sampled {alpha} small rows, kept {int(kept.sum())}, "
                    f"{len(esc_flat)} kernel-escape rows")
    return np.vstack(parts) if parts else np.zeros((0, d)), pd.concat(prov, ignore_index=True)


def _exact_small(join: TwoTableJoin, small_blocks) -> Tuple[np.ndarray, pd.DataFrame]:
    parts, prov = [], []
    for b in small_blocks:
        rows = _exact_block(join, b)
        p, q = join.index.sizes1[b], join.index.sizes2[b]
        l1, l2 = np.divmod(np.arange(p * q), q)
        parts.append(rows)
        prov.append(_provenance("small-exact", np.full(p * q, b), l1, l2, np.ones(p * q)))
    if not parts:
        return np.zeros((0, join.d)), _provenance("small-exact", [], [], [], [])
    return np.vstack(parts), pd.concat(prov, ignore_index=True)


def embed_join(join: TwoTableJoin, cfg: Optional[EmbedConfig] = None) -> Embedding:
    """Run the full embedding on an already indexed join"""
    cfg = cfg or EmbedConfig()
    d = join.d
    timings = []
    if join.N == 0:
        logger.warning("Join is empty; returning an empty embedding")
        return Embedding(np.zeros((0, d)), join.columns, _provenance("big", [], [], [], []), timings)

    start = time.perf_counter()
    gamma = cfg.gamma_for(d)
    big, small = split_blocks(join.index, d, gamma)
    n_small = int(join.index.sizes[small].sum())
    timings.append(("split", time.perf_counter() - start, len(join.index)))

    start = time.perf_counter()
    big_matrix = embed_big(join, big, cfg)
    big_nnz = int(sum(join.index.sizes1[big]) + sum(join.index.sizes2[big])) * d
    timings.append(("big", time.perf_counter() - start, big_nnz))
    big_prov = _provenance("big", np.full(len(big_matrix), -1), np.full(len(big_matrix), -1),
                           np.full(len(big_matrix), -1), np.ones(len(big_matrix)))

    start = time.perf_counter()
    alpha = cfg.sample_count(d)
    if n_small == 0:
        small_matrix, small_prov = np.zeros((0, d)), _provenance("small-exact", [], [], [], [])
    elif n_small <= alpha:
        small_matrix, small_prov = _exact_small(join, small)
    else:
        model = estimate_leverage(join, small, cfg)
        timings.append(("leverage", time.perf_counter() - start, n_small))
        start = time.perf_counter()
        small_matrix, small_prov = sample_small(join, small, model, cfg)
    timings.append(("small", time.perf_counter() - start, n_small))

    matrix = np.vstack([big_matrix, small_matrix])
    provenance = pd.concat([big_prov, small_prov], ignore_index=True)
    stats = {
        "N": join.N,
        "d": d,
        "gamma": gamma,
        "big_blocks": int(len(big)),
        "small_blocks": int(len(small)),
        "n_small": n_small,
        "alpha": alpha,
        "k": int(matrix.shape[0]),
    }
    logger.info(f"Embedding: N={join.N} -> k={matrix.shape[0]} rows "
                f"({len(big)} big blocks, n_small={n_small})")
    return Embedding(matrix, join.columns, provenance, timings, len(big_matrix), stats)


def subspace_embed(T1: Table, T2: Table, key_columns: Sequence[str],
                   cfg: Optional[EmbedConfig] = None) -> Embedding:
    """Embedding S*J of T1 join T2 on the given key columns"""
    return embed_join(TwoTableJoin.build(T1, T2, key_columns), cfg)


def exact_generalized_leverage(A, B, rel_tol: float = 1e-10) -> np.ndarray:
    """tau_i = A_i (B^T B)^+ A_i^T, and 1 for rows leaving range(B^T B)"""
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    B = np.atleast_2d(np.asarray(B, dtype=np.float64))
    _, s, Vt = scipy.linalg.svd(B, full_matrices=False)
    keep = s > rel_tol * (s.max() if s.size else 0.0)
    V, s = Vt[keep].T, s[keep]
    coeffs = A @ V
    residual = A - coeffs @ V.T
    tau = np.sum((coeffs / s) ** 2, axis=1)
    escape = np.linalg.norm(residual, axis=1) > 1e-9 * np.maximum(np.linalg.norm(A, axis=1), 1e-300)
    return np.where(escape, 1.0, tau)


def leverage_sum(model: LeverageModel, join: TwoTableJoin, small_blocks: Sequence[int]) -> float:
    """Sum of estimated scores over every small-join row (small instances only)"""
    total = 0.0
    for b in small_blocks:
        total += float(model.estimate(_exact_block(join, b)).tau.sum())
    return total
