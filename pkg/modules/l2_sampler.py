"""
L2 Sampler - Row sampling from J*Y proportional to squared row norms
Per-block binary trees over padded table rows let a join row be drawn
in O(log N) without materializing the join
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from modules.errors import DimensionMismatchError, ZeroMassError
from modules.join_core import TwoTableJoin

logger = logging.getLogger(__name__)

MASS_TOLERANCE = 1e-12


def leaf_vectors(a: np.ndarray, side: int) -> np.ndarray:
    """3r-vectors whose cross inner products are squared row norms

    side 0 gives (1, 2a, a^2) per output column, side 1 gives (b^2, b, 1), so
    <v1(a), v2(b)> = sum_q (a_q + b_q)^2.
    """
    ones = np.ones_like(a)
    if side == 0:
        return np.hstack([ones, 2.0 * a, a * a])
    return np.hstack([a * a, a, ones])


@dataclass
class BlockTrees:
    """Complete binary trees for one table, packed for all blocks

    Node i (1-based heap numbering) of block b lives at nodes[base[b] + i];
    leaves start at i = cap[b].
    """
    nodes: np.ndarray
    base: np.ndarray
    cap: np.ndarray
    size: np.ndarray

    def root(self, b) -> np.ndarray:
        return self.nodes[self.base[b] + 1]

    def leaf(self, b, l) -> np.ndarray:
        return self.nodes[self.base[b] + self.cap[b] + l]

    def leaves(self, b: int) -> np.ndarray:
        lo = self.base[b] + self.cap[b]
        return self.nodes[lo:lo + self.size[b]]


def _build_trees(leaves: np.ndarray, sizes: np.ndarray) -> BlockTrees:
    width = leaves.shape[1]
    caps = np.ones(len(sizes), dtype=np.int64)
    nonzero = sizes > 1
    caps[nonzero] = 1 << np.ceil(np.log2(sizes[nonzero])).astype(np.int64)
    base = np.concatenate([[0], np.cumsum(2 * caps)])[:-1].astype(np.int64)
    nodes = np.zeros((int((2 * caps).sum()), width))
    starts = np.concatenate([[0], np.cumsum(sizes)])[:-1]
    for b in range(len(sizes)):
        cap, lo = int(caps[b]), int(base[b])
        tree = nodes[lo:lo + 2 * cap]
        tree[cap:cap + sizes[b]] = leaves[starts[b]:starts[b] + sizes[b]]
        level = cap
        while level > 1:
            half = level // 2
            tree[half:level] = tree[level:2 * level:2] + tree[level + 1:2 * level:2]
            level = half
    return BlockTrees(nodes, base, caps, sizes.astype(np.int64))


@dataclass
class SampledRow:
    """One drawn join row and the exact probability of drawing it"""
    block: int
    key: Tuple[int, ...]
    l1: int
    l2: int
    row1: int
    row2: int
    mass: float
    probability: float


@dataclass
class SampleBatch:
    """Vectorized draws; block holds positions in the join's BlockIndex"""
    block: np.ndarray
    l1: np.ndarray
    l2: np.ndarray
    rows1: np.ndarray
    rows2: np.ndarray
    mass: np.ndarray
    probability: np.ndarray

    def __len__(self) -> int:
        return len(self.block)


@dataclass
class SamplerForest:
    join: TwoTableJoin
    blocks: np.ndarray
    r: int
    trees1: BlockTrees
    trees2: BlockTrees
    block_mass: np.ndarray
    total: float

    @property
    def tolerance(self) -> float:
        return MASS_TOLERANCE * self.total

    def _clamp(self, m):
        return np.where(m > self.tolerance, m, 0.0)

    def row_mass(self, pos, l1, l2) -> np.ndarray:
        """<v1, v2> for rows given by forest-local block position and (l1, l2)"""
        v1 = self.trees1.leaf(pos, l1)
        v2 = self.trees2.leaf(pos, l2)
        return np.maximum(np.einsum("ij,ij->i", np.atleast_2d(v1), np.atleast_2d(v2)), 0.0)


def preprocess(join: TwoTableJoin, Y, blocks: Optional[Sequence[int]] = None) -> SamplerForest:
    """Build the per-block trees for J*Y, optionally restricted to some blocks"""
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim == 1:
        Y = Y.reshape(-1, 1)
    if Y.shape[0] != join.d:
        raise DimensionMismatchError(f"Y must have {join.d} rows, got {Y.shape[0]}")
    index = join.index
    blocks = np.arange(len(index)) if blocks is None else np.asarray(blocks, dtype=np.int64)
    a = join.padded[0] @ Y
    b = join.padded[1] @ Y
    rows1 = np.concatenate([index.block_rows(i)[0] for i in blocks]) if len(blocks) else np.zeros(0, dtype=np.int64)
    rows2 = np.concatenate([index.block_rows(i)[1] for i in blocks]) if len(blocks) else np.zeros(0, dtype=np.int64)
    trees1 = _build_trees(leaf_vectors(a[rows1], 0), index.sizes1[blocks])
    trees2 = _build_trees(leaf_vectors(b[rows2], 1), index.sizes2[blocks])
    local = np.arange(len(blocks))
    if len(blocks):
        block_mass = np.einsum("ij,ij->i", trees1.root(local), trees2.root(local))
    else:
        block_mass = np.zeros(0)
    total = float(np.maximum(block_mass, 0.0).sum())
    block_mass = np.where(block_mass > MASS_TOLERANCE * total, block_mass, 0.0)
    logger.debug(f"Sampler forest over {len(blocks)} blocks, r={Y.shape[1]}, total mass {total:.6g}")
    return SamplerForest(join, blocks, Y.shape[1], trees1, trees2, block_mass, total)


def _descend(trees: BlockTrees, pos: np.ndarray, weight: np.ndarray, clamp, rng) -> np.ndarray:
    """Walk from each root to a leaf choosing children by <node, weight>"""
    cur = np.ones(len(pos), dtype=np.int64)
    cap = trees.cap[pos]
    active = np.flatnonzero(cur < cap)
    while len(active):
        left = 2 * cur[active]
        base = trees.base[pos[active]]
        w = weight[active]
        wl = clamp(np.einsum("ij,ij->i", trees.nodes[base + left], w))
        wr = clamp(np.einsum("ij,ij->i", trees.nodes[base + left + 1], w))
        u = rng.random(len(active))
        total = wl + wr
        go_right = (total > 0) & (u * total >= wl)
        cur[active] = left + go_right
        active = active[cur[active] < cap[active]]
    leaf = cur - cap
    return np.minimum(leaf, trees.size[pos] - 1)


def sample_many(forest: SamplerForest, count: int, rng=None) -> SampleBatch:
    """count i.i.d. draws with P[row] = ||(JY)_row||^2 / ||JY||_F^2"""
    if forest.total <= 0 or not np.any(forest.block_mass > 0):
        raise ZeroMassError("J*Y is zero on the sampled blocks; nothing to sample")
    rng = np.random.default_rng(rng)
    cumulative = np.cumsum(forest.block_mass)
    pos = np.searchsorted(cumulative, rng.random(count) * cumulative[-1], side="right")
    pos = np.minimum(pos, len(cumulative) - 1)
    root2 = forest.trees2.root(pos)
    l1 = _descend(forest.trees1, pos, np.atleast_2d(root2), forest._clamp, rng)
    v1 = np.atleast_2d(forest.trees1.leaf(pos, l1))
    l2 = _descend(forest.trees2, pos, v1, forest._clamp, rng)
    mass = forest.row_mass(pos, l1, l2)
    index = forest.join.index
    blocks = forest.blocks[pos]
    rows1 = index.rows1[index.start1[blocks] + l1]
    rows2 = index.rows2[index.start2[blocks] + l2]
    return SampleBatch(blocks, l1, l2, rows1, rows2, mass, mass / forest.total)


def sample(forest: SamplerForest, rng=None) -> SampledRow:
    """Draw one join row with its exact probability"""
    batch = sample_many(forest, 1, rng)
    block = int(batch.block[0])
    return SampledRow(
        block=block,
        key=forest.join.index.key_of(block),
        l1=int(batch.l1[0]),
        l2=int(batch.l2[0]),
        row1=int(batch.rows1[0]),
        row2=int(batch.rows2[0]),
        mass=float(batch.mass[0]),
        probability=float(batch.probability[0]),
    )


def enumerate_nonzero(forest: SamplerForest, min_mass=None) -> List[Tuple[Tuple[int, int, int], float]]:
    """All rows with mass above the floor, found by DFS that skips empty subtrees

    min_mass is one floor for every block or an array with one per forest
    block. An explicit floor replaces the forest-wide tolerance on block mass.
    """
    t1, t2 = forest.trees1, forest.trees2
    if min_mass is None:
        floors = np.full(forest.block_mass.shape, forest.tolerance)
        block_mass = forest.block_mass
    else:
        floors = np.broadcast_to(np.maximum(np.asarray(min_mass, dtype=np.float64), 0.0), forest.block_mass.shape)
        local = np.arange(len(forest.blocks))
        block_mass = np.einsum("ij,ij->i", t1.root(local), t2.root(local)) if len(local) else np.zeros(0)
    found = []
    for pos in np.flatnonzero(block_mass > floors):
        floor = floors[pos]
        root2 = t2.root(pos)
        base1, cap1 = int(t1.base[pos]), int(t1.cap[pos])
        base2, cap2 = int(t2.base[pos]), int(t2.cap[pos])
        stack = [1]
        while stack:
            node = stack.pop()
            if node >= cap1:
                l1 = node - cap1
                v1 = t1.nodes[base1 + node]
                inner = [1]
                while inner:
                    n2 = inner.pop()
                    if n2 >= cap2:
                        found.append(((int(forest.blocks[pos]), l1, n2 - cap2),
                                      float(v1 @ t2.nodes[base2 + n2])))
                        continue
                    for child in (2 * n2 + 1, 2 * n2):
                        if v1 @ t2.nodes[base2 + child] > floor:
                            inner.append(child)
                continue
            for child in (2 * node + 1, 2 * node):
                if t1.nodes[base1 + child] @ root2 > floor:
                    stack.append(child)
    logger.debug(f"Enumerated {len(found)} rows above mass {float(floors.min(initial=0.0)):.3g}")
    return found


def exact_distribution(forest: SamplerForest) -> Tuple[np.ndarray, np.ndarray]:
    """Every row of the forest's blocks as (block, l1, l2) with its probability"""
    ids, probs = [], []
    for pos, block in enumerate(forest.blocks):
        M = forest.trees1.leaves(pos) @ forest.trees2.leaves(pos).T
        M = np.maximum(M, 0.0)
        l1, l2 = np.meshgrid(np.arange(M.shape[0]), np.arange(M.shape[1]), indexing="ij")
        ids.append(np.column_stack([np.full(M.size, block), l1.ravel(), l2.ravel()]))
        probs.append(M.ravel())
    if not ids:
        return np.zeros((0, 3), dtype=np.int64), np.zeros(0)
    probs = np.concatenate(probs)
    total = probs.sum()
    return np.vstack(ids).astype(np.int64), probs / total if total > 0 else probs
