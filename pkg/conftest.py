"""
Shared fixtures for the JoinSketch test suite
"""

import os

import numpy as np
import pytest

from modules.join_core import Table, TwoTableJoin


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow sweeps")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: acceptance-scale test, skipped unless --runslow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow") or os.getenv("JOINSKETCH_RUN_SLOW") == "1":
        return
    skip = pytest.mark.skip(reason="needs --runslow or JOINSKETCH_RUN_SLOW=1")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


# T1(f1, f2) joined with T2(f2, f3) on f2:
# rows (1,1,1), (1,1,2), (2,1,1), (2,1,2), (3,2,3)
TOY_GRAM = np.array([[19.0, 12.0, 18.0], [12.0, 8.0, 12.0], [18.0, 12.0, 19.0]])
TOY_ROW_MASS = np.array([3.0, 6.0, 6.0, 9.0, 22.0])


@pytest.fixture
def toy_tables():
    T1 = Table("T1", ["f1", "f2"], [[1, 1], [2, 1], [3, 2]], ("f2",))
    T2 = Table("T2", ["f2", "f3"], [[1, 1], [1, 2], [2, 3]], ("f2",))
    return T1, T2


@pytest.fixture
def toy_join(toy_tables):
    return TwoTableJoin.build(*toy_tables)


def make_two_tables(seed: int, n1: int = 40, n2: int = 30, cardinality: int = 6,
                    d1: int = 2, d2: int = 2, skew: float = 0.0):
    """T1(k, a0..) and T2(k, b0..) with integer keys and gaussian features"""
    rng = np.random.default_rng(seed)

    def keys(n):
        if skew == 0:
            return rng.integers(0, cardinality, size=n)
        w = 1.0 / np.arange(1, cardinality + 1) ** skew
        return rng.choice(cardinality, size=n, p=w / w.sum())

    T1 = Table("T1", ["k"] + [f"a{i}" for i in range(d1)],
               np.column_stack([keys(n1), rng.standard_normal((n1, d1))]), ("k",))
    T2 = Table("T2", ["k"] + [f"b{i}" for i in range(d2)],
               np.column_stack([keys(n2), rng.standard_normal((n2, d2))]), ("k",))
    return T1, T2


def make_query_tables(seed: int, shape: str = "chain", m: int = 3, n_max: int = 30, cardinality: int = 4):
    """Random acyclic query: chain, star, or a composite-key pair plus a chain tail"""
    rng = np.random.default_rng(seed)

    def table(name, keys, d):
        n = int(rng.integers(1, n_max + 1))
        cols = [rng.integers(0, cardinality, size=n) for _ in keys]
        feats = [f"{name}_x{q}" for q in range(d)]
        data = np.column_stack(cols + [rng.standard_normal((n, d))]) if d or cols else np.zeros((n, 0))
        return Table(name, list(keys) + feats, data, tuple(keys))

    if shape == "chain":
        return [table(f"t{j}", ([f"k{j - 1}"] if j else []) + ([f"k{j}"] if j < m - 1 else []), 1)
                for j in range(m)]
    if shape == "star":
        center = table("c", [f"k{j}" for j in range(m - 1)], 1)
        return [center] + [table(f"l{j}", [f"k{j}"], 1) for j in range(m - 1)]
    if shape == "composite":
        first = table("t0", ["a", "b"], 1)
        rest = [table("t1", ["a", "b", "k1"], 1)]
        rest += [table(f"t{j}", [f"k{j - 1}"] + ([f"k{j}"] if j < m - 1 else []), 1) for j in range(2, m)]
        return [first] + rest
    raise ValueError(shape)


@pytest.fixture
def two_table_factory():
    return make_two_tables


@pytest.fixture
def query_factory():
    return make_query_tables
