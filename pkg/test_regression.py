import math

import numpy as np
import pytest

from conftest import TOY_GRAM
from modules import regression
from modules.errors import ConfigError, DimensionMismatchError, EmptyJoinError, RegressionDivergedError
from modules.general_join import JoinQuery, gram_via_faq
from modules.ingest import SynthShape, synth_tables
from modules.join_core import Table, TwoTableJoin
from modules.regression import (
    GramOperator,
    Preconditioner,
    RegressionConfig,
    RegressionProblem,
    build_preconditioner,
    implicit_gram_product,
    relative_error,
    residual_norm,
    ridge_baseline,
    ridge_objective,
    solve_exact_faq,
    solve_materialized,
    solve_regression,
    solve_ridge_sketched,
)

TOY_X = 18.0 / 19.0
TOY_RESIDUAL = math.sqrt(37.0 / 19.0)


def _chain_query(seed=0, n=30, cardinality=3):
    rng = np.random.default_rng(seed)

    def keys():
        return rng.integers(0, cardinality, size=n)

    t0 = Table("t0", ["k0", "t0_x0"], np.column_stack([keys(), rng.standard_normal(n)]), ("k0",))
    t1 = Table("t1", ["k0", "k1", "t1_x0"], np.column_stack([keys(), keys(), rng.standard_normal(n)]),
               ("k0", "k1"))
    t2 = Table("t2", ["k1", "t2_x0"], np.column_stack([keys(), rng.standard_normal(n)]), ("k1",))
    return JoinQuery([t0, t1, t2])


def test_gram_operator_matches_materialized_join(two_table_factory):
    join = TwoTableJoin.build(*two_table_factory(0))
    J = join.materialize()
    op = GramOperator(join)
    np.testing.assert_allclose(op.gram(), J.T @ J, rtol=1e-10, atol=1e-8)
    w = np.random.default_rng(1).standard_normal(join.d)
    np.testing.assert_allclose(op.product(w), w @ J.T @ J, rtol=1e-10, atol=1e-8)
    np.testing.assert_allclose(implicit_gram_product(join, w, U=[0, 2]), (w @ J.T @ J)[[0, 2]],
                               rtol=1e-10, atol=1e-8)


def test_gram_operator_on_toy_join(toy_join):
    np.testing.assert_allclose(GramOperator(toy_join).gram(), TOY_GRAM)


def test_gram_operator_rejects_bad_shape(toy_join):
    with pytest.raises(DimensionMismatchError):
        GramOperator(toy_join).product(np.ones(2))


def test_problem_resolves_names_and_indices(toy_join):
    p = RegressionProblem(toy_join, ["f1"], "f3")
    assert p.U == [0] and p.target_index == 2
    assert RegressionProblem(toy_join, [0, 1], 2).U == [0, 1]
    np.testing.assert_array_equal(p.weights([2.0]), [2.0, 0.0, -1.0])


@pytest.mark.parametrize("features,target", [
    ([], "f3"),
    (["f1", "f3"], "f3"),
    (["f1", "f1"], "f3"),
    (["nope"], "f3"),
    ([7], "f3"),
])
def test_problem_rejects_bad_columns(toy_join, features, target):
    with pytest.raises(ConfigError):
        RegressionProblem(toy_join, features, target)


def test_config_validation_and_iteration_cap():
    assert RegressionConfig(epsilon=0.1).max_iterations == 40
    assert RegressionConfig(epsilon=0.5).max_iterations == 10
    with pytest.raises(ConfigError):
        RegressionConfig(step="newton")
    with pytest.raises(ConfigError):
        RegressionConfig(epsilon=0.0)


def test_toy_regression_by_every_method(toy_join):
    p = RegressionProblem(toy_join, ["f1"], "f3")
    for solution in (solve_regression(p), solve_exact_faq(p), solve_materialized(p)):
        np.testing.assert_allclose(solution.x, [TOY_X], rtol=1e-9)
        assert solution.residual == pytest.approx(TOY_RESIDUAL, rel=1e-9)
    assert solve_exact_faq(p).method == "faq-exact"
    assert solve_materialized(p).objective == pytest.approx(37.0 / 19.0)


def test_unit_step_from_zero(toy_join):
    p = RegressionProblem(toy_join, ["f1"], "f3")
    solution = solve_regression(p, RegressionConfig(step="unit", warm_start=False))
    assert 1 <= solution.iterations <= 2
    np.testing.assert_allclose(solution.x, [TOY_X], rtol=1e-9)
    assert solution.history[0] == pytest.approx(math.sqrt(19.0))


def test_growing_residual_raises(monkeypatch, toy_join):
    def overshoot(SA):
        n = SA.shape[1]
        return Preconditioner(10.0 * np.eye(n), n, np.arange(n))

    monkeypatch.setattr(regression, "build_preconditioner", overshoot)
    p = RegressionProblem(toy_join, ["f1"], "f3")
    with pytest.raises(RegressionDivergedError) as err:
        solve_regression(p, RegressionConfig(step="unit", warm_start=False))
    assert err.value.iterations == 2
    assert err.value.residuals[-1] > err.value.residuals[0]


def test_sketched_regression_is_near_optimal(two_table_factory):
    join = TwoTableJoin.build(*two_table_factory(1, n1=1500, n2=1500, cardinality=700, d1=2, d2=1))
    p = RegressionProblem(join, ["k", "a0", "b0"], "a1")
    exact = solve_exact_faq(p)
    solution = solve_regression(p, RegressionConfig(epsilon=0.1, seed=3))
    assert solution.sketch_rows < join.N
    assert solution.residual <= 1.1 * exact.residual
    assert solution.residual >= exact.residual * (1 - 1e-9)
    assert all(b <= a * (1 + 1e-9) for a, b in zip(solution.history, solution.history[1:]))
    assert [t[0] for t in solution.timings][-2:] == ["precondition", "solve"]


def test_solve_regression_needs_two_tables(toy_tables):
    p = RegressionProblem(JoinQuery(list(toy_tables)), ["f1"], "f3")
    with pytest.raises(ConfigError):
        solve_regression(p)
    np.testing.assert_allclose(solve_exact_faq(p).x, [TOY_X])


def test_empty_join_cannot_be_regressed():
    T1 = Table("A", ["k", "x"], [[1, 1.0]], ("k",))
    T2 = Table("B", ["k", "y"], [[2, 1.0]], ("k",))
    p = RegressionProblem(TwoTableJoin.build(T1, T2), ["x"], "y")
    with pytest.raises(EmptyJoinError):
        solve_regression(p)


def test_materialized_oracle_agrees_with_faq_on_a_chain():
    q = _chain_query()
    p = RegressionProblem(q, ["t0_x0", "t1_x0", "k1"], "t2_x0")
    faq, brute = solve_exact_faq(p), solve_materialized(p)
    np.testing.assert_allclose(faq.x, brute.x, rtol=1e-7, atol=1e-9)
    assert faq.residual == pytest.approx(brute.residual, rel=1e-7)


def test_residual_norm_and_objective(toy_join):
    assert residual_norm(toy_join, [0], 2, [TOY_X]) == pytest.approx(TOY_RESIDUAL)
    assert ridge_objective(TOY_GRAM, [0], 2, [0.9], 1.0) == pytest.approx(2.8)


def test_relative_error():
    assert relative_error(1.1, 1.0) == pytest.approx(0.1)
    assert relative_error(0.0, 0.0) == 0.0
    assert relative_error(1.0, 0.0) == math.inf


def test_preconditioner_drops_dependent_columns():
    rng = np.random.default_rng(2)
    a = rng.standard_normal(10)
    pre = build_preconditioner(np.column_stack([a, 2 * a]))
    assert pre.rank == 1
    assert pre.R.shape == (2, 1)
    assert np.count_nonzero(pre.R) == 1


def test_ridge_baseline_on_toy_join(toy_join):
    p = RegressionProblem(toy_join, ["f1"], "f3")
    solution = ridge_baseline(p, 1.0)
    np.testing.assert_allclose(solution.x, [0.9])
    assert solution.objective == pytest.approx(2.8)
    assert solution.method == "ridge-exact"


def test_ridge_on_an_exact_sketch(toy_join):
    p = RegressionProblem(toy_join, ["f1"], "f3")
    gram = gram_via_faq(toy_join.to_query())
    solution = solve_ridge_sketched(p, 1.0, sketch=toy_join.materialize(), gram=gram)
    np.testing.assert_allclose(solution.x, [0.9])
    assert solution.objective == pytest.approx(2.8)
    assert solution.method == "ridge-general"
    two_table = solve_ridge_sketched(p, 1.0, method="two-table")
    np.testing.assert_allclose(two_table.x, [0.9])
    assert two_table.objective is None


def test_general_ridge_sketch_objective(toy_tables):
    p = RegressionProblem(JoinQuery(list(toy_tables)), ["f1"], "f3", epsilon=0.5)
    gram = gram_via_faq(p.join)
    baseline = ridge_baseline(p, 1.0, gram)
    for seed in range(5):
        p.seed = seed
        sketched = solve_ridge_sketched(p, 1.0, gram=gram, k=2048)
        assert sketched.sketch_rows == 2048
        assert relative_error(sketched.objective, baseline.objective) < 0.05


def test_ridge_rejects_negative_lambda(toy_join):
    p = RegressionProblem(toy_join, ["f1"], "f3")
    with pytest.raises(ConfigError):
        solve_ridge_sketched(p, -1.0)
    with pytest.raises(ConfigError):
        solve_ridge_sketched(p, 1.0, method="magic")


def test_gram_products_on_many_two_table_instances(two_table_factory):
    for seed in range(100):
        rng = np.random.default_rng(seed)
        join = TwoTableJoin.build(*two_table_factory(seed, n1=int(rng.integers(1, 31)), n2=int(rng.integers(1, 31)),
                                                     cardinality=int(rng.integers(1, 6)),
                                                     d1=int(rng.integers(1, 4)), d2=int(rng.integers(1, 4))))
        if join.N == 0:
            continue
        J = join.materialize()
        w = rng.standard_normal(join.d)
        expected = w @ J.T @ J
        scale = max(1.0, float(np.abs(J).max(initial=0.0)) ** 2 * max(len(J), 1))
        np.testing.assert_allclose(implicit_gram_product(join, w), expected, rtol=1e-9, atol=1e-12 * scale)


@pytest.mark.slow
def test_regression_guarantee_over_many_seeds(two_table_factory):
    join = TwoTableJoin.build(*two_table_factory(1, n1=1500, n2=1500, cardinality=700, d1=2, d2=1))
    p = RegressionProblem(join, ["k", "a0", "b0"], "a1")
    exact = solve_exact_faq(p).residual
    passed = sum(solve_regression(p, RegressionConfig(epsilon=0.1, seed=s)).residual <= 1.1 * exact
                 for s in range(100))
    assert passed >= 90


@pytest.mark.slow
def test_wide_regression_on_a_hundred_thousand_row_join(two_table_factory):
    join = TwoTableJoin.build(*two_table_factory(4, n1=100000, n2=4000, cardinality=4000, d1=12, d2=10))
    assert join.d == 23
    features = ["k"] + [f"a{i}" for i in range(11)] + [f"b{i}" for i in range(10)]
    p = RegressionProblem(join, features, "a11")
    exact = solve_exact_faq(p)
    solution = solve_regression(p, RegressionConfig(epsilon=0.1, seed=0))
    assert relative_error(solution.residual ** 2, exact.residual ** 2) <= 0.01


@pytest.mark.slow
def test_three_table_ridge_within_one_percent():
    tables = synth_tables(SynthShape(n=[3000, 300, 3000], d=2, cardinality=30, skew=0.8, m=3), seed=0)
    q = JoinQuery(tables)
    p = RegressionProblem(q, ["t0_x0", "t0_x1", "t1_x0", "t1_x1", "t2_x0"], "t2_x1")
    gram = gram_via_faq(q)
    baseline = ridge_baseline(p, 1.0, gram)
    errs = []
    for seed in range(5):
        p.seed = seed
        sketched = solve_ridge_sketched(p, 1.0, gram=gram, k=4096)
        errs.append(relative_error(sketched.objective, baseline.objective))
    assert np.median(errs) <= 0.01
