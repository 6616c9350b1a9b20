import json
import math

import numpy as np
import pandas as pd
import pytest

from conftest import TOY_GRAM
from modules.config import RunConfig
from modules.errors import ConfigError
from modules.experiments import (
    CSV_FIELDS,
    Report,
    bench,
    default_problem,
    load_tables,
    loglog_slope,
    make_embed_config,
    run,
    run_embed,
    run_gram,
    split_validation,
    write_report,
)
from modules.ingest import SynthShape, synth_tables
from modules.join_core import Table
from modules.run_ledger import RunLedger


def _rc(tmp_path, **overrides):
    config = {"features": ["f1"], "target": "f3", "validation_fraction": 0.0,
              "output_dir": str(tmp_path / "reports"), "ledger": None}
    config.update(overrides)
    return RunConfig.from_dict(config)


def _report(**overrides):
    fields = dict(command="regress", algorithm="two-table", seed=0, epsilon=0.5, lam=0.0, k=None,
                  sketch_rows=12, residual=1.5, baseline_residual=1.25, objective=2.25,
                  baseline_objective=1.5625, err=0.44, timings=[("solve", 0.01, 100)])
    fields.update(overrides)
    return Report(**fields)


def test_csv_row_holds_only_deterministic_fields():
    row = _report().csv_row()
    assert list(row) == CSV_FIELDS
    assert row["residual"] == "1.5"
    assert row["k"] == "" and row["mse"] == ""
    assert _report(timings=[("solve", 9.0, 1)], timestamp="now").csv_line() == _report().csv_line()


def test_report_dict_uses_lambda_and_named_timings():
    out = _report(lam=2.0).to_dict()
    assert out["lambda"] == 2.0 and "lam" not in out
    assert out["timings"] == [{"phase": "solve", "seconds": 0.01, "nnz": 100}]
    assert json.loads(_report().to_json())["err"] == 0.44


def test_write_report_appends_to_one_sweep_csv(tmp_path):
    write_report(_report(), str(tmp_path))
    write_report(_report(seed=1), str(tmp_path))
    frame = pd.read_csv(tmp_path / "sweep.csv")
    assert frame["seed"].tolist() == [0, 1]
    assert (tmp_path / "regress_two-table_seed1.json").exists()


def test_default_problem_uses_last_table_for_target():
    tables = synth_tables(SynthShape(n=10, d=[2, 1, 2], m=3), seed=0)
    features, target = default_problem(tables)
    assert target == "t2_x1"
    assert features == ["t0_x0", "t0_x1", "t1_x0", "t2_x0"]
    with pytest.raises(ConfigError):
        default_problem(synth_tables(SynthShape(n=10, d=[1, 0], m=2), seed=0))


def test_validation_split_holds_out_whole_keys():
    tables = synth_tables(SynthShape(n=[400, 50], d=1, cardinality=40, m=2), seed=1)
    train, valid = split_validation(tables, 0.3, seed=2)
    assert train[0].n_rows + valid[0].n_rows == 400
    assert train[1] is tables[1] and valid[1] is tables[1]
    assert not set(train[0].column("k0")) & set(valid[0].column("k0"))
    unsplit, none = split_validation(tables, 0.0, 2)
    assert none is None
    assert all(a is b for a, b in zip(unsplit, tables))


def test_faq_exact_run_on_toy_join(tmp_path, toy_tables):
    ledger = RunLedger(str(tmp_path / "runs.db"))
    report = run(_rc(tmp_path, algorithm="faq-exact"), toy_tables, ledger=ledger)
    assert report.command == "regress"
    assert report.x == pytest.approx([18 / 19])
    assert report.residual == pytest.approx(math.sqrt(37 / 19))
    assert report.err == pytest.approx(0.0, abs=1e-12)
    assert report.mse is None
    assert (tmp_path / "reports" / "regress_faq-exact_seed0.json").exists()
    assert ledger.get_runs()[0]["command"] == "regress"


@pytest.mark.parametrize("algorithm", ["two-table", "materialize-oracle", "faq-exact"])
def test_exact_regimes_match_the_baseline(tmp_path, toy_tables, algorithm):
    for lam in (0.0, 1.0):
        report = run(_rc(tmp_path, algorithm=algorithm, **{"lambda": lam}), toy_tables, write=False)
        assert report.err == pytest.approx(0.0, abs=1e-9)
        assert report.command == ("ridge" if lam else "regress")


def test_general_ridge_run(tmp_path, toy_tables):
    report = run(_rc(tmp_path, algorithm="general", k=2048, **{"lambda": 1.0}), toy_tables, write=False)
    assert report.sketch_rows == 2048
    assert 0.0 <= report.err < 0.05


def test_runs_are_reproducible(tmp_path):
    tables = synth_tables(SynthShape(n=[200, 200], d=2, cardinality=20, skew=0.8, m=2), seed=0)
    rc = _rc(tmp_path, features=["t0_x0", "t0_x1", "t1_x0"], target="t1_x1", validation_fraction=0.1)
    first, second = run(rc, tables, write=False), run(rc, tables, write=False)
    assert first.csv_row() == second.csv_row()
    assert first.err < 0.1


def test_run_embed_writes_artifacts(tmp_path, toy_tables):
    summary = run_embed(_rc(tmp_path), toy_tables)
    assert summary["subspace_embedding"]
    assert summary["eig_min"] == pytest.approx(1.0)
    out = tmp_path / "reports"
    assert np.load(out / "embedding.npy").shape == (5, 3)
    assert len(pd.read_csv(out / "embedding_provenance.csv")) == 5
    with pytest.raises(ConfigError):
        run_embed(_rc(tmp_path), list(toy_tables) + [toy_tables[0]])


def test_run_gram_writes_csv(tmp_path, toy_tables):
    gram = run_gram(_rc(tmp_path), toy_tables)
    np.testing.assert_allclose(gram.matrix, TOY_GRAM)
    frame = pd.read_csv(tmp_path / "reports" / "gram.csv", index_col=0)
    np.testing.assert_allclose(frame.to_numpy(), TOY_GRAM)


def test_configured_tables_use_sep_and_save_dictionaries(tmp_path):
    (tmp_path / "a.csv").write_text("city|x\nrome|1\nlima|2\n")
    (tmp_path / "b.csv").write_text("city|y\nlima|5\n")
    rc = _rc(tmp_path, tables=[str(tmp_path / "a.csv"), str(tmp_path / "b.csv")], sep="|")
    tables = load_tables(rc)
    assert [t.name for t in tables] == ["a", "b"]
    np.testing.assert_array_equal(tables[0].column("city"), [1, 0])
    saved = pd.read_csv(tmp_path / "reports" / "dictionaries" / "city_dictionary.csv")
    assert saved["value"].tolist() == ["lima", "rome"]


def test_embed_overrides_are_checked(tmp_path):
    assert make_embed_config(_rc(tmp_path, embed={"osnap_s": 4})).osnap_s == 4
    with pytest.raises(ConfigError):
        make_embed_config(_rc(tmp_path, embed={"bogus": 1}))


def test_k_bench(tmp_path):
    ledger = RunLedger(str(tmp_path / "runs.db"))
    rc = RunConfig.from_dict({"output_dir": str(tmp_path), "lambda": 1.0, "ledger": None,
                              "bench": {"kind": "k", "k_grid": [16, 256], "repeats": 2}})
    result = bench(rc, ledger=ledger)
    assert len(result.rows) == 4
    assert set(result.summary["mean_err"]) == {16, 256}
    assert (result.rows["err"] >= -1e-9).all()
    assert (tmp_path / "bench_k.csv").exists()
    assert ledger.get_runs()[0]["command"] == "bench-k"


def test_lambda_bench(tmp_path):
    rc = RunConfig.from_dict({"output_dir": str(tmp_path), "k": 128, "ledger": None,
                              "bench": {"kind": "lambda", "lambda_grid": [0.0, 1.0, 100.0]}})
    result = bench(rc, write=False)
    assert result.rows["lambda"].tolist() == [0.0, 1.0, 100.0]
    assert result.summary["k"] == 128
    assert {"err", "mse", "mse_exact"} <= set(result.rows.columns)


def test_scaling_bench(tmp_path):
    rc = RunConfig.from_dict({"output_dir": str(tmp_path), "ledger": None,
                              "bench": {"kind": "scaling", "n_grid": [100, 200], "repeats": 1}})
    result = bench(rc, write=False)
    assert result.rows["n"].tolist() == [200, 400]
    assert result.rows["N"].tolist() == [1000, 4000]
    assert math.isfinite(result.summary["embed_slope"])


def test_k_sweep_error_falls_with_k(tmp_path):
    rc = RunConfig.from_dict({"output_dir": str(tmp_path), "lambda": 1.0, "ledger": None,
                              "bench": {"kind": "k", "k_grid": [32, 64, 128, 256, 512], "repeats": 10}})
    result = bench(rc, write=False)
    assert len(result.rows) == 50
    assert result.summary["spearman"] <= -0.8
    means = result.summary["mean_err"]
    assert means[512] < means[32]


def test_lambda_sweep_error_never_grows(tmp_path):
    rc = RunConfig.from_dict({"output_dir": str(tmp_path), "ledger": None, "bench": {"kind": "lambda"}})
    result = bench(rc, write=False)
    assert result.rows["lambda"].tolist() == [0.0, 0.01, 0.1, 1.0, 10.0, 100.0]
    assert result.summary["spearman"] <= -0.8
    errs = result.rows["err"].tolist()
    assert all(b <= a * (1 + 1e-6) + 1e-12 for a, b in zip(errs, errs[1:]))


@pytest.mark.slow
def test_embedding_time_grows_slower_than_materialization(tmp_path):
    rc = RunConfig.from_dict({"output_dir": str(tmp_path), "ledger": None,
                              "bench": {"kind": "scaling", "n_grid": [1500, 3000, 6000], "repeats": 3,
                                        "cardinality": 10}})
    result = bench(rc, write=False)
    assert result.rows["N"].tolist() == [225000, 900000, 3600000]
    assert result.summary["embed_slope"] <= 1.2
    assert result.summary["materialize_slope"] >= 1.8


def test_loglog_slope():
    assert loglog_slope([1, 10, 100], [2, 20, 200]) == pytest.approx(1.0)
    assert loglog_slope([1, 10], [1, 100]) == pytest.approx(2.0)
