import json
import logging

import pytest

from main import build_parser, flags_from_args, main


@pytest.fixture
def workdir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    for var in ("JOINSKETCH_SEED", "JOINSKETCH_THREADS", "JOINSKETCH_LOG_LEVEL",
                "JOINSKETCH_OUTPUT_DIR", "JOINSKETCH_LEDGER"):
        monkeypatch.delenv(var, raising=False)
    yield tmp_path
    root = logging.getLogger()
    for handler in list(root.handlers):
        if isinstance(handler, logging.FileHandler):
            root.removeHandler(handler)
            handler.close()


def _cli(capsys, *argv):
    code = main(list(argv) + ["--log-file", "test.log"])
    out = capsys.readouterr().out
    return code, (json.loads(out) if code == 0 else None)


@pytest.fixture
def synth_files(workdir, capsys):
    code, paths = _cli(capsys, "synth", "--out", "data", "--n", "200", "150", "--d", "2",
                       "--cardinality", "15", "--skew", "0.8", "--seed", "1")
    assert code == 0
    return paths


def test_synth_writes_tables(synth_files, workdir):
    assert sorted(synth_files) == ["t0", "t1"]
    assert (workdir / "data" / "t0.csv").exists()
    assert (workdir / "test.log").exists()


def test_regress_and_history(synth_files, workdir, capsys):
    code, row = _cli(capsys, "regress", "--tables", synth_files["t0"], synth_files["t1"],
                     "--features", "t0_x0", "t0_x1", "t1_x0", "--target", "t1_x1",
                     "--algorithm", "faq-exact", "--out", "reports")
    assert code == 0
    assert row["command"] == "regress"
    assert float(row["err"]) == pytest.approx(0.0, abs=1e-9)
    assert (workdir / "reports" / "sweep.csv").exists()

    code, history = _cli(capsys, "history")
    assert code == 0
    assert history["total"] == 1
    assert history["recent"][0]["algorithm"] == "faq-exact"

    code, exported = _cli(capsys, "history", "--export", "runs.json")
    assert code == 0
    assert json.loads((workdir / "runs.json").read_text())["runs"][0]["command"] == "regress"


def test_named_tables_and_ridge(synth_files, capsys):
    code, row = _cli(capsys, "ridge", "--tables", f"left={synth_files['t0']}", f"right={synth_files['t1']}",
                     "--features", "t0_x0", "t1_x0", "--target", "t1_x1", "--lambda", "0.5")
    assert code == 0
    assert row["command"] == "ridge"
    assert row["lambda"] == "0.5"


def test_embed_and_gram(synth_files, capsys):
    code, summary = _cli(capsys, "embed", "--tables", synth_files["t0"], synth_files["t1"])
    assert code == 0
    assert "subspace_embedding" in summary
    code, gram = _cli(capsys, "gram", "--tables", synth_files["t0"], synth_files["t1"])
    assert code == 0
    assert gram["columns"] == ["k0", "t0_x0", "t0_x1", "t1_x0", "t1_x1"]
    assert gram["evaluations"] == 15


def test_config_errors_exit_with_code_2(synth_files, capsys):
    code, _ = _cli(capsys, "regress", "--epsilon", "1.5")
    assert code == 2
    code, _ = _cli(capsys, "regress", "--tables", synth_files["t0"], synth_files["t1"])
    assert code == 2
    code, _ = _cli(capsys, "regress", "--tables", "missing0.csv", "missing1.csv",
                   "--features", "a", "--target", "b")
    assert code == 2


def test_cyclic_query_exits_with_code_4(workdir, capsys):
    (workdir / "r.csv").write_text("a,b,x\n0,0,1.0\n1,1,2.0\n")
    (workdir / "s.csv").write_text("b,c,y\n0,0,1.5\n1,1,0.5\n")
    (workdir / "t.csv").write_text("c,a,z\n0,0,2.5\n1,1,1.0\n")
    code, _ = _cli(capsys, "regress", "--tables", "r.csv", "s.csv", "t.csv", "--algorithm", "general",
                   "--features", "x", "y", "--target", "z")
    assert code == 4


def test_bench_kind_flag_keeps_grids():
    args = build_parser().parse_args(["bench", "--kind", "lambda"])
    assert flags_from_args(args)["bench"] == {"kind": "lambda"}
    assert flags_from_args(build_parser().parse_args(["gram"]))["tables"] is None


def test_sep_flag_reaches_the_config():
    assert flags_from_args(build_parser().parse_args(["gram", "--sep", ";"]))["sep"] == ";"
    assert flags_from_args(build_parser().parse_args(["gram"]))["sep"] is None
