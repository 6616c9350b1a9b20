import json

import pytest

from modules.run_ledger import RunLedger


@pytest.fixture
def ledger(tmp_path):
    return RunLedger(str(tmp_path / "runs.db"))


def _record(command="regress", algorithm="two-table", err=0.01, **extra):
    return {"command": command, "algorithm": algorithm, "seed": 0, "epsilon": 0.5, "lambda": 0.0,
            "err": err, "timings": [{"phase": "solve", "seconds": 0.1, "nnz": 10}],
            "config": {"epsilon": 0.5}, **extra}


def test_records_come_back_newest_first(ledger):
    first = ledger.record_run(_record())
    second = ledger.record_run(_record(command="ridge", algorithm="general"))
    runs = ledger.get_runs()
    assert [r["id"] for r in runs] == [second, first]
    assert runs[1]["timings"] == [{"phase": "solve", "seconds": 0.1, "nnz": 10}]
    assert runs[1]["config"] == {"epsilon": 0.5}
    assert [r["id"] for r in ledger.get_runs(command="ridge")] == [second]
    assert len(ledger.get_runs(limit=1)) == 1


def test_stats_group_by_command_and_algorithm(ledger):
    ledger.record_run(_record(err=0.1))
    ledger.record_run(_record(err=0.3))
    ledger.record_run(_record(command="bench-k", algorithm="general", err=None))
    stats = ledger.get_stats()
    assert stats["total"] == 3
    assert stats["by_command"] == {"bench-k": 1, "regress": 2}
    two_table = next(s for s in stats["by_algorithm"] if s["algorithm"] == "two-table")
    assert two_table["runs"] == 2
    assert two_table["mean_err"] == pytest.approx(0.2)
    assert two_table["max_err"] == pytest.approx(0.3)
    assert stats["last_run"] is not None


def test_empty_ledger(ledger):
    stats = ledger.get_stats()
    assert stats["total"] == 0
    assert stats["last_run"] is None
    assert ledger.get_runs() == []


def test_export_writes_runs_oldest_first(ledger, tmp_path):
    ledger.record_run(_record(seed=1))
    ledger.record_run(_record(seed=2))
    path = ledger.export_runs(str(tmp_path / "export.json"))
    with open(path) as f:
        data = json.load(f)
    assert [r["seed"] for r in data["runs"]] == [1, 2]
    assert "export_timestamp" in data


def test_reopening_keeps_history(tmp_path):
    path = str(tmp_path / "runs.db")
    RunLedger(path).record_run(_record())
    assert RunLedger(path).get_stats()["total"] == 1
