"""
Experiments - Run and sweep harness
Executes an algorithm against the exact FAQ baseline, writes JSON reports and
deterministic CSV rows, and runs the k / lambda / scaling sweeps
"""

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import stats

from modules.config import RunConfig
from modules.errors import ConfigError
from modules.general_join import (
    GramMatrix,
    JoinPlan,
    JoinQuery,
    exact_ridge,
    general_ridge_sketch,
    gram_via_faq,
    join_size,
    materialize_query,
    ridge_sketch_rows,
)
from modules.ingest import SynthShape, ingest, synth_tables
from modules.join_core import Table, TwoTableJoin, split_by_key_hash
from modules.regression import (
    RegressionConfig,
    RegressionProblem,
    Solution,
    relative_error,
    ridge_baseline,
    ridge_objective,
    solve_exact_faq,
    solve_materialized,
    solve_regression,
    solve_ridge_sketched,
)
from modules.run_ledger import RunLedger
from modules.sketch_kernels import derive_seed, is_subspace_embedding, spectral_distortion
from modules.two_table_embed import EmbedConfig, embed_join

logger = logging.getLogger(__name__)

CSV_FIELDS = [
    "command", "algorithm", "seed", "epsilon", "lambda", "k", "sketch_rows",
    "residual", "baseline_residual", "objective", "baseline_objective", "err", "mse", "iterations",
]


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value) if math.isfinite(value) else str(value)
    return str(value)


@dataclass
class Report:
    command: str
    algorithm: str
    seed: int
    epsilon: float
    lam: float
    k: Optional[int]
    sketch_rows: int
    residual: float
    baseline_residual: float
    objective: float
    baseline_objective: float
    err: float
    mse: Optional[float] = None
    iterations: int = 0
    x: List[float] = field(default_factory=list)
    timings: List[Tuple[str, float, int]] = field(default_factory=list)
    stats: Dict[str, Any] = field(default_factory=dict)
    config: Dict[str, Any] = field(default_factory=dict)
    timestamp: str = ""

    def csv_row(self) -> Dict[str, str]:
        """Only deterministic fields: no wall times and no timestamp"""
        values = {
            "command": self.command,
            "algorithm": self.algorithm,
            "seed": self.seed,
            "epsilon": float(self.epsilon),
            "lambda": float(self.lam),
            "k": self.k,
            "sketch_rows": self.sketch_rows,
            "residual": float(self.residual),
            "baseline_residual": float(self.baseline_residual),
            "objective": float(self.objective),
            "baseline_objective": float(self.baseline_objective),
            "err": float(self.err),
            "mse": None if self.mse is None else float(self.mse),
            "iterations": self.iterations,
        }
        return {k: _fmt(values[k]) for k in CSV_FIELDS}

    def csv_line(self) -> str:
        return pd.DataFrame([self.csv_row()], columns=CSV_FIELDS).to_csv(index=False, header=False)

    def to_dict(self) -> Dict[str, Any]:
        out = asdict(self)
        out["lambda"] = out.pop("lam")
        out["timings"] = [{"phase": p, "seconds": s, "nnz": n} for p, s, n in self.timings]
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=4, default=float)


def write_report(report: Report, output_dir: str, name: Optional[str] = None) -> Tuple[Path, Path]:
    """Report JSON plus one appended row of the sweep CSV"""
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    name = name or f"{report.command}_{report.algorithm}_seed{report.seed}"
    json_path = out / f"{name}.json"
    json_path.write_text(report.to_json())
    csv_path = out / "sweep.csv"
    frame = pd.DataFrame([report.csv_row()], columns=CSV_FIELDS)
    frame.to_csv(csv_path, mode="a", header=not csv_path.exists(), index=False)
    return json_path, csv_path


def load_tables(rc: RunConfig) -> List[Table]:
    if not rc.tables:
        raise ConfigError("no tables configured")
    result = ingest({t.name: t.path for t in rc.tables}, rc.key_columns, rc.normalize, sep=rc.sep,
                    dictionary_dir=Path(rc.output_dir) / "dictionaries")
    return result.tables


def default_problem(tables: Sequence[Table]) -> Tuple[List[str], str]:
    """Every non-key column as a feature; the last non-key column of the last table is the target"""
    keys = set()
    for t in tables:
        keys.update(t.key_columns)
    seen = []
    for t in tables:
        seen.extend(c for c in t.columns if c not in keys and c not in seen)
    if len(seen) < 2:
        raise ConfigError("need at least two non-key columns for a default regression problem")
    target = [c for c in tables[-1].columns if c not in keys][-1]
    return [c for c in seen if c != target], target


def _subset(table: Table, mask: np.ndarray) -> Table:
    return Table(table.name, table.columns, table.data[mask], table.key_columns)


def split_validation(tables: Sequence[Table], fraction: float, seed: int
                     ) -> Tuple[List[Table], Optional[List[Table]]]:
    """Hold out rows of the first table by a hash of its key tuple"""
    tables = list(tables)
    if fraction <= 0:
        return tables, None
    first = tables[0]
    if not first.key_columns:
        raise ConfigError(f"table {first.name} has no key columns to split on")
    valid = split_by_key_hash(first, list(first.key_columns), fraction, seed)
    if not valid.any() or valid.all():
        logger.warning(f"Validation split of {first.name} is degenerate; skipping it")
        return tables, None
    return [_subset(first, ~valid)] + tables[1:], [_subset(first, valid)] + tables[1:]


def validation_mse(tables: Optional[Sequence[Table]], features: Sequence[str], target: str,
                   x: np.ndarray) -> Optional[float]:
    """Mean squared error of x on the held-out join, computed through FAQ"""
    if tables is None:
        return None
    q = JoinQuery(list(tables))
    plan = JoinPlan.build(q)
    n = join_size(q, plan)
    if n == 0:
        return None
    gram = gram_via_faq(q, plan)
    U = [gram.index(c) for c in features]
    return ridge_objective(gram, U, gram.index(target), x, 0.0) / n


def make_embed_config(rc: RunConfig, **overrides) -> EmbedConfig:
    kwargs = {"epsilon": rc.epsilon, "mode": rc.mode, "threads": rc.threads, "seed": rc.seed}
    kwargs.update(overrides)
    kwargs.update(rc.embed)
    try:
        return EmbedConfig(**kwargs)
    except TypeError as e:
        raise ConfigError(f"Invalid embed override: {e}") from e


def _join_for(rc: RunConfig, tables: Sequence[Table]):
    if rc.algorithm == "two-table":
        if len(tables) != 2:
            raise ConfigError("the two-table algorithm takes exactly two tables")
        return TwoTableJoin.build(tables[0], tables[1], rc.key_columns)
    return JoinQuery(list(tables))


def solve_with(rc: RunConfig, p: RegressionProblem, gram: GramMatrix) -> Solution:
    """Dispatch on algorithm and lambda"""
    if rc.algorithm == "two-table":
        if rc.lam == 0:
            embed = make_embed_config(rc, epsilon=0.5, seed=derive_seed(rc.seed, 11))
            return solve_regression(p, RegressionConfig(epsilon=rc.epsilon, embed=embed, seed=rc.seed))
        sketch = embed_join(p.join, make_embed_config(rc)).matrix
        return solve_ridge_sketched(p, rc.lam, sketch=sketch, gram=gram, method="two-table")
    if rc.algorithm == "general":
        return solve_ridge_sketched(p, rc.lam, gram=gram, method="general", k=rc.k)
    if rc.algorithm == "faq-exact":
        return solve_exact_faq(p, gram) if rc.lam == 0 else ridge_baseline(p, rc.lam, gram)
    sol = solve_materialized(p)
    if rc.lam > 0:
        J = p.join.materialize() if isinstance(p.join, TwoTableJoin) else materialize_query(p.join)[1]
        sol.x = exact_ridge(J.T @ J, p.U, p.target_index, rc.lam)
        sol.method = "materialize-ridge"
    return sol


def run(rc: RunConfig, tables: Optional[Sequence[Table]] = None, ledger: Optional[RunLedger] = None,
        command: Optional[str] = None, write: bool = True) -> Report:
    """Selected algorithm plus the exact baseline on one configuration"""
    command = command or ("ridge" if rc.lam > 0 else "regress")
    tables = list(tables) if tables is not None else load_tables(rc)
    features, target = (rc.features, rc.target) if rc.features and rc.target else default_problem(tables)
    train, valid = split_validation(tables, rc.validation_fraction, rc.seed)

    join = _join_for(rc, train)
    p = RegressionProblem(join, features, target, rc.epsilon, rc.seed)
    query = join.to_query() if isinstance(join, TwoTableJoin) else join

    start = time.perf_counter()
    gram = gram_via_faq(query)
    baseline = ridge_baseline(p, rc.lam, gram)
    t_baseline = time.perf_counter() - start

    sol = solve_with(rc, p, gram)
    objective = ridge_objective(gram, p.U, p.target_index, sol.x, rc.lam)
    residual = math.sqrt(max(objective - rc.lam * float(sol.x @ sol.x), 0.0))
    err = relative_error(objective, baseline.objective)
    mse = validation_mse(valid, features, target, sol.x)

    report = Report(
        command=command,
        algorithm=rc.algorithm,
        seed=rc.seed,
        epsilon=rc.epsilon,
        lam=rc.lam,
        k=rc.k,
        sketch_rows=int(sol.sketch_rows),
        residual=residual,
        baseline_residual=baseline.residual,
        objective=objective,
        baseline_objective=baseline.objective,
        err=err,
        mse=mse,
        iterations=sol.iterations,
        x=[float(v) for v in sol.x],
        timings=list(sol.timings) + [("baseline", t_baseline, int(gram.matrix.size))],
        stats={"features": list(features), "target": target, "d": len(query.columns)},
        config=rc.to_dict(),
        timestamp=datetime.now().isoformat(),
    )
    logger.info(f"{command} ({rc.algorithm}): err={err:.3e}, residual={residual:.6g}, "
                f"baseline={baseline.residual:.6g}")
    if write:
        write_report(report, rc.output_dir)
    if ledger is not None:
        ledger.record_run(report.to_dict())
    return report


def run_embed(rc: RunConfig, tables: Optional[Sequence[Table]] = None, write: bool = True) -> Dict[str, Any]:
    """Embed a two-table join and check it spectrally against the FAQ gram"""
    tables = list(tables) if tables is not None else load_tables(rc)
    if len(tables) != 2:
        raise ConfigError("embed takes exactly two tables")
    join = TwoTableJoin.build(tables[0], tables[1], rc.key_columns)
    embedding = embed_join(join, make_embed_config(rc))
    gram = gram_via_faq(join.to_query())
    eigs = spectral_distortion(gram.matrix, embedding.gram())
    summary = {
        **embedding.stats,
        "eig_min": float(eigs.min()) if eigs.size else None,
        "eig_max": float(eigs.max()) if eigs.size else None,
        "subspace_embedding": is_subspace_embedding(eigs, rc.epsilon),
        "timings": [{"phase": p, "seconds": s, "nnz": n} for p, s, n in embedding.timings],
    }
    if write:
        out = Path(rc.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        np.save(out / "embedding.npy", embedding.matrix)
        embedding.provenance.to_csv(out / "embedding_provenance.csv", index=False)
        (out / "embedding.json").write_text(json.dumps(summary, indent=4, default=float))
    logger.info(f"Embedding eigenvalue range [{summary['eig_min']}, {summary['eig_max']}]")
    return summary


def run_gram(rc: RunConfig, tables: Optional[Sequence[Table]] = None, write: bool = True) -> GramMatrix:
    tables = list(tables) if tables is not None else load_tables(rc)
    gram = gram_via_faq(JoinQuery(tables))
    if write:
        out = Path(rc.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        frame = pd.DataFrame(gram.matrix, index=gram.columns, columns=gram.columns)
        frame.to_csv(out / "gram.csv")
    return gram


@dataclass
class BenchResult:
    kind: str
    rows: pd.DataFrame
    summary: Dict[str, Any]


def _spearman(x, y) -> float:
    rho, _ = stats.spearmanr(x, y)
    return float(rho)


def loglog_slope(sizes, seconds) -> float:
    """Slope of log(seconds) against log(size)"""
    return float(np.polyfit(np.log(sizes), np.log(np.maximum(seconds, 1e-9)), 1)[0])


def _bench_tables(rc: RunConfig, tables) -> List[Table]:
    if tables is not None:
        return list(tables)
    if rc.tables:
        return load_tables(rc)
    shape = SynthShape(n=[300, 60, 300], d=2, cardinality=20, skew=0.8, m=3)
    return synth_tables(shape, rc.seed)


def bench_k(rc: RunConfig, tables=None) -> BenchResult:
    """Relative objective error of the join sketch over the target-dimension grid"""
    tables = _bench_tables(rc, tables)
    features, target = (rc.features, rc.target) if rc.features and rc.target else default_problem(tables)
    q = JoinQuery(tables)
    plan = JoinPlan.build(q)
    p = RegressionProblem(q, features, target, rc.epsilon, rc.seed)
    gram = gram_via_faq(q, plan)
    base = ridge_baseline(p, rc.lam, gram)
    rows = []
    for k in rc.bench["k_grid"]:
        for r in range(int(rc.bench["repeats"])):
            seed = derive_seed(rc.seed, 1000 + r)
            sketch = general_ridge_sketch(q, rc.epsilon, rc.lam, seed, k=int(k), plan=plan, check_laws=not rows)
            sol = solve_ridge_sketched(p, rc.lam, sketch=sketch.matrix, gram=gram)
            rows.append({"k": int(k), "repeat": r, "err": relative_error(sol.objective, base.objective)})
    frame = pd.DataFrame(rows)
    means = frame.groupby("k")["err"].mean()
    summary = {"mean_err": {int(k): float(v) for k, v in means.items()},
               "spearman": _spearman(means.index.to_numpy(), means.to_numpy())}
    logger.info(f"k sweep: spearman(k, err) = {summary['spearman']:.3f}")
    return BenchResult("k", frame, summary)


def bench_lambda(rc: RunConfig, tables=None) -> BenchResult:
    """Ridge error and validation MSE over the lambda grid on one fixed sketch"""
    tables = _bench_tables(rc, tables)
    features, target = (rc.features, rc.target) if rc.features and rc.target else default_problem(tables)
    train, valid = split_validation(tables, rc.validation_fraction, rc.seed)
    q = JoinQuery(train)
    plan = JoinPlan.build(q)
    p = RegressionProblem(q, features, target, rc.epsilon, rc.seed)
    gram = gram_via_faq(q, plan)
    k = rc.k or ridge_sketch_rows(q.d, q.m, rc.epsilon)
    sketch = general_ridge_sketch(q, rc.epsilon, 0.0, rc.seed, k=k, plan=plan).matrix
    rows = []
    for lam in rc.bench["lambda_grid"]:
        lam = float(lam)
        sol = solve_ridge_sketched(p, lam, sketch=sketch, gram=gram)
        base = ridge_baseline(p, lam, gram)
        rows.append({
            "lambda": lam,
            "err": relative_error(sol.objective, base.objective),
            "mse": validation_mse(valid, features, target, sol.x),
            "mse_exact": validation_mse(valid, features, target, base.x),
        })
    frame = pd.DataFrame(rows)
    summary = {"k": int(k), "spearman": _spearman(frame["lambda"], frame["err"])}
    logger.info(f"lambda sweep: spearman(lambda, err) = {summary['spearman']:.3f}")
    return BenchResult("lambda", frame, summary)


def bench_scaling(rc: RunConfig, tables=None) -> BenchResult:
    """Embedding versus materialization wall time on block-heavy synthetic joins"""
    cardinality = int(rc.bench.get("cardinality", 10))
    rows = []
    for n in rc.bench["n_grid"]:
        n = int(n)
        T1, T2 = synth_tables(SynthShape(n=n, d=2, cardinality=cardinality, skew=0.0, m=2), rc.seed)
        join = TwoTableJoin.build(T1, T2)
        t_embed, t_mat = math.inf, math.inf
        for _ in range(int(rc.bench["repeats"])):
            start = time.perf_counter()
            embed_join(join, make_embed_config(rc))
            t_embed = min(t_embed, time.perf_counter() - start)
            start = time.perf_counter()
            J = join.materialize()
            J.T @ J
            t_mat = min(t_mat, time.perf_counter() - start)
        rows.append({"n": 2 * n, "N": join.N, "embed_seconds": t_embed, "materialize_seconds": t_mat})
        logger.debug(f"scaling n={2 * n} N={join.N}: embed {t_embed:.4f}s, materialize {t_mat:.4f}s")
    frame = pd.DataFrame(rows)
    summary = {
        "embed_slope": loglog_slope(frame["n"], frame["embed_seconds"]),
        "materialize_slope": loglog_slope(frame["n"], frame["materialize_seconds"]),
    }
    logger.info(f"scaling: embed slope {summary['embed_slope']:.2f}, "
                f"materialize slope {summary['materialize_slope']:.2f}")
    return BenchResult("scaling", frame, summary)


BENCHES = {"k": bench_k, "lambda": bench_lambda, "scaling": bench_scaling}


def bench(rc: RunConfig, tables=None, ledger: Optional[RunLedger] = None, write: bool = True) -> BenchResult:
    kind = rc.bench["kind"]
    result = BENCHES[kind](rc, tables)
    if write:
        out = Path(rc.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        result.rows.to_csv(out / f"bench_{kind}.csv", index=False)
        (out / f"bench_{kind}.json").write_text(json.dumps(result.summary, indent=4, default=float))
    if ledger is not None:
        ledger.record_run({
            "command": f"bench-{kind}",
            "algorithm": "general" if kind != "scaling" else "two-table",
            "seed": rc.seed,
            "epsilon": rc.epsilon,
            "lambda": rc.lam,
            "config": {**rc.to_dict(), "summary": result.summary},
        })
    return result
