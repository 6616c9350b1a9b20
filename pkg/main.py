#!/usr/bin/env python3
"""
JoinSketch - Sketching and regression over relational joins
Embeds, regresses and sketches joins of CSV tables without materializing them.
"""

import argparse
import json
import logging
import sys
from typing import Any, Dict, List, Optional

from modules.config import BENCH_KINDS, ALGORITHMS, resolve_config
from modules.errors import JoinSketchError
from modules.experiments import bench, run, run_embed, run_gram
from modules.ingest import SynthShape, synth_generate
from modules.run_ledger import RunLedger

logger = logging.getLogger(__name__)


def setup_logging(level: str = "INFO", log_file: str = "joinsketch.log", verbose: bool = False):
    """Configure logging once for the whole process"""
    logging.basicConfig(
        level=logging.DEBUG if verbose else getattr(logging, level.upper(), logging.INFO),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        handlers=[
            logging.FileHandler(log_file),
            logging.StreamHandler()
        ],
        force=True,
    )


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default="config.json", help="JSON config file")
    common.add_argument("--epsilon", type=float, help="accuracy parameter in (0, 1)")
    common.add_argument("--lambda", dest="lam", type=float, help="ridge regularization")
    common.add_argument("--k", type=int, help="target sketch dimension override")
    common.add_argument("--mode", choices=["dense", "sparse"])
    common.add_argument("--seed", type=int)
    common.add_argument("--threads", type=int)
    common.add_argument("--out", help="output directory for reports")
    common.add_argument("--tables", nargs="+", help="table CSV files (name=path or path)")
    common.add_argument("--keys", nargs="+", help="join key columns")
    common.add_argument("--sep", help="CSV column delimiter")
    common.add_argument("--features", nargs="+", help="feature columns U")
    common.add_argument("--target", help="target column")
    common.add_argument("--algorithm", choices=list(ALGORITHMS))
    common.add_argument("--log-file", help="log file path")
    common.add_argument("--verbose", action="store_true", help="debug logging")

    parser = argparse.ArgumentParser(prog="joinsketch", description=__doc__.strip().splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("embed", parents=[common], help="subspace embedding of a two-table join")
    sub.add_parser("regress", parents=[common], help="least squares over a join")
    sub.add_parser("ridge", parents=[common], help="ridge regression over a join")
    sub.add_parser("gram", parents=[common], help="exact J^T J through FAQ")
    bench_parser = sub.add_parser("bench", parents=[common], help="k, lambda or scaling sweep")
    bench_parser.add_argument("--kind", choices=list(BENCH_KINDS))
    synth = sub.add_parser("synth", parents=[common], help="generate synthetic chain-join tables")
    synth.add_argument("--n", type=int, nargs="+", default=[1000], help="rows per table")
    synth.add_argument("--d", type=int, nargs="+", default=[3], help="feature columns per table")
    synth.add_argument("--cardinality", type=int, default=100)
    synth.add_argument("--skew", type=float, default=1.2)
    synth.add_argument("--m", type=int, default=2, help="number of tables")
    history = sub.add_parser("history", parents=[common], help="summary of recorded runs")
    history.add_argument("--export", help="write all runs as JSON to this path")
    history.add_argument("--limit", type=int, default=10)
    return parser


def _table_entries(values: Optional[List[str]]) -> Optional[List[Dict[str, str]]]:
    if not values:
        return None
    entries = []
    for v in values:
        name, sep, path = v.partition("=")
        entries.append({"name": name, "path": path} if sep else {"path": v})
    return entries


def flags_from_args(args: argparse.Namespace) -> Dict[str, Any]:
    flags = {
        "epsilon": args.epsilon,
        "lambda": args.lam,
        "k": args.k,
        "mode": args.mode,
        "seed": args.seed,
        "threads": args.threads,
        "output_dir": args.out,
        "tables": _table_entries(args.tables),
        "key_columns": args.keys,
        "sep": args.sep,
        "features": args.features,
        "target": args.target,
        "algorithm": args.algorithm,
        "log_file": args.log_file,
    }
    if args.command == "bench" and args.kind:
        flags["bench"] = {"kind": args.kind}
    return flags


def dispatch(args: argparse.Namespace, rc) -> Dict[str, Any]:
    ledger = RunLedger(rc.ledger) if rc.ledger else None
    if args.command in ("regress", "ridge"):
        if args.command == "ridge" and rc.lam == 0:
            logger.warning("ridge with lambda = 0 is ordinary least squares")
        rc.require_problem()
        report = run(rc, ledger=ledger, command=args.command)
        return report.csv_row()
    if args.command == "embed":
        return run_embed(rc)
    if args.command == "gram":
        gram = run_gram(rc)
        return {"columns": list(gram.columns), "evaluations": gram.evaluations}
    if args.command == "bench":
        return bench(rc, ledger=ledger).summary
    if args.command == "synth":
        shape = SynthShape(
            n=args.n if len(args.n) > 1 else args.n[0],
            d=args.d if len(args.d) > 1 else args.d[0],
            cardinality=args.cardinality,
            skew=args.skew,
            m=args.m,
        )
        paths = synth_generate(shape, rc.seed, rc.output_dir)
        return {name: str(path) for name, path in paths.items()}
    if ledger is None:
        return {"total": 0}
    if args.export:
        return {"exported": ledger.export_runs(args.export)}
    return {**ledger.get_stats(), "recent": ledger.get_runs(limit=args.limit)}


def main(argv: Optional[List[str]] = None) -> int:
    """Run one subcommand and return its exit code"""
    args = build_parser().parse_args(argv)
    try:
        rc = resolve_config(args.config, flags_from_args(args))
    except JoinSketchError as e:
        setup_logging(verbose=args.verbose)
        logger.error(f"Configuration error: {e}")
        return e.exit_code
    setup_logging(rc.log_level, rc.log_file, args.verbose)

    try:
        result = dispatch(args, rc)
    except JoinSketchError as e:
        logger.error(f"{args.command} failed ({type(e).__name__}): {e}")
        return e.exit_code
    except Exception as e:
        logger.exception(f"Unexpected error in {args.command}: {e}")
        return 1
    print(json.dumps(result, indent=2, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
