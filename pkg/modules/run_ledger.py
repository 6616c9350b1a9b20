"""
Run Ledger - SQLite history of runs and sweeps
Every report is stored with its config so sweep history can be queried and exported
"""

import json
import logging
import sqlite3
from datetime import datetime
from typing import Any, Dict, List, Optional

logger = logging.getLogger(__name__)


class RunLedger:
    def __init__(self, db_path: str = "joinsketch_runs.db"):
        self.db_path = db_path
        self.init_database()

    def _connect(self) -> sqlite3.Connection:
        return sqlite3.connect(self.db_path)

    def init_database(self):
        """Create the runs table if missing"""
        conn = self._connect()
        try:
            cursor = conn.cursor()
            cursor.execute('''
                CREATE TABLE IF NOT EXISTS runs (
                    id INTEGER PRIMARY KEY AUTOINCREMENT,
                    command TEXT NOT NULL,
                    algorithm TEXT,
                    seed INTEGER,
                    epsilon REAL,
                    lambda REAL,
                    sketch_rows INTEGER,
                    residual REAL,
                    baseline_residual REAL,
                    err REAL,
                    mse REAL,
                    timings TEXT,
                    config TEXT,
                    timestamp TEXT
                )
            ''')
            cursor.execute('CREATE INDEX IF NOT EXISTS idx_runs_command ON runs (command)')
            cursor.execute('CREATE INDEX IF NOT EXISTS idx_runs_algorithm ON runs (algorithm)')
            conn.commit()
        finally:
            conn.close()

    def record_run(self, record: Dict[str, Any]) -> int:
        """Insert one run and return its id"""
        conn = self._connect()
        try:
            cursor = conn.cursor()
            cursor.execute('''
                INSERT INTO runs (command, algorithm, seed, epsilon, lambda, sketch_rows,
                                  residual, baseline_residual, err, mse, timings, config, timestamp)
                VALUES (?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?)
            ''', (
                record.get("command", "run"),
                record.get("algorithm"),
                record.get("seed"),
                record.get("epsilon"),
                record.get("lambda"),
                record.get("sketch_rows"),
                record.get("residual"),
                record.get("baseline_residual"),
                record.get("err"),
                record.get("mse"),
                json.dumps(record.get("timings", [])),
                json.dumps(record.get("config", {}), sort_keys=True),
                record.get("timestamp") or datetime.now().isoformat(),
            ))
            conn.commit()
            run_id = cursor.lastrowid
        finally:
            conn.close()
        logger.debug(f"Recorded run {run_id} ({record.get('command')}/{record.get('algorithm')})")
        return run_id

    def get_runs(self, command: Optional[str] = None, limit: Optional[int] = None) -> List[Dict[str, Any]]:
        """Most recent runs first"""
        query = 'SELECT * FROM runs'
        params: List[Any] = []
        if command:
            query += ' WHERE command = ?'
            params.append(command)
        query += ' ORDER BY id DESC'
        if limit:
            query += ' LIMIT ?'
            params.append(int(limit))
        conn = self._connect()
        try:
            conn.row_factory = sqlite3.Row
            rows = conn.execute(query, params).fetchall()
        finally:
            conn.close()
        runs = []
        for row in rows:
            item = dict(row)
            item["timings"] = json.loads(item["timings"] or "[]")
            item["config"] = json.loads(item["config"] or "{}")
            runs.append(item)
        return runs

    def get_stats(self) -> Dict[str, Any]:
        """Run counts per command and algorithm, with mean and worst relative error"""
        conn = self._connect()
        try:
            cursor = conn.cursor()
            cursor.execute('SELECT COUNT(*) FROM runs')
            total = cursor.fetchone()[0]
            cursor.execute('SELECT command, COUNT(*) FROM runs GROUP BY command ORDER BY command')
            by_command = {command: count for command, count in cursor.fetchall()}
            cursor.execute('''
                SELECT algorithm, COUNT(*), AVG(err), MAX(err)
                FROM runs
                WHERE algorithm IS NOT NULL
                GROUP BY algorithm
                ORDER BY algorithm
            ''')
            by_algorithm = [
                {
                    "algorithm": algorithm,
                    "runs": count,
                    "mean_err": round(mean_err, 6) if mean_err is not None else None,
                    "max_err": max_err,
                }
                for algorithm, count, mean_err, max_err in cursor.fetchall()
            ]
            cursor.execute('SELECT MAX(timestamp) FROM runs')
            last = cursor.fetchone()[0]
        finally:
            conn.close()
        return {
            "total": total,
            "by_command": by_command,
            "by_algorithm": by_algorithm,
            "last_run": last,
        }

    def export_runs(self, export_path: Optional[str] = None) -> str:
        """Dump every run as JSON and return the file path"""
        if not export_path:
            export_path = f"runs_export_{datetime.now().strftime('%Y%m%d_%H%M%S')}.json"
        export_data = {
            "export_timestamp": datetime.now().isoformat(),
            "runs": list(reversed(self.get_runs())),
        }
        with open(export_path, "w", encoding="utf-8") as f:
            json.dump(export_data, f, indent=2)
        logger.info(f"Runs exported to: {export_path}")
        return export_path
