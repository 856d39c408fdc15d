import json
import sqlite3
from pathlib import Path
from threading import Lock
from typing import Any, Dict, List, Optional

from src.core.config import get_settings


class RunRepository:
    """負責將掃描結果保存到 SQLite，並提供查詢功能。"""

    def __init__(self, db_path: str | Path | None = None):
        self.db_path = Path(db_path if db_path is not None else get_settings().db_path)
        self.db_path.parent.mkdir(parents=True, exist_ok=True)
        self._lock = Lock()
        self._init_db()

    def _init_db(self):
        with self._connect() as conn:
            conn.execute(
                """
                CREATE TABLE IF NOT EXISTS sweep_runs (
                    id INTEGER PRIMARY KEY AUTOINCREMENT,
                    created_at TEXT NOT NULL,
                    config_json TEXT NOT NULL,
                    rows_json TEXT NOT NULL
                )
                """
            )

    def _connect(self):
        conn = sqlite3.connect(self.db_path)
        conn.row_factory = sqlite3.Row
        return conn

    def save_run(self, config: Dict[str, Any], rows: List[Dict[str, Any]]) -> int:
        """儲存一次掃描並返回對應的紀錄 ID。"""

        with self._lock, self._connect() as conn:
            cursor = conn.execute(
                "INSERT INTO sweep_runs (created_at, config_json, rows_json) VALUES (datetime('now'), ?, ?)",
                (json.dumps(config, ensure_ascii=False), json.dumps(rows, ensure_ascii=False)),
            )
            return int(cursor.lastrowid)

    def list_runs(self, limit: int = 50, offset: int = 0) -> List[Dict[str, Any]]:
        """新到舊列出摘要；圖樣與列數由 SQLite 的 JSON 函式取出。"""
        with self._connect() as conn:
            rows = conn.execute(
                """
                SELECT id, created_at,
                       json_extract(config_json, '$.pattern') AS pattern,
                       json_extract(config_json, '$.base_model') AS base_model,
                       json_array_length(rows_json) AS row_count
                FROM sweep_runs
                ORDER BY id DESC
                LIMIT ? OFFSET ?
                """,
                (limit, offset),
            ).fetchall()
        return [dict(r) for r in rows]

    def get_run(self, run_id: int) -> Optional[Dict[str, Any]]:
        with self._connect() as conn:
            row = conn.execute(
                "SELECT id, created_at, config_json, rows_json FROM sweep_runs WHERE id = ?",
                (run_id,),
            ).fetchone()
        return self._row_to_record(row) if row else None

    def _row_to_record(self, row: sqlite3.Row | None) -> Dict[str, Any]:
        if not row:
            return {}
        return {
            "id": row["id"],
            "created_at": row["created_at"],
            "config": json.loads(row["config_json"]),
            "rows": json.loads(row["rows_json"]),
        }
