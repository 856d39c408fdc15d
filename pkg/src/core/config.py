import os
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

from dotenv import load_dotenv

load_dotenv()


PROJECT_ROOT = Path(__file__).resolve().parents[2]


def _env_flag(name: str) -> bool:
    return os.getenv(name, "").strip().lower() in {"1", "true", "yes", "on"}


@dataclass(frozen=True)
class Settings:
    """由環境變數（或 .env）讀取的執行設定。"""

    threads: int = 1
    log_dir: str = str(PROJECT_ROOT)
    log_level: str = "INFO"
    log_stderr: bool = False
    db_path: str = str(PROJECT_ROOT / "data" / "tracelab_runs.db")
    buffer_c: float = 3.0
    dp_budget: int = 2_000_000_000
    block_size: int = 64

    @classmethod
    def from_env(cls) -> "Settings":
        defaults = cls()
        return cls(
            threads=max(1, int(os.getenv("TRACELAB_THREADS", defaults.threads))),
            log_dir=os.getenv("TRACELAB_LOG_DIR", defaults.log_dir),
            log_level=os.getenv("TRACELAB_LOG_LEVEL", defaults.log_level).upper(),
            log_stderr=_env_flag("TRACELAB_LOG_STDERR"),
            db_path=os.getenv("TRACELAB_DB_PATH", defaults.db_path),
            buffer_c=float(os.getenv("TRACELAB_BUFFER_C", defaults.buffer_c)),
            dp_budget=int(float(os.getenv("TRACELAB_DP_BUDGET", defaults.dp_budget))),
            block_size=max(1, int(os.getenv("TRACELAB_BLOCK_SIZE", defaults.block_size))),
        )

    @property
    def threads_overridden(self) -> bool:
        return "TRACELAB_THREADS" in os.environ


@lru_cache(maxsize=1)
def get_settings() -> Settings:
    return Settings.from_env()
