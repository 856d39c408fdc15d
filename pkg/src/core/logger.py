import json
import logging
from pathlib import Path

from src.core.config import get_settings


_LOGGERS: dict[tuple[str, str], logging.Logger] = {}

_LOG_FILES = {
    "general": "tracelab.log",
    "experiment": "experiments.log",
}

# 空白 LogRecord 帶有的屬性即為 logging 自身的欄位
_RESERVED = set(vars(logging.LogRecord("", logging.INFO, "", 0, "", None, None))) | {"message", "asctime"}


class ExtraFormatter(logging.Formatter):
    """在訊息末端以 JSON 附上 extra={...} 傳入的欄位。"""

    def format(self, record: logging.LogRecord) -> str:
        message = super().format(record)
        fields = {k: v for k, v in vars(record).items() if k not in _RESERVED and not k.startswith("_")}
        if not fields:
            return message
        try:
            payload = json.dumps(fields, ensure_ascii=False, default=str)
        except (TypeError, ValueError):
            payload = str(fields)
        return f"{message} | extra={payload}"


def _file_for(log_type: str) -> Path:
    settings = get_settings()
    log_dir = Path(settings.log_dir)
    log_dir.mkdir(parents=True, exist_ok=True)
    return log_dir / _LOG_FILES.get(log_type.lower(), _LOG_FILES["general"])


def get_logger(name: str = "tracelab", log_type: str = "general") -> logging.Logger:
    """
    依 log_type 回傳寫入不同檔案的 logger。
    log_type 可指定為 "general"（tracelab.log）或 "experiment"（experiments.log）；
    同一 (name, log_type) 只設定一次處理器。
    """
    key = (name, log_type)
    if key in _LOGGERS:
        return _LOGGERS[key]

    settings = get_settings()
    logger = logging.getLogger(name if log_type == "general" else f"{name}.{log_type}")
    logger.setLevel(getattr(logging, settings.log_level, logging.INFO))

    formatter = ExtraFormatter("%(asctime)s [%(levelname)s] %(name)s: %(message)s")
    handlers: list[logging.Handler] = [logging.FileHandler(_file_for(log_type), encoding="utf-8")]
    if settings.log_stderr:
        handlers.append(logging.StreamHandler())
    for handler in handlers:
        handler.setFormatter(formatter)
        logger.addHandler(handler)

    # 不往 root logger 傳遞，避免重複紀錄
    logger.propagate = False

    _LOGGERS[key] = logger
    return logger
