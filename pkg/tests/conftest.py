import os
import tempfile

# 在匯入 src 之前設定，get_settings() 會快取第一次讀到的值
_TMP = tempfile.mkdtemp(prefix="tracelab-tests-")
os.environ.setdefault("TRACELAB_LOG_DIR", _TMP)
os.environ.setdefault("TRACELAB_DB_PATH", os.path.join(_TMP, "runs.db"))
os.environ.pop("TRACELAB_THREADS", None)

import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
