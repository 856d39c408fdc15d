import json
import logging

from src.core.logger import ExtraFormatter, get_logger


def _record(**extra):
    record = logging.LogRecord("tracelab.test", logging.INFO, __file__, 1, "Sweep written", None, None)
    record.__dict__.update(extra)
    return record


def test_extra_fields_are_appended_as_json():
    line = ExtraFormatter("%(levelname)s %(message)s").format(_record(n=200, bracket=(4, 8)))
    message, payload = line.split(" | extra=")
    assert message == "INFO Sweep written"
    assert json.loads(payload) == {"n": 200, "bracket": [4, 8]}


def test_plain_message_without_extra():
    assert ExtraFormatter("%(message)s").format(_record()) == "Sweep written"


def test_logger_is_cached_per_log_type():
    general = get_logger("tracelab.cache-test")
    assert get_logger("tracelab.cache-test") is general
    experiment = get_logger("tracelab.cache-test", log_type="experiment")
    assert experiment is not general
    assert experiment.name == "tracelab.cache-test.experiment"
    assert not general.propagate
