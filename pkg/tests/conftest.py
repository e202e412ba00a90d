import json

import numpy as np
import pytest

from fairflow import linear_network, to_config


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def linear():
    return linear_network(0.5)


@pytest.fixture
def write_config(tmp_path):
    def _write(model_or_dict, name="net.json"):
        cfg = model_or_dict if isinstance(model_or_dict, dict) else to_config(model_or_dict)
        path = tmp_path / name
        path.write_text(json.dumps(cfg))
        return path

    return _write


ACCEPTANCE = {}


@pytest.fixture
def record_criterion():
    """Register a criterion outcome and echo one pass/fail line."""

    def _record(number, title, ok, detail):
        line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
        ACCEPTANCE[number] = line
        print(line)
        return ok

    return _record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[number])
