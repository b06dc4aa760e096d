import os
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from docsynth.pool import make_synthetic_pool  # noqa: E402

GOLDEN = Path(__file__).parent / "golden"
REGEN = os.environ.get("DOCSYNTH_REGEN_GOLDEN") == "1"

_acceptance_lines = []


@pytest.fixture(scope="session")
def reference_pool():
    """12 categories x 25 elements, seed 0."""
    return make_synthetic_pool(12, 25, seed=0)


@pytest.fixture(scope="session")
def small_pool():
    return make_synthetic_pool(4, 6, seed=11)


@pytest.fixture
def golden():
    """Compare bytes/text against tests/golden/<name>; DOCSYNTH_REGEN_GOLDEN=1 rewrites."""

    def check(name, data):
        path = GOLDEN / name
        if REGEN or not path.exists():
            path.parent.mkdir(exist_ok=True)
            mode = "wb" if isinstance(data, bytes) else "w"
            with open(path, mode) as f:
                f.write(data)
            if not REGEN:
                pytest.fail(f"golden file {name} was missing and has been written; rerun")
        expected = path.read_bytes() if isinstance(data, bytes) else path.read_text()
        assert data == expected, f"output differs from golden file {name}"

    return check


@pytest.fixture
def acceptance_report():
    def record(number, title, passed, detail):
        _acceptance_lines.append(f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {title} -- {detail}")

    return record


def pytest_terminal_summary(terminalreporter):
    if _acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in _acceptance_lines:
            terminalreporter.write_line(line)
