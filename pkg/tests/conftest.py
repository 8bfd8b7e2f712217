import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

_CRITERIA = []


@pytest.fixture
def record_criterion():
    """Acceptance tests report one PASS/FAIL line per criterion through this."""

    def record(number, name, passed, detail=""):
        _CRITERIA.append((number, name, passed, detail))
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number, name, passed, detail in sorted(_CRITERIA):
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"[{status}] criterion {number}: {name} -- {detail}")


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory):
    from dualcoder.train_eval import gen_synthetic

    return gen_synthetic(32, seed=3, out_dir=tmp_path_factory.mktemp("tiny"))
