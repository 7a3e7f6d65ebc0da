import numpy as np
import pytest


def pytest_addoption(parser):
    parser.addoption("--run-nightly", action="store_true", default=False,
                     help="also run the long Darcy reproduction")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--run-nightly"):
        return
    skip = pytest.mark.skip(reason="nightly tier; pass --run-nightly")
    for item in items:
        if "nightly" in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_CRITERIA = {}


@pytest.fixture
def criterion(request):
    """Record one acceptance line: ``criterion(number, passed, detail)``."""

    def record(number, passed, detail):
        key = str(number)
        prev = _CRITERIA.get(key)
        ok = bool(passed) and (prev is None or prev[0])
        text = detail if prev is None else f"{prev[1]}; {detail}"
        _CRITERIA[key] = (ok, text)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    keys = set(_CRITERIA) | {str(n) for n in range(1, 15)}
    for key in sorted(keys, key=lambda k: (int("".join(c for c in k if c.isdigit())), k)):
        if key not in _CRITERIA:
            terminalreporter.write_line(f"criterion {key:>3}: NOT RUN  (deselected, or nightly tier without --run-nightly)")
            continue
        ok, text = _CRITERIA[key]
        terminalreporter.write_line(f"criterion {key:>3}: {'PASS' if ok else 'FAIL'}  {text}")
