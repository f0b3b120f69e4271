import pytest

CRITERIA = {}


def pytest_addoption(parser):
    parser.addoption("--run-slow", action="store_true", default=False,
                     help="also run slow tests (full 48-cell sweep)")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--run-slow"):
        return
    skip = pytest.mark.skip(reason="needs --run-slow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(CRITERIA, key=lambda k: (int(k.split(".")[0]), k)):
        terminalreporter.write_line(CRITERIA[key])


@pytest.fixture
def criterion():
    """Record and print one pass/fail line per acceptance criterion."""
    def record(key, ok, detail):
        line = f"criterion {key}: {'PASS' if ok else 'FAIL'} | {detail}"
        CRITERIA[str(key)] = line
        print(line)
        return ok
    return record
