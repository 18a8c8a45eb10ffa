import pytest

ACCEPTANCE_LINES: list[str] = []


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run multi-hour learning experiments")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: multi-hour learning experiment, needs --runslow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip = pytest.mark.skip(reason="slow learning experiment; pass --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)
            if item.name.startswith("test_criterion_"):
                number = int(item.name.split("_")[2])
                ACCEPTANCE_LINES.append(f"criterion {number:>2} SKIP  {item.name} (pass --runslow)")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda x: int(x.split()[1])):
            terminalreporter.write_line(line)
