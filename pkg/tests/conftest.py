import re

import pytest

CRITERIA: list[tuple[str, str]] = []


def _order(label: str):
    num, suffix = re.fullmatch(r"(\d+)(\w*)", label).groups()
    return int(num), suffix


@pytest.fixture
def criterion():
    """Records one verdict line per acceptance criterion for the terminal summary."""

    def record(label, name, passed, detail):
        line = f"{'PASS' if passed else 'FAIL'}  criterion {label:<3} {name}: {detail}"
        CRITERIA.append((str(label), line))
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(CRITERIA, key=lambda c: _order(c[0])):
            terminalreporter.write_line(line)
