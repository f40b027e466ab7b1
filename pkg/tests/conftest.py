import pytest

# Acceptance tests record one verdict line each; printing them in the
# terminal summary keeps them visible even though pytest captures stdout.
_VERDICTS: list[str] = []


@pytest.fixture(scope="session")
def verdicts():
    def record(line: str) -> None:
        _VERDICTS.append(line)
        print(line)

    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in _VERDICTS:
            terminalreporter.write_line(line)
