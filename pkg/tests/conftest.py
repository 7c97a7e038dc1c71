import os
import sys

sys.path.insert(0, os.path.dirname(__file__))

# Acceptance tests append "[PASS] ..." / "[FAIL] ..." lines here; they are
# repeated at the end of the terminal report so they survive output capture.
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
