import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

# acceptance verdicts, filled by test_acceptance.py and printed after the run
VERDICTS: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(VERDICTS):
        ok, title, detail = VERDICTS[key]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {key:2d}. {title}: {detail}")
