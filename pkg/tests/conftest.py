import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent))


def pytest_terminal_summary(terminalreporter):
    from acceptance_runs import RESULTS

    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, (ok, detail) in RESULTS.items():
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
