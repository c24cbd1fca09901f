import os
import sys

sys.path.insert(0, os.path.dirname(__file__))

import acceptance_log  # noqa: E402


def _key(k):
    digits = "".join(ch for ch in k if ch.isdigit())
    return int(digits), k


def pytest_terminal_summary(terminalreporter):
    if not acceptance_log.LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(acceptance_log.LINES, key=_key):
        terminalreporter.write_line(acceptance_log.LINES[k])
