import numpy as np

KINK_MARGIN = 1e-4  # ten times the finite-difference step


def away_from_kinks(*caches, margin=KINK_MARGIN) -> bool:
    """True when no ReLU pre-activation sits within ``margin`` of zero."""
    return all(np.abs(c.z1).min() > margin and np.abs(c.z2).min() > margin for c in caches)


# one "PASS/FAIL criterion ..." line per acceptance check, echoed after the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
