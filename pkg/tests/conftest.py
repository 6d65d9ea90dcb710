from __future__ import annotations

from typing import Sequence

from rsbench import PosteriorState

# Acceptance verdict lines, printed once at the end of the session.
ACCEPTANCE_LINES: list[str] = []


def make_state(means: Sequence[float], counts: Sequence[int]) -> PosteriorState:
    """State whose sample means are exactly ``means`` after ``counts`` replications."""
    state = PosteriorState(len(means))
    state.counts = list(counts)
    state.sums = [m * r for m, r in zip(means, counts)]
    state.means = [float(m) for m in means]
    return state


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in ACCEPTANCE_LINES:
        terminalreporter.write_line(line)
