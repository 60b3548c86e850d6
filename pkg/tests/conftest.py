import numpy as np
import pytest

from ratio_consensus import graph


@pytest.fixture
def cycle3():
    return graph.cycle(3)


@pytest.fixture
def cycle_chord4():
    return graph.builtin_graph("cycle-chord:4")


def small_graphs():
    """A handful of distinct strongly connected graphs used across modules."""
    return [
        graph.from_edge_list(1, []),
        graph.cycle(3),
        graph.builtin_graph("cycle-chord:4"),
        graph.paper5(),
        graph.complete(4),
        graph.random_strongly_connected(6, 0.4, 3),
    ]


def rng(seed=0):
    return np.random.Generator(np.random.Philox(seed))


# one line per acceptance criterion, echoed at the end of the run
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
