import numpy as np
import pytest

from percpolymer.perc import BondConfig, get_box
from percpolymer.tubes import forced_edge_sets


def config_from_edges(d, L, open_edges=(), closed_edges=(), background=False):
    """Configuration with every edge set to ``background`` except the listed (lower, axis) edges."""
    box = get_box(d, L)
    mask = np.full(box.n_edges, background, dtype=bool)
    for lower, axis in open_edges:
        mask[box.edge_index(lower, axis)] = True
    for lower, axis in closed_edges:
        mask[box.edge_index(lower, axis)] = False
    return BondConfig.from_open_mask(box, mask, p=float(background), seed=0)


def figure_one_config(L=8, base=(-3, 0, 0), m=6):
    """Fully open box with the closed edges of one e1 tube of length ``m`` at ``base``."""
    fe = forced_edge_sets(3, m, base)
    return config_from_edges(3, L, closed_edges=fe.closed_required, background=True)


@pytest.fixture
def figure_one():
    return figure_one_config()


_ACCEPTANCE_LINES = []


def record_acceptance(number, ok, detail):
    """Print one pass/fail line for an acceptance criterion and keep it for the session summary."""
    line = f"ACCEPTANCE {number:>2} {'PASS' if ok else 'FAIL'}  {detail}"
    print(line)
    _ACCEPTANCE_LINES.append((number, line))
    return ok


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(_ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
