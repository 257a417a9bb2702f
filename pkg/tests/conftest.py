import numpy as np
import pytest

from rdslab.graph import Graph


def make_graph(edges, n=None, **attributes):
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    n = int(edges.max()) + 1 if n is None else n
    attrs = {k: np.asarray(v, dtype=float) for k, v in attributes.items()}
    return Graph.from_edges(range(n), edges, attrs)


def complete_graph(n, **attributes):
    i, j = np.triu_indices(n, 1)
    return make_graph(np.stack([i, j], axis=1), n, **attributes)


def random_connected_graph(n, p, rng):
    # random tree plus extra G(n, p) edges keeps it connected
    order = rng.permutation(n)
    tree = [(order[k], order[rng.integers(k)]) for k in range(1, n)]
    i, j = np.triu_indices(n, 1)
    extra = np.stack([i, j], axis=1)[rng.random(len(i)) < p]
    return make_graph(np.concatenate([np.array(tree).reshape(-1, 2), extra]), n)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# One line per acceptance check, printed in the terminal summary so the
# verdicts are visible whatever the capture mode.
ACCEPTANCE_LINES: list[str] = []


def record(label: str, ok: bool, detail: str) -> bool:
    ACCEPTANCE_LINES.append(f"{label}: {'PASS' if ok else 'FAIL'}  {detail}")
    return ok


def note(label: str, detail: str) -> None:
    ACCEPTANCE_LINES.append(f"{label}: {detail}")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
