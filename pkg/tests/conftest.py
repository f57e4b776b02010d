import numpy as np
import pytest

from rdgcl.graph import InteractionSet


def random_interactions(rng, n_users, n_items, density=0.3):
    """Random bipartite log over a fixed catalog; may leave some nodes isolated."""
    mask = rng.random((n_users, n_items)) < density
    # at least one edge so the graph is non-trivial
    mask[0, 0] = True
    u, v = np.nonzero(mask)
    return InteractionSet(n_users, n_items, u, v,
                          tuple(f"u{i}" for i in range(n_users)), tuple(f"i{j}" for j in range(n_items)))


def dense_normalized_adjacency(inter):
    """Independent dense construction of D̄^{-1/2}(A+I)D̄^{-1/2}."""
    n = inter.num_users + inter.num_items
    a = np.zeros((n, n))
    for u, v in zip(inter.users, inter.items):
        a[u, inter.num_users + v] = 1.0
        a[inter.num_users + v, u] = 1.0
    a_bar = a + np.eye(n)
    d = a_bar.sum(axis=1)
    return a_bar / np.sqrt(np.outer(d, d))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def make_graph():
    def factory(seed, n_nodes=16, density=0.3):
        r = np.random.default_rng(seed)
        nu = n_nodes // 2
        return random_interactions(r, nu, n_nodes - nu, density)
    return factory


ACCEPTANCE_RESULTS: dict[str, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(ACCEPTANCE_RESULTS, key=lambda s: int(s.split()[0][1:])):
        ok, detail = ACCEPTANCE_RESULTS[name]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
