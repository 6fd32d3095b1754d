import numpy as np
import pytest
from hypothesis import settings

from arealwomb.graph import RegionGraph

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


def random_graph(rng: np.random.Generator, n: int, p: float = 0.5, shuffle_order: bool = True) -> RegionGraph:
    """Connected random graph: a random spanning tree plus extra edges."""
    perm = rng.permutation(n)
    edges = set()
    for k in range(1, n):
        a, b = perm[k], perm[rng.integers(0, k)]
        edges.add((min(a, b), max(a, b)))
    for i in range(n):
        for j in range(i + 1, n):
            if rng.random() < p * 0.5:
                edges.add((i, j))
    order = rng.permutation(n) if shuffle_order else None
    return RegionGraph(n, tuple(sorted(edges)), order=order)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def small_problem(variant="unstructured", q=2, rows=3, cols=3, seed=0, R=1):
    """Tiny simulated problem on a grid: (data, graph, disease spec)."""
    from arealwomb.dagar import EdgeDissimilarity
    from arealwomb.data import intercept_only
    from arealwomb.graph import grid_graph
    from arealwomb.simulate import default_disease_graph

    rng = np.random.default_rng(seed)
    g = grid_graph(rows, cols)
    z = [EdgeDissimilarity(rng.exponential(size=(g.m, R))) for _ in range(q)]
    y = rng.poisson(5.0, size=(g.n, q))
    E = rng.uniform(3.0, 6.0, size=(g.n, q))
    return intercept_only(y, E, z), g, default_disease_graph(variant, q)


_ACCEPTANCE: list[str] = []


@pytest.fixture
def acceptance():
    """Record one PASS/FAIL line per acceptance criterion."""

    def record(number: int, ok: bool, detail: str, tolerance: str) -> bool:
        line = f"{'PASS' if ok else 'FAIL'} criterion {number:>2}: {detail} [tolerance: {tolerance}]"
        _ACCEPTANCE.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
