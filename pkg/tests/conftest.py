import itertools
import os

import hypothesis
import numpy as np
import pytest

from anytime_paths.graph import build_graph

hypothesis.settings.register_profile("ci", max_examples=60, deadline=None)
hypothesis.settings.register_profile("dev", max_examples=15, deadline=None)
hypothesis.settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "ci"))


def random_dag(rng, n_nodes, p=0.4, width=4):
    """Random single-source single-sink DAG over ``v0 .. v{n-1}`` in index order.

    Every node gets an edge from some earlier node and to some later node,
    so all nodes lie on an input-to-output path.
    """
    pairs = {(i, j) for i in range(n_nodes) for j in range(i + 1, n_nodes) if rng.random() < p}
    for j in range(1, n_nodes):
        if not any(b == j for _, b in pairs):
            pairs.add((int(rng.integers(0, j)), j))
    for i in range(n_nodes - 1):
        if not any(a == i for a, _ in pairs):
            pairs.add((i, int(rng.integers(i + 1, n_nodes))))
    edges = [
        dict(id=f"e{i}_{j}", src=f"v{i}", dst=f"v{j}", kind="linear", c_in=width, c_out=width, cost=2.0 * width * width)
        for i, j in sorted(pairs)
    ]
    return build_graph({"nodes": [f"v{i}" for i in range(n_nodes)], "edges": edges, "input": "v0", "output": f"v{n_nodes - 1}"})


def all_paths(graph, source=None, target=None):
    """Every directed path from ``source`` to ``target`` (brute force)."""
    source = graph.input if source is None else source
    target = graph.output if target is None else target
    succ = graph.successors()
    out = []

    def walk(path):
        v = path[-1]
        if v == target:
            out.append(tuple(path))
            return
        for w in succ[v]:
            walk(path + [w])

    walk([source])
    return out


def all_subpaths(graph):
    return [p for s, t in itertools.product(graph.nodes, repeat=2) for p in all_paths(graph, s, t)]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE: dict[int, str] = {}


@pytest.fixture
def acceptance():
    """Record one verdict line per acceptance criterion; the line is printed and the check asserted."""

    def record(k: int, ok: bool, detail: str) -> None:
        line = f"ACCEPTANCE {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE[k] = line
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
