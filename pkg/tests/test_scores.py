import numpy as np
import pytest
from hypothesis import given, strategies as st

from anytime_paths import templates
from anytime_paths.dtmc import hyper_adjacency, stationary, transition_matrix
from anytime_paths.graph import build_graph, full_mask
from anytime_paths.scores import (
    PathError,
    PathRecord,
    TasTable,
    analyze,
    analyze_masks,
    count_paths,
    label_important,
    lambda_sweep,
    max_tps_path,
    path_edges,
    sample_covering_masks,
    sample_paths,
    tas,
    tps,
    tps_stability,
)

from conftest import all_paths, all_subpaths, random_dag


def diamond():
    edges = [
        dict(id=f"{s}{d}", src=s, dst=d, kind="linear", c_in=4, c_out=4, cost=32)
        for s, d in [("r", "a"), ("r", "b"), ("a", "d"), ("b", "d")]
    ]
    return build_graph({"nodes": ["r", "a", "b", "d"], "edges": edges, "input": "r", "output": "d"})


def table(mu, T=1):
    return TasTable(dict(mu), T)


def test_tas_single_copy_is_pi():
    pi = np.array([0.1, 0.2, 0.7])
    t = tas(pi, 1, 3, ["a", "b", "c"])
    assert t.mu == {"a": 0.1, "b": 0.2, "c": 0.7}


def test_tas_two_identical_chains():
    g = templates.chain()
    pi = stationary(transition_matrix(hyper_adjacency([full_mask(g)] * 2, g, 1.0), 0.0), tol=1e-14)
    t = tas(pi, 2, 3, g.nodes)
    np.testing.assert_allclose(t.as_array(), 1 / 3, atol=1e-12)
    halves = pi.pi.reshape(2, 3)
    np.testing.assert_allclose(halves[0], halves[1], atol=1e-13)


def test_tas_dimension_mismatch():
    with pytest.raises(ValueError):
        tas(np.ones(5) / 5, 2, 3)


@given(st.integers(0, 2**32 - 1), st.integers(1, 6))
def test_tas_sums_to_one(seed, T):
    g = templates.resnet_like()
    a = analyze(g, T, np.random.default_rng(seed))
    assert abs(sum(a.tas.mu.values()) - 1.0) <= 1e-10
    assert min(a.tas.mu.values()) >= 0


def test_tps_examples():
    t = table({"a": 1 / 3, "b": 1 / 3, "c": 1 / 3})
    assert tps(["a", "b", "c"], t) == 1.0
    assert tps(["b"], t) == 1 / 3
    star = table({"hub": 1 / 2, "l1": 1 / 6, "l2": 1 / 6, "l3": 1 / 6})
    assert tps(["hub", "l1"], star) == pytest.approx(2 / 3, abs=1e-15)


def test_tps_errors():
    t = table({"a": 1.0})
    with pytest.raises(PathError):
        tps([], t)
    with pytest.raises(PathError):
        tps(["zz"], t)


@given(st.lists(st.floats(0, 1), min_size=2, max_size=20), st.data())
def test_tps_additivity(values, data):
    names = [f"n{i}" for i in range(len(values))]
    t = table(zip(names, values))
    cut = data.draw(st.integers(1, len(names) - 1))
    assert tps(names, t) == pytest.approx(tps(names[:cut], t) + tps(names[cut:], t), abs=1e-12)


def test_max_path_diamond():
    g = diamond()
    rec = max_tps_path(g, table({"r": 0.3, "a": 0.25, "b": 0.15, "d": 0.3}))
    assert rec.nodes == ("r", "a", "d")
    assert rec.tps == pytest.approx(0.85)
    swapped = max_tps_path(g, table({"r": 0.3, "a": 0.15, "b": 0.25, "d": 0.3}))
    assert swapped.nodes == ("r", "b", "d")


def test_max_path_tie_break():
    g = diamond()
    rec = max_tps_path(g, table({n: 0.25 for n in "rabd"}))
    assert rec.nodes == ("r", "a", "d")


def test_max_path_missing_length():
    g = diamond()
    with pytest.raises(PathError):
        max_tps_path(g, table({n: 0.25 for n in "rabd"}), length=4)
    with pytest.raises(PathError):
        max_tps_path(g, table({n: 0.25 for n in "rabd"}), anchored=False)


def _brute(graph, mu, paths):
    w = {n: float(v) for n, v in mu.items()}
    best = max(tps(p, table(w)) for p in paths)
    # lexicographic by node positions among the exact maxima
    tied = [p for p in paths if tps(p, table(w)) == best]
    return min(tied, key=lambda p: tuple(graph.index(n) for n in p))


@given(st.integers(0, 2**32 - 1), st.integers(3, 12), st.booleans())
def test_max_path_matches_enumeration(seed, n, coarse):
    rng = np.random.default_rng(seed)
    g = random_dag(rng, n)
    # coarse scores create many exact ties
    vals = rng.integers(0, 3, n) / 8 if coarse else rng.random(n)
    mu = dict(zip(g.nodes, vals.tolist()))
    paths = all_paths(g)
    assert max_tps_path(g, table(mu)).nodes == _brute(g, mu, paths)
    for D in sorted({len(p) for p in paths}):
        same = [p for p in paths if len(p) == D]
        assert max_tps_path(g, table(mu), length=D).nodes == _brute(g, mu, same)


@given(st.integers(0, 2**32 - 1), st.integers(3, 9))
def test_subpath_search_matches_enumeration(seed, n):
    rng = np.random.default_rng(seed)
    g = random_dag(rng, n)
    mu = dict(zip(g.nodes, (rng.integers(0, 4, n) / 4).tolist()))
    subs = all_subpaths(g)
    for D in sorted({len(p) for p in subs}):
        same = [p for p in subs if len(p) == D]
        assert max_tps_path(g, table(mu), length=D, anchored=False).nodes == _brute(g, mu, same)


def test_eight_node_length_four(rng):
    g = random_dag(rng, 8, p=0.5)
    mu = dict(zip(g.nodes, rng.random(8).tolist()))
    four = [p for p in all_paths(g) if len(p) == 4]
    assert four
    assert max_tps_path(g, table(mu), length=4).nodes == _brute(g, mu, four)


def test_label_important_diamond():
    labels = label_important(diamond(), ("r", "a", "d"))
    assert labels.important == {"ra", "ad"}
    assert labels.unimportant == {"rb", "bd"}


def test_label_important_chain_and_branch():
    g = templates.chain()
    assert label_important(g, g.nodes).unimportant == frozenset()
    g = templates.inverted_residual()
    rec = max_tps_path(g, table({n: 1.0 if i != 1 else 0.0 for i, n in enumerate(g.nodes)}))
    labels = label_important(g, rec)
    assert labels.important | labels.unimportant == {e.id for e in g.edges}
    assert not labels.important & labels.unimportant


def test_label_important_unrealizable():
    with pytest.raises(PathError):
        label_important(diamond(), ("r", "d"))
    with pytest.raises(PathError):
        path_edges(diamond(), ("a", "b"))


def test_sample_chain_unique_path(rng):
    g = templates.chain(5)
    paths = sample_paths(g, 5, 3, rng)
    assert [p.nodes for p in paths] == [tuple(g.nodes)]


def test_sample_no_path(rng):
    with pytest.raises(PathError):
        sample_paths(templates.chain(5), 4, 1, rng)


def test_sample_mlp_subpaths():
    g = templates.residual_mlp(140, 8)
    a = sample_paths(g, 50, 30, np.random.default_rng(4), anchored=False)
    b = sample_paths(g, 50, 30, np.random.default_rng(4), anchored=False)
    assert len(a) == 30 == len({p.nodes for p in a})
    assert [p.nodes for p in a] == [p.nodes for p in b]
    succ = g.successors()
    for p in a:
        assert p.length == 50
        assert all(v in succ[u] for u, v in zip(p.nodes, p.nodes[1:]))


def test_sample_paths_uniform():
    g = diamond()
    rng = np.random.default_rng(0)
    hits = {}
    for _ in range(4000):
        (p,) = sample_paths(g, 3, 1, rng)
        hits[p.nodes] = hits.get(p.nodes, 0) + 1
    assert set(hits) == {("r", "a", "d"), ("r", "b", "d")}
    assert abs(hits[("r", "a", "d")] / 4000 - 0.5) < 0.04


@given(st.integers(0, 2**32 - 1), st.integers(3, 10))
def test_count_paths_matches_enumeration(seed, n):
    g = random_dag(np.random.default_rng(seed), n)
    paths = all_paths(g)
    counts = count_paths(g, n, anchored=True)
    for D in range(1, n + 1):
        assert counts[D][g.input] == sum(len(p) == D for p in paths)


def test_sample_paths_scored(rng):
    g = diamond()
    t = table({"r": 0.1, "a": 0.2, "b": 0.3, "d": 0.4})
    for p in sample_paths(g, 3, 2, rng, table=t):
        assert p.tps == pytest.approx(sum(t[n] for n in p.nodes), abs=1e-12)


def test_covering_masks_cover(rng):
    g = templates.mobilenet_like()
    masks = sample_covering_masks(g, 8, rng)
    assert set(g.optional_edges) <= set().union(*(m.kept for m in masks))
    with pytest.raises(ValueError):
        sample_covering_masks(g, 0, rng)


def test_mask_order_invariance(rng):
    g = templates.resnet_like()
    masks = sample_covering_masks(g, 5, rng)
    a = analyze_masks(g, masks, tol=1e-13).tas
    b = analyze_masks(g, masks[::-1], tol=1e-13).tas
    for n in g.nodes:
        assert a[n] == pytest.approx(b[n], abs=1e-11)


def test_stability_shape_and_determinism():
    g = templates.residual_mlp(12, 8)
    rec = max_tps_path(g, analyze(g, 8, np.random.default_rng(0)).tas)
    a = tps_stability(g, [1, 4], 3, np.random.default_rng(5), rec)
    b = tps_stability(g, [1, 4], 3, np.random.default_rng(5), rec)
    assert a == b
    assert [r.T for r in a] == [1, 4]
    assert all(r.std >= 0 and r.mean > 0 for r in a)
    with pytest.raises(ValueError):
        tps_stability(g, [1], 1, np.random.default_rng(0), rec)


def test_lambda_sweep_examples():
    g = templates.mobilenet_like()
    rng = np.random.default_rng(2)
    masks = sample_covering_masks(g, 8, rng)
    paths = sample_paths(g, 12, 4, rng, anchored=False)
    sweep = lambda_sweep(g, [0.5, 1.0], paths, 8, rng, masks=masks)
    base = analyze_masks(g, masks, lam=1.0).tas
    assert list(sweep.tps[1]) == [tps(p, base) for p in paths]
    single = lambda_sweep(g, [0.1, 1.0], paths[:1], 8, rng, masks=masks)
    assert (single.ranks() == 0).all()
    assert len(sweep.rows()) == 2 * len(paths)


def test_lambda_ranks_ties_by_index():
    from anytime_paths.scores import LambdaSweep

    s = LambdaSweep((1.0,), (PathRecord(("a",)), PathRecord(("b",)), PathRecord(("c",))), np.array([[0.2, 0.5, 0.2]]))
    assert s.ranks().tolist() == [[1, 0, 2]]
