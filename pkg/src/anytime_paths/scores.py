"""Node and path scores derived from the stationary distribution.

A node's accumulated score is its stationary mass summed over the T
subnetwork copies; a path's score is the sum of its nodes' scores.  Path
search compares scores exactly (integer arithmetic on the binary
expansions of the floats) so argmax and tie-breaking are reproducible.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .dtmc import (
    DEFAULT_KAPPA,
    DEFAULT_LAMBDA,
    DEFAULT_MAX_ITER,
    DEFAULT_TOL,
    HyperAdjacency,
    StationaryDistribution,
    TransitionMatrix,
    hyper_adjacency,
    stationary,
    transition_matrix,
)
from .graph import EdgePolicy, SubnetworkMask, SupernetGraph, sample_subnetwork

log = logging.getLogger(__name__)

DEFAULT_T = 8


class PathError(ValueError):
    pass


@dataclass(frozen=True)
class TasTable:
    mu: dict[str, float]
    T: int

    def __getitem__(self, node: str) -> float:
        return self.mu[node]

    def as_array(self) -> np.ndarray:
        return np.fromiter(self.mu.values(), dtype=float)


@dataclass(frozen=True)
class PathRecord:
    nodes: tuple[str, ...]
    tps: float | None = None

    @property
    def length(self) -> int:
        return len(self.nodes)


@dataclass(frozen=True)
class ImportanceLabels:
    important: frozenset[str]
    unimportant: frozenset[str]


def tas(pi: StationaryDistribution | np.ndarray, T: int, N: int, nodes: Sequence[str] | None = None) -> TasTable:
    vec = pi.pi if isinstance(pi, StationaryDistribution) else np.asarray(pi, dtype=float)
    if vec.shape != (N * T,):
        raise ValueError(f"stationary vector has length {vec.size}, expected N*T = {N * T}")
    mu = vec.reshape(T, N).sum(axis=0)
    names = list(nodes) if nodes is not None else [str(i) for i in range(N)]
    return TasTable(dict(zip(names, mu.tolist())), T)


def tps(path: Sequence[str] | PathRecord, table: TasTable) -> float:
    nodes = path.nodes if isinstance(path, PathRecord) else tuple(path)
    if not nodes:
        raise PathError("empty path")
    try:
        return math.fsum(table.mu[n] for n in nodes)
    except KeyError as exc:
        raise PathError(f"unknown node {exc.args[0]!r}") from None


def _exact_weights(table: TasTable) -> dict[str, int]:
    """Scale every score to an integer on a common power-of-two denominator."""
    ratios = {n: float(v).as_integer_ratio() for n, v in table.mu.items()}
    denom = max(d for _, d in ratios.values())
    return {n: num * (denom // d) for n, (num, d) in ratios.items()}


def max_tps_path(
    graph: SupernetGraph,
    table: TasTable,
    length: int | None = None,
    source: str | None = None,
    target: str | None = None,
    anchored: bool = True,
) -> PathRecord:
    """Highest-scoring directed path from ``source`` to ``target``.

    With ``length`` the search is restricted to paths of exactly that many
    nodes; ``anchored=False`` then lets the path start and end anywhere.
    Ties go to the lexicographically smallest sequence of node positions.
    """
    if not anchored and length is None:
        raise PathError("sub-path search needs a length")
    source = graph.input if source is None else source
    target = graph.output if target is None else target
    w = _exact_weights(table)
    pos = {n: graph.index(n) for n in graph.nodes}
    preds: dict[str, list[str]] = {n: [] for n in graph.nodes}
    for u, vs in graph.successors().items():
        for v in vs:
            preds[v].append(u)
    order = graph.topological_order

    if length is None:
        best: dict[str, tuple[int, str | None]] = {source: (w[source], None)}

        def seq(v: str) -> tuple[int, ...]:
            out = []
            while v is not None:
                out.append(pos[v])
                v = best[v][1]
            return tuple(reversed(out))

        for v in order:
            if v == source:
                continue
            cands = [u for u in preds[v] if u in best]
            if not cands:
                continue
            top = max(best[u][0] for u in cands)
            tied = [u for u in cands if best[u][0] == top]
            # extend by v so prefixes of different lengths compare correctly
            pick = min(tied, key=lambda u: seq(u) + (pos[v],)) if len(tied) > 1 else tied[0]
            best[v] = (top + w[v], pick)
        if target not in best:
            raise PathError(f"no path from {source!r} to {target!r}")
        nodes = tuple(graph.nodes[i] for i in seq(target))
        return PathRecord(nodes, tps(nodes, table))

    if length < 1:
        raise PathError("path length must be positive")
    # table[l][v] = (score, predecessor) of the best l-node path source -> v
    starts = [source] if anchored else list(graph.nodes)
    layers: list[dict[str, tuple[int, str | None]]] = [{s: (w[s], None) for s in starts}]

    def seq_at(v: str, l: int) -> tuple[int, ...]:
        out = []
        while v is not None:
            out.append(pos[v])
            v = layers[l][v][1]
            l -= 1
        return tuple(reversed(out))

    for l in range(1, length):
        prev = layers[-1]
        cur: dict[str, tuple[int, str | None]] = {}
        for v in order:
            cands = [u for u in preds[v] if u in prev]
            if not cands:
                continue
            top = max(prev[u][0] for u in cands)
            tied = [u for u in cands if prev[u][0] == top]
            pick = min(tied, key=lambda u: seq_at(u, l - 1)) if len(tied) > 1 else tied[0]
            cur[v] = (top + w[v], pick)
        layers.append(cur)
    last = layers[length - 1]
    if anchored:
        if target not in last:
            raise PathError(f"no {length}-node path from {source!r} to {target!r}")
        end = target
    else:
        if not last:
            raise PathError(f"no {length}-node path")
        top = max(sc for sc, _ in last.values())
        end = min((v for v, (sc, _) in last.items() if sc == top), key=lambda v: seq_at(v, length - 1))
    nodes = tuple(graph.nodes[i] for i in seq_at(end, length - 1))
    return PathRecord(nodes, tps(nodes, table))


def path_edges(graph: SupernetGraph, path: Sequence[str] | PathRecord) -> list[str]:
    nodes = path.nodes if isinstance(path, PathRecord) else tuple(path)
    out: list[str] = []
    for u, v in zip(nodes, nodes[1:]):
        between = graph.edges_between(u, v)
        if not between:
            raise PathError(f"no supernet edge {u!r} -> {v!r}")
        out.extend(e.id for e in between)
    return out


def label_important(graph: SupernetGraph, path: Sequence[str] | PathRecord) -> ImportanceLabels:
    important = frozenset(path_edges(graph, path))
    rest = frozenset(e.id for e in graph.edges) - important
    return ImportanceLabels(important, rest)


# ---------------------------------------------------------------------------
# Uniform path sampling


def _randbelow(rng: np.random.Generator, n: int) -> int:
    """Uniform integer in ``[0, n)`` for arbitrarily large ``n``."""
    if n <= 0:
        raise ValueError("n must be positive")
    if n <= 2**62:
        return int(rng.integers(0, n))
    k = n.bit_length()
    nbytes = (k + 7) // 8
    while True:
        r = int.from_bytes(rng.bytes(nbytes), "little") >> (8 * nbytes - k)
        if r < n:
            return r


def count_paths(graph: SupernetGraph, length: int, anchored: bool = True) -> list[dict[str, int]]:
    """``counts[l][v]``: number of ``l``-node paths starting at ``v``.

    Anchored paths must end at the output; otherwise any end node counts.
    """
    succ = graph.successors()
    base = {n: int(n == graph.output) if anchored else 1 for n in graph.nodes}
    counts = [dict.fromkeys(graph.nodes, 0), base]
    for _ in range(2, length + 1):
        prev = counts[-1]
        counts.append({v: sum(prev[w] for w in succ[v]) for v in graph.nodes})
    return counts


def middle_path_length(graph: SupernetGraph) -> int:
    """Input-to-output path length closest to the middle of the available range."""
    counts = count_paths(graph, graph.node_count)
    lengths = [l for l in range(1, graph.node_count + 1) if counts[l][graph.input]]
    mid = (lengths[0] + lengths[-1]) / 2
    return min(lengths, key=lambda l: (abs(l - mid), l))


def sample_paths(
    graph: SupernetGraph,
    length: int,
    count: int,
    rng: np.random.Generator,
    anchored: bool = True,
    table: TasTable | None = None,
    max_draws: int | None = None,
) -> list[PathRecord]:
    """Up to ``count`` distinct paths with exactly ``length`` nodes.

    Each draw is uniform over all such paths (input-to-output paths when
    ``anchored``, any directed path otherwise); duplicates are discarded.
    """
    if length < 1 or count < 0:
        raise PathError("length must be positive and count nonnegative")
    counts = count_paths(graph, length, anchored)
    succ = graph.successors()
    starts = [graph.input] if anchored else list(graph.nodes)
    start_w = [counts[length][s] for s in starts]
    total = sum(start_w)
    if total == 0:
        raise PathError(f"no {'input-to-output ' if anchored else ''}path with {length} nodes")
    want = min(count, total)
    max_draws = 50 * want + 100 if max_draws is None else max_draws
    seen: dict[tuple[str, ...], None] = {}
    draws = 0
    while len(seen) < want and draws < max_draws:
        draws += 1
        r = _randbelow(rng, total)
        for s, c in zip(starts, start_w):
            if r < c:
                v = s
                break
            r -= c
        nodes = [v]
        for l in range(length - 1, 0, -1):
            r = _randbelow(rng, counts[l + 1][v])
            for w in succ[v]:
                c = counts[l][w]
                if r < c:
                    v = w
                    break
                r -= c
            nodes.append(v)
        seen.setdefault(tuple(nodes), None)
    return [PathRecord(p, tps(p, table) if table is not None else None) for p in seen]


# ---------------------------------------------------------------------------
# End-to-end analysis


def sample_covering_masks(
    graph: SupernetGraph,
    T: int,
    rng: np.random.Generator,
    keep: float = 0.5,
    max_rounds: int = 200,
) -> list[SubnetworkMask]:
    """Draw T subnetworks with uniform keep probability ``keep``.

    Redraws the whole set until every optional edge appears in at least one
    subnetwork.  When that is out of reach (e.g. ``T=1``) the last draw is
    used after ``max_rounds`` attempts.
    """
    if T < 1:
        raise ValueError("T must be at least 1")
    policy = EdgePolicy.uniform(graph, keep)
    optional = set(graph.optional_edges)
    masks: list[SubnetworkMask] = []
    for _ in range(max_rounds):
        masks = [sample_subnetwork(graph, policy, rng) for _ in range(T)]
        covered = set().union(*(m.kept for m in masks))
        if optional <= covered:
            return masks
    log.info("coverage not reached for T=%d after %d rounds; using last draw", T, max_rounds)
    return masks


@dataclass(frozen=True)
class Analysis:
    graph: SupernetGraph
    masks: list[SubnetworkMask]
    hyper: HyperAdjacency
    P: TransitionMatrix
    pi: StationaryDistribution
    tas: TasTable
    params: dict = field(default_factory=dict)


def analyze_masks(
    graph: SupernetGraph,
    masks: Sequence[SubnetworkMask],
    lam: float = DEFAULT_LAMBDA,
    kappa: float = DEFAULT_KAPPA,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> Analysis:
    H = hyper_adjacency(list(masks), graph, lam)
    P = transition_matrix(H, kappa)
    pi = stationary(P, tol, max_iter)
    table = tas(pi, len(masks), graph.node_count, graph.nodes)
    params = dict(T=len(masks), lam=lam, kappa=kappa, tol=tol)
    return Analysis(graph, list(masks), H, P, pi, table, params)


def analyze(
    graph: SupernetGraph,
    T: int = DEFAULT_T,
    rng: np.random.Generator | None = None,
    lam: float = DEFAULT_LAMBDA,
    kappa: float = DEFAULT_KAPPA,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    keep: float = 0.5,
) -> Analysis:
    """Sample T covering subnetworks and compute their accumulated node scores."""
    rng = np.random.default_rng() if rng is None else rng
    masks = sample_covering_masks(graph, T, rng, keep)
    return analyze_masks(graph, masks, lam, kappa, tol, max_iter)


@dataclass(frozen=True)
class StabilityRow:
    T: int
    mean: float
    std: float

    @property
    def rel_std(self) -> float:
        return self.std / self.mean if self.mean else float("nan")


def tps_stability(
    graph: SupernetGraph,
    T_values: Iterable[int],
    runs: int,
    rng: np.random.Generator,
    path: Sequence[str] | PathRecord,
    lam: float = DEFAULT_LAMBDA,
    kappa: float = DEFAULT_KAPPA,
    tol: float = DEFAULT_TOL,
) -> list[StabilityRow]:
    """Mean and sample standard deviation of one path's score over resampled subnetworks."""
    if runs < 2:
        raise ValueError("runs must be at least 2")
    nodes = path.nodes if isinstance(path, PathRecord) else tuple(path)
    rows = []
    for T in T_values:
        vals = [tps(nodes, analyze(graph, T, rng, lam, kappa, tol).tas) for _ in range(runs)]
        rows.append(StabilityRow(int(T), float(np.mean(vals)), float(np.std(vals, ddof=1))))
    return rows


@dataclass(frozen=True)
class LambdaSweep:
    lambdas: tuple[float, ...]
    paths: tuple[PathRecord, ...]
    tps: np.ndarray  # shape (len(lambdas), len(paths))

    def ranks(self) -> np.ndarray:
        """Rank of each path per lambda (0 = highest score, ties by path order)."""
        out = np.empty_like(self.tps, dtype=int)
        for i, row in enumerate(self.tps):
            order = sorted(range(len(row)), key=lambda j: (-row[j], j))
            out[i, order] = np.arange(len(row))
        return out

    def rows(self) -> list[tuple[float, int, float, int]]:
        r = self.ranks()
        return [
            (lam, j, float(self.tps[i, j]), int(r[i, j]))
            for i, lam in enumerate(self.lambdas)
            for j in range(len(self.paths))
        ]


def lambda_sweep(
    graph: SupernetGraph,
    lambdas: Sequence[float],
    paths: Sequence[Sequence[str] | PathRecord],
    T: int,
    rng: np.random.Generator,
    kappa: float = DEFAULT_KAPPA,
    tol: float = DEFAULT_TOL,
    masks: Sequence[SubnetworkMask] | None = None,
) -> LambdaSweep:
    """Score fixed paths under each coupling strength, holding the subnetworks fixed."""
    if masks is None:
        masks = sample_covering_masks(graph, T, rng)
    recs = tuple(p if isinstance(p, PathRecord) else PathRecord(tuple(p)) for p in paths)
    grid = np.empty((len(lambdas), len(recs)))
    for i, lam in enumerate(lambdas):
        table = analyze_masks(graph, masks, lam, kappa, tol).tas
        grid[i] = [tps(p.nodes, table) for p in recs]
    return LambdaSweep(tuple(float(l) for l in lambdas), recs, grid)
