"""Supernets as directed operation graphs, and sampled subnetworks of them.

Operations are edges and featuremaps are nodes.  Edges stay directed here;
the random-walk view symmetrizes them only when an adjacency matrix is built.
"""

from __future__ import annotations

import hashlib
import json
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np
from scipy import sparse

KINDS = ("linear", "conv", "depthwise_conv", "residual_add", "pool", "io")
# Kinds whose output channel count is tied to the input channel count.
WIDTH_PRESERVING = frozenset({"depthwise_conv", "residual_add", "pool"})
DEFAULT_FRACTIONS = (0.25, 0.5, 0.75, 1.0)


class GraphError(ValueError):
    pass


class PolicyError(ValueError):
    pass


class SamplingError(RuntimeError):
    pass


@dataclass(frozen=True)
class EdgeSpec:
    id: str
    src: str
    dst: str
    kind: str
    c_in: int
    c_out: int
    cost: float = 0.0
    always_keep: bool = False

    @property
    def width_preserving(self) -> bool:
        return self.kind in WIDTH_PRESERVING


@dataclass(frozen=True)
class SupernetGraph:
    nodes: tuple[str, ...]
    edges: tuple[EdgeSpec, ...]
    input: str
    output: str
    _index: dict[str, int] = field(repr=False, compare=False)
    _edge_index: dict[str, int] = field(repr=False, compare=False)
    _topo: tuple[str, ...] = field(repr=False, compare=False)

    @property
    def node_count(self) -> int:
        return len(self.nodes)

    @property
    def edge_count(self) -> int:
        return len(self.edges)

    def index(self, node: str) -> int:
        """Zero-based position of ``node``; the input is 0, the output N-1."""
        return self._index[node]

    def edge(self, edge_id: str) -> EdgeSpec:
        try:
            return self.edges[self._edge_index[edge_id]]
        except KeyError:
            raise GraphError(f"unknown edge {edge_id!r}") from None

    @property
    def topological_order(self) -> tuple[str, ...]:
        return self._topo

    def out_edges(self, node: str) -> list[EdgeSpec]:
        return [e for e in self.edges if e.src == node]

    def in_edges(self, node: str) -> list[EdgeSpec]:
        return [e for e in self.edges if e.dst == node]

    def successors(self) -> dict[str, list[str]]:
        succ: dict[str, list[str]] = {n: [] for n in self.nodes}
        for e in self.edges:
            if e.dst not in succ[e.src]:
                succ[e.src].append(e.dst)
        for n in succ:
            succ[n].sort(key=self.index)
        return succ

    def edges_between(self, src: str, dst: str) -> list[EdgeSpec]:
        return [e for e in self.edges if e.src == src and e.dst == dst]

    def node_width(self, node: str) -> int:
        if node == self.input:
            return self.out_edges(node)[0].c_in
        return self.in_edges(node)[0].c_out

    @property
    def optional_edges(self) -> list[str]:
        return [e.id for e in self.edges if not e.always_keep]

    def to_dict(self) -> dict[str, Any]:
        return {
            "nodes": [{"id": n} for n in self.nodes],
            "edges": [
                {
                    "id": e.id,
                    "src": e.src,
                    "dst": e.dst,
                    "kind": e.kind,
                    "c_in": e.c_in,
                    "c_out": e.c_out,
                    "cost": e.cost,
                    "always_keep": e.always_keep,
                }
                for e in self.edges
            ],
            "input": self.input,
            "output": self.output,
        }

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def build_graph(spec: Mapping[str, Any]) -> SupernetGraph:
    """Validate a graph description and return a :class:`SupernetGraph`.

    ``spec`` follows the JSON graph file layout: ``nodes`` (ids or
    ``{"id": ...}`` objects), ``edges``, ``input`` and ``output``.  Nodes are
    reordered so the input comes first and the output last; the remaining
    order is preserved and used for tie-breaking elsewhere.
    """
    raw_nodes = spec.get("nodes")
    if not raw_nodes:
        raise GraphError("graph has no nodes")
    ids = [n["id"] if isinstance(n, Mapping) else n for n in raw_nodes]
    ids = [str(n) for n in ids]
    if len(set(ids)) != len(ids):
        raise GraphError("duplicate node id")
    src_node = spec.get("input")
    dst_node = spec.get("output")
    if src_node is None or str(src_node) not in ids:
        raise GraphError("missing input node")
    if dst_node is None or str(dst_node) not in ids:
        raise GraphError("missing output node")
    src_node, dst_node = str(src_node), str(dst_node)
    if src_node == dst_node:
        raise GraphError("input and output must differ")
    middle = [n for n in ids if n not in (src_node, dst_node)]
    nodes = (src_node, *middle, dst_node)
    index = {n: i for i, n in enumerate(nodes)}

    edges: list[EdgeSpec] = []
    for raw in spec.get("edges", []):
        e = _edge_from_raw(raw)
        for end in (e.src, e.dst):
            if end not in index:
                raise GraphError(f"edge {e.id!r} references unknown node {end!r}")
        edges.append(e)
    if not edges:
        raise GraphError("graph has no edges")
    if len({e.id for e in edges}) != len(edges):
        raise GraphError("duplicate edge id")

    topo = _topological_order(nodes, edges)
    _check_endpoints(nodes, edges, src_node, dst_node)
    _check_channels(nodes, edges, src_node)

    return SupernetGraph(
        nodes=nodes,
        edges=tuple(edges),
        input=src_node,
        output=dst_node,
        _index=index,
        _edge_index={e.id: i for i, e in enumerate(edges)},
        _topo=topo,
    )


def _edge_from_raw(raw: Mapping[str, Any]) -> EdgeSpec:
    try:
        kind = str(raw["kind"])
        e = EdgeSpec(
            id=str(raw["id"]),
            src=str(raw["src"]),
            dst=str(raw["dst"]),
            kind=kind,
            c_in=int(raw["c_in"]),
            c_out=int(raw["c_out"]),
            cost=float(raw.get("cost", 0.0)),
            always_keep=bool(raw.get("always_keep", False)) or kind in ("io", "pool"),
        )
    except KeyError as exc:
        raise GraphError(f"edge missing field {exc.args[0]!r}") from None
    if e.kind not in KINDS:
        raise GraphError(f"edge {e.id!r} has unknown kind {e.kind!r}")
    if e.c_in <= 0 or e.c_out <= 0:
        raise GraphError(f"edge {e.id!r} has nonpositive channel count")
    if e.cost < 0 or not np.isfinite(e.cost):
        raise GraphError(f"edge {e.id!r} has invalid cost")
    if e.width_preserving and e.c_in != e.c_out:
        raise GraphError(f"{e.kind} edge {e.id!r} needs c_in == c_out")
    return e


def _topological_order(nodes: Sequence[str], edges: Sequence[EdgeSpec]) -> tuple[str, ...]:
    index = {n: i for i, n in enumerate(nodes)}
    indeg = {n: 0 for n in nodes}
    succ: dict[str, list[str]] = {n: [] for n in nodes}
    for e in edges:
        indeg[e.dst] += 1
        succ[e.src].append(e.dst)
    # Kahn's algorithm, always taking the lowest-index ready node.
    ready = sorted((n for n in nodes if indeg[n] == 0), key=index.__getitem__)
    order: list[str] = []
    while ready:
        n = ready.pop(0)
        order.append(n)
        for m in succ[n]:
            indeg[m] -= 1
            if indeg[m] == 0:
                ready.append(m)
        ready.sort(key=index.__getitem__)
    if len(order) != len(nodes):
        raise GraphError("edge relation is cyclic")
    return tuple(order)


def _check_endpoints(nodes: Sequence[str], edges: Sequence[EdgeSpec], src: str, dst: str) -> None:
    has_in = {e.dst for e in edges}
    has_out = {e.src for e in edges}
    sources = [n for n in nodes if n not in has_in]
    sinks = [n for n in nodes if n not in has_out]
    if sources != [src]:
        raise GraphError(f"graph must have exactly one source (the input); found {sources}")
    if sinks != [dst]:
        raise GraphError(f"graph must have exactly one sink (the output); found {sinks}")
    # With a single source and sink in a DAG every node lies on an input->output path.


def _check_channels(nodes: Sequence[str], edges: Sequence[EdgeSpec], src: str) -> None:
    width: dict[str, int] = {}
    for e in edges:
        prev = width.setdefault(e.dst, e.c_out)
        if prev != e.c_out:
            raise GraphError(f"channel mismatch: edges into {e.dst!r} produce {prev} and {e.c_out}")
    for e in edges:
        if e.src == src:
            prev = width.setdefault(src, e.c_in)
            if prev != e.c_in:
                raise GraphError(f"channel mismatch at input: {prev} vs {e.c_in}")
        elif width[e.src] != e.c_in:
            raise GraphError(
                f"channel mismatch: edge {e.id!r} consumes {e.c_in} channels "
                f"but {e.src!r} carries {width[e.src]}"
            )


def load_graph(path: str | Path) -> SupernetGraph:
    with open(path, encoding="utf-8") as fh:
        return build_graph(json.load(fh))


def save_graph(graph: SupernetGraph, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(graph.to_dict(), fh, indent=2)
        fh.write("\n")


# ---------------------------------------------------------------------------
# Subnetworks


@dataclass(frozen=True)
class SubnetworkMask:
    kept: frozenset[str]
    in_frac: Mapping[str, float]
    out_frac: Mapping[str, float]

    def __contains__(self, edge_id: str) -> bool:
        return edge_id in self.kept


def full_mask(graph: SupernetGraph) -> SubnetworkMask:
    ids = frozenset(e.id for e in graph.edges)
    ones = {e: 1.0 for e in ids}
    return SubnetworkMask(ids, dict(ones), dict(ones))


@dataclass(frozen=True)
class EdgePolicy:
    """How :func:`sample_subnetwork` draws a subnetwork.

    ``keep_prob`` gives the keep probability of every optional edge.  Each
    free featuremap draws its channel fraction from ``fractions`` (weighted by
    ``weights`` if given) and multiplies it by ``scale[node]`` (capped at 1).
    """

    keep_prob: Mapping[str, float]
    fractions: tuple[float, ...] = DEFAULT_FRACTIONS
    weights: tuple[float, ...] | None = None
    scale: Mapping[str, float] = field(default_factory=dict)

    @classmethod
    def uniform(cls, graph: SupernetGraph, keep: float = 0.5, fractions: Sequence[float] = DEFAULT_FRACTIONS) -> "EdgePolicy":
        return cls({e: keep for e in graph.optional_edges}, tuple(fractions))


def width_groups(graph: SupernetGraph) -> dict[str, str]:
    """Map each node to the representative of its shared-width group.

    Width-preserving edges force equal channel fractions on both ends, so
    nodes joined by them form one group.  Representatives are the
    earliest node in topological order.
    """
    parent = {n: n for n in graph.nodes}

    def find(n: str) -> str:
        while parent[n] != n:
            parent[n] = parent[parent[n]]
            n = parent[n]
        return n

    order = {n: i for i, n in enumerate(graph.topological_order)}
    for e in graph.edges:
        if e.width_preserving:
            a, b = find(e.src), find(e.dst)
            if a != b:
                if order[a] > order[b]:
                    a, b = b, a
                parent[b] = a
    return {n: find(n) for n in graph.nodes}


def _check_policy(graph: SupernetGraph, policy: EdgePolicy) -> None:
    for e in graph.edges:
        if e.always_keep:
            continue
        if e.id not in policy.keep_prob:
            raise PolicyError(f"policy omits edge {e.id!r}")
    for eid, p in policy.keep_prob.items():
        if not 0.0 <= p <= 1.0:
            raise PolicyError(f"keep probability for {eid!r} outside [0, 1]: {p}")
    if not policy.fractions or any(not 0.0 < f <= 1.0 for f in policy.fractions):
        raise PolicyError("channel fractions must lie in (0, 1]")
    if policy.weights is not None and len(policy.weights) != len(policy.fractions):
        raise PolicyError("fraction weights do not match fractions")
    for node, s in policy.scale.items():
        if s < 0:
            raise PolicyError(f"negative fraction scale for {node!r}")


def has_path(graph: SupernetGraph, kept: Iterable[str]) -> bool:
    kept = set(kept)
    succ: dict[str, list[str]] = {}
    for e in graph.edges:
        if e.id in kept:
            succ.setdefault(e.src, []).append(e.dst)
    seen = {graph.input}
    queue = deque([graph.input])
    while queue:
        n = queue.popleft()
        if n == graph.output:
            return True
        for m in succ.get(n, ()):
            if m not in seen:
                seen.add(m)
                queue.append(m)
    return False


def _node_fractions(graph: SupernetGraph, policy: EdgePolicy, rng: np.random.Generator) -> dict[str, float]:
    groups = width_groups(graph)
    fixed = {groups[graph.input], groups[graph.output]}
    probs = None
    if policy.weights is not None:
        w = np.asarray(policy.weights, dtype=float)
        probs = w / w.sum()
    frac: dict[str, float] = {}
    for node in graph.topological_order:
        rep = groups[node]
        if rep in frac:
            frac[node] = frac[rep]
            continue
        # Always draw so the stream position does not depend on the policy.
        draw = float(policy.fractions[rng.choice(len(policy.fractions), p=probs)])
        if rep in fixed:
            value = 1.0
        else:
            # Snap to a whole channel count so every mask is realizable.
            width = graph.node_width(node)
            value = max(1, round(min(1.0, draw * policy.scale.get(rep, 1.0)) * width)) / width
        frac[rep] = value
        frac[node] = value
    return frac


def sample_subnetwork(
    graph: SupernetGraph,
    policy: EdgePolicy,
    rng: np.random.Generator,
    max_tries: int = 1000,
) -> SubnetworkMask:
    """Draw a valid subnetwork: keep/drop each optional edge, then fix widths.

    Always-keep edges are kept unconditionally.  Fractions live on
    featuremaps, so an edge's input fraction is its producer's output
    fraction by construction.  Draws are repeated until the kept edges
    still connect input to output.
    """
    _check_policy(graph, policy)
    for _ in range(max_tries):
        u = rng.random(graph.edge_count)
        kept = frozenset(
            e.id for e, x in zip(graph.edges, u) if e.always_keep or x < policy.keep_prob[e.id]
        )
        node_frac = _node_fractions(graph, policy, rng)
        if has_path(graph, kept):
            return _mask_from_fracs(graph, kept, node_frac)
    raise SamplingError(f"no valid subnetwork after {max_tries} draws")


def _mask_from_fracs(graph: SupernetGraph, kept: frozenset[str], node_frac: Mapping[str, float]) -> SubnetworkMask:
    in_frac = {}
    out_frac = {}
    for e in graph.edges:
        if e.id in kept:
            in_frac[e.id] = node_frac[e.src]
            out_frac[e.id] = node_frac[e.dst]
    return SubnetworkMask(kept, in_frac, out_frac)


def mask_from_node_fractions(graph: SupernetGraph, kept: Iterable[str], node_frac: Mapping[str, float]) -> SubnetworkMask:
    return _mask_from_fracs(graph, frozenset(kept), node_frac)


def validate_mask(graph: SupernetGraph, mask: SubnetworkMask) -> None:
    """Raise :class:`GraphError` unless ``mask`` satisfies every mask invariant."""
    ids = {e.id for e in graph.edges}
    if not mask.kept <= ids:
        raise GraphError(f"mask keeps unknown edges {sorted(mask.kept - ids)}")
    missing = {e.id for e in graph.edges if e.always_keep} - mask.kept
    if missing:
        raise GraphError(f"mask drops always-keep edges {sorted(missing)}")
    for eid in mask.kept:
        for side in (mask.in_frac, mask.out_frac):
            f = side.get(eid)
            if f is None or not 0.0 < f <= 1.0:
                raise GraphError(f"edge {eid!r} has invalid channel fraction {f}")
    produced: dict[str, float] = {}
    for e in graph.edges:
        if e.id in mask.kept:
            if e.width_preserving and mask.in_frac[e.id] != mask.out_frac[e.id]:
                raise GraphError(f"{e.kind} edge {e.id!r} changes its channel fraction")
            prev = produced.setdefault(e.dst, mask.out_frac[e.id])
            if prev != mask.out_frac[e.id]:
                raise GraphError(f"edges into {e.dst!r} disagree on channel fraction")
    for e in graph.edges:
        if e.id in mask.kept and e.src in produced and mask.in_frac[e.id] != produced[e.src]:
            raise GraphError(f"edge {e.id!r} input fraction differs from its producer")
    if not has_path(graph, mask.kept):
        raise GraphError("mask leaves no input-to-output path")


def adjacency_matrix(graph: SupernetGraph, mask: SubnetworkMask, as_sparse: bool = False):
    """Symmetric 0/1 adjacency of the kept edges, with self-loops on input and output."""
    n = graph.node_count
    rows, cols = [0, n - 1], [0, n - 1]
    for e in graph.edges:
        if e.id in mask.kept:
            s, t = graph.index(e.src), graph.index(e.dst)
            rows += [s, t]
            cols += [t, s]
    a = sparse.coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n)).tocsr()
    a.data[:] = 1.0  # parallel edges collapse to a single link
    return a if as_sparse else a.toarray()


def flops(graph: SupernetGraph, mask: SubnetworkMask) -> float:
    total = 0.0
    for e in graph.edges:
        if e.id not in mask.kept:
            continue
        if e.width_preserving:
            total += e.cost * mask.in_frac[e.id]
        else:
            total += e.cost * mask.in_frac[e.id] * mask.out_frac[e.id]
    return total
