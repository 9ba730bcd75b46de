"""Pareto search over (FLOPs, accuracy), width-configuration storage and runtime switching."""

from __future__ import annotations

import bisect
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Hashable, Iterable, Mapping, Sequence

import numpy as np

from .graph import EdgePolicy, GraphError, SubnetworkMask, SupernetGraph, flops, sample_subnetwork
from .io import read_csv, write_json
from .trainer import SlimmableNet, ToyDataset

log = logging.getLogger(__name__)

MODES = ("standard", "literal")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Candidate:
    mask: Any
    flops: float
    accuracy: float
    id: str = ""

    def __post_init__(self):
        if not (self.flops >= 0 and math.isfinite(self.flops)):
            raise ValueError(f"flops must be finite and nonnegative, got {self.flops}")
        if not math.isfinite(self.accuracy):
            raise ValueError(f"accuracy must be finite, got {self.accuracy}")

    @property
    def objectives(self) -> tuple[float, float]:
        return (self.flops, self.accuracy)


def dominates(a: Candidate, b: Candidate) -> bool:
    return (
        a.flops <= b.flops
        and a.accuracy >= b.accuracy
        and (a.flops < b.flops or a.accuracy > b.accuracy)
    )


@dataclass
class ParetoFront:
    """Non-dominated candidates.

    ``standard`` mode keeps members sorted by FLOPs (and hence by accuracy)
    so an insertion costs a binary search; a candidate that ties an existing
    member on both objectives is dropped.  ``literal`` mode replays the
    printed search-loop conditions unchanged, including their eviction rule.
    """

    mode: str = "standard"
    members: list[Candidate] = field(default_factory=list)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        self._keys = [c.flops for c in self.members]

    def __len__(self) -> int:
        return len(self.members)

    def __iter__(self):
        return iter(self.members)

    def objectives(self) -> list[tuple[float, float]]:
        return [c.objectives for c in self.members]

    def insert(self, cand: Candidate) -> bool:
        """Offer ``cand`` to the front; returns whether it was admitted."""
        if self.mode == "literal":
            return self._insert_literal(cand)
        i = bisect.bisect_right(self._keys, cand.flops)
        # members[i-1] is the most accurate member with flops <= cand.flops
        if i and self.members[i - 1].accuracy >= cand.accuracy:
            return False
        j = i
        while j > 0 and self._keys[j - 1] == cand.flops:
            j -= 1
        k = j
        while k < len(self.members) and self.members[k].accuracy <= cand.accuracy:
            k += 1
        self.members[j:k] = [cand]
        self._keys[j:k] = [cand.flops]
        return True

    def _insert_literal(self, cand: Candidate) -> bool:
        optimal = True
        out = []
        for m in self.members:
            if m.flops <= cand.flops and m.accuracy > cand.accuracy:
                optimal = False
            elif m.flops <= cand.flops and m.accuracy < cand.accuracy:
                out.append(m)
        if optimal:
            self.members.append(cand)
        drop = {id(m) for m in out}
        self.members = [m for m in self.members if id(m) not in drop]
        self._keys = [m.flops for m in self.members]
        return optimal


def nondominated(cands: Iterable[Candidate]) -> list[Candidate]:
    """Brute-force filter: candidates no other candidate dominates, first of each tie."""
    cands = list(cands)
    out, seen = [], set()
    for c in cands:
        if c.objectives in seen or any(dominates(o, c) for o in cands):
            continue
        seen.add(c.objectives)
        out.append(c)
    return out


def pareto_search(
    supernet: SupernetGraph | None,
    evaluator: Callable[[Any], float],
    m: int,
    rng: np.random.Generator,
    mode: str = "standard",
    sampler: Callable[[np.random.Generator], Any] | None = None,
    cost: Callable[[Any], float] | None = None,
) -> ParetoFront:
    """Sample ``m`` subnetworks, evaluate them and keep the Pareto front.

    ``sampler`` defaults to uniform subnetwork sampling of ``supernet`` and
    ``cost`` to its FLOPs count.  Evaluator failures skip the candidate.
    """
    if m < 0:
        raise ValueError("search steps must be nonnegative")
    if sampler is None or cost is None:
        if supernet is None:
            raise ValueError("need a supernet unless both sampler and cost are given")
        policy = EdgePolicy.uniform(supernet)
        sampler = sampler or (lambda r: sample_subnetwork(supernet, policy, r))
        cost = cost or (lambda mask: flops(supernet, mask))
    front = ParetoFront(mode)
    for i in range(m):
        mask = sampler(rng)
        try:
            acc = float(evaluator(mask))
        except Exception as exc:  # evaluator is user code
            log.warning("evaluator failed on candidate %d: %s", i, exc)
            continue
        front.insert(Candidate(mask, float(cost(mask)), acc, f"c{i}"))
    return front


# ---------------------------------------------------------------------------
# Evaluators


def mask_key(mask: SubnetworkMask) -> str:
    """Canonical text key of a mask: kept edges with their in/out fractions."""
    return ";".join(f"{e}:{mask.in_frac[e]!r}:{mask.out_frac[e]!r}" for e in sorted(mask.kept))


class LookupEvaluator:
    """Accuracy looked up by :func:`mask_key` (or any key function)."""

    def __init__(self, table: Mapping[Hashable, float], key: Callable[[Any], Hashable] = mask_key):
        self.table = dict(table)
        self.key = key

    def __call__(self, mask) -> float:
        return self.table[self.key(mask)]

    @classmethod
    def from_csv(cls, path: str | Path) -> "LookupEvaluator":
        """Read a ``key,accuracy`` table (first line may be a provenance comment)."""
        _, rows = read_csv(path)
        return cls({r["key"]: float(r["accuracy"]) for r in rows})


class ToyAccuracyEvaluator:
    """Test accuracy of a trained toy net restricted to the subnetwork."""

    def __init__(self, net: SlimmableNet, data: ToyDataset):
        self.net = net
        self.data = data

    def __call__(self, mask: SubnetworkMask) -> float:
        return self.net.accuracy(self.data.x_test, self.data.y_test, mask)


# ---------------------------------------------------------------------------
# Width configurations


@dataclass(frozen=True)
class WidthConfig:
    id: str
    budget_flops: float
    layers: tuple[tuple[str, int, int], ...]  # (layer_id, c_in, c_out) per kept op


@dataclass(frozen=True)
class WidthConfigStore:
    supernet_hash: str
    configs: tuple[WidthConfig, ...]

    def to_dict(self) -> dict[str, Any]:
        return {
            "supernet_hash": self.supernet_hash,
            "configs": [
                {
                    "id": c.id,
                    "budget_flops": c.budget_flops,
                    "layers": [{"layer_id": l, "c_in": i, "c_out": o} for l, i, o in c.layers],
                }
                for c in self.configs
            ],
        }

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "WidthConfigStore":
        configs = tuple(
            WidthConfig(
                c["id"],
                float(c["budget_flops"]),
                tuple((l["layer_id"], int(l["c_in"]), int(l["c_out"])) for l in c["layers"]),
            )
            for c in doc["configs"]
        )
        return cls(doc["supernet_hash"], configs)

    def save(self, path: str | Path, meta: Mapping[str, Any]) -> Path:
        return write_json(path, self.to_dict(), meta)

    @classmethod
    def load(cls, path: str | Path) -> "WidthConfigStore":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def config_from_mask(graph: SupernetGraph, mask: SubnetworkMask, cid: str, budget: float) -> WidthConfig:
    layers = tuple(
        (e.id, round(mask.in_frac[e.id] * e.c_in), round(mask.out_frac[e.id] * e.c_out))
        for e in graph.edges
        if e.id in mask.kept
    )
    return WidthConfig(cid, float(budget), layers)


def export_configs(front: ParetoFront | Sequence[Candidate], graph: SupernetGraph) -> WidthConfigStore:
    members = list(front)
    if not members:
        raise ConfigError("cannot export an empty front")
    configs = tuple(config_from_mask(graph, c.mask, c.id or f"c{i}", c.flops) for i, c in enumerate(members))
    return WidthConfigStore(graph.digest(), configs)


def mask_from_config(graph: SupernetGraph, config: WidthConfig) -> SubnetworkMask:
    kept, in_frac, out_frac = set(), {}, {}
    for layer, c_in, c_out in config.layers:
        try:
            e = graph.edge(layer)
        except GraphError:
            raise ConfigError(f"config {config.id!r} references missing layer {layer!r}") from None
        if not (1 <= c_in <= e.c_in and 1 <= c_out <= e.c_out):
            raise ConfigError(f"layer {layer!r}: widths ({c_in}, {c_out}) outside (1..{e.c_in}, 1..{e.c_out})")
        kept.add(layer)
        in_frac[layer] = c_in / e.c_in
        out_frac[layer] = c_out / e.c_out
    return SubnetworkMask(frozenset(kept), in_frac, out_frac)


class RuntimeNet:
    """A supernet whose subnetwork is selected by per-layer width registers.

    Reconfiguring only rewrites the registers; the forward pass slices
    channel prefixes of the shared parameters.
    """

    def __init__(self, net: SlimmableNet):
        self.net = net
        self.kept: frozenset[str] = frozenset(net.graph.edges[i].id for i in range(net.graph.edge_count))
        self.widths: dict[str, tuple[int, int]] = {e.id: (e.c_in, e.c_out) for e in net.graph.edges}

    def configure(self, config: WidthConfig) -> "RuntimeNet":
        graph = self.net.graph
        widths = {}
        for layer, c_in, c_out in config.layers:
            try:
                graph.edge(layer)
            except GraphError:
                raise ConfigError(f"config {config.id!r} references missing layer {layer!r}") from None
            widths[layer] = (c_in, c_out)
        self.kept = frozenset(widths)
        self.widths = widths
        return self

    def forward(self, x: np.ndarray) -> np.ndarray:
        g = self.net.graph
        act = {g.input: x}
        for v in g.topological_order[1:]:
            ins = [e for e in g.in_edges(v) if e.id in self.kept]
            if not ins:
                continue
            k = self.widths[ins[0].id][1] if v != g.output else g.node_width(v)
            z = np.zeros((x.shape[0], k))
            for e in ins:
                c_in = self.widths[e.id][0]
                src = act.get(e.src)
                if src is None:
                    src = np.zeros((x.shape[0], c_in))
                src = src[:, :c_in]
                if e.id in self.net.W:
                    z += src @ self.net.W[e.id][:k, :c_in].T + self.net.b[e.id][:k]
                else:
                    z += src
            act[v] = z if v == g.output else np.maximum(z, 0.0)
        return act[g.output]


def apply_config(net: SlimmableNet | RuntimeNet, config: WidthConfig) -> RuntimeNet:
    runtime = net if isinstance(net, RuntimeNet) else RuntimeNet(net)
    return runtime.configure(config)
