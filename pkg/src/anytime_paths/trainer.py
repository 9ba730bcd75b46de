"""Toy-scale supernet training with importance-biased subnetwork sampling.

The network is executed directly from a :class:`SupernetGraph`: every
``linear``/``io`` edge owns a weight matrix and bias, a node sums the
outputs of its kept incoming edges and applies ReLU (the output node stays
linear).  Subnetworks share the supernet's parameters; during training a
subnetwork is realized by masking channel suffixes, and at deployment
(:mod:`anytime_paths.pareto`) by slicing channel prefixes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .graph import (
    DEFAULT_FRACTIONS,
    EdgePolicy,
    SubnetworkMask,
    SupernetGraph,
    full_mask,
    sample_subnetwork,
    width_groups,
)
from .rng import substream
from .scores import ImportanceLabels, analyze, label_important, max_tps_path
from .templates import branchy_mlp

WEIGHTED_KINDS = frozenset({"linear", "io", "conv"})


class DivergenceError(FloatingPointError):
    pass


# ---------------------------------------------------------------------------
# Sampling policy


def tips_sampling_prob(base: float, important: bool, boost: float = 1.5) -> float:
    if not 0.0 <= base <= 1.0:
        raise ValueError(f"base probability must lie in [0, 1], got {base}")
    if boost < 1.0:
        raise ValueError(f"boost must be at least 1, got {boost}")
    return min(1.0, base * boost) if important else base


def sample_channel_mask(width: int, prob: float | Sequence[float], rng: np.random.Generator | None = None) -> np.ndarray:
    """Indices of the kept channel prefix, ``round(prob * width)`` long (at least 1).

    ``prob`` may be a grid of fractions, in which case one is drawn
    uniformly with ``rng``.
    """
    if width < 1:
        raise ValueError("layer width must be positive")
    if not np.isscalar(prob):
        grid = list(prob)
        prob = grid[int(rng.integers(len(grid)))]
    if not 0.0 < prob <= 1.0:
        raise ValueError(f"keep probability must lie in (0, 1], got {prob}")
    return np.arange(max(1, round(prob * width)))


@dataclass(frozen=True)
class SamplingPolicy:
    """Per-step subnetwork distribution.

    Unimportant optional ops are kept with ``base_prob`` and important ones
    with ``min(1, base_prob * boost)``.  Channel fractions are drawn from
    ``fractions``; featuremaps written by important ops get the same boost.
    """

    labels: ImportanceLabels
    base_prob: float = 0.5
    boost: float = 1.5
    fractions: tuple[float, ...] = DEFAULT_FRACTIONS

    def __post_init__(self):
        tips_sampling_prob(self.base_prob, True, self.boost)

    def edge_policy(self, graph: SupernetGraph) -> EdgePolicy:
        keep = {
            e: tips_sampling_prob(self.base_prob, e in self.labels.important, self.boost) for e in graph.optional_edges
        }
        groups = width_groups(graph)
        boosted = {groups[graph.edge(e).dst] for e in self.labels.important}
        return EdgePolicy(keep, tuple(self.fractions), None, {g: self.boost for g in boosted})


def uniform_policy(graph: SupernetGraph, base_prob: float = 0.5) -> SamplingPolicy:
    edges = frozenset(e.id for e in graph.edges)
    return SamplingPolicy(ImportanceLabels(frozenset(), edges), base_prob, 1.0)


# ---------------------------------------------------------------------------
# Data


@dataclass(frozen=True)
class ToyDataset:
    x: np.ndarray
    y: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray
    n_classes: int
    seed: int

    def __len__(self) -> int:
        return len(self.y)


def make_toy_dataset(
    n_train: int = 512,
    n_test: int = 512,
    d_in: int = 8,
    n_classes: int = 4,
    seed: int = 0,
    blobs_per_class: int = 3,
    noise: float = 0.9,
) -> ToyDataset:
    """Class-balanced Gaussian blob mixture; each class owns several blobs."""
    rng = substream(seed, "toy-data")
    centers = rng.standard_normal((n_classes, blobs_per_class, d_in)) * 1.5

    def draw(n):
        y = np.arange(n) % n_classes
        rng.shuffle(y)
        blob = rng.integers(blobs_per_class, size=n)
        x = centers[y, blob] + noise * rng.standard_normal((n, d_in))
        return x, y

    x, y = draw(n_train)
    xt, yt = draw(n_test)
    return ToyDataset(x, y, xt, yt, n_classes, seed)


# ---------------------------------------------------------------------------
# Network


def _node_fracs(graph: SupernetGraph, mask: SubnetworkMask) -> dict[str, float]:
    frac = {graph.input: 1.0}
    for e in graph.edges:
        if e.id in mask.kept:
            frac[e.src] = mask.in_frac[e.id]
            frac[e.dst] = mask.out_frac[e.id]
    return frac


@dataclass
class SlimmableNet:
    graph: SupernetGraph
    W: dict[str, np.ndarray]
    b: dict[str, np.ndarray]

    @classmethod
    def init(cls, graph: SupernetGraph, rng: np.random.Generator) -> "SlimmableNet":
        W, b = {}, {}
        for e in graph.edges:
            if e.kind in WEIGHTED_KINDS:
                W[e.id] = rng.standard_normal((e.c_out, e.c_in)) * math.sqrt(2.0 / e.c_in)
                b[e.id] = np.zeros(e.c_out)
        return cls(graph, W, b)

    def copy(self) -> "SlimmableNet":
        return SlimmableNet(self.graph, {k: v.copy() for k, v in self.W.items()}, {k: v.copy() for k, v in self.b.items()})

    def forward(self, x: np.ndarray, mask: SubnetworkMask | None = None):
        """Logits of the subnetwork ``mask`` (full supernet if ``None``) and a backprop cache."""
        g = self.graph
        mask = full_mask(g) if mask is None else mask
        frac = _node_fracs(g, mask)
        act = {g.input: x}
        pre = {}
        chan = {}
        for v in g.topological_order[1:]:
            width = g.node_width(v)
            z = np.zeros((x.shape[0], width))
            for e in g.in_edges(v):
                if e.id not in mask.kept:
                    continue
                src = act[e.src]
                if e.id in self.W:
                    z += src @ self.W[e.id].T + self.b[e.id]
                else:
                    z += src
            keep = np.zeros(width)
            if v in frac:
                keep[: max(1, round(frac[v] * width))] = 1.0
            chan[v] = keep
            pre[v] = z
            act[v] = z * keep if v == g.output else np.maximum(z, 0.0) * keep
        return act[g.output], (mask, act, pre, chan)

    def backward(self, cache, g_out: np.ndarray):
        g = self.graph
        mask, act, pre, chan = cache
        dW = {k: np.zeros_like(v) for k, v in self.W.items()}
        db = {k: np.zeros_like(v) for k, v in self.b.items()}
        grad = {g.output: g_out}
        for v in reversed(g.topological_order[1:]):
            if v not in grad:
                continue
            gz = grad[v] * chan[v]
            if v != g.output:
                gz = gz * (pre[v] > 0)
            for e in g.in_edges(v):
                if e.id not in mask.kept:
                    continue
                if e.id in self.W:
                    dW[e.id] += gz.T @ act[e.src]
                    db[e.id] += gz.sum(axis=0)
                    back = gz @ self.W[e.id]
                else:
                    back = gz
                grad[e.src] = grad[e.src] + back if e.src in grad else back
        return dW, db

    def predict(self, x: np.ndarray, mask: SubnetworkMask | None = None) -> np.ndarray:
        return self.forward(x, mask)[0].argmax(axis=1)

    def accuracy(self, x: np.ndarray, y: np.ndarray, mask: SubnetworkMask | None = None) -> float:
        return float(np.mean(self.predict(x, mask) == y))


def prune_channels(net: SlimmableNet, edge: str, ratio: float) -> SlimmableNet:
    """Copy of ``net`` with the last ``ceil(ratio * c_out)`` outputs of ``edge`` zeroed."""
    if edge not in net.W:
        raise KeyError(f"unknown weighted operation {edge!r}")
    if not 0.0 <= ratio <= 1.0:
        raise ValueError(f"ratio must lie in [0, 1], got {ratio}")
    out = net.copy()
    n = math.ceil(ratio * out.W[edge].shape[0])
    if n:
        out.W[edge][-n:] = 0.0
        out.b[edge][-n:] = 0.0
    return out


# ---------------------------------------------------------------------------
# Loss


def _log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def cross_entropy(logits: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy and its gradient with respect to the logits."""
    logp = _log_softmax(logits)
    n = len(y)
    loss = -float(logp[np.arange(n), y].mean())
    g = np.exp(logp)
    g[np.arange(n), y] -= 1.0
    return loss, g / n


def distillation(teacher: np.ndarray, student: np.ndarray, temperature: float = 1.0) -> tuple[float, np.ndarray]:
    """Mean ``KL(softmax(t/T) || softmax(s/T))``; the teacher receives no gradient."""
    lt = _log_softmax(teacher / temperature)
    ls = _log_softmax(student / temperature)
    pt = np.exp(lt)
    n = teacher.shape[0]
    loss = float((pt * (lt - ls)).sum() / n)
    return loss, (np.exp(ls) - pt) / (temperature * n)


@dataclass(frozen=True)
class LossSpec:
    T: int = 3
    temperature: float = 1.0
    distill: bool = True


@dataclass(frozen=True)
class StepResult:
    loss: float
    terms: tuple[float, ...]


def train_step(
    net: SlimmableNet,
    x: np.ndarray,
    y: np.ndarray,
    policy: SamplingPolicy,
    loss: LossSpec,
    rng: np.random.Generator,
    lr: float = 0.05,
) -> StepResult:
    """One SGD step on the supernet plus ``loss.T`` sampled subnetworks."""
    if len(y) == 0:
        raise ValueError("empty batch")
    if loss.T < 1:
        raise ValueError("need at least one subnetwork per step")
    g = net.graph
    edge_policy = policy.edge_policy(g)
    masks = [sample_subnetwork(g, edge_policy, rng) for _ in range(loss.T)]
    t_logits, t_cache = net.forward(x)
    ce, g_t = cross_entropy(t_logits, y)
    terms = [ce]
    dW, db = net.backward(t_cache, g_t)
    for m in masks:
        s_logits, s_cache = net.forward(x, m)
        ce, g_s = cross_entropy(s_logits, y)
        terms.append(ce)
        if loss.distill:
            kd, g_kd = distillation(t_logits, s_logits, loss.temperature)
            terms.append(kd)
            g_s = g_s + g_kd
        w, b = net.backward(s_cache, g_s)
        for k in dW:
            dW[k] += w[k]
            db[k] += b[k]
    total = float(sum(terms))
    if not math.isfinite(total):
        raise DivergenceError(f"non-finite loss {total}")
    for k in dW:
        net.W[k] -= lr * dW[k]
        net.b[k] -= lr * db[k]
    return StepResult(total, tuple(terms))


# ---------------------------------------------------------------------------
# Experiments


def importance_labels(graph: SupernetGraph, seed: int, T: int = 8) -> ImportanceLabels:
    """Edges on the highest-scoring input-to-output path."""
    table = analyze(graph, T, substream(seed, "labels/masks")).tas
    return label_important(graph, max_tps_path(graph, table))


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch: int = 32
    lr: float = 0.05
    base_prob: float = 0.5
    boost: float = 1.5
    loss: LossSpec = field(default_factory=LossSpec)
    n_train: int = 512
    data_seed: int = 0


def supernet_step(net: SlimmableNet, x: np.ndarray, y: np.ndarray, lr: float = 0.05) -> StepResult:
    """Plain SGD step on the full supernet (no subnetwork sampling)."""
    logits, cache = net.forward(x)
    loss, g = cross_entropy(logits, y)
    if not math.isfinite(loss):
        raise DivergenceError(f"non-finite loss {loss}")
    dW, db = net.backward(cache, g)
    for k in dW:
        net.W[k] -= lr * dW[k]
        net.b[k] -= lr * db[k]
    return StepResult(loss, (loss,))


def train(
    graph: SupernetGraph,
    data: ToyDataset,
    policy: SamplingPolicy | None,
    cfg: TrainConfig,
    seed: int,
) -> tuple[SlimmableNet, list[float]]:
    """Train from a seed-determined init and data order; returns the net and per-epoch mean loss.

    With ``policy=None`` only the full supernet is trained.
    """
    net = SlimmableNet.init(graph, substream(seed, "train/init"))
    order_rng = substream(seed, "train/order")
    sample_rng = substream(seed, "train/sampling")
    curve = []
    for _ in range(cfg.epochs):
        perm = order_rng.permutation(len(data))
        losses = []
        for idx in np.array_split(perm, max(1, len(perm) // cfg.batch)):
            if policy is None:
                step = supernet_step(net, data.x[idx], data.y[idx], cfg.lr)
            else:
                step = train_step(net, data.x[idx], data.y[idx], policy, cfg.loss, sample_rng, cfg.lr)
            losses.append(step.loss)
        curve.append(float(np.mean(losses)))
    return net, curve


def epochs_to_threshold(curve: Sequence[float], threshold: float) -> int | None:
    """First epoch (1-based) whose loss is at or below ``threshold``; ``None`` if censored."""
    for i, v in enumerate(curve, 1):
        if v <= threshold:
            return i
    return None


def _median(values: Sequence[int | None]) -> float:
    return float(np.median([math.inf if v is None else v for v in values]))


@dataclass(frozen=True)
class ConvergenceConfig:
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    threshold: float = 2.5
    train: TrainConfig = field(default_factory=TrainConfig)


@dataclass(frozen=True)
class ConvergenceResult:
    curves: dict[tuple[str, int], list[float]]
    epochs: dict[tuple[str, int], int | None]

    def median_epochs(self, policy: str) -> float:
        return _median([v for (p, _), v in self.epochs.items() if p == policy])

    def rows(self) -> list[tuple[str, int, int, float]]:
        return [(p, s, i, v) for (p, s), c in self.curves.items() for i, v in enumerate(c, 1)]


def run_convergence_experiment(cfg: ConvergenceConfig, graph: SupernetGraph | None = None) -> ConvergenceResult:
    """Train with importance-boosted and uniform sampling under matched seeds."""
    graph = branchy_mlp() if graph is None else graph
    data = make_toy_dataset(cfg.train.n_train, seed=cfg.train.data_seed)
    curves, epochs = {}, {}
    for seed in cfg.seeds:
        labels = importance_labels(graph, seed)
        policies = {
            "tips": SamplingPolicy(labels, cfg.train.base_prob, cfg.train.boost),
            "uniform": SamplingPolicy(labels, cfg.train.base_prob, 1.0),
        }
        for name, pol in policies.items():
            _, curve = train(graph, data, pol, cfg.train, seed)
            curves[name, seed] = curve
            epochs[name, seed] = epochs_to_threshold(curve, cfg.threshold)
    return ConvergenceResult(curves, epochs)


@dataclass(frozen=True)
class ProbeResult:
    rows: list[tuple[int, float, str, bool, float]]  # seed, ratio, edge, important, accuracy drop

    def median_drop(self, ratio: float, important: bool) -> float:
        """Median over seeds of the per-seed median drop within the group."""
        per_seed = {}
        for seed, r, _, imp, drop in self.rows:
            if r == ratio and imp == important:
                per_seed.setdefault(seed, []).append(drop)
        return float(np.median([np.median(v) for v in per_seed.values()]))


def importance_probe(
    seeds: Sequence[int] = (0, 1, 2, 3, 4),
    ratios: Sequence[float] = (0.25, 0.5, 0.75),
    cfg: TrainConfig | None = None,
    graph: SupernetGraph | None = None,
    sampled: bool = False,
) -> ProbeResult:
    """Prune one operation at a time in a trained net and record test accuracy drops.

    The net is trained as a plain network unless ``sampled`` is set, in
    which case importance-boosted subnetwork training is used.  Input and
    output ops are left out since they lie on every path.
    """
    cfg = TrainConfig() if cfg is None else cfg
    graph = branchy_mlp() if graph is None else graph
    data = make_toy_dataset(cfg.n_train, seed=cfg.data_seed)
    ops = [e.id for e in graph.edges if e.kind in WEIGHTED_KINDS and e.kind != "io"]
    rows = []
    for seed in seeds:
        labels = importance_labels(graph, seed)
        policy = SamplingPolicy(labels, cfg.base_prob, cfg.boost) if sampled else None
        net, _ = train(graph, data, policy, cfg, seed)
        base = net.accuracy(data.x_test, data.y_test)
        for ratio in ratios:
            for op in ops:
                acc = prune_channels(net, op, ratio).accuracy(data.x_test, data.y_test)
                rows.append((seed, float(ratio), op, op in labels.important, base - acc))
    return ProbeResult(rows)
