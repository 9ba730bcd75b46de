"""Path Jacobians of residual MLP supernets and the width-based isometry bounds.

Activations are linear at initialization, so a path Jacobian is an exact
product of per-operation Jacobians: a linear op contributes its weight
matrix and a residual merge on the path contributes the identity.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats

from .dtmc import DEFAULT_KAPPA, DEFAULT_LAMBDA, DEFAULT_TOL
from .graph import SupernetGraph
from .rng import substream
from .scores import DEFAULT_T, PathError, PathRecord, analyze, sample_paths
from .templates import residual_mlp

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class MlpSupernet:
    depth: int
    width: int
    q: float
    graph: SupernetGraph
    weights: dict[str, np.ndarray]


@dataclass(frozen=True)
class WidthStats:
    w_e: float
    w_r: int
    D: int


@dataclass(frozen=True)
class JacobianReport:
    singular_values: np.ndarray
    mean_sigma: float
    path: PathRecord | None = None


def build_mlp_supernet(depth: int, width: int, q: float, rng: np.random.Generator, graph: SupernetGraph | None = None) -> MlpSupernet:
    """Residual MLP with i.i.d. N(0, q) weights on every linear op."""
    if not q > 0:
        raise ValueError(f"weight variance q must be positive, got {q}")
    if depth < 2 or width < 1:
        raise ValueError("need depth >= 2 and width >= 1")
    graph = residual_mlp(depth, width) if graph is None else graph
    scale = math.sqrt(q)
    weights = {
        e.id: scale * rng.standard_normal((e.c_out, e.c_in)) for e in graph.edges if e.kind == "linear"
    }
    return MlpSupernet(depth, width, float(q), graph, weights)


def effective_width(links: float, neurons_excl_input: float) -> float:
    if neurons_excl_input <= 0:
        raise ValueError("neuron count must be positive")
    return links / neurons_excl_input


def epsilon_bound(we_s: float, we_l: float, wr: float) -> float:
    """Largest weight variance for which both paths keep E[sigma] <= 1."""
    if min(we_s, we_l, wr) <= 0:
        raise ValueError("widths must be positive")
    we = max(we_s, we_l)
    return 1.0 / (we + wr + 2.0 * math.sqrt(we * wr))


def ldi_bounds(q: float, w_e: float, w_r: float) -> tuple[float, float]:
    if min(q, w_e, w_r) < 0:
        raise ValueError("arguments must be nonnegative")
    a, b = math.sqrt(q * w_e), math.sqrt(q * w_r)
    return a - b, a + b


def _nodes(path: Sequence[str] | PathRecord) -> tuple[str, ...]:
    return path.nodes if isinstance(path, PathRecord) else tuple(path)


def _path_ops(graph: SupernetGraph, nodes: tuple[str, ...]):
    ops = []
    for u, v in zip(nodes, nodes[1:]):
        between = graph.edges_between(u, v)
        if not between:
            raise PathError(f"no supernet edge {u!r} -> {v!r}")
        ops.append(between[0])
    return ops


def path_width_stats(supernet: MlpSupernet, path: Sequence[str] | PathRecord) -> WidthStats:
    """Links (weights plus one per identity connection) over non-input neurons."""
    nodes = _nodes(path)
    links = 0
    for e in _path_ops(supernet.graph, nodes):
        links += e.c_in * e.c_out if e.kind == "linear" else e.c_out
    neurons = sum(supernet.graph.node_width(n) for n in nodes[1:])
    return WidthStats(effective_width(links, neurons), supernet.width, len(nodes))


def path_forward(supernet: MlpSupernet, path: Sequence[str] | PathRecord, x: np.ndarray) -> np.ndarray:
    for e in _path_ops(supernet.graph, _nodes(path)):
        if e.kind == "linear":
            x = supernet.weights[e.id] @ x
    return x


def path_jacobian(supernet: MlpSupernet, path: Sequence[str] | PathRecord) -> np.ndarray:
    nodes = _nodes(path)
    J = np.eye(supernet.graph.node_width(nodes[0]))
    for e in _path_ops(supernet.graph, nodes):
        if e.kind == "linear":
            W = supernet.weights[e.id]
            if W.shape[1] != J.shape[0]:
                raise ValueError(f"shape mismatch at {e.id}: {W.shape} after {J.shape}")
            J = W @ J
    return J


def mean_singular_value(m: np.ndarray, path: PathRecord | None = None) -> JacobianReport:
    m = np.asarray(m, dtype=float)
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix has non-finite entries")
    s = np.linalg.svd(m, compute_uv=False)
    return JacobianReport(s, float(np.mean(s)), path)


def gaussian_chain_trial(
    width: int, fan_in: int, depth: int, q: float, rng: np.random.Generator
) -> tuple[float, float]:
    """Mean layerwise E[sigma] of a densely connected Gaussian chain.

    Every layer reads the concatenated outputs of its ``fan_in`` predecessors,
    so each layer Jacobian is ``width x (fan_in * width)`` and the effective
    width is ``fan_in * width``.  Returns ``(mean_sigma, w_e)``.
    """
    w_e = fan_in * width
    sig = [
        mean_singular_value(math.sqrt(q) * rng.standard_normal((width, w_e))).mean_sigma for _ in range(depth)
    ]
    return float(np.mean(sig)), float(w_e)


@dataclass(frozen=True)
class Prop1Report:
    q: float
    epsilon: float
    rows: list[tuple[int, int, int, float, float, float]]  # depth, seed, path_id, tps, mean_sigma, w_e
    spearman: dict[int, float]
    frac_le: dict[int, float]
    sigma_cap: float = 1.05
    flags: list[str] = field(default_factory=list)

    @property
    def flagged(self) -> bool:
        return bool(self.flags)


def verify_prop1(
    depths: Sequence[int],
    q: float | None = None,
    path_len: int = 50,
    n_paths: int = 30,
    seeds: Sequence[int] = (0,),
    width: int = 80,
    T: int = DEFAULT_T,
    lam: float = DEFAULT_LAMBDA,
    kappa: float = DEFAULT_KAPPA,
    tol: float = DEFAULT_TOL,
    sigma_cap: float = 1.05,
) -> Prop1Report:
    """Correlate path scores with path Jacobian spectra on residual MLPs.

    For every depth and seed, T subnetworks are drawn, ``n_paths`` uniform
    ``path_len``-node sub-paths are scored, and one weight draw supplies the
    path Jacobians.  The Spearman correlation per depth is taken over the
    pairs pooled across seeds.  When ``q`` is omitted it is set to
    ``0.9 * epsilon`` for the widest sampled path over all depths.
    """
    flags: list[str] = []
    sampled = {}
    we_max = 0.0
    for depth in depths:
        g = residual_mlp(depth, width)
        probe = MlpSupernet(depth, width, 1.0, g, {})
        for seed in seeds:
            table = analyze(g, T, substream(seed, f"prop1/{depth}/masks"), lam, kappa, tol).tas
            paths = sample_paths(g, path_len, n_paths, substream(seed, f"prop1/{depth}/paths"), anchored=False, table=table)
            widths = [path_width_stats(probe, p).w_e for p in paths]
            we_max = max([we_max, *widths])
            sampled[depth, seed] = (g, paths, widths)
    eps = epsilon_bound(we_max, we_max, width)
    if q is None:
        q = 0.9 * eps
    elif q > eps:
        msg = f"q={q:.6g} exceeds epsilon={eps:.6g}"
        log.warning(msg)
        flags.append(msg)
    rows, rho, frac = [], {}, {}
    for depth in depths:
        tps_all, sig_all = [], []
        for seed in seeds:
            g, paths, widths = sampled[depth, seed]
            net = build_mlp_supernet(depth, width, q, substream(seed, f"prop1/{depth}/weights"), g)
            sig = [mean_singular_value(path_jacobian(net, p), p).mean_sigma for p in paths]
            rows += [(depth, seed, i, p.tps, s, w) for i, (p, s, w) in enumerate(zip(paths, sig, widths))]
            tps_all += [p.tps for p in paths]
            sig_all += sig
        if len(tps_all) < 2:
            rho[depth] = float("nan")
            flags.append(f"depth {depth}: fewer than two paths, correlation undefined")
        else:
            rho[depth] = float(stats.spearmanr(tps_all, sig_all).statistic)
        frac[depth] = float(np.mean([s <= sigma_cap for s in sig_all]))
    return Prop1Report(float(q), eps, rows, rho, frac, sigma_cap, flags)
