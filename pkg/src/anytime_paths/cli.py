"""Command-line entry point: ``anytime-paths <command> [options]``.

Every command writes plain CSV/JSON files into ``--out``; each file begins
with a provenance line carrying the version, seed and parameters, and all
randomness is drawn from named substreams of ``--seed``.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__
from .dtmc import DEFAULT_KAPPA, DEFAULT_LAMBDA, DEFAULT_TOL, stationary_rows
from .graph import SupernetGraph, load_graph
from .io import write_csv, write_json
from .rng import substream
from .scores import (
    DEFAULT_T,
    analyze,
    lambda_sweep,
    max_tps_path,
    middle_path_length,
    sample_paths,
    tps_stability,
)
from .templates import TEMPLATES, template

COMMANDS = ("validate", "analyze", "verify-ldi", "stability", "lambda-sweep", "train-toy", "pareto")
NEEDS_GRAPH = frozenset({"validate", "analyze", "stability", "lambda-sweep", "pareto"})
DEFAULT_LAMBDAS = (0.1, 0.25, 0.5, 0.75, 1.0)

log = logging.getLogger("anytime_paths")


class CliError(Exception):
    pass


@dataclass(frozen=True)
class RunConfig:
    command: str
    graph_path: str | None = None
    seed: int = 0
    T: int = DEFAULT_T
    lam: float = DEFAULT_LAMBDA
    kappa: float = DEFAULT_KAPPA
    tol: float = DEFAULT_TOL
    output_dir: str = "results"
    path_len: int | None = None
    n_paths: int | None = None
    depths: tuple[int, ...] = (80, 100, 120, 140)
    n_seeds: int | None = None
    runs: int = 10
    t_values: tuple[int, ...] = (1, 2, 4, 8)
    lambdas: tuple[float, ...] = DEFAULT_LAMBDAS
    epochs: int = 30
    threshold: float = 2.5
    boost: float = 1.5
    steps: int = 200
    mode: str = "standard"
    table: str | None = None
    probe: bool = False
    extra: dict = field(default_factory=dict)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(message)


def _ints(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(t) for t in text.split(",") if t)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(t) for t in text.split(",") if t)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _seed(text: str) -> int:
    try:
        value = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"seed must be an integer, got {text!r}") from None
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be a 64-bit unsigned integer")
    return value


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="anytime-paths", description="Graph analysis and toy experiments for anytime networks.")
    p.add_argument("--version", action="version", version=f"anytime-paths {__version__}")
    p.add_argument("command", help=f"one of: {', '.join(COMMANDS)}")
    p.add_argument("--graph", dest="graph_path", help=f"graph JSON file or template name ({', '.join(TEMPLATES)})")
    p.add_argument("--seed", type=_seed, default=0)
    p.add_argument("--subnets", dest="T", type=int, default=DEFAULT_T, help="subnetworks T in the chain")
    p.add_argument("--lambda", dest="lam", type=float, default=DEFAULT_LAMBDA)
    p.add_argument("--kappa", type=float, default=DEFAULT_KAPPA)
    p.add_argument("--tol", type=float, default=DEFAULT_TOL)
    p.add_argument("--path-len", type=int)
    p.add_argument("--n-paths", type=int)
    p.add_argument("--out", dest="output_dir", default="results")
    p.add_argument("--depths", type=_ints, default=(80, 100, 120, 140))
    p.add_argument("--n-seeds", type=int)
    p.add_argument("--runs", type=int, default=10)
    p.add_argument("--t-values", type=_ints, default=(1, 2, 4, 8))
    p.add_argument("--lambdas", type=_floats, default=DEFAULT_LAMBDAS)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--threshold", type=float, default=2.5)
    p.add_argument("--boost", type=float, default=1.5)
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--mode", choices=("standard", "literal"), default="standard")
    p.add_argument("--table", help="key,accuracy CSV for the lookup evaluator (pareto)")
    p.add_argument("--probe", action="store_true", help="also run the pruning probe (train-toy)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def parse_args(argv: Sequence[str]) -> RunConfig:
    ns = build_parser().parse_args(list(argv))
    if ns.command not in COMMANDS:
        raise CliError(f"unknown command {ns.command!r}; choose from {', '.join(COMMANDS)}")
    if ns.command in NEEDS_GRAPH and not ns.graph_path:
        raise CliError(f"command {ns.command!r} needs --graph")
    if ns.verbose:
        logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    fields = {k: v for k, v in vars(ns).items() if k != "verbose"}
    return RunConfig(**fields)


def _load(cfg: RunConfig) -> SupernetGraph:
    path = Path(cfg.graph_path)
    if path.exists():
        return load_graph(path)
    if cfg.graph_path in TEMPLATES:
        return template(cfg.graph_path)
    raise CliError(f"graph {cfg.graph_path!r} is neither a readable file nor a template name")


def _meta(cfg: RunConfig, graph: SupernetGraph | None = None, **extra) -> dict[str, Any]:
    meta: dict[str, Any] = {"command": cfg.command, "seed": cfg.seed}
    if graph is not None:
        meta["graph"] = cfg.graph_path
        meta["graph_sha256"] = graph.digest()[:16]
    meta.update(extra)
    return meta


def _chain_meta(cfg: RunConfig) -> dict[str, Any]:
    return {"T": cfg.T, "lambda": cfg.lam, "kappa": cfg.kappa, "tol": cfg.tol}


def _paths_rows(paths) -> list[tuple]:
    return [(i, p.length, p.tps, " ".join(p.nodes)) for i, p in enumerate(paths)]


PATH_COLUMNS = ("path_id", "length", "tps", "node_list")


def cmd_validate(cfg: RunConfig, out: Path) -> None:
    g = _load(cfg)
    summary = {
        "nodes": g.node_count,
        "edges": g.edge_count,
        "input": g.input,
        "output": g.output,
        "optional_edges": len(g.optional_edges),
        "sha256": g.digest(),
    }
    write_json(out / "validate.json", summary, _meta(cfg, g))
    print(f"ok: {g.node_count} nodes, {g.edge_count} edges")


def cmd_analyze(cfg: RunConfig, out: Path) -> None:
    g = _load(cfg)
    an = analyze(g, cfg.T, substream(cfg.seed, "analyze/masks"), cfg.lam, cfg.kappa, cfg.tol)
    meta = _meta(cfg, g, **_chain_meta(cfg))
    write_csv(out / "tas.csv", ("node_id", "mu"), an.tas.mu.items(), meta)
    write_csv(
        out / "stationary.csv",
        ("state_index", "subnetwork_index", "node_id", "pi"),
        stationary_rows(an.pi, g, cfg.T),
        meta,
    )
    best = max_tps_path(g, an.tas, cfg.path_len)
    write_csv(out / "paths.csv", PATH_COLUMNS, _paths_rows([best]), {**meta, "path_len": cfg.path_len or "free"})
    write_json(
        out / "analyze.json",
        {
            "residual": an.pi.residual,
            "iterations": an.pi.iterations,
            "converged": an.pi.converged,
            "min_pi": float(an.pi.pi.min()),
            "important_path": list(best.nodes),
            "tps": best.tps,
        },
        meta,
    )
    print(f"tps={best.tps!r} residual={an.pi.residual:.3e} iterations={an.pi.iterations}")


def _child_seeds(cfg: RunConfig, name: str, n: int) -> list[int]:
    return [int(s) for s in substream(cfg.seed, name).integers(0, 2**63, size=n)]


def cmd_verify_ldi(cfg: RunConfig, out: Path) -> None:
    from .ldi import verify_prop1

    path_len = cfg.path_len or 50
    n_paths = cfg.n_paths or 30
    seeds = _child_seeds(cfg, "verify-ldi/seeds", cfg.n_seeds or 10)
    rep = verify_prop1(cfg.depths, None, path_len, n_paths, seeds, T=cfg.T, lam=cfg.lam, kappa=cfg.kappa, tol=cfg.tol)
    meta = _meta(
        cfg, None, **_chain_meta(cfg), depths=list(cfg.depths), path_len=path_len, n_paths=n_paths,
        n_seeds=len(seeds), q=rep.q, epsilon=rep.epsilon,
    )
    write_csv(out / "prop1.csv", ("depth", "seed", "path_id", "tps", "mean_sigma", "w_e"), rep.rows, meta)
    write_csv(
        out / "prop1_summary.csv",
        ("depth", "spearman", "frac_sigma_le_cap", "sigma_cap"),
        [(d, rep.spearman[d], rep.frac_le[d], rep.sigma_cap) for d in cfg.depths],
        meta,
    )
    for d in cfg.depths:
        print(f"depth={d} spearman={rep.spearman[d]:.4f} frac_sigma_le_{rep.sigma_cap}={rep.frac_le[d]:.3f}")
    for f in rep.flags:
        print(f"flag: {f}")


def cmd_stability(cfg: RunConfig, out: Path) -> None:
    g = _load(cfg)
    length = cfg.path_len or middle_path_length(g)
    ref = analyze(g, DEFAULT_T, substream(cfg.seed, "stability/reference"), cfg.lam, cfg.kappa, cfg.tol)
    path = max_tps_path(g, ref.tas, length)
    rows = tps_stability(g, cfg.t_values, cfg.runs, substream(cfg.seed, "stability/masks"), path, cfg.lam, cfg.kappa, cfg.tol)
    meta = _meta(cfg, g, **_chain_meta(cfg), runs=cfg.runs, path_len=length, path=" ".join(path.nodes))
    write_csv(out / "stability.csv", ("T", "mean_tps", "std_tps", "rel_std"), [(r.T, r.mean, r.std, r.rel_std) for r in rows], meta)
    for r in rows:
        print(f"T={r.T} mean={r.mean:.6f} rel_std={r.rel_std:.4%}")


def cmd_lambda_sweep(cfg: RunConfig, out: Path) -> None:
    g = _load(cfg)
    length = cfg.path_len or middle_path_length(g)
    paths = sample_paths(g, length, cfg.n_paths or 5, substream(cfg.seed, "lambda-sweep/paths"))
    sweep = lambda_sweep(g, cfg.lambdas, paths, cfg.T, substream(cfg.seed, "lambda-sweep/masks"), cfg.kappa, cfg.tol)
    meta = _meta(cfg, g, T=cfg.T, kappa=cfg.kappa, tol=cfg.tol, lambdas=list(cfg.lambdas), path_len=length)
    write_csv(out / "lambda_sweep.csv", ("lambda", "path_id", "tps", "rank"), sweep.rows(), meta)
    write_csv(out / "paths.csv", PATH_COLUMNS, [(i, p.length, "", " ".join(p.nodes)) for i, p in enumerate(paths)], meta)
    ranks = sweep.ranks()
    stable = bool((ranks == ranks[-1]).all())
    print(f"paths={len(paths)} rank_order_identical={stable}")


def cmd_train_toy(cfg: RunConfig, out: Path) -> None:
    from .trainer import ConvergenceConfig, TrainConfig, importance_probe, run_convergence_experiment

    seeds = tuple(_child_seeds(cfg, "train-toy/seeds", cfg.n_seeds or 5))
    tcfg = TrainConfig(epochs=cfg.epochs, boost=cfg.boost)
    ccfg = ConvergenceConfig(seeds, cfg.threshold, tcfg)
    res = run_convergence_experiment(ccfg)
    meta = _meta(cfg, None, n_seeds=len(seeds), epochs=cfg.epochs, threshold=cfg.threshold, boost=cfg.boost, lr=tcfg.lr)
    write_csv(out / "loss_curves.csv", ("policy", "seed", "epoch", "loss"), res.rows(), meta)
    summary = {
        "config": {"seeds": list(seeds), **asdict(tcfg)},
        "epochs_to_threshold": [{"policy": p, "seed": s, "epochs": e} for (p, s), e in res.epochs.items()],
        "median_epochs": {p: res.median_epochs(p) for p in ("tips", "uniform")},
    }
    write_json(out / "convergence.json", _jsonable(summary), meta)
    print(f"median epochs to {cfg.threshold}: tips={res.median_epochs('tips')} uniform={res.median_epochs('uniform')}")
    if cfg.probe:
        probe = importance_probe(seeds, cfg=tcfg)
        write_csv(out / "probe.csv", ("seed", "ratio", "edge", "important", "accuracy_drop"), probe.rows, meta)
        for r in (0.25, 0.5, 0.75):
            print(f"ratio={r} drop important={probe.median_drop(r, True):.4f} unimportant={probe.median_drop(r, False):.4f}")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    return obj


def cmd_pareto(cfg: RunConfig, out: Path) -> None:
    from .pareto import LookupEvaluator, ToyAccuracyEvaluator, export_configs, pareto_search
    from .trainer import SamplingPolicy, TrainConfig, importance_labels, make_toy_dataset, train

    g = _load(cfg)
    if cfg.table:
        evaluator = LookupEvaluator.from_csv(cfg.table)
    else:
        data = make_toy_dataset(d_in=g.node_width(g.input), n_classes=g.node_width(g.output), seed=cfg.seed % 2**32)
        policy = SamplingPolicy(importance_labels(g, cfg.seed), boost=cfg.boost)
        net, _ = train(g, data, policy, TrainConfig(epochs=cfg.epochs), cfg.seed)
        evaluator = ToyAccuracyEvaluator(net, data)
    front = pareto_search(g, evaluator, cfg.steps, substream(cfg.seed, "pareto/sampling"), cfg.mode)
    meta = _meta(cfg, g, steps=cfg.steps, mode=cfg.mode, evaluator="lookup" if cfg.table else "toy")
    write_csv(out / "front.csv", ("flops", "accuracy", "config_id"), [(c.flops, c.accuracy, c.id) for c in front], meta)
    if len(front):
        export_configs(front, g).save(out / "configs.json", meta)
    print(f"front size={len(front)}")


HANDLERS = {
    "validate": cmd_validate,
    "analyze": cmd_analyze,
    "verify-ldi": cmd_verify_ldi,
    "stability": cmd_stability,
    "lambda-sweep": cmd_lambda_sweep,
    "train-toy": cmd_train_toy,
    "pareto": cmd_pareto,
}


def run(cfg: RunConfig) -> int:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    HANDLERS[cfg.command](cfg, out)
    return 0


def _error_line(command: str, exc: BaseException) -> str:
    msg = str(exc).replace("\n", " ").replace('"', "'")
    return f'error: command={command} type={type(exc).__name__} message="{msg}"'


def main(argv: Sequence[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    command = argv[0] if argv else "-"
    try:
        cfg = parse_args(argv)
    except CliError as exc:
        print(_error_line(command, exc), file=sys.stderr)
        return 2
    try:
        return run(cfg)
    except Exception as exc:
        print(_error_line(cfg.command, exc), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
