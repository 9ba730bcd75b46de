"""Toy training: importance-boosted vs uniform subnetwork sampling, then the per-operation pruning probe.

    python3 scripts/run_convergence.py --out results/convergence
"""

import argparse
from pathlib import Path

from anytime_paths.io import write_csv
from anytime_paths.templates import branchy_mlp
from anytime_paths.trainer import ConvergenceConfig, TrainConfig, importance_probe, run_convergence_experiment


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--epochs", type=int, default=30)
    ap.add_argument("--boost", type=float, default=1.5)
    ap.add_argument("--threshold", type=float, default=2.5)
    ap.add_argument("--stages", type=int, default=3, help="branch stages of the toy supernet")
    ap.add_argument("--out", type=Path, default=Path("results/convergence"))
    args = ap.parse_args()

    graph = branchy_mlp(stages=args.stages)
    tcfg = TrainConfig(epochs=args.epochs, boost=args.boost)
    cfg = ConvergenceConfig(tuple(range(args.seeds)), args.threshold, tcfg)
    meta = dict(seeds=args.seeds, epochs=args.epochs, boost=args.boost, threshold=args.threshold, stages=args.stages)

    res = run_convergence_experiment(cfg, graph)
    write_csv(args.out / "loss_curves.csv", ("policy", "seed", "epoch", "loss"), res.rows(), meta)
    for (policy, seed), e in sorted(res.epochs.items()):
        print(f"{policy:8s} seed {seed}: epochs to {args.threshold} = {e}")
    print(f"median: tips {res.median_epochs('tips')}  uniform {res.median_epochs('uniform')}")

    probe = importance_probe(cfg.seeds, cfg=tcfg, graph=graph)
    write_csv(args.out / "probe.csv", ("seed", "ratio", "edge", "important", "accuracy_drop"), probe.rows, meta)
    for r in (0.25, 0.5, 0.75):
        print(f"prune {r:.0%}: median drop important {probe.median_drop(r, True):.3f}"
              f"  unimportant {probe.median_drop(r, False):.3f}")


if __name__ == "__main__":
    main()
