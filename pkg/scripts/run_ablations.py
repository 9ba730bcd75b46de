"""Score stability against the number of subnetworks, and path ranking against the coupling strength.

    python3 scripts/run_ablations.py --out results/ablations
"""

import argparse
from pathlib import Path

import numpy as np

from anytime_paths import templates
from anytime_paths.io import write_csv
from anytime_paths.scores import (
    analyze,
    lambda_sweep,
    max_tps_path,
    middle_path_length,
    sample_covering_masks,
    sample_paths,
    tps_stability,
)

GRAPHS = ("residual_mlp", "mobilenet_like", "resnet_like", "branchy_mlp")
LAMBDAS = (0.1, 0.25, 0.5, 0.75, 1.0)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--runs", type=int, default=10)
    ap.add_argument("--t-values", default="1,2,4,8,16")
    ap.add_argument("--n-paths", type=int, default=5)
    ap.add_argument("--out", type=Path, default=Path("results/ablations"))
    args = ap.parse_args()
    t_values = [int(t) for t in args.t_values.split(",")]

    rows = []
    for name in GRAPHS:
        g = templates.template(name)
        rng = np.random.default_rng([args.seed, len(rows)])
        path = max_tps_path(g, analyze(g, 8, rng).tas, middle_path_length(g))
        for r in tps_stability(g, t_values, args.runs, rng, path):
            rows.append((name, r.T, r.mean, r.std, r.rel_std))
            print(f"{name:15s} T={r.T:2d}  rel std {r.rel_std:.2%}")
    write_csv(args.out / "stability.csv", ("graph", "T", "mean_tps", "std_tps", "rel_std"), rows,
              dict(seed=args.seed, runs=args.runs))

    sweep_rows = []
    for name in GRAPHS:
        g = templates.template(name)
        rng = np.random.default_rng([args.seed, 1000 + len(sweep_rows)])
        masks = sample_covering_masks(g, 8, rng)
        paths = sample_paths(g, middle_path_length(g), args.n_paths, rng)
        sweep = lambda_sweep(g, LAMBDAS, paths, 8, rng, masks=masks)
        ranks = sweep.ranks()
        sweep_rows += [(name, *r) for r in sweep.rows()]
        print(f"{name:15s} {len(paths)} paths, rank order identical across lambda: {bool((ranks == ranks[0]).all())}")
    write_csv(args.out / "lambda_sweep.csv", ("graph", "lambda", "path_id", "tps", "rank"), sweep_rows,
              dict(seed=args.seed, lambdas=list(LAMBDAS)))


if __name__ == "__main__":
    main()
