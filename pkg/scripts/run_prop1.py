"""Correlate path scores with path Jacobian spectra on deep residual MLPs.

    python3 scripts/run_prop1.py --out results/prop1 --seeds 10
"""

import argparse
import time
from pathlib import Path

from anytime_paths.io import write_csv
from anytime_paths.ldi import verify_prop1


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--depths", default="80,100,120,140")
    ap.add_argument("--width", type=int, default=80)
    ap.add_argument("--path-len", type=int, default=50)
    ap.add_argument("--n-paths", type=int, default=30)
    ap.add_argument("--seeds", type=int, default=10, help="seeds 0..N-1, pooled per depth")
    ap.add_argument("--out", type=Path, default=Path("results/prop1"))
    args = ap.parse_args()

    depths = [int(d) for d in args.depths.split(",")]
    t0 = time.perf_counter()
    rep = verify_prop1(depths, path_len=args.path_len, n_paths=args.n_paths, seeds=range(args.seeds), width=args.width)
    meta = dict(depths=depths, width=args.width, path_len=args.path_len, n_paths=args.n_paths,
                seeds=args.seeds, q=rep.q, epsilon=rep.epsilon)
    write_csv(args.out / "prop1.csv", ("depth", "seed", "path_id", "tps", "mean_sigma", "w_e"), rep.rows, meta)
    write_csv(args.out / "prop1_summary.csv", ("depth", "spearman", "frac_sigma_le_cap"),
              [(d, rep.spearman[d], rep.frac_le[d]) for d in depths], meta)
    print(f"q={rep.q:.6g} epsilon={rep.epsilon:.6g} ({time.perf_counter() - t0:.1f}s)")
    for d in depths:
        print(f"depth {d:4d}  spearman {rep.spearman[d]:.3f}  E[sigma]<={rep.sigma_cap}: {rep.frac_le[d]:.1%}")
    for f in rep.flags:
        print("flag:", f)


if __name__ == "__main__":
    main()
