"""End-to-end acceptance criteria, one test (and one printed verdict line) each."""

import math

import numpy as np
from scipy import stats

from anytime_paths import templates
from anytime_paths.cli import main
from anytime_paths.dtmc import hyper_adjacency, simulate_walk, stationary, transition_matrix
from anytime_paths.graph import EdgePolicy, adjacency_matrix, full_mask, sample_subnetwork
from anytime_paths.ldi import gaussian_chain_trial, ldi_bounds, mean_singular_value, verify_prop1
from anytime_paths.pareto import (
    Candidate,
    WidthConfigStore,
    apply_config,
    export_configs,
    mask_from_config,
    pareto_search,
)
from anytime_paths.scores import (
    TasTable,
    analyze,
    lambda_sweep,
    max_tps_path,
    middle_path_length,
    sample_covering_masks,
    sample_paths,
    tps,
    tps_stability,
)
from anytime_paths.trainer import (
    ConvergenceConfig,
    SamplingPolicy,
    SlimmableNet,
    TrainConfig,
    importance_labels,
    importance_probe,
    make_toy_dataset,
    run_convergence_experiment,
    train,
    uniform_policy,
)

from conftest import all_paths, random_dag

BUNDLED = {
    "residual_mlp": templates.residual_mlp,
    "mobilenet_like": templates.mobilenet_like,
    "resnet_like": templates.resnet_like,
    "branchy_mlp": templates.branchy_mlp,
}


def test_1_prop1(acceptance):
    depths = (80, 100, 120, 140)
    rep = verify_prop1(depths, path_len=50, n_paths=30, seeds=range(10), width=80)
    ok = not rep.flagged and all(rep.spearman[d] >= 0.8 and rep.frac_le[d] >= 0.95 for d in depths)
    rho = " ".join(f"{d}:{rep.spearman[d]:.3f}" for d in depths)
    frac = min(rep.frac_le.values())
    acceptance(1, ok, f"spearman {rho} (>=0.8); min frac E[sigma]<=1.05 {frac:.3f} (>=0.95); q={rep.q:.4g}")


def test_2_stability(acceptance):
    parts, ok = [], True
    for i, (name, make) in enumerate(BUNDLED.items()):
        g = make()
        ref = analyze(g, 8, np.random.default_rng(100 + i)).tas
        path = max_tps_path(g, ref, middle_path_length(g))
        r1, r8 = tps_stability(g, [1, 8], 10, np.random.default_rng(200 + i), path)
        ok &= r8.rel_std <= 0.025 and r8.rel_std < r1.rel_std
        parts.append(f"{name} T8={r8.rel_std:.2%} T1={r1.rel_std:.2%}")
    acceptance(2, ok, "; ".join(parts) + " (T8 <= 2.5% and < T1)")


def test_3_lambda_ranking(acceptance):
    g = templates.mobilenet_like()
    rng = np.random.default_rng(3)
    masks = sample_covering_masks(g, 8, rng)
    paths = sample_paths(g, middle_path_length(g), 5, rng)
    lambdas = [0.1, 0.25, 0.5, 0.75, 1.0]
    sweep = lambda_sweep(g, lambdas, paths, 8, rng, masks=masks)
    taus = [
        stats.kendalltau(sweep.tps[i], sweep.tps[j]).statistic
        for i in range(len(lambdas))
        for j in range(i + 1, len(lambdas))
    ]
    # tau = 1 for every pair is the same as identical, tie-free rank vectors
    ranks = sweep.ranks()
    tie_free = all(len(set(row)) == len(row) for row in sweep.tps.tolist())
    ok = len(paths) == 5 and tie_free and bool((ranks == ranks[0]).all())
    acceptance(3, ok, f"{len(paths)} paths, min pairwise Kendall tau {min(taus):.3f} over {len(taus)} lambda pairs")


def _test_graphs():
    rng = np.random.default_rng(4)
    yield from (templates.template(n) for n in sorted(templates.TEMPLATES))
    yield from (random_dag(rng, int(rng.integers(3, 13))) for _ in range(10))


def test_4_dtmc(acceptance):
    worst_fix = worst_sum = worst_deg = 0.0
    for gi, g in enumerate(_test_graphs()):
        rng = np.random.default_rng(gi)
        for T in (1, 4):
            masks = [sample_subnetwork(g, EdgePolicy.uniform(g), rng) for _ in range(T)]
            P = transition_matrix(hyper_adjacency(masks, g), 1e-5)
            pi = stationary(P).pi
            worst_fix = max(worst_fix, float(np.abs(P.rmatvec(pi) - pi).sum()))
            worst_sum = max(worst_sum, abs(float(pi.sum()) - 1))
        # connected undirected cases: full supernet, and covering masks coupled across copies
        for H in (adjacency_matrix(g, full_mask(g)), hyper_adjacency(sample_covering_masks(g, 3, rng), g, 0.5).matrix):
            deg = np.asarray(H.sum(axis=1)).ravel()
            pi = stationary(transition_matrix(H, 0.0), tol=1e-13).pi
            worst_deg = max(worst_deg, float(np.abs(pi - deg / deg.sum()).max()))
    g = templates.inverted_residual()
    P = transition_matrix(hyper_adjacency([full_mask(g)] * 2, g, 0.5), 0.0)
    walk = float(np.abs(simulate_walk(P, 1_000_000, np.random.default_rng(5)) - stationary(P, tol=1e-13).pi).sum())
    ok = worst_fix <= 1e-10 and worst_sum <= 1e-12 and worst_deg <= 1e-10 and walk <= 0.02
    acceptance(
        4,
        ok,
        f"max |piP-pi|_1 {worst_fix:.2e}; max |sum-1| {worst_sum:.1e}; max degree-form error {worst_deg:.1e}; walk L1 {walk:.4f}",
    )


def _brute(graph, table, paths):
    best = max(tps(p, table) for p in paths)
    return min((p for p in paths if tps(p, table) == best), key=lambda p: tuple(graph.index(n) for n in p))


def test_5_path_oracle(acceptance):
    rng = np.random.default_rng(5)
    mismatches = checks = 0
    for i in range(200):
        n = int(rng.integers(2, 13))
        g = random_dag(rng, n)
        vals = rng.integers(0, 4, n) / 4 if i % 2 else rng.random(n)
        table = TasTable(dict(zip(g.nodes, vals.tolist())), 1)
        paths = all_paths(g)
        checks += 1
        mismatches += max_tps_path(g, table).nodes != _brute(g, table, paths)
        for D in sorted({len(p) for p in paths}):
            checks += 1
            same = [p for p in paths if len(p) == D]
            mismatches += max_tps_path(g, table, length=D).nodes != _brute(g, table, same)
    acceptance(5, mismatches == 0, f"{mismatches} mismatches in {checks} searches over 200 DAGs")


def test_6_ldi_bounds(acceptance):
    width, fan_in = 80, 8
    q = 1 / (width * fan_in)
    inside, ratios = 0, []
    for seed in range(100):
        mean, w_e = gaussian_chain_trial(width, fan_in, 4, q, np.random.default_rng(seed))
        lo, hi = ldi_bounds(q, w_e, width)
        inside += lo <= mean <= hi
        ratios.append(mean / math.sqrt(q * w_e))
    dev = abs(np.mean(ratios) - 1)
    square = np.mean(
        [mean_singular_value(np.random.default_rng(s).standard_normal((80, 80)) / math.sqrt(80)).mean_sigma for s in range(20)]
    )
    ok = inside >= 95 and dev <= 0.15
    acceptance(
        6,
        ok,
        f"interval holds in {inside}/100 (w_e={fan_in * width}, w_r={width}); "
        f"sqrt(q w_e) deviation {dev:.1%} (<=15%); square 80x80 note: mean {square:.3f}",
    )


def _fast_nondominated(f, a):
    """Indices of the first occurrence of each non-dominated objective pair."""
    keep = []
    seen = set()
    for i in range(len(f)):
        dom = (f <= f[i]) & (a >= a[i]) & ((f < f[i]) | (a > a[i]))
        if dom.any() or (f[i], a[i]) in seen:
            continue
        seen.add((f[i], a[i]))
        keep.append(i)
    return keep


def test_7_pareto(acceptance):
    rng = np.random.default_rng(7)
    bad = 0
    for inst in range(100):
        n = 10_000 if inst % 10 == 0 else int(np.exp(rng.uniform(0, np.log(10_000))))
        f = rng.integers(0, 2000, n).astype(float)
        a = rng.integers(0, 500, n) / 500
        it = iter(range(n))
        front = pareto_search(None, lambda i: a[i], n, rng, sampler=lambda r: next(it), cost=lambda i: f[i])
        bad += sorted(int(c.id[1:]) for c in front) != sorted(_fast_nondominated(f, a))

    g = templates.branchy_mlp(width=16)
    net = SlimmableNet.init(g, np.random.default_rng(0))
    for k in net.b:
        net.b[k] = 0.1 * rng.standard_normal(net.b[k].shape)
    masks = [sample_subnetwork(g, EdgePolicy.uniform(g), np.random.default_rng(s)) for s in range(50)]
    store = WidthConfigStore.from_dict(
        export_configs([Candidate(m, 0.0, 0.0, f"m{i}") for i, m in enumerate(masks)], g).to_dict()
    )
    lossless = all(mask_from_config(g, c) == m for c, m in zip(store.configs, masks))
    x = rng.standard_normal((16, 8))
    err = max(float(np.abs(apply_config(net, c).forward(x) - net.forward(x, m)[0]).max()) for c, m in zip(store.configs, masks))
    ok = bad == 0 and lossless and err <= 1e-12
    acceptance(7, ok, f"{bad}/100 fronts differ from brute force; round trip lossless={lossless}; max forward diff {err:.1e}")


def test_8_convergence(acceptance):
    res = run_convergence_experiment(ConvergenceConfig())
    tips, uni = res.median_epochs("tips"), res.median_epochs("uniform")
    g = templates.branchy_mlp()
    data = make_toy_dataset(512)
    short = TrainConfig(epochs=5)
    same = all(
        train(g, data, SamplingPolicy(importance_labels(g, s), 0.5, 1.0), short, s)[1]
        == train(g, data, uniform_policy(g), short, s)[1]
        for s in range(5)
    )
    acceptance(8, tips <= uni and same, f"median epochs to loss 2.5: tips={tips} uniform={uni}; boost=1 curves identical={same}")


def test_9_importance_probe(acceptance):
    probe = importance_probe()
    parts, ok = [], True
    for r in (0.25, 0.5, 0.75):
        imp, unimp = probe.median_drop(r, True), probe.median_drop(r, False)
        ok &= imp > unimp
        parts.append(f"{r:.0%}: important {imp:.3f} vs unimportant {unimp:.3f}")
    acceptance(9, ok, "median accuracy drop " + "; ".join(parts))


CLI_RUNS = [
    ["validate", "--graph", "inverted_residual"],
    ["analyze", "--graph", "mobilenet_like", "--seed", "3"],
    ["verify-ldi", "--depths", "20,30", "--path-len", "10", "--n-paths", "10", "--n-seeds", "2", "--seed", "4"],
    ["stability", "--graph", "resnet_like", "--runs", "3", "--seed", "5"],
    ["lambda-sweep", "--graph", "mobilenet_like", "--seed", "6"],
    ["train-toy", "--epochs", "3", "--n-seeds", "2", "--probe", "--seed", "7"],
    ["pareto", "--graph", "branchy_mlp", "--epochs", "3", "--steps", "50", "--seed", "8"],
]


def test_10_reproducibility(acceptance, tmp_path):
    differing = []
    for argv in CLI_RUNS:
        snaps = []
        for rep in ("a", "b"):
            out = tmp_path / argv[0] / rep
            assert main(argv + ["--out", str(out)]) == 0
            snaps.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
        if not snaps[0] or snaps[0] != snaps[1]:
            differing.append(argv[0])
    acceptance(10, not differing, f"{len(CLI_RUNS)} commands rerun; differing outputs: {differing or 'none'}")
