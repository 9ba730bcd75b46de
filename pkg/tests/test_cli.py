import json
import subprocess
import sys

import pytest

from anytime_paths import templates
from anytime_paths.cli import CliError, main, parse_args
from anytime_paths.graph import save_graph
from anytime_paths.io import read_csv


def test_parse_defaults():
    cfg = parse_args(["analyze", "--graph", "g.json", "--seed", "7"])
    assert (cfg.command, cfg.graph_path, cfg.seed) == ("analyze", "g.json", 7)
    assert (cfg.T, cfg.lam, cfg.kappa, cfg.tol) == (8, 1.0, 1e-5, 1e-10)


def test_parse_overrides():
    cfg = parse_args(["analyze", "--graph", "g.json", "--lambda", "0.5", "--subnets", "3", "--depths", "80,100"])
    assert cfg.lam == 0.5 and cfg.T == 3 and cfg.depths == (80, 100)


@pytest.mark.parametrize(
    "argv, pattern",
    [
        (["bogus"], "unknown command"),
        (["analyze"], "needs --graph"),
        (["analyze", "--graph", "g", "--kappa", "abc"], "invalid float"),
        (["analyze", "--graph", "g", "--seed", "-1"], "64-bit"),
    ],
)
def test_parse_errors(argv, pattern):
    with pytest.raises(CliError, match=pattern):
        parse_args(argv)


def test_error_line_and_exit_codes(tmp_path, capsys):
    assert main(["bogus"]) == 2
    err = capsys.readouterr().err.strip()
    assert err.startswith("error: command=bogus type=CliError message=") and "\n" not in err
    assert main(["analyze", "--graph", str(tmp_path / "missing.json"), "--out", str(tmp_path)]) == 1
    assert "command=analyze" in capsys.readouterr().err


def test_validate_template(tmp_path):
    path = tmp_path / "ir.json"
    save_graph(templates.inverted_residual(), path)
    assert main(["validate", "--graph", str(path), "--out", str(tmp_path)]) == 0
    doc = json.loads((tmp_path / "validate.json").read_text())
    assert doc["nodes"] == 4 and doc["meta"]["seed"] == 0


def test_analyze_chain(tmp_path):
    out = tmp_path / "o"
    assert main(["analyze", "--graph", "chain3", "--subnets", "1", "--kappa", "0", "--out", str(out)]) == 0
    meta, rows = read_csv(out / "tas.csv")
    assert meta["seed"] == "0" and meta["T"] == "1"
    assert [float(r["mu"]) for r in rows] == pytest.approx([1 / 3] * 3, abs=1e-10)
    assert (out / "tas.csv").read_text().startswith("# anytime-paths ")


def _snapshot(d):
    return {p.name: p.read_bytes() for p in sorted(d.iterdir())}


@pytest.mark.parametrize(
    "argv",
    [
        ["analyze", "--graph", "resnet_like", "--seed", "11"],
        ["stability", "--graph", "residual_mlp", "--runs", "3", "--t-values", "1,4"],
        ["lambda-sweep", "--graph", "mobilenet_like", "--n-paths", "3"],
        ["verify-ldi", "--depths", "12", "--path-len", "6", "--n-paths", "5", "--n-seeds", "2"],
        ["train-toy", "--epochs", "2", "--n-seeds", "1"],
        ["pareto", "--graph", "branchy_mlp", "--epochs", "2", "--steps", "20"],
    ],
)
def test_reruns_are_byte_identical(tmp_path, argv):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(argv + ["--out", str(a)]) == 0
    assert main(argv + ["--out", str(b)]) == 0
    snap = _snapshot(a)
    assert snap and snap == _snapshot(b)
    assert all(v.startswith(b"# anytime-paths ") or v.startswith(b"{") for v in snap.values())


def test_pareto_lookup_table(tmp_path):
    from anytime_paths.graph import EdgePolicy, sample_subnetwork
    from anytime_paths.pareto import mask_key
    from anytime_paths.rng import substream

    g = templates.chain()
    rng = substream(0, "pareto/sampling")
    keys = {mask_key(sample_subnetwork(g, EdgePolicy.uniform(g), rng)) for _ in range(5)}
    table = tmp_path / "acc.csv"
    table.write_text("key,accuracy\n" + "".join(f"{k},0.5\n" for k in keys))
    assert main(["pareto", "--graph", "chain3", "--steps", "5", "--table", str(table), "--out", str(tmp_path)]) == 0
    _, rows = read_csv(tmp_path / "front.csv")
    assert len(rows) >= 1


def test_module_entry_point(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "anytime_paths.cli", "validate", "--graph", "chain3", "--out", str(tmp_path)],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0 and proc.stdout.startswith("ok:")
