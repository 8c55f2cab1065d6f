import csv
import json

import numpy as np
import pytest

from conftest import segment
from elasticnet.cli import EXIT_COMPAT, EXIT_HALT, EXIT_OK, EXIT_USAGE, main, svg_polylines
from elasticnet.compat import generate_star
from elasticnet.network import Network, format_network, read_network, write_network

ANG = np.pi / 2 + 2 * np.pi * np.arange(3) / 3


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture
def straight_file(tmp_path):
    P = np.stack([np.cos(ANG), np.sin(ANG)], 1)
    net = Network(np.stack([segment((0, 0), p, 32).nodes for p in P]), (0.5, 0.5, 0.5))
    path = tmp_path / "straight.txt"
    write_network(net, path)
    return path


def test_generate_then_check(tmp_path, capsys):
    path = tmp_path / "star.txt"
    assert main(["generate", "--n-nodes", "40", "-o", str(path)]) == EXIT_OK
    assert read_network(path).N == 40
    assert main(["check-init", str(path)]) == EXIT_OK
    rep = json.loads(capsys.readouterr().out)
    assert rep["ok"] and rep["concurrency_ok"]


def test_generate_stdout_is_parseable(capsys):
    assert main(["generate", "--n-nodes", "20", "--seed", "3", "--dim", "3"]) == EXIT_OK
    text = capsys.readouterr().out
    assert text.splitlines()[0].startswith("3 20 ")


def test_check_split_junction(tmp_path, capsys):
    net = Network(np.array(read_network_default(tmp_path).nodes), (0.1, 0.1, 0.1))
    X = np.array(net.nodes)
    X[1, 0, 0] += 1e-6
    bad = tmp_path / "bad.txt"
    bad.write_text(format_network(Network(X, net.lam, strict=False)))
    assert main(["check-init", str(bad)]) == EXIT_COMPAT
    assert json.loads(capsys.readouterr().out)["concurrency_ok"] is False


def read_network_default(tmp_path):
    p = tmp_path / "default.txt"
    main(["generate", "--n-nodes", "24", "-o", str(p)])
    return read_network(p)


def test_check_truncated(tmp_path, capsys):
    p = tmp_path / "star.txt"
    main(["generate", "--n-nodes", "24", "-o", str(p)])
    lines = p.read_text().splitlines()
    p.write_text("\n".join(lines[:40]) + "\n")
    assert main(["check-init", str(p)]) == EXIT_USAGE
    assert "line" in capsys.readouterr().err


def test_run_stationary(straight_file, tmp_path):
    out = tmp_path / "out"
    code = main(["run", "--input", str(straight_file), "--mode", "imex", "--t-end", "1", "--out", str(out)])
    assert code == EXIT_OK
    E = [float(r["E_total"]) for r in read_rows(out / "diagnostics.csv")]
    assert len(E) >= 2 and np.ptp(E) <= 1e-12 * E[0]
    assert np.max(np.abs(read_network(out / "final.txt").nodes - read_network(straight_file).nodes)) < 1e-12
    assert json.loads((out / "summary.json").read_text())["t"] == pytest.approx(1.0)


def test_run_symmetric_star_outputs(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"n_nodes": 32, "mode": "imex", "t_end": 0.05, "sample_every": 1,
                               "output_every": 2, "emit": ["csv", "snapshots", "svg"]}))
    out = tmp_path / "out"
    assert main(["run", "--config", str(cfg), "--out", str(out)]) == EXIT_OK
    rows = read_rows(out / "diagnostics.csv")
    E = np.array([float(r["E_total"]) for r in rows])
    assert np.all(np.diff(E) < 0)
    assert list(rows[0]) == [
        "t", "E_total", "E_1", "E_2", "E_3", "L_1", "L_2", "L_3", "dissipation_lhs",
        "dissipation_rhs", "det", "delta", "span_dim", "phi1_0", "phi2_0", "phi3_0",
        "el_residual", "spread",
    ]
    log = (out / "run_log.jsonl").read_text().splitlines()
    assert len(log) == len(rows) and json.loads(log[0])["t"] == 0.0
    assert (out / "network.svg").read_text().startswith("<svg")
    assert any((out / "snapshots").iterdir())


def test_flags_override_config(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"n_nodes": 32, "mode": "imex", "t_end": 5.0}))
    out = tmp_path / "out"
    assert main(["run", "--config", str(cfg), "--t-end", "0.01", "--out", str(out)]) == EXIT_OK
    assert json.loads((out / "summary.json").read_text())["t"] == pytest.approx(0.01)


def test_unknown_config_key(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"n_node": 32}))
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")]) == EXIT_USAGE


def collinear_file(tmp_path):
    net = generate_star([[2, 1], [2, -1], [3, 0.2]], [0, 0], np.tile([1.0, 0.0], (3, 1)), 64)
    p = tmp_path / "collinear.txt"
    write_network(net, p)
    return p


def test_run_refuses_degenerate_tangents(tmp_path):
    out = tmp_path / "out"
    code = main(["run", "--input", str(collinear_file(tmp_path)), "--out", str(out), "--mode", "imex"])
    assert code == EXIT_COMPAT
    assert not (out / "diagnostics.csv").exists()


def test_run_forced_degenerate_halts(tmp_path):
    out = tmp_path / "out"
    code = main(["run", "--input", str(collinear_file(tmp_path)), "--out", str(out), "--force", "--mode", "imex"])
    assert code == EXIT_HALT
    assert json.loads((out / "summary.json").read_text())["halt_reason"] in ("Delta", "Span")


def test_determinism(tmp_path):
    args = ["--n-nodes", "24", "--mode", "imex", "--t-end", "0.02"]
    for k in (1, 2):
        assert main(["run", *args, "--out", str(tmp_path / f"o{k}")]) == EXIT_OK
    a = (tmp_path / "o1" / "diagnostics.csv").read_bytes()
    assert a == (tmp_path / "o2" / "diagnostics.csv").read_bytes()


def test_sweep_single_matches_run(tmp_path, monkeypatch):
    monkeypatch.setenv("ELASTICNET_THREADS", "1")
    args = ["--n-nodes", "24", "--mode", "imex", "--t-end", "0.02"]
    assert main(["sweep", *args, "--lambdas", "0.1", "--out", str(tmp_path / "sw")]) == EXIT_OK
    assert main(["run", *args, "--lambda", "0.1", "--out", str(tmp_path / "run")]) == EXIT_OK
    row = read_rows(tmp_path / "sw" / "sweep_summary.csv")[0]
    summ = json.loads((tmp_path / "run" / "summary.json").read_text())
    assert float(row["final_energy"]) == summ["final_energy"]
    assert [float(row[f"L_{i}"]) for i in (1, 2, 3)] == summ["lengths"]


def test_sweep_lambda_grid(tmp_path, monkeypatch):
    monkeypatch.setenv("ELASTICNET_THREADS", "2")
    out = tmp_path / "sw"
    args = ["--n-nodes", "24", "--mode", "imex", "--t-end", "0.02", "--allow-zero-lambda"]
    assert main(["sweep", *args, "--lambdas", "0,0.1,1", "--out", str(out)]) == EXIT_OK
    rows = read_rows(out / "sweep_summary.csv")
    assert [float(r["lambda"]) for r in rows] == [0.0, 0.1, 1.0]
    assert [r["growth_monitored"] for r in rows] == ["True", "False", "False"]
    assert rows[0]["growth_budget_exceeded"] in ("True", "False")
    # before convergence a stronger length weight has shortened the star more
    L = [float(r["total_length"]) for r in rows]
    assert L[0] > L[1] > L[2]


def test_sweep_zero_lambda_needs_flag(tmp_path, monkeypatch):
    monkeypatch.setenv("ELASTICNET_THREADS", "1")
    out = tmp_path / "sw"
    assert main(["sweep", "--n-nodes", "24", "--mode", "imex", "--t-end", "0.01", "--lambdas", "0", "--out", str(out)]) == EXIT_OK
    assert read_rows(out / "sweep_summary.csv")[0]["halt_reason"] == "Error"


def test_svg_writer():
    svg = svg_polylines([np.array([[0.0, 0.0], [1.0, 1.0]]), np.array([[0.0, 1.0], [1.0, 0.0]])])
    assert svg.count("<polyline") == 2 and svg.strip().endswith("</svg>")
