"""Command line interface: ``run``, ``check-init``, ``sweep`` and ``generate``.

Configuration is one JSON document (``--config``); command line flags
override its fields. Recognized keys::

    input            network file; when absent a star is generated
    generator        {"radius", "twist", "dim", "random", "seed"}
    lambda           three weights (or one, applied to every curve)
    n_nodes          N for generated stars
    t_end, dt, mode, safety, output_every, sample_every, el_threshold
    halt             {"min_length_fraction", "delta_min", "max_kappa", "growth_rate"}
    out_dir          output directory
    emit             subset of ["csv", "snapshots", "svg"]
    force, allow_zero_lambda
"""

import argparse
import csv
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .compat import check_initial, generate_star, symmetric_star
from .diagnostics import CSV_COLUMNS, append_run_log
from .errors import BlowUp, ElasticNetError, HaltAssumptionViolated, InvalidNetwork, ParseError
from .flow import FlowConfig, HaltThresholds, initial_state, run
from .network import Network, format_network, read_network, write_network

EXIT_OK, EXIT_COMPAT, EXIT_USAGE, EXIT_HALT = 0, 1, 2, 3

DEFAULTS = {
    "input": None,
    "generator": {"radius": 1.0, "twist": 0.6, "dim": 2, "random": False, "seed": 0},
    "lambda": [0.1, 0.1, 0.1],
    "n_nodes": 100,
    "t_end": 1.0,
    "dt": None,
    "mode": "explicit",
    "safety": 0.4,
    "output_every": 0,
    "sample_every": 100,
    "el_threshold": 1e-3,
    "halt": {},
    "out_dir": "elasticnet_out",
    "emit": ["csv"],
    "force": False,
    "allow_zero_lambda": False,
}


def load_config(args):
    cfg = json.loads(json.dumps(DEFAULTS))
    if getattr(args, "config", None):
        with open(args.config) as fh:
            user = json.load(fh)
        unknown = set(user) - set(DEFAULTS)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        for k, v in user.items():
            if isinstance(v, dict) and isinstance(cfg.get(k), dict):
                cfg[k].update(v)
            else:
                cfg[k] = v
    overrides = {
        "input": getattr(args, "input", None),
        "out_dir": getattr(args, "out", None),
        "mode": getattr(args, "mode", None),
        "n_nodes": getattr(args, "n_nodes", None),
        "t_end": getattr(args, "t_end", None),
        "dt": getattr(args, "dt", None),
        "lambda": getattr(args, "lam", None),
    }
    for k, v in overrides.items():
        if v is not None:
            cfg[k] = v
    if getattr(args, "force", False):
        cfg["force"] = True
    if getattr(args, "allow_zero_lambda", False):
        cfg["allow_zero_lambda"] = True
    if getattr(args, "svg", False) and "svg" not in cfg["emit"]:
        cfg["emit"] = list(cfg["emit"]) + ["svg"]
    lam = cfg["lambda"]
    cfg["lambda"] = [float(lam)] * 3 if np.isscalar(lam) else [float(v) for v in lam]
    if len(cfg["lambda"]) == 1:
        cfg["lambda"] *= 3
    if len(cfg["lambda"]) != 3:
        raise ValueError("lambda needs one or three values")
    return cfg


def random_star(N, lam, seed, dim=2, allow_zero_lambda=False):
    """Star with endpoints on the unit circle at jittered angles and random junction tangents."""
    rng = np.random.default_rng(seed)
    ang = np.pi / 2 + 2 * np.pi * np.arange(3) / 3 + rng.uniform(-0.3, 0.3, 3)
    P = np.zeros((3, dim))
    P[:, 0], P[:, 1] = np.cos(ang), np.sin(ang)
    J = np.zeros(dim)
    J[:2] = rng.uniform(-0.15, 0.15, 2)
    tang = ang + rng.uniform(-0.5, 0.5, 3)
    T = np.zeros((3, dim))
    T[:, 0], T[:, 1] = np.cos(tang), np.sin(tang)
    return generate_star(P, J, T, N, lam, allow_zero_lambda)


def build_network(cfg):
    if cfg["input"]:
        net = read_network(cfg["input"], allow_zero_lambda=cfg["allow_zero_lambda"])
        if cfg["lambda"] != DEFAULTS["lambda"]:
            net = net.replace(lam=cfg["lambda"], strict=False)
        return net
    g = cfg["generator"]
    N = int(cfg["n_nodes"])
    if g.get("random"):
        return random_star(N, cfg["lambda"], g.get("seed", 0), int(g.get("dim", 2)), cfg["allow_zero_lambda"])
    return symmetric_star(
        radius=float(g["radius"]), N=N, lam=cfg["lambda"], twist=float(g["twist"]),
        n=int(g.get("dim", 2)), allow_zero_lambda=cfg["allow_zero_lambda"],
    )


def flow_config(cfg):
    return FlowConfig(
        dt_initial=cfg["dt"],
        dt_mode=cfg["mode"],
        safety=float(cfg["safety"]),
        t_end=float(cfg["t_end"]),
        halt_on=HaltThresholds(**cfg["halt"]),
        output_every=int(cfg["output_every"]),
        sample_every=int(cfg["sample_every"]),
        el_threshold=float(cfg["el_threshold"]),
    )


# -- output writers ---------------------------------------------------------


def _fmt(v):
    return format(v, ".17g") if isinstance(v, float) else str(v)


def svg_polylines(paths, width=480, height=480, margin=16, stroke=("#1f77b4", "#d62728", "#2ca02c")):
    """SVG document drawing each ``(k, 2)`` array as a polyline, y axis up."""
    pts = np.concatenate([np.asarray(p, float)[:, :2] for p in paths])
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    span = np.where(hi - lo > 0, hi - lo, 1.0)
    scale = min((width - 2 * margin) / span[0], (height - 2 * margin) / span[1])
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">']
    for k, p in enumerate(paths):
        p = np.asarray(p, float)[:, :2]
        x = margin + (p[:, 0] - lo[0]) * scale
        y = height - margin - (p[:, 1] - lo[1]) * scale
        coords = " ".join(f"{a:.3f},{b:.3f}" for a, b in zip(x, y))
        out.append(f'<polyline fill="none" stroke="{stroke[k % len(stroke)]}" points="{coords}"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_csv(path, records):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for r in records:
            w.writerow([_fmt(r[c]) for c in CSV_COLUMNS])


# -- commands ---------------------------------------------------------------


def execute(cfg):
    """Run one simulation described by ``cfg``; returns (exit code, summary dict)."""
    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    emit = set(cfg["emit"])
    net = build_network(cfg)
    report = check_initial(net)
    summary = {"lambda": list(map(float, net.lam)), "compat": report.to_dict()}
    if not report.ok and not cfg["force"]:
        summary["halt_reason"] = "Compat"
        return EXIT_COMPAT, summary
    fcfg = flow_config(cfg)
    try:
        state = initial_state(net, thresholds=fcfg.halt_on)
    except HaltAssumptionViolated as exc:
        summary.update(halt_reason=exc.reason, halt_detail=str(exc))
        (out / "summary.json").write_text(json.dumps(summary, indent=2, default=float) + "\n")
        return EXIT_HALT, summary
    log = out / "run_log.jsonl"
    if log.exists():
        log.unlink()
    snaps = out / "snapshots"

    def on_sample(s, rec):
        append_run_log(log, rec)

    def on_snapshot(s):
        if "snapshots" in emit:
            snaps.mkdir(exist_ok=True)
            write_network(s.net, snaps / f"step_{s.step_count:08d}.txt")

    halt = None
    try:
        result = run(state, fcfg, on_sample=on_sample, on_snapshot=on_snapshot)
        final, records = result.state, result.records
    except (HaltAssumptionViolated, BlowUp) as exc:
        result = exc.result
        final, records = exc.state, exc.records
        halt = getattr(exc, "reason", "BlowUp")
        summary["halt_detail"] = str(exc)
    write_network(final.net, out / "final.txt")
    if "csv" in emit:
        write_csv(out / "diagnostics.csv", records)
    if "svg" in emit:
        (out / "network.svg").write_text(svg_polylines(list(final.net.nodes)))
        te = np.array([[r["t"], r["E_total"]] for r in records])
        if len(te) > 1:
            (out / "energy.svg").write_text(svg_polylines([te], height=320))
    L = [records[-1][f"L_{i}"] for i in (1, 2, 3)] if records else [math.nan] * 3
    summary.update(
        t=final.time,
        steps=final.step_count,
        final_energy=final.energy,
        lengths=L,
        converged=result.converged,
        converged_time=result.converged_time,
        growth_budget_exceeded=result.growth_budget_exceeded,
        rejections=result.rejections,
        halt_reason=halt,
    )
    (out / "summary.json").write_text(json.dumps(summary, indent=2, default=float) + "\n")
    return (EXIT_HALT if halt else EXIT_OK), summary


def cmd_run(args):
    cfg = load_config(args)
    code, summary = execute(cfg)
    if code == EXIT_COMPAT:
        print(json.dumps(summary["compat"], indent=2))
        print("initial data failed the compatibility check (use --force to run anyway)", file=sys.stderr)
    elif code == EXIT_HALT:
        print(f"halted: {summary['halt_reason']} ({summary.get('halt_detail', '')})", file=sys.stderr)
    else:
        print(json.dumps({k: summary[k] for k in ("t", "steps", "final_energy", "converged")}, default=float))
    return code


def cmd_check_init(args):
    net = read_network(args.path, allow_zero_lambda=args.allow_zero_lambda)
    report = check_initial(net)
    print(json.dumps(report.to_dict(), indent=2))
    return EXIT_OK if report.ok else EXIT_COMPAT


def _sweep_one(item):
    lam, cfg = item
    try:
        code, s = execute(cfg)
        return {
            "lambda": lam,
            "final_energy": s.get("final_energy", math.nan),
            "L_1": s.get("lengths", [math.nan] * 3)[0],
            "L_2": s.get("lengths", [math.nan] * 3)[1],
            "L_3": s.get("lengths", [math.nan] * 3)[2],
            "converged": s.get("converged", False),
            "halt_reason": s.get("halt_reason") or "",
            "growth_monitored": lam == 0.0,
            "growth_budget_exceeded": s.get("growth_budget_exceeded", False),
            "error": "",
        }
    except (ElasticNetError, ValueError, OSError) as exc:
        return {
            "lambda": lam, "final_energy": math.nan, "L_1": math.nan, "L_2": math.nan,
            "L_3": math.nan, "converged": False, "halt_reason": "Error",
            "growth_monitored": lam == 0.0, "growth_budget_exceeded": False, "error": str(exc),
        }


SWEEP_COLUMNS = (
    "lambda", "final_energy", "L_1", "L_2", "L_3", "total_length",
    "converged", "halt_reason", "growth_monitored", "growth_budget_exceeded", "error",
)


def sweep(cfg, grid, workers=None):
    """Run one simulation per weight in ``grid`` (same weight on every curve).

    Returns the summary rows in grid order. Failed runs are recorded, not raised.
    """
    base = Path(cfg["out_dir"])
    items = []
    for lam in grid:
        c = json.loads(json.dumps(cfg))
        c["lambda"] = [float(lam)] * 3
        c["out_dir"] = str(base / f"lambda_{lam:g}")
        items.append((float(lam), c))
    if workers is None:
        cap = os.environ.get("ELASTICNET_THREADS")
        workers = int(cap) if cap else (os.cpu_count() or 1)
    workers = max(1, min(workers, len(items)))
    if workers == 1:
        rows = [_sweep_one(it) for it in items]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_sweep_one, items))
    for r in rows:
        r["total_length"] = r["L_1"] + r["L_2"] + r["L_3"]
    base.mkdir(parents=True, exist_ok=True)
    with open(base / "sweep_summary.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SWEEP_COLUMNS)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in SWEEP_COLUMNS])
    return rows


def cmd_sweep(args):
    cfg = load_config(args)
    grid = [float(v) for v in args.lambdas.split(",") if v.strip()]
    if not grid:
        raise ValueError("empty lambda grid")
    rows = sweep(cfg, grid)
    for r in rows:
        print(f"lambda={r['lambda']:g} E={r['final_energy']:.6g} L={r['total_length']:.6g} "
              f"converged={r['converged']} halt={r['halt_reason'] or '-'}")
    return EXIT_OK


def cmd_generate(args):
    cfg = load_config(args)
    if args.radius is not None:
        cfg["generator"]["radius"] = args.radius
    if args.twist is not None:
        cfg["generator"]["twist"] = args.twist
    if args.dim is not None:
        cfg["generator"]["dim"] = args.dim
    if args.seed is not None:
        cfg["generator"].update(random=True, seed=args.seed)
    cfg["input"] = None
    text = format_network(build_network(cfg))
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="elasticnet", description="Elastic flow of three-curve star networks.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON configuration file")
        sp.add_argument("--allow-zero-lambda", action="store_true", help="accept zero length weights")
        sp.add_argument("--n-nodes", type=int, help="intervals per curve for generated stars")
        sp.add_argument("--lambda", dest="lam", type=float, nargs="+", help="length weights")

    def flow_flags(sp):
        sp.add_argument("--input", help="network file (otherwise a star is generated)")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--force", action="store_true", help="run even if the initial check fails")
        sp.add_argument("--mode", choices=["explicit", "imex"])
        sp.add_argument("--t-end", type=float)
        sp.add_argument("--dt", type=float, help="fixed time step (default: safety * stability limit)")
        sp.add_argument("--svg", action="store_true", help="also write SVG plots")

    r = sub.add_parser("run", help="run one simulation")
    common(r)
    flow_flags(r)
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("check-init", help="check the initial conditions of a network file")
    c.add_argument("path")
    c.add_argument("--allow-zero-lambda", action="store_true")
    c.set_defaults(func=cmd_check_init)

    s = sub.add_parser("sweep", help="run a grid of length weights")
    common(s)
    flow_flags(s)
    s.add_argument("--lambdas", required=True, help="comma separated weights, e.g. 0,0.1,1")
    s.set_defaults(func=cmd_sweep)

    g = sub.add_parser("generate", help="write a generated star network")
    common(g)
    g.add_argument("--radius", type=float)
    g.add_argument("--twist", type=float)
    g.add_argument("--dim", type=int)
    g.add_argument("--seed", type=int, help="generate a random star from this seed")
    g.add_argument("-o", "--output", help="output file (default stdout)")
    g.set_defaults(func=cmd_generate)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (InvalidNetwork, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
