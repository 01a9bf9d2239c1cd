"""Command-line entry point: run benchmarks or configs, emit result files.

Outputs per run (all into --out):
    trajectory.csv   dense simulation: t, state, control, dilation,
                     accumulator, per-constraint g/h values
    nodes.csv        per-node tau, t, augmented state, defect norm
    convergence.csv  per-iteration theta, prox-gradient norm, defects,
                     violations, rho, gamma, wall time, accepted flag
    summary.json     status, cost, iteration count, timings, parameter
                     echo, violation report (versioned schema)

Exit codes: 0 converged, 2 iteration cap, 3 solver failure, 4 config error.
Floating point is printed with 17 significant digits so the CSV round-trips
losslessly.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from pathlib import Path

import numpy as np

from .basis import BasisSpec, eval_control
from .benchmarks import BenchmarkRun, get_benchmark, rocket3dof_certificate
from .shooting import DenseTrajectory, Grid
from .verify import (SweepRow, epsilon_sweep, estimate_omega, pointwise_bound,
                     simulate_dense, violation_metrics, write_sweep_csv)

SCHEMA_VERSION = 1
_FLAG_KEYS = {
    "epsilon": float, "gamma": float, "rho": float, "nodes": int,
    "max_iters": int, "tol": float, "repeats": int, "verify_resolution": int,
    "mode": str, "problem": str, "seed": int,
}


def _fmt(x) -> str:
    return f"{float(x):.17g}"


def parse_config_file(path: str) -> dict:
    """Flat key-value config (TOML-style 'key = value' lines, # comments)."""
    out: dict = {}
    for raw in Path(path).read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line is not 'key = value': {raw!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        val = val.strip("\"'")
        caster = _FLAG_KEYS.get(key, str)
        out[key] = caster(val)
    return out


def _overrides_from(args) -> dict:
    over = {}
    if args.nodes is not None:
        over["N"] = args.nodes
    if args.epsilon is not None:
        over["epsilon"] = args.epsilon
    if args.gamma is not None:
        over["gamma"] = args.gamma
    if args.rho is not None:
        over["rho"] = args.rho
    if args.max_iters is not None:
        over["k_max"] = args.max_iters
    if args.tol is not None:
        over["eps_tol"] = args.tol
    return over


def _dense_of(run: BenchmarkRun, resolution: int):
    """(DenseTrajectory, node table, mismatch, ocp-like, rows) for any run kind."""
    if run.kind == "scp":
        solver = run.solver
        res = run.result
        dense, mismatch = simulate_dense(solver.system, res.Xt, res.U, res.S,
                                         solver.grid, resolution=resolution)
        return dense, res.Xt, mismatch, solver.ocp, solver.rows, solver.grid
    solver = run.solver
    res = run.result
    cocp = solver.cocp
    sys_ = cocp.sys
    # exact dense states via the stored state-transition samples
    taus, ts, xs, us = [], [], [], []
    basis = solver.disc.basis_u
    for k in range(sys_.n_nodes - 1):
        sl = slice(0, None) if k == 0 else slice(1, None)
        for m in list(range(len(solver.disc.ts[k])))[sl]:
            t = solver.disc.ts[k][m]
            x = solver.disc.Phix[k][m] @ res.X[k] + solver.disc.Phiu[k][m] @ res.U \
                + solver.disc.phi[k][m]
            tau = (t - sys_.t_i) / (sys_.t_f - sys_.t_i)
            seg = min(k, basis.nodes.size - 2)
            u = eval_control(res.U, basis, sys_.n_u, min(tau, 1.0), segment=seg)
            taus.append(tau)
            ts.append(t)
            xs.append(x)
            us.append(u)
    dense = DenseTrajectory(np.array(taus), np.array(ts), np.array(xs), np.array(us),
                            np.ones(len(taus)))
    mismatch = np.zeros(sys_.n_nodes - 1)

    class _OcpLike:
        n_x = sys_.n_x
        n_g = cocp.n_g
        n_h = cocp.n_h
        path_ineq = staticmethod(cocp.path_ineq)
        path_eq = staticmethod(cocp.path_eq)

    grid = Grid(np.linspace(0.0, 1.0, sys_.n_nodes), substeps=solver.disc.substeps)
    return dense, res.X, mismatch, _OcpLike, cocp.rows, grid


def write_outputs(run: BenchmarkRun, out_dir: Path, resolution: int, spec_params: dict,
                  repeats_stats=None) -> dict:
    out_dir.mkdir(parents=True, exist_ok=True)
    dense, nodes, mismatch, ocp_like, rows, grid = _dense_of(run, resolution)
    report = violation_metrics(dense, ocp_like, rows, grid=grid)

    n_x = ocp_like.n_x
    with open(out_dir / "trajectory.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        header = (["t"] + [f"x{i}" for i in range(n_x)]
                  + [f"u{i}" for i in range(dense.u.shape[1])] + ["s", "y"]
                  + [f"g{i}" for i in range(ocp_like.n_g)]
                  + [f"h{j}" for j in range(ocp_like.n_h)])
        w.writerow(header)
        for m in range(dense.tau.size):
            x = dense.xt[m, :n_x]
            yval = dense.xt[m, n_x] if dense.xt.shape[1] > n_x else 0.0
            gv = (np.asarray(ocp_like.path_ineq(dense.t[m], x, dense.u[m]), float) / rows.g
                  if ocp_like.n_g else np.zeros(0))
            hv = (np.asarray(ocp_like.path_eq(dense.t[m], x, dense.u[m]), float) / rows.h
                  if ocp_like.n_h else np.zeros(0))
            w.writerow([_fmt(dense.t[m])] + [_fmt(v) for v in x]
                       + [_fmt(v) for v in dense.u[m]] + [_fmt(dense.s[m]), _fmt(yval)]
                       + [_fmt(v) for v in gv] + [_fmt(v) for v in hv])

    with open(out_dir / "nodes.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["tau", "t"] + [f"xt{i}" for i in range(nodes.shape[1])] + ["defect_norm"])
        node_t = np.interp(grid.tau, dense.tau, dense.t)
        for k in range(nodes.shape[0]):
            d = mismatch[k - 1] if k > 0 else 0.0
            w.writerow([_fmt(grid.tau[k]), _fmt(node_t[k])]
                       + [_fmt(v) for v in nodes[k]] + [_fmt(d)])

    with open(out_dir / "convergence.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "theta", "prox_grad_norm", "max_defect", "max_violation",
                    "rho", "gamma", "wall_ms", "accepted"])
        for r in run.result.state.records:
            w.writerow([r.iteration, _fmt(r.theta), _fmt(r.prox_grad_norm),
                        _fmt(r.max_defect), _fmt(r.max_violation), _fmt(r.rho),
                        _fmt(r.gamma), _fmt(r.wall_ms), int(r.accepted)])

    summary = {
        "schema_version": SCHEMA_VERSION,
        "problem": run.name,
        "mode": run.mode,
        "status": run.status,
        "terminal_cost": run.cost,
        "iterations": run.iterations,
        "wall_s": run.wall_s,
        "parameters": spec_params,
        "violation_report": {
            "constraints": report.names,
            "max_violation": report.max_violation.tolist(),
            "percent": report.percent.tolist(),
            "worst_time": report.worst_time.tolist(),
            "interval_integrals": report.interval_integrals.tolist(),
            "max_percent": report.max_percent,
        },
        "node_mismatch": np.asarray(mismatch, float).tolist(),
    }
    if repeats_stats is not None:
        summary["timing"] = repeats_stats
    if run.name == "rocket3dof":
        ok, gap = rocket3dof_certificate(run)
        summary["lossless_certificate"] = {"max_relative_gap": gap, "passed": bool(ok)}
    with open(out_dir / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return summary


def cmd_run(args) -> int:
    over = _overrides_from(args)
    spec = get_benchmark(args.problem)
    out_dir = Path(args.out)
    walls = []
    run = None
    for _ in range(max(1, args.repeats)):
        t0 = time.perf_counter()
        run = spec.run(args.mode, over)
        walls.append(time.perf_counter() - t0)
    stats = {"repeats": len(walls), "mean_s": float(np.mean(walls)),
             "std_s": float(np.std(walls))}
    summary = write_outputs(run, out_dir, args.verify_resolution, spec.params, stats)
    print(json.dumps({k: summary[k] for k in ("problem", "mode", "status",
                                              "terminal_cost", "iterations")}))
    if run.status == "converged":
        return 0
    if run.status in ("max-iters", "stalled"):
        return 2
    return 3


def cmd_sweep(args) -> int:
    over = _overrides_from(args)
    spec = get_benchmark(args.problem)
    eps_list = [float(s) for s in args.epsilons.split(",")]
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    def solve_fn(eps, warm):
        o = dict(over)
        o["epsilon"] = eps
        if warm is not None:
            o["init"] = warm
        run = spec.run(args.mode, o)
        dense, nodes, mismatch, ocp_like, rows, grid = _dense_of(run, args.verify_resolution)
        report = violation_metrics(dense, ocp_like, rows, grid=grid)
        omega = estimate_omega(ocp_like, rows, dense)
        dt_min = float(np.min(np.diff(np.interp(grid.tau, dense.tau, dense.t))))
        warm_next = run.result.z_scaled if run.kind == "scp" else None
        return warm_next, report, omega, dt_min, run.status

    rows_out = epsilon_sweep(solve_fn, eps_list)
    write_sweep_csv(out_dir / "sweep.csv", rows_out)
    worst = {}
    for r in rows_out:
        worst[r.epsilon] = max(worst.get(r.epsilon, 0.0), r.percent)
    print(json.dumps({"problem": args.problem, "mode": args.mode,
                      "max_percent_by_epsilon": {f"{k:g}": v for k, v in worst.items()}}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ctcstraj",
                                     description="trajectory optimization with "
                                                 "continuous-time constraint satisfaction")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--problem", type=str, default=None)
        p.add_argument("--config", type=str, default=None,
                       help="flat key-value config file mirroring the flag names")
        p.add_argument("--mode", choices=["ctcs", "node-only"], default="ctcs")
        p.add_argument("--epsilon", type=float, default=None)
        p.add_argument("--gamma", type=float, default=None)
        p.add_argument("--rho", type=float, default=None)
        p.add_argument("--nodes", type=int, default=None)
        p.add_argument("--max-iters", type=int, default=None, dest="max_iters")
        p.add_argument("--tol", type=float, default=None)
        p.add_argument("--out", type=str, default="out")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--repeats", type=int, default=1)
        p.add_argument("--verify-resolution", type=int, default=30,
                       dest="verify_resolution")

    p_run = sub.add_parser("run", help="solve one problem and write result files")
    common(p_run)
    p_sweep = sub.add_parser("sweep", help="re-solve over a decreasing epsilon list")
    common(p_sweep)
    p_sweep.add_argument("--epsilons", type=str, required=True,
                         help="comma-separated decreasing relaxation tolerances")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        try:
            file_cfg = parse_config_file(args.config)
        except Exception as exc:
            print(json.dumps({"error": f"config: {exc}"}), file=sys.stderr)
            return 4
        for key, val in file_cfg.items():
            attr = {"max_iters": "max_iters", "verify_resolution": "verify_resolution"}.get(key, key)
            if getattr(args, attr, None) in (None, "ctcs") or attr == "problem":
                setattr(args, attr, val)
    if not args.problem:
        print(json.dumps({"error": "config: no problem specified"}), file=sys.stderr)
        return 4
    try:
        if args.command == "run":
            return cmd_run(args)
        return cmd_sweep(args)
    except KeyError as exc:
        print(json.dumps({"error": str(exc)}), file=sys.stderr)
        return 4
    except Exception as exc:  # solver failure: machine-readable error
        print(json.dumps({"error": f"solver: {exc}"}), file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
