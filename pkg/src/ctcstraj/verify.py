"""Continuous-time feasibility verification and the pointwise violation bound.

A converged solution is re-simulated single-shot at a verification
resolution independent of the solver's integrator substeps; violations are
measured pointwise on the scaled constraint rows (so "percent" is 100x the
scaled violation). The bound delta(eps) = (4*eps*omega)^(1/3) holds per
constraint whenever eps <= omega^2 * dt_min^3 / 4, with omega a bound on
|d/dt| of the constraint signal; here omega is estimated empirically along
the trajectory, which can only under-estimate the true bound.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .ocp import OcpDefinition, RowScaling
from .reform import AugmentedSystem
from .shooting import DenseTrajectory, Grid, propagate_interval


@dataclass
class ViolationReport:
    """Per-constraint pointwise violation of a dense trajectory (scaled rows)."""

    names: list
    max_violation: np.ndarray  # scaled units, >= 0
    percent: np.ndarray  # 100 * scaled violation
    worst_time: np.ndarray
    interval_integrals: np.ndarray  # per-interval integral of the penalty rate

    @property
    def max_percent(self) -> float:
        return float(np.max(self.percent, initial=0.0))

    def __post_init__(self):
        assert np.all(self.max_violation >= 0.0)


def simulate_dense(system: AugmentedSystem, Xt, U, S, grid: Grid, resolution: int = 30):
    """Single-shot integration from xt_1 with the parameterized control.

    Returns (DenseTrajectory, node_mismatch) where node_mismatch[k] is the
    distance between the simulated state at tau_{k+1} and the solution's
    node value (equal to the defect norms for multiple-shooting solutions).
    """
    Xt = np.asarray(Xt, float).reshape(grid.n_nodes, system.layout.n_aug)
    fine = Grid(grid.tau, substeps=resolution)
    xt = Xt[0].copy()
    parts = []
    mismatch = np.empty(grid.n_intervals)
    for k in range(grid.n_intervals):
        xt, dense = propagate_interval(system, xt, U, S, k, fine)
        parts.append(dense)
        mismatch[k] = float(np.linalg.norm(Xt[k + 1] - xt))
    return DenseTrajectory.concatenate(parts), mismatch


def violation_metrics(dense: DenseTrajectory, ocp: OcpDefinition, rows: RowScaling,
                      grid: Grid | None = None) -> ViolationReport:
    """Max pointwise violation per scaled constraint row, plus y-increments."""
    n_rows = ocp.n_g + ocp.n_h
    names = [f"g{i}" for i in range(ocp.n_g)] + [f"h{j}" for j in range(ocp.n_h)]
    M = dense.tau.size
    viol = np.zeros((M, n_rows))
    lam = np.zeros(M)
    n_xdim = ocp.n_x
    for m in range(M):
        t, x, u = dense.t[m], dense.xt[m, :n_xdim], dense.u[m]
        if ocp.n_g:
            g = np.asarray(ocp.path_ineq(t, x, u), float) / rows.g
            viol[m, : ocp.n_g] = np.maximum(g, 0.0)
            lam[m] += float(np.sum(np.maximum(g, 0.0) ** 2))
        if ocp.n_h:
            h = np.asarray(ocp.path_eq(t, x, u), float) / rows.h
            viol[m, ocp.n_g :] = np.abs(h)
            lam[m] += float(np.sum(h**2))
    worst = viol.max(axis=0) if M else np.zeros(n_rows)
    worst_idx = viol.argmax(axis=0) if M else np.zeros(n_rows, dtype=int)
    worst_t = dense.t[worst_idx] if M else np.zeros(n_rows)

    if grid is not None:
        integrals = np.zeros(grid.n_intervals)
        rate = lam * dense.s  # d/dtau of the accumulator
        for k in range(grid.n_intervals):
            mask = (dense.tau >= grid.tau[k] - 1e-12) & (dense.tau <= grid.tau[k + 1] + 1e-12)
            integrals[k] = float(np.trapezoid(rate[mask], dense.tau[mask]))
    else:
        integrals = np.array([float(np.trapezoid(lam * dense.s, dense.tau))])
    return ViolationReport(names, worst, 100.0 * worst, worst_t, integrals)


def pointwise_bound(eps: float, omega: float, dt_min: float):
    """delta(eps) = (4 eps omega)^(1/3) and its validity flag.

    The bound certifies max violation <= delta(eps) only while
    eps <= omega^2 * dt_min^3 / 4.
    """
    if eps <= 0 or omega <= 0 or dt_min <= 0:
        raise ValueError("eps, omega, dt_min must be positive")
    delta = (4.0 * eps * omega) ** (1.0 / 3.0)
    valid = eps <= omega**2 * dt_min**3 / 4.0
    return delta, bool(valid)


def estimate_omega(ocp: OcpDefinition, rows: RowScaling, dense: DenseTrajectory) -> np.ndarray:
    """Empirical max |d/dt| of each scaled constraint signal along the trajectory.

    A lower estimate of the true bound (analytic bounds tend to be
    conservative); computed by central differences of the sampled signal.
    """
    n_rows = ocp.n_g + ocp.n_h
    if n_rows == 0 or dense.tau.size < 3:
        return np.zeros(n_rows)
    M = dense.tau.size
    vals = np.empty((M, n_rows))
    for m in range(M):
        t, x, u = dense.t[m], dense.xt[m, : ocp.n_x], dense.u[m]
        if ocp.n_g:
            vals[m, : ocp.n_g] = np.asarray(ocp.path_ineq(t, x, u), float) / rows.g
        if ocp.n_h:
            vals[m, ocp.n_g :] = np.asarray(ocp.path_eq(t, x, u), float) / rows.h
    dt = np.gradient(dense.t)
    deriv = np.gradient(vals, axis=0) / dt[:, None]
    return np.max(np.abs(deriv), axis=0)


@dataclass
class SweepRow:
    epsilon: float
    constraint: str
    max_violation: float
    percent: float
    bound: float
    bound_valid: bool
    status: str


def epsilon_sweep(solve_fn, eps_list, dt_min_fn=None) -> list[SweepRow]:
    """Re-solve for each epsilon (decreasing), warm-starting from the last.

    ``solve_fn(eps, warm)`` must return (warm_next, report, omega, dt_min,
    status); failures are recorded and the sweep continues cold.
    """
    eps_list = list(eps_list)
    if any(e <= 0 for e in eps_list):
        raise ValueError("epsilon values must be positive")
    if sorted(eps_list, reverse=True) != eps_list:
        raise ValueError("epsilon list must be decreasing")
    rows: list[SweepRow] = []
    warm = None
    for eps in eps_list:
        try:
            warm, report, omega, dt_min, status = solve_fn(eps, warm)
        except Exception as exc:  # keep sweeping on per-epsilon failure
            rows.append(SweepRow(eps, "all", np.nan, np.nan, np.nan, False, f"error: {exc}"))
            warm = None
            continue
        for i, name in enumerate(report.names):
            om = max(float(omega[i]), 1e-30)
            delta, valid = pointwise_bound(eps, om, dt_min)
            rows.append(SweepRow(eps, name, float(report.max_violation[i]),
                                 float(report.percent[i]), delta, valid, status))
    return rows


def write_sweep_csv(path, rows: list[SweepRow]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epsilon", "constraint", "max_violation", "percent", "bound",
                         "bound_valid", "status"])
        for r in rows:
            writer.writerow([f"{r.epsilon:.17g}", r.constraint, f"{r.max_violation:.17g}",
                             f"{r.percent:.17g}", f"{r.bound:.17g}", int(r.bound_valid),
                             r.status])
