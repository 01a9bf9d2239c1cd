"""Convexity-exploiting path for fixed-final-time linear time-varying problems.

For dynamics xdot = A(t) x + B(t) u + w(t) on a fixed horizon, the system is
discretized exactly through the state-transition form

    x(t) = Phi_x(t, t_k) x_k + Phi_u(t, t_k) U + phi(t, t_k)

so the node states couple to the control coefficients through affine
equalities. Continuous-time path-constraint satisfaction is imposed through
the per-interval integrated exterior penalty

    xi_k(x_k, U) = int_{t_k}^{t_{k+1}} 1'|g~|_+^2 + 1'h~^2 dt  <=  eps

which stays convex after the substitution above. The penalized objective
adds gamma * |xi_k - eps|_+ and is minimized with the same prox-linear
iteration as the nonconvex path, here over first-order oracles for the
running cost and xi_k.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .basis import BasisSpec, eval_basis
from .ocp import RowScaling, ScalingSpec
from .proxlin import HyperState, IterationRecord, PenaltyConfig, SolverState, \
    prox_gradient_norm, scheduled_qp_settings, update_hyperparameters
from .qp import QpProblem, solve_qp
from .sets import BlockSet, ConvexSetSpec

log = logging.getLogger(__name__)


@dataclass
class LtvSystem:
    """xdot = A(t) x + B(t) u + w(t) on a fixed grid t_1 < ... < t_N."""

    n_x: int
    n_u: int
    A: Callable[[float], np.ndarray]
    B: Callable[[float], np.ndarray]
    w: Callable[[float], np.ndarray]
    t_grid: np.ndarray

    def __post_init__(self):
        self.t_grid = np.asarray(self.t_grid, dtype=float)
        if self.t_grid.size < 2 or np.any(np.diff(self.t_grid) <= 0):
            raise ValueError("t_grid must be strictly increasing with at least two nodes")

    @property
    def t_i(self) -> float:
        return float(self.t_grid[0])

    @property
    def t_f(self) -> float:
        return float(self.t_grid[-1])

    @property
    def n_nodes(self) -> int:
        return self.t_grid.size


@dataclass
class ConvexOcp:
    """Convex fixed-final-time problem routed through the LTV pipeline.

    ``path_ineq``/``path_eq`` must be jointly convex / affine in (x, u) for
    the global-optimality guarantees to apply; the solver itself only needs
    first-order oracles.
    """

    sys: LtvSystem
    terminal_cost: Callable  # L(t_f, x_f)
    grad_terminal_cost: Callable | None = None
    running_cost: Callable | None = None  # Y(t, x, u)
    grad_running_cost: Callable | None = None  # -> (dY_dx, dY_du)
    n_g: int = 0
    n_h: int = 0
    n_P: int = 0
    n_Q: int = 0
    path_ineq: Callable | None = None
    jac_path_ineq: Callable | None = None  # (t,x,u) -> (d_dt, d_dx, d_du)
    path_eq: Callable | None = None
    jac_path_eq: Callable | None = None
    boundary_ineq: Callable | None = None
    jac_boundary_ineq: Callable | None = None
    boundary_eq: Callable | None = None
    jac_boundary_eq: Callable | None = None
    control_set: ConvexSetSpec | None = None
    epsilon: float = 1.0e-5
    rows: RowScaling | None = None
    state_bounds: np.ndarray | None = None
    control_bounds: np.ndarray | None = None

    def __post_init__(self):
        if self.rows is None:
            self.rows = RowScaling(np.ones(self.n_g), np.ones(self.n_h),
                                   np.ones(self.n_P), np.ones(self.n_Q))

    def g_jac(self, t, x, u):
        if self.jac_path_ineq is not None:
            jt, jx, ju = self.jac_path_ineq(t, x, u)
            return np.asarray(jx, float), np.asarray(ju, float)
        from .ocp import finite_difference_jacobian

        p = np.concatenate((x, u))
        jm = finite_difference_jacobian(
            lambda v: self.path_ineq(t, v[: self.sys.n_x], v[self.sys.n_x :]), p,
            1e-6 * (1 + float(np.max(np.abs(p)))))
        return jm[:, : self.sys.n_x], jm[:, self.sys.n_x :]

    def h_jac(self, t, x, u):
        if self.jac_path_eq is not None:
            jt, jx, ju = self.jac_path_eq(t, x, u)
            return np.asarray(jx, float), np.asarray(ju, float)
        from .ocp import finite_difference_jacobian

        p = np.concatenate((x, u))
        jm = finite_difference_jacobian(
            lambda v: self.path_eq(t, v[: self.sys.n_x], v[self.sys.n_x :]), p,
            1e-6 * (1 + float(np.max(np.abs(p)))))
        return jm[:, : self.sys.n_x], jm[:, self.sys.n_x :]


@dataclass
class LtvDiscretization:
    """Dense state-transition data per interval at substep resolution."""

    basis_u: BasisSpec
    substeps: int
    ts: list  # per interval: (M,) sample times
    Phix: list  # per interval: (M, n_x, n_x)
    Phiu: list  # per interval: (M, n_x, n_uN_u)
    phi: list  # per interval: (M, n_x)
    A_k: np.ndarray  # (N-1, n_x, n_x) endpoints
    B_k: np.ndarray
    w_k: np.ndarray
    simpson_w: np.ndarray  # (M,) weights for a unit interval (scaled by dt)


def _control_matrix(sys: LtvSystem, basis: BasisSpec, t: float, segment=None) -> np.ndarray:
    tau = (t - sys.t_i) / (sys.t_f - sys.t_i)
    gam = eval_basis(basis, min(max(tau, 0.0), 1.0), segment=segment)
    return np.kron(gam, np.eye(sys.n_u))


def discretize_ltv(sys: LtvSystem, basis_u: BasisSpec, substeps: int = 16) -> LtvDiscretization:
    """Exact (to RK4 resolution) discretization of the LTV system.

    Integrates the state-transition IVP per interval with fixed-step RK4,
    storing the dense samples used later by the quadrature of xi_k and Y_k.
    ``substeps`` is rounded up to an even count for composite Simpson.
    """
    if substeps % 2:
        substeps += 1
    n_x = sys.n_x
    n_U = basis_u.n_funcs * sys.n_u
    N = sys.n_nodes
    ts, Phixs, Phius, phis = [], [], [], []
    A_k = np.empty((N - 1, n_x, n_x))
    B_k = np.empty((N - 1, n_x, n_U))
    w_k = np.empty((N - 1, n_x))
    wts = np.ones(substeps + 1)
    wts[1:-1:2] = 4.0
    wts[2:-1:2] = 2.0
    wts /= 3.0  # composite Simpson: h/3 * (1, 4, 2, ..., 4, 1)

    for k in range(N - 1):
        a, b = sys.t_grid[k], sys.t_grid[k + 1]
        h = (b - a) / substeps
        seg = _segment_for(sys, basis_u, a, b)
        Px = np.eye(n_x)
        Pu = np.zeros((n_x, n_U))
        ph = np.zeros(n_x)
        t_s = np.linspace(a, b, substeps + 1)
        Pxs = np.empty((substeps + 1, n_x, n_x))
        Pus = np.empty((substeps + 1, n_x, n_U))
        phs = np.empty((substeps + 1, n_x))
        Pxs[0], Pus[0], phs[0] = Px, Pu, ph

        def rhs(t, Px, Pu, ph):
            At = np.asarray(sys.A(t), float)
            Bt = np.asarray(sys.B(t), float)
            wt = np.asarray(sys.w(t), float)
            Ku = _control_matrix(sys, basis_u, t, segment=seg)
            return At @ Px, At @ Pu + Bt @ Ku, At @ ph + wt

        t = a
        for m in range(substeps):
            k1 = rhs(t, Px, Pu, ph)
            k2 = rhs(t + h / 2, Px + h / 2 * k1[0], Pu + h / 2 * k1[1], ph + h / 2 * k1[2])
            k3 = rhs(t + h / 2, Px + h / 2 * k2[0], Pu + h / 2 * k2[1], ph + h / 2 * k2[2])
            k4 = rhs(t + h, Px + h * k3[0], Pu + h * k3[1], ph + h * k3[2])
            Px = Px + h / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
            Pu = Pu + h / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
            ph = ph + h / 6 * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2])
            t = a + (m + 1) * h
            Pxs[m + 1], Pus[m + 1], phs[m + 1] = Px, Pu, ph
        ts.append(t_s)
        Phixs.append(Pxs)
        Phius.append(Pus)
        phis.append(phs)
        A_k[k], B_k[k], w_k[k] = Px, Pu, ph
    return LtvDiscretization(basis_u, substeps, ts, Phixs, Phius, phis, A_k, B_k, w_k, wts)


def _segment_for(sys: LtvSystem, basis: BasisSpec, a: float, b: float):
    if basis.kind == "cgl":
        return None
    tau_a = (a - sys.t_i) / (sys.t_f - sys.t_i)
    tau_b = (b - sys.t_i) / (sys.t_f - sys.t_i)
    k = basis.segment_of(0.5 * (tau_a + tau_b))
    if basis.nodes[k] <= tau_a + 1e-12 and tau_b <= basis.nodes[k + 1] + 1e-12:
        return k
    return None


def _interval_samples(cocp: ConvexOcp, disc: LtvDiscretization, k: int, x_k, U):
    sys = cocp.sys
    seg = _segment_for(sys, disc.basis_u, disc.ts[k][0], disc.ts[k][-1])
    xs = disc.Phix[k] @ x_k + disc.Phiu[k] @ U + disc.phi[k]
    us = np.array([
        _control_matrix(sys, disc.basis_u, t, segment=seg) @ U for t in disc.ts[k]
    ])
    Kus = np.array([
        _control_matrix(sys, disc.basis_u, t, segment=seg) for t in disc.ts[k]
    ])
    return xs, us, Kus


def xi_k(cocp: ConvexOcp, disc: LtvDiscretization, k: int, x_k, U):
    """Integrated exterior penalty over [t_k, t_{k+1}] with its gradient.

    Returns (value, d/dx_k, d/dU); the gradient differentiates under the
    integral using the stored state-transition samples.
    """
    x_k = np.asarray(x_k, float)
    U = np.asarray(U, float)
    xs, us, Kus = _interval_samples(cocp, disc, k, x_k, U)
    ts = disc.ts[k]
    h = ts[1] - ts[0]
    val = 0.0
    gx = np.zeros(cocp.sys.n_x)
    gU = np.zeros(U.size)
    for m, t in enumerate(ts):
        wm = disc.simpson_w[m] * h
        x, u = xs[m], us[m]
        if cocp.n_g:
            gval = np.asarray(cocp.path_ineq(t, x, u), float) / cocp.rows.g
            hinge = np.maximum(gval, 0.0)
            val += wm * float(np.sum(hinge**2))
            if np.any(hinge > 0):
                jx, ju = cocp.g_jac(t, x, u)
                wrow = 2.0 * hinge / cocp.rows.g
                gx += wm * (wrow @ (jx @ disc.Phix[k][m]))
                gU += wm * (wrow @ (jx @ disc.Phiu[k][m] + ju @ Kus[m]))
        if cocp.n_h:
            hval = np.asarray(cocp.path_eq(t, x, u), float) / cocp.rows.h
            val += wm * float(np.sum(hval**2))
            if np.any(hval != 0):
                jx, ju = cocp.h_jac(t, x, u)
                wrow = 2.0 * hval / cocp.rows.h
                gx += wm * (wrow @ (jx @ disc.Phix[k][m]))
                gU += wm * (wrow @ (jx @ disc.Phiu[k][m] + ju @ Kus[m]))
    return val, gx, gU


def running_cost_Yk(cocp: ConvexOcp, disc: LtvDiscretization, k: int, x_k, U):
    """Quadrature of the running cost over one interval, with gradient."""
    if cocp.running_cost is None:
        return 0.0, np.zeros(cocp.sys.n_x), np.zeros(np.asarray(U).size)
    x_k = np.asarray(x_k, float)
    U = np.asarray(U, float)
    xs, us, Kus = _interval_samples(cocp, disc, k, x_k, U)
    ts = disc.ts[k]
    h = ts[1] - ts[0]
    val = 0.0
    gx = np.zeros(cocp.sys.n_x)
    gU = np.zeros(U.size)
    for m, t in enumerate(ts):
        wm = disc.simpson_w[m] * h
        val += wm * float(cocp.running_cost(t, xs[m], us[m]))
        dx, du = cocp.grad_running_cost(t, xs[m], us[m])
        gx += wm * (np.asarray(dx, float) @ disc.Phix[k][m])
        gU += wm * (np.asarray(dx, float) @ disc.Phiu[k][m] + np.asarray(du, float) @ Kus[m])
    return val, gx, gU


@dataclass
class ConvexSolveResult:
    status: str
    X: np.ndarray
    U: np.ndarray
    state: SolverState
    theta: float
    info: dict
    solver: "ConvexPathSolver"
    gamma: float

    @property
    def terminal_cost(self) -> float:
        return self.info.get("objective", np.nan)

    @property
    def iterations(self) -> int:
        return len(self.state.records)


class ConvexPathSolver:
    """Prox-linear loop over (X, U) with hard exact-LTV dynamics rows."""

    def __init__(self, cocp: ConvexOcp, cfg: PenaltyConfig, basis_u: BasisSpec,
                 substeps: int = 16, node_only: bool = False, polish_iters: int = 2):
        self.cocp = cocp
        self.cfg = cfg
        self.node_only = node_only
        self.polish_iters = polish_iters  # hardened/soft polish cycles after the main loop
        self.disc = discretize_ltv(cocp.sys, basis_u, substeps)
        sys = cocp.sys
        self.N = sys.n_nodes
        self.n_x = sys.n_x
        self.n_U = basis_u.n_funcs * sys.n_u
        self.n_zs = self.N * self.n_x + self.n_U
        sb = cocp.state_bounds if cocp.state_bounds is not None else np.tile([[0.0, 1.0]], (sys.n_x, 1))
        cb = cocp.control_bounds if cocp.control_bounds is not None else np.tile([[0.0, 1.0]], (sys.n_u, 1))
        sb = np.asarray(sb, float)
        cb = np.asarray(cb, float)
        self.x_scale, self.x_offset = sb[:, 1] - sb[:, 0], sb[:, 0]
        self.u_scale, self.u_offset = cb[:, 1] - cb[:, 0], cb[:, 0]
        self.z_scaling = ScalingSpec(
            np.concatenate([np.tile(self.x_scale, self.N), np.tile(self.u_scale, basis_u.n_funcs)]),
            np.concatenate([np.tile(self.x_offset, self.N), np.tile(self.u_offset, basis_u.n_funcs)]),
        )

    def pack(self, X, U):
        return np.concatenate([np.asarray(X, float).reshape(-1), np.asarray(U, float).reshape(-1)])

    def unpack(self, z):
        X = z[: self.N * self.n_x].reshape(self.N, self.n_x)
        return X, z[self.N * self.n_x :]

    def default_initial_guess(self, x_init, x_final, u_const):
        lam = np.linspace(0, 1, self.N)[:, None]
        X = (1 - lam) * np.asarray(x_init, float)[None, :] + lam * np.asarray(x_final, float)[None, :]
        U = np.tile(np.asarray(u_const, float), self.disc.basis_u.n_funcs)
        return self.z_scaling.apply(self.pack(X, U))

    # -- objective ------------------------------------------------------------

    def _eval_terms(self, X, U):
        cocp = self.cocp
        xi_vals = np.zeros(self.N - 1)
        Y_total = 0.0
        for k in range(self.N - 1):
            xi_vals[k], _, _ = xi_k(cocp, self.disc, k, X[k], U)
            if cocp.running_cost is not None:
                Y_total += running_cost_Yk(cocp, self.disc, k, X[k], U)[0]
        L = float(cocp.terminal_cost(cocp.sys.t_f, X[-1]))
        Pv = (np.asarray(cocp.boundary_ineq(cocp.sys.t_i, X[0], cocp.sys.t_f, X[-1]), float) / cocp.rows.P
              if cocp.n_P else np.zeros(0))
        node_pen = 0.0
        if self.node_only:
            g, h = self._node_values(X, U)
            node_pen = float(np.sum(np.maximum(g, 0.0)) + np.sum(np.abs(h)))
        return L, Y_total, xi_vals, Pv, node_pen

    def penalized_objective(self, zs, gamma, set_tol: float = 1e-6):
        X, U = self.unpack(self.z_scaling.invert(zs))
        cocp = self.cocp
        if not self._controls_admissible(U):
            return np.inf, {"outside_set": "U", "penalty_total": np.inf,
                            "max_defect": np.inf, "max_violation": np.inf}
        dyn_res = self._dynamics_residual(X, U)
        qv = self._boundary_eq_residual(X)
        # dynamics and affine boundary rows are hard constraints (indicator)
        hard = max(float(np.max(np.abs(dyn_res), initial=0.0)),
                   float(np.max(np.abs(qv), initial=0.0)))
        if hard > set_tol:
            return np.inf, {"outside_set": "exact-discretization/boundary rows",
                            "penalty_total": np.inf, "max_defect": hard,
                            "max_violation": np.inf}
        L, Y_total, xi_vals, Pv, node_pen = self._eval_terms(X, U)
        if self.node_only:
            penalty = node_pen
        else:
            penalty = float(np.sum(np.maximum(xi_vals - cocp.epsilon, 0.0)))
        penalty += float(np.sum(np.maximum(Pv, 0.0)))
        theta = L + Y_total + gamma * penalty
        info = {
            "objective": L + Y_total,
            "terminal_cost": L,
            "running_cost": Y_total,
            "xi": xi_vals,
            "penalty_total": penalty,
            "max_defect": float(np.max(np.abs(dyn_res), initial=0.0)),
            "boundary_eq_residual": float(np.max(np.abs(qv), initial=0.0)),
            "max_violation": float(np.max(np.maximum(xi_vals - cocp.epsilon, 0.0), initial=0.0)),
        }
        return theta, info

    def _controls_admissible(self, U):
        cs = self.cocp.control_set
        if cs is None:
            return True
        tol = 1e-6 * float(np.max(self.u_scale))
        return all(cs.contains(u, tol=tol) for u in U.reshape(-1, self.cocp.sys.n_u))

    def _dynamics_residual(self, X, U):
        res = np.empty((self.N - 1, self.n_x))
        for k in range(self.N - 1):
            res[k] = (X[k + 1] - self.disc.A_k[k] @ X[k] - self.disc.B_k[k] @ U
                      - self.disc.w_k[k]) / self.x_scale
        return res

    def _boundary_eq_residual(self, X):
        cocp = self.cocp
        if not cocp.n_Q:
            return np.zeros(0)
        return np.asarray(cocp.boundary_eq(cocp.sys.t_i, X[0], cocp.sys.t_f, X[-1]), float) / cocp.rows.Q

    def _node_values(self, X, U):
        cocp = self.cocp
        gs, hs = [], []
        for k in range(self.N):
            t = cocp.sys.t_grid[k]
            seg = min(k, self.disc.basis_u.nodes.size - 2) if self.disc.basis_u.kind != "cgl" else None
            u = _control_matrix(cocp.sys, self.disc.basis_u, t, segment=seg) @ U
            if cocp.n_g:
                gs.append(np.asarray(cocp.path_ineq(t, X[k], u), float) / cocp.rows.g)
            if cocp.n_h:
                hs.append(np.asarray(cocp.path_eq(t, X[k], u), float) / cocp.rows.h)
        return (np.concatenate(gs) if gs else np.zeros(0),
                np.concatenate(hs) if hs else np.zeros(0))

    # -- subproblem -------------------------------------------------------------

    def build_subproblem(self, zs, gamma, rho, harden: bool = False):
        """Slack QP of the convexified model at zs.

        With ``harden`` the linearized convex inequality rows (xi, node g,
        boundary P) become hard constraints instead of hinge penalties; as
        outer approximations of convex sets this yields cutting-plane-style
        polish steps near a solution.
        """
        cocp = self.cocp
        z = self.z_scaling.invert(zs)
        X, U = self.unpack(z)
        N, n_x, n_U, n_zs = self.N, self.n_x, self.n_U, self.n_zs
        Dx = self.x_scale
        DU = np.tile(self.u_scale, self.disc.basis_u.n_funcs)
        Usl = slice(N * n_x, n_zs)

        def xsl(k):
            return slice(k * n_x, (k + 1) * n_x)

        # hard rows: exact dynamics + affine boundary equalities
        n_dyn = (N - 1) * n_x
        nQ = cocp.n_Q
        n_hinge = 0 if self.node_only else (N - 1)  # xi rows
        node_g = N * cocp.n_g if self.node_only else 0
        node_h = N * cocp.n_h if self.node_only else 0
        nP = cocp.n_P

        idx = {}
        pos = n_zs
        for name, size in [("xp", n_hinge), ("xw", n_hinge), ("pP", nP), ("wP", nP),
                           ("pG", node_g), ("wG", node_g), ("hp", node_h), ("hm", node_h)]:
            idx[name] = slice(pos, pos + size)
            pos += size
        n_tot = pos
        m_rows = n_dyn + nQ + n_hinge + nP + node_g + node_h
        A = np.zeros((m_rows, n_tot))
        b = np.zeros(m_rows)
        penalty_rows = []

        row = 0
        for k in range(N - 1):
            r = slice(row, row + n_x)
            Ak = (self.disc.A_k[k] * Dx[None, :]) / Dx[:, None]
            Bk = (self.disc.B_k[k] * DU[None, :]) / Dx[:, None]
            A[r, xsl(k + 1)] = np.eye(n_x)
            A[r, xsl(k)] = -Ak
            A[r, Usl] = -Bk
            b[r] = (self.disc.w_k[k] + self.disc.A_k[k] @ self.x_offset
                    + self.disc.B_k[k] @ np.tile(self.u_offset, self.disc.basis_u.n_funcs)
                    - self.x_offset) / Dx
            row += n_x

        if nQ:
            qv = self._boundary_eq_residual(X)
            dxi, dtf, dxf = cocp.jac_boundary_eq(cocp.sys.t_i, X[0], cocp.sys.t_f, X[-1])
            J1 = (np.asarray(dxi, float) * Dx[None, :]) / cocp.rows.Q[:, None]
            JN = (np.asarray(dxf, float) * Dx[None, :]) / cocp.rows.Q[:, None]
            r = slice(row, row + nQ)
            A[r, xsl(0)] = J1
            A[r, xsl(N - 1)] = JN
            b[r] = J1 @ zs[xsl(0)] + JN @ zs[xsl(N - 1)] - qv
            row += nQ

        # objective pieces: G stacks (L, Y_k, xi_k) values and gradients
        cost_grad = np.zeros(n_zs)
        dLdt, dLdx = (cocp.grad_terminal_cost(cocp.sys.t_f, X[-1])
                      if cocp.grad_terminal_cost is not None else (0.0, _fd_grad(cocp, X[-1])))
        cost_grad[xsl(N - 1)] = np.asarray(dLdx, float) * Dx
        cost_ref = float(cocp.terminal_cost(cocp.sys.t_f, X[-1]))
        for k in range(N - 1):
            if cocp.running_cost is not None:
                Yv, gx, gU = running_cost_Yk(cocp, self.disc, k, X[k], U)
                cost_ref += Yv
                cost_grad[xsl(k)] += gx * Dx
                cost_grad[Usl] += gU * DU

        if not self.node_only:
            xrows = np.zeros((N - 1, n_zs))
            xrhs = np.zeros(N - 1)
            for k in range(N - 1):
                xv, gx, gU = xi_k(cocp, self.disc, k, X[k], U)
                xrows[k, xsl(k)] = gx * Dx
                xrows[k, Usl] = gU * DU
                xrhs[k] = xrows[k, xsl(k)] @ zs[xsl(k)] + xrows[k, Usl] @ zs[Usl] \
                    - (xv - cocp.epsilon)
                r = row + k
                A[r, : n_zs] = xrows[k]
                A[r, idx["xp"].start + k] = -1.0
                A[r, idx["xw"].start + k] = 1.0
                b[r] = xrhs[k]
            penalty_rows.append((xrows, xrhs, "hinge"))
            row += N - 1

        if nP:
            pv = np.asarray(cocp.boundary_ineq(cocp.sys.t_i, X[0], cocp.sys.t_f, X[-1]), float) / cocp.rows.P
            dxi, dtf, dxf = cocp.jac_boundary_ineq(cocp.sys.t_i, X[0], cocp.sys.t_f, X[-1])
            J1 = (np.asarray(dxi, float) * Dx[None, :]) / cocp.rows.P[:, None]
            JN = (np.asarray(dxf, float) * Dx[None, :]) / cocp.rows.P[:, None]
            r = slice(row, row + nP)
            A[r, xsl(0)] = J1
            A[r, xsl(N - 1)] = JN
            A[r, idx["pP"]] = -np.eye(nP)
            A[r, idx["wP"]] = np.eye(nP)
            b[r] = J1 @ zs[xsl(0)] + JN @ zs[xsl(N - 1)] - pv
            rowsP = np.zeros((nP, n_zs))
            rowsP[:, xsl(0)] = J1
            rowsP[:, xsl(N - 1)] = JN
            penalty_rows.append((rowsP, b[r].copy(), "hinge"))
            row += nP

        if self.node_only and (node_g or node_h):
            row = self._append_node_rows(A, b, penalty_rows, idx, row, zs, X, U)

        pdiag = np.zeros(n_tot)
        pdiag[:n_zs] = 1.0 / rho
        q = np.zeros(n_tot)
        q[:n_zs] = cost_grad - zs / rho
        for name in ("xp", "pP", "pG", "hp", "hm"):
            q[idx[name]] = gamma
        hardened = {"xp", "pP", "pG"} if harden else set()

        blocks = BlockSet([ConvexSetSpec.free(N * n_x)])
        cs = cocp.control_set
        for _ in range(self.disc.basis_u.n_funcs):
            if cs is None:
                blocks.append(ConvexSetSpec.free(cocp.sys.n_u))
            elif cs.kind == "ball":
                blocks.append(ConvexSetSpec.ball((cs.center - self.u_offset) / self.u_scale,
                                                 cs.radius / self.u_scale[0]))
            else:
                blocks.append(ConvexSetSpec.box((cs.lower - self.u_offset) / self.u_scale,
                                                (cs.upper - self.u_offset) / self.u_scale))
        for name in ("xp", "xw", "pP", "wP", "pG", "wG", "hp", "hm"):
            size = idx[name].stop - idx[name].start
            if size:
                blocks.append(ConvexSetSpec.zero(size) if name in hardened
                              else ConvexSetSpec.nonneg(size))

        from .proxlin import SubproblemData

        problem = QpProblem(q=q, blocks=blocks, A=A, b=b, pdiag=pdiag)
        noise = np.ones(m_rows, dtype=bool)
        noise[: n_dyn + nQ] = False  # exact-discretization and boundary rows are hard
        return SubproblemData(qp=problem, zs_ref=zs.copy(), gamma=gamma, rho=rho,
                              n_zs=n_zs, cost_ref=cost_ref, cost_grad=cost_grad,
                              penalty_rows=penalty_rows, noise_rows=noise)

    def _append_node_rows(self, A, b, penalty_rows, idx, row, zs, X, U):
        cocp = self.cocp
        N, n_x = self.N, self.n_x
        DU = np.tile(self.u_scale, self.disc.basis_u.n_funcs)
        Usl = slice(N * n_x, self.n_zs)
        g_rows = np.zeros((N * cocp.n_g, self.n_zs))
        g_rhs = np.zeros(N * cocp.n_g)
        h_rows = np.zeros((N * cocp.n_h, self.n_zs))
        h_rhs = np.zeros(N * cocp.n_h)
        for k in range(N):
            t = cocp.sys.t_grid[k]
            seg = min(k, self.disc.basis_u.nodes.size - 2) if self.disc.basis_u.kind != "cgl" else None
            Ku = _control_matrix(cocp.sys, self.disc.basis_u, t, segment=seg)
            u = Ku @ U
            for (n_c, fun, jac, rscale, rows_arr, rhs_arr, off) in (
                (cocp.n_g, cocp.path_ineq, cocp.g_jac, cocp.rows.g, g_rows, g_rhs, k * cocp.n_g),
                (cocp.n_h, cocp.path_eq, cocp.h_jac, cocp.rows.h, h_rows, h_rhs, k * cocp.n_h),
            ):
                if not n_c:
                    continue
                val = np.asarray(fun(t, X[k], u), float) / rscale
                jx, ju = jac(t, X[k], u)
                Jx = (jx * self.x_scale[None, :]) / rscale[:, None]
                Ju = ((ju @ Ku) * DU[None, :]) / rscale[:, None]
                sl = slice(off, off + n_c)
                rows_arr[sl, k * n_x : (k + 1) * n_x] = Jx
                rows_arr[sl, Usl] = Ju
                rhs_arr[sl] = Jx @ zs[k * n_x : (k + 1) * n_x] + Ju @ zs[Usl] - val
        if cocp.n_g:
            r = slice(row, row + N * cocp.n_g)
            A[r, : self.n_zs] = g_rows
            A[r, idx["pG"]] = -np.eye(N * cocp.n_g)
            A[r, idx["wG"]] = np.eye(N * cocp.n_g)
            b[r] = g_rhs
            penalty_rows.append((g_rows, g_rhs, "hinge"))
            row += N * cocp.n_g
        if cocp.n_h:
            r = slice(row, row + N * cocp.n_h)
            A[r, : self.n_zs] = h_rows
            A[r, idx["hp"]] = -np.eye(N * cocp.n_h)
            A[r, idx["hm"]] = np.eye(N * cocp.n_h)
            b[r] = h_rhs
            penalty_rows.append((h_rows, h_rhs, "abs"))
            row += N * cocp.n_h
        return row

    # -- loop -------------------------------------------------------------------

    def solve(self, init, progress=None) -> ConvexSolveResult:
        cfg = self.cfg
        state = SolverState(z=np.asarray(init, float).copy())
        hyper = HyperState(rho=cfg.rho, gamma=cfg.gamma)
        # an infeasible init is allowed: the first subproblem projects onto
        # the exact-discretization/boundary rows, and any feasible candidate
        # beats the +inf incumbent
        theta, info = self.penalized_objective(state.z, hyper.gamma)
        warm_p = warm_d = None
        status = "max-iters"
        g_prev = np.inf
        for it in range(1, cfg.k_max + 1):
            t0 = time.perf_counter()
            sub = self.build_subproblem(state.z, hyper.gamma, hyper.rho)
            qp_sets = scheduled_qp_settings(cfg.qp, hyper.rho, hyper.gamma, sub.qp.m, g_prev)
            sol = solve_qp(sub.qp, qp_sets, warm_primal=warm_p, warm_dual=warm_d)
            if sol.status != "converged":
                sol = solve_qp(sub.qp, replace(qp_sets, max_iters=4 * cfg.qp.max_iters,
                                               extrapolation=1.0, omega=None),
                               warm_primal=sol.z, warm_dual=sol.y)
            if sol.status != "converged" and (sol.stat_res > max(1e-2, 10 * qp_sets.eps_abs)
                                              or sol.primal_res > max(1e-5, 10 * qp_sets.eps_prim_abs)):
                status = "subproblem-failure"
                break
            zs_new = sol.z[: self.n_zs].copy()
            gnorm = prox_gradient_norm(state.z, zs_new, hyper.rho)
            theta_new, info_new = self.penalized_objective(zs_new, hyper.gamma)
            row_gap = sub.penalty_row_gap(sol.z)
            slack = cfg.accept_slack * (1 + abs(theta)) + hyper.gamma * row_gap
            required = cfg.sufficient_decrease * hyper.rho * gnorm**2
            accepted = theta_new <= theta - required + slack
            g_prev = gnorm
            rec = IterationRecord(it, theta_new if accepted else theta, gnorm,
                                  (info_new if accepted else info).get("max_defect", np.nan),
                                  (info_new if accepted else info).get("max_violation", np.nan),
                                  hyper.rho, hyper.gamma, (time.perf_counter() - t0) * 1e3,
                                  accepted)
            state.records.append(rec)
            if progress:
                progress(rec)
            log.info(rec.format_line())
            if accepted:
                state.z = zs_new
                theta, info = theta_new, info_new
                warm_p, warm_d = sol.z, sol.y
                state.iteration = it
                if gnorm <= cfg.eps_tol and info["penalty_total"] <= cfg.feas_tol:
                    status = "converged"
                    break
            _, _, gamma_changed = update_hyperparameters(
                hyper, cfg, accepted, info["penalty_total"] if accepted else None,
                near_stationary=(gnorm <= 10.0 * cfg.eps_tol))
            if gamma_changed:
                theta = info["objective"] + hyper.gamma * info["penalty_total"]
                warm_d = None
            if hyper.rho < cfg.rho_min:
                status = "stalled"
                break

        # Cutting-plane polish: harden the linearized convex rows and take
        # nearly-unregularized steps. The hardened rows outer-approximate
        # the convex feasible set, so iterates approach the optimum from
        # outside with the true-constraint residual vanishing under
        # re-linearization; the flat objective valleys here make the
        # gamma-weighted transient residual a useless acceptance signal, so
        # this phase keeps the best iterate by (feasibility, objective)
        # instead of requiring monotone Theta.
        def rank(pen, obj):
            # feasible iterates compete on objective; infeasible on residual
            return (0, obj) if pen <= cfg.feas_tol else (1, pen)

        best = (rank(info.get("penalty_total", np.inf), info.get("objective", np.inf)),
                state.z.copy(), theta, info)
        z_cur = state.z.copy()
        for _cycle in range(self.polish_iters):
            # traverse the flat valley on the hardened outer approximation,
            # then re-project onto the true constraints with soft steps
            for harden, rho_p, n_steps, tol in ((True, 2.0e3 * cfg.rho, 10, 1e-7),
                                                (False, 5.0 * cfg.rho, 6, 1e-8)):
                for _ in range(n_steps):
                    t0 = time.perf_counter()
                    sub = self.build_subproblem(z_cur, hyper.gamma, rho_p, harden=harden)
                    sol = solve_qp(sub.qp, replace(cfg.qp, eps_abs=tol, eps_prim_abs=1e-10))
                    if sol.status != "converged" and max(sol.stat_res, sol.primal_res) > 1e-5:
                        break
                    zs_new = sol.z[: self.n_zs].copy()
                    step = float(np.linalg.norm(zs_new - z_cur))
                    theta_new, info_new = self.penalized_objective(zs_new, hyper.gamma)
                    state.records.append(IterationRecord(
                        len(state.records) + 1, theta_new,
                        prox_gradient_norm(z_cur, zs_new, rho_p),
                        info_new.get("max_defect", np.nan),
                        info_new.get("max_violation", np.nan),
                        rho_p, hyper.gamma, (time.perf_counter() - t0) * 1e3, True))
                    log.info(state.records[-1].format_line())
                    z_cur = zs_new
                    key = rank(info_new.get("penalty_total", np.inf),
                               info_new.get("objective", np.inf))
                    if key < best[0]:
                        best = (key, zs_new.copy(), theta_new, info_new)
                    if step <= 1e-9 * (1 + float(np.linalg.norm(z_cur))):
                        break
        if self.polish_iters:
            _, state.z, theta, info = best
            if status != "subproblem-failure" and info.get("penalty_total", np.inf) <= cfg.feas_tol:
                status = "converged"

        X, U = self.unpack(self.z_scaling.invert(state.z))
        return ConvexSolveResult(status=status, X=X, U=U, state=state, theta=theta,
                                 info=info, solver=self, gamma=hyper.gamma)


def _fd_grad(cocp, xN):
    from .ocp import finite_difference_jacobian

    return finite_difference_jacobian(
        lambda v: np.array([cocp.terminal_cost(cocp.sys.t_f, v)]), xN,
        1e-6 * (1 + float(np.max(np.abs(xN)))))[0]


def node_only_solve(cocp: ConvexOcp, cfg: PenaltyConfig, basis_u: BasisSpec,
                    init=None, substeps: int = 16, progress=None) -> ConvexSolveResult:
    """Baseline: path constraints imposed (via exact penalty) at nodes only."""
    solver = ConvexPathSolver(cocp, cfg, basis_u, substeps=substeps, node_only=True)
    if init is None:
        raise ValueError("an initial scaled decision vector is required")
    return solver.solve(init, progress=progress)


def solve_convex_ctcs(cocp: ConvexOcp, cfg: PenaltyConfig, basis_u: BasisSpec,
                      init=None, substeps: int = 16, progress=None) -> ConvexSolveResult:
    """CTCS solve with the integrated-penalty constraints xi_k <= eps."""
    solver = ConvexPathSolver(cocp, cfg, basis_u, substeps=substeps, node_only=False)
    if init is None:
        raise ValueError("an initial scaled decision vector is required (warm start recommended)")
    return solver.solve(init, progress=progress)
