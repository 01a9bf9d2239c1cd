"""Prox-linear sequential convex programming over the l1 exact penalty.

The penalized objective on the stacked decision vector z = (Xt, U, S) is

    Theta_gamma(z) = L(x_N) + I_Z(z) + gamma * ( sum_k ||F_k||_1
                     + 1'|P|_+ + ||Q||_1 [+ node-only g/h terms] )

with Z the product of the control/dilation sets and the per-interval
accumulator increments E_y(xt_{k+1} - xt_k) <= eps. Each iteration
linearizes the shooting defects (and boundary maps) at the incumbent,
reformulates the nonsmooth penalties with nonnegative slacks, and solves
the resulting strongly convex QP with the internal first-order solver. An
objective-decrease line search on the proximal weight preserves the
monotone-descent property; the exact-penalty weight ramps up only when the
penalty residual plateaus above tolerance.

All solver arithmetic runs in scaled variables; constraint rows are scaled
by the declared per-row magnitudes, so tolerances are in scaled units.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .basis import BasisSpec, eval_basis
from .ocp import OcpDefinition, RowScaling, ScalingSpec
from .qp import QpProblem, QpSettings, solve_qp
from .reform import AugmentedLayout, AugmentedSystem
from .sets import BlockSet, ConvexSetSpec
from .shooting import DefectBlock, Grid, compute_defects, linearize_all

log = logging.getLogger(__name__)


@dataclass
class PenaltyConfig:
    """Hyperparameters of the penalized SCP loop."""

    gamma: float = 1.0e3
    rho: float = 1.0e-2
    epsilon: float = 1.0e-4
    eps_tol: float = 1.0e-4
    k_max: int = 200
    gamma_growth: float = 10.0
    gamma_cap: float = 1.0e8
    rho_shrink: float = 0.5
    rho_grow: float = 1.2
    rho_min: float = 1.0e-12
    rho_cap: float | None = None  # recovery ceiling; defaults to 50x the initial rho
    node_only: bool = False
    stall_window: int = 5
    stall_tol: float = 1.0e-5
    feas_tol: float = 1.0e-6  # total scaled l1 penalty required to declare convergence
    accept_slack: float = 1.0e-9
    sufficient_decrease: float = 1.0e-3  # fraction of rho*||G||^2 required per step
    polish_cycles: int = 0  # hardened-defect/soft finishing cycles after the main loop
    qp: QpSettings = field(default_factory=QpSettings)

    def __post_init__(self):
        if min(self.gamma, self.rho, self.epsilon, self.eps_tol) <= 0:
            raise ValueError("gamma, rho, epsilon, eps_tol must be positive")
        if self.k_max < 1:
            raise ValueError("k_max must be >= 1")


@dataclass
class IterationRecord:
    iteration: int
    theta: float
    prox_grad_norm: float
    max_defect: float
    max_violation: float
    rho: float
    gamma: float
    wall_ms: float
    accepted: bool

    def format_line(self) -> str:
        return (
            f"iter={self.iteration} theta={self.theta:.9e} "
            f"prox_grad={self.prox_grad_norm:.3e} max_defect={self.max_defect:.3e} "
            f"max_violation={self.max_violation:.3e} rho={self.rho:.3e} "
            f"gamma={self.gamma:.3e} wall_ms={self.wall_ms:.1f} "
            f"accepted={int(self.accepted)}"
        )


@dataclass
class SolverState:
    """Iterate plus per-iteration history (one record per subproblem solve)."""

    z: np.ndarray
    iteration: int = 0
    records: list[IterationRecord] = field(default_factory=list)
    timings: dict = field(default_factory=lambda: {"linearize": 0.0, "qp": 0.0, "evaluate": 0.0})

    @property
    def theta_history(self):
        return np.array([r.theta for r in self.records])

    @property
    def prox_grad_history(self):
        return np.array([r.prox_grad_norm for r in self.records])

    @property
    def accepted_history(self):
        return np.array([r.accepted for r in self.records])


def prox_gradient_norm(z_k: np.ndarray, z_next: np.ndarray, rho: float) -> float:
    """Norm of the prox-gradient mapping (z_k - z_next)/rho."""
    return float(np.linalg.norm((np.asarray(z_k) - np.asarray(z_next)) / rho))


def scheduled_qp_settings(base: QpSettings, rho: float, gamma: float, m_rows: int,
                          g_prev: float) -> QpSettings:
    """Tolerance schedule for inexact subproblem solves.

    Early iterations only need the subproblem solved to a fraction of the
    current prox-gradient magnitude; the floors keep the final solves at
    least two orders tighter than the SCP stopping tolerance. Stationarity
    shares units with the prox-gradient mapping; the primal tolerance keeps
    the gamma-weighted slack-row mismatch small against the expected model
    decrease rho*||G||^2/2.
    """
    g_prev = min(g_prev, 1e12)
    tol_stat = float(np.clip(1e-2 * g_prev, base.eps_abs, 1e4))
    tol_prim = float(np.clip(2.5e-2 * rho * g_prev**2 / (gamma * max(m_rows, 1)),
                             base.eps_prim_abs, 1e-1))
    return replace(base, eps_abs=tol_stat, eps_prim_abs=tol_prim)


@dataclass
class HyperState:
    rho: float
    gamma: float
    penalty_history: list[float] = field(default_factory=list)


def update_hyperparameters(state: HyperState, cfg: PenaltyConfig, accepted: bool,
                           penalty_total: float | None = None,
                           near_stationary: bool = False):
    """Line-search update of rho and plateau-triggered ramp of gamma.

    Returns (rho, gamma, gamma_changed). On rejection rho halves and the
    step is discarded; on acceptance rho recovers toward its ceiling.
    gamma multiplies by the growth factor when the total penalty has
    stalled above tolerance over ``stall_window`` accepted iterations while
    the line search is not limiting the steps (or the iterate is already
    near-stationary but infeasible, the signature of an infeasible
    stationary point of the penalized objective).
    """
    gamma_changed = False
    cap = cfg.rho_cap if cfg.rho_cap is not None else 50.0 * cfg.rho
    if accepted:
        state.rho = min(state.rho * cfg.rho_grow, cap)
        if penalty_total is not None:
            state.penalty_history.append(penalty_total)
            h = state.penalty_history[-cfg.stall_window:]
            plateau = (len(h) >= cfg.stall_window
                       and abs(h[0] - h[-1]) <= 1e-3 * max(h[0], h[-1])
                       and state.rho >= cfg.rho * 0.99)
            if ((plateau or near_stationary) and penalty_total > cfg.stall_tol
                    and state.gamma * cfg.gamma_growth <= cfg.gamma_cap):
                state.gamma *= cfg.gamma_growth
                state.penalty_history.clear()
                gamma_changed = True
    else:
        state.rho *= cfg.rho_shrink
    return state.rho, state.gamma, gamma_changed


@dataclass
class ProblemScaling:
    """Affine scalings for the augmented state, controls, and dilation.

    ``defect_scale`` sets the per-component row scale of the shooting
    defects in the l1 penalty (defaults to the state scale); smaller
    entries weight those rows more heavily without changing the variable
    metric.
    """

    x_aug_scale: np.ndarray
    x_aug_offset: np.ndarray
    u_scale: np.ndarray
    u_offset: np.ndarray
    s_scale: float = 1.0
    s_offset: float = 0.0
    defect_scale: np.ndarray | None = None

    @classmethod
    def from_bounds(cls, layout: AugmentedLayout, state_bounds, control_bounds,
                    t_range=None, y_scale: float = 1.0, dilation_bounds=None):
        """Build scalings sending each declared bound pair onto [0, 1]."""
        sb = np.asarray(state_bounds, dtype=float)
        cb = np.asarray(control_bounds, dtype=float)
        xs = np.ones(layout.n_aug)
        xo = np.zeros(layout.n_aug)
        xs[: layout.n_x] = sb[:, 1] - sb[:, 0]
        xo[: layout.n_x] = sb[:, 0]
        if layout.has_accumulator:
            xs[layout.iy] = y_scale
        if layout.has_time_state:
            if t_range is None:
                raise ValueError("time-state layouts need a declared time range")
            xs[layout.it] = t_range[1] - t_range[0]
            xo[layout.it] = t_range[0]
        s_scale, s_offset = 1.0, 0.0
        if layout.has_dilation and dilation_bounds is not None:
            s_scale = dilation_bounds[1] - dilation_bounds[0]
            s_offset = dilation_bounds[0]
        return cls(xs, xo, cb[:, 1] - cb[:, 0], cb[:, 0], s_scale, s_offset)


@dataclass
class SubproblemData:
    """Slack-QP realization of one convexified prox-linear subproblem."""

    qp: QpProblem
    zs_ref: np.ndarray
    gamma: float
    rho: float
    n_zs: int
    cost_ref: float
    cost_grad: np.ndarray  # gradient of the terminal cost in scaled variables
    penalty_rows: list  # (coeff matrix rows on zs, rhs, kind 'abs'|'hinge')
    noise_rows: np.ndarray | None = None  # mask of equality rows tied to penalty slacks

    def penalty_row_gap(self, z_full: np.ndarray) -> float:
        """Sum of |Az - b| over penalty-linked rows: objective noise bound."""
        if self.qp.m == 0:
            return 0.0
        r = np.abs(self.qp.A @ z_full - self.qp.b)
        if self.noise_rows is not None:
            r = r[self.noise_rows]
        return float(np.sum(r))

    def model_value(self, zs: np.ndarray) -> float:
        """Convex model value at zs with slacks eliminated analytically."""
        dz = zs - self.zs_ref
        val = self.cost_ref + float(self.cost_grad @ dz)
        val += 0.5 / self.rho * float(dz @ dz)
        for rows, rhs, kind in self.penalty_rows:
            r = rows @ zs - rhs
            if kind == "abs":
                val += self.gamma * float(np.sum(np.abs(r)))
            else:
                val += self.gamma * float(np.sum(np.maximum(r, 0.0)))
        return val


class ProxLinearSolver:
    """Discretized problem context plus the prox-linear iteration."""

    def __init__(self, ocp: OcpDefinition, cfg: PenaltyConfig, grid: Grid,
                 basis_u: BasisSpec, basis_s: BasisSpec | None = None,
                 scaling: ProblemScaling | None = None, rows: RowScaling | None = None):
        self.ocp = ocp
        self.cfg = cfg
        free_time = ocp.fixed_final_time is None
        self.layout = AugmentedLayout(
            ocp.n_x, ocp.n_u,
            has_accumulator=(not cfg.node_only) and (ocp.n_g + ocp.n_h > 0),
            has_time_state=free_time and ocp.time_varying,
            has_dilation=free_time,
        )
        self.rows = rows if rows is not None else RowScaling.ones(ocp)
        if self.layout.has_dilation and basis_s is None:
            basis_s = basis_u if basis_u.kind != "cgl" else BasisSpec.foh(grid.tau)
        self.system = AugmentedSystem(ocp, self.layout, basis_u, basis_s, rows=self.rows)
        self.grid = grid
        self.scaling = scaling or ProblemScaling(
            np.ones(self.layout.n_aug), np.zeros(self.layout.n_aug),
            np.ones(ocp.n_u), np.zeros(ocp.n_u),
        )
        lay = self.layout
        self.N = grid.n_nodes
        self.n_U = self.system.n_U
        self.n_S = self.system.n_S
        self.n_zs = self.N * lay.n_aug + self.n_U + self.n_S
        sc = self.scaling
        flat_scale = np.concatenate([
            np.tile(sc.x_aug_scale, self.N),
            np.tile(sc.u_scale, basis_u.n_funcs),
            np.full(self.n_S, sc.s_scale),
        ])
        flat_offset = np.concatenate([
            np.tile(sc.x_aug_offset, self.N),
            np.tile(sc.u_offset, basis_u.n_funcs),
            np.full(self.n_S, sc.s_offset),
        ])
        self.z_scaling = ScalingSpec(flat_scale, flat_offset)
        self.defect_scale = (np.asarray(sc.defect_scale, float)
                             if sc.defect_scale is not None else sc.x_aug_scale)
        # scaled boundary-row magnitudes: user rows plus appended t/y rows
        extra = []
        if lay.has_time_state:
            extra.append(sc.x_aug_scale[lay.it])
        if lay.has_accumulator:
            extra.append(sc.x_aug_scale[lay.iy])
        self.Q_row_scale = np.concatenate([self.rows.Q, np.array(extra)])
        self.n_Qa = ocp.n_Q + len(extra)

    # -- packing ------------------------------------------------------------

    def pack(self, Xt, U, S) -> np.ndarray:
        parts = [np.asarray(Xt, float).reshape(-1), np.asarray(U, float).reshape(-1)]
        if self.n_S:
            parts.append(np.asarray(S, float).reshape(-1))
        return np.concatenate(parts)

    def unpack(self, z: np.ndarray):
        lay = self.layout
        n_state = self.N * lay.n_aug
        Xt = z[:n_state].reshape(self.N, lay.n_aug)
        U = z[n_state : n_state + self.n_U]
        S = z[n_state + self.n_U :]
        return Xt, U, S

    def scale_z(self, z_phys: np.ndarray) -> np.ndarray:
        return self.z_scaling.apply(z_phys)

    def unscale_z(self, zs: np.ndarray) -> np.ndarray:
        return self.z_scaling.invert(zs)

    # -- initial guess -------------------------------------------------------

    def default_initial_guess(self, x_init, x_final, u_const=None, t_f_guess=None,
                              y_final: float = 0.0) -> np.ndarray:
        """Linear state interpolation with constant augmented control (scaled)."""
        lay = self.layout
        ocp = self.ocp
        if u_const is None:
            cs = ocp.control_set
            if cs.kind == "ball":
                u_const = cs.center.copy()
            else:
                u_const = 0.5 * (cs.lower + cs.upper)
        if t_f_guess is None:
            if ocp.fixed_final_time is not None:
                t_f_guess = ocp.fixed_final_time
            else:
                t_f_guess = ocp.t_i + 0.5 * (ocp.dilation_bounds[0] + ocp.dilation_bounds[1])
        xt0 = np.zeros(lay.n_aug)
        xtN = np.zeros(lay.n_aug)
        xt0[lay.ix] = np.asarray(x_init, float)
        xtN[lay.ix] = np.asarray(x_final, float)
        if lay.has_accumulator:
            xtN[lay.iy] = y_final
        if lay.has_time_state:
            xt0[lay.it] = ocp.t_i
            xtN[lay.it] = t_f_guess
        lam = self.grid.tau[:, None]
        Xt = (1 - lam) * xt0[None, :] + lam * xtN[None, :]
        U = np.tile(np.asarray(u_const, float), self.system.basis_u.n_funcs)
        S = np.full(self.n_S, t_f_guess - ocp.t_i)
        return self.scale_z(self.pack(Xt, U, S))

    # -- boundary maps -------------------------------------------------------

    def _boundary_eval(self, Xt, S):
        lay, ocp = self.layout, self.ocp
        x1, xN = Xt[0, lay.ix], Xt[-1, lay.ix]
        if lay.has_time_state:
            tN = Xt[-1, lay.it]
        else:
            tN = self.system.final_time(S)
        Pv = np.asarray(ocp.boundary_ineq(ocp.t_i, x1, tN, xN), float) / self.rows.P if ocp.n_P else np.zeros(0)
        Qu = np.asarray(ocp.boundary_eq(ocp.t_i, x1, tN, xN), float) if ocp.n_Q else np.zeros(0)
        Qa = list(Qu)
        if lay.has_time_state:
            Qa.append(Xt[0, lay.it] - ocp.t_i)
        if lay.has_accumulator:
            Qa.append(Xt[0, lay.iy])  # pin the accumulator origin
        Qv = np.asarray(Qa, float) / self.Q_row_scale if self.n_Qa else np.zeros(0)
        return Pv, Qv, tN

    def _boundary_jacobians(self, Xt, S):
        """Scaled Jacobians of the boundary rows w.r.t. the xs_1/xs_N blocks."""
        lay, ocp, sc = self.layout, self.ocp, self.scaling
        x1, xN = Xt[0, lay.ix], Xt[-1, lay.ix]
        tN = Xt[-1, lay.it] if lay.has_time_state else self.system.final_time(S)
        n_aug = lay.n_aug

        def expand(dx1, dtf, dxN, row_scale):
            J1 = np.zeros((dx1.shape[0], n_aug))
            JN = np.zeros((dx1.shape[0], n_aug))
            J1[:, lay.ix] = dx1
            JN[:, lay.ix] = dxN
            if lay.has_time_state:
                JN[:, lay.it] = dtf
            J1 = (J1 * sc.x_aug_scale[None, :]) / row_scale[:, None]
            JN = (JN * sc.x_aug_scale[None, :]) / row_scale[:, None]
            return J1, JN

        if ocp.n_P:
            dx1, dtf, dxN = ocp.P_jac(ocp.t_i, x1, tN, xN)
            JP1, JPN = expand(dx1, dtf, dxN, self.rows.P)
        else:
            JP1 = JPN = np.zeros((0, n_aug))
        if ocp.n_Q:
            dx1, dtf, dxN = ocp.Q_jac(ocp.t_i, x1, tN, xN)
        else:
            dx1 = np.zeros((0, ocp.n_x))
            dtf = np.zeros(0)
            dxN = np.zeros((0, ocp.n_x))
        JQ1, JQN = expand(dx1, dtf, dxN, self.rows.Q if ocp.n_Q else np.ones(0))
        extra1 = []
        if lay.has_time_state:
            r = np.zeros(n_aug)
            r[lay.it] = sc.x_aug_scale[lay.it] / sc.x_aug_scale[lay.it]
            extra1.append(r)
        if lay.has_accumulator:
            r = np.zeros(n_aug)
            r[lay.iy] = sc.x_aug_scale[lay.iy] / sc.x_aug_scale[lay.iy]
            extra1.append(r)
        if extra1:
            JQ1 = np.vstack([JQ1, np.array(extra1)])
            JQN = np.vstack([JQN, np.zeros((len(extra1), n_aug))])
        return JP1, JPN, JQ1, JQN

    # -- node-only path constraints -------------------------------------------

    def _node_constraint_eval(self, Xt, U, S):
        """Scaled g/h values at every grid node (node-only baseline)."""
        lay, ocp = self.layout, self.ocp
        gs, hs = [], []
        for k in range(self.N):
            tau = self.grid.tau[k]
            seg = min(k, self.system.basis_u.nodes.size - 2)
            u, _ = self.system.control(tau, U, S, segment=seg if self.system.basis_u.kind != "cgl" else None)
            t = Xt[k, lay.it] if lay.has_time_state else self.system.time_of(tau, Xt[k], S)
            x = Xt[k, lay.ix]
            if ocp.n_g:
                gs.append(np.asarray(ocp.path_ineq(t, x, u), float) / self.rows.g)
            if ocp.n_h:
                hs.append(np.asarray(ocp.path_eq(t, x, u), float) / self.rows.h)
        g = np.concatenate(gs) if gs else np.zeros(0)
        h = np.concatenate(hs) if hs else np.zeros(0)
        return g, h

    # -- penalized objective ---------------------------------------------------

    def penalized_objective(self, zs: np.ndarray, gamma: float, set_tol: float = 1e-6):
        """Theta_gamma at a scaled point, via fresh propagation.

        Returns (theta, info). Membership violations of the hard convex set
        Z produce an inf objective with the offending set named in info.
        """
        lay = self.layout
        z = self.unscale_z(zs)
        Xt, U, S = self.unpack(z)
        info: dict = {}

        # indicator of Z = X_eps x U x S
        viol = self._set_violation(zs)
        if viol is not None:
            info["outside_set"] = viol
            info.update(penalty_total=np.inf, max_defect=np.inf, max_violation=np.inf,
                        terminal_cost=np.nan, denses=None)
            return np.inf, info

        defects, denses = compute_defects(self.system, Xt, U, S, self.grid)
        d_scaled = defects / self.defect_scale[None, :]
        Pv, Qv, tN = self._boundary_eval(Xt, S)
        penalty = float(np.sum(np.abs(d_scaled))) + float(np.sum(np.maximum(Pv, 0.0))) + float(np.sum(np.abs(Qv)))
        if self.cfg.node_only:
            g, h = self._node_constraint_eval(Xt, U, S)
            penalty += float(np.sum(np.maximum(g, 0.0))) + float(np.sum(np.abs(h)))
        Lval = float(self.ocp.terminal_cost(tN, Xt[-1, lay.ix]))
        theta = Lval + gamma * penalty
        info.update(
            penalty_total=penalty,
            max_defect=float(np.max(np.abs(d_scaled), initial=0.0)),
            max_violation=self._max_dense_violation(denses),
            terminal_cost=Lval,
            final_time=tN,
            boundary_ineq=Pv,
            boundary_eq=Qv,
            denses=denses,
        )
        return theta, info

    def _set_violation(self, zs):
        lay = self.layout
        z = self.unscale_z(zs)
        Xt, U, S = self.unpack(z)
        sc = self.scaling
        cs = self.ocp.control_set
        Umat = U.reshape(-1, self.ocp.n_u)
        for i in range(Umat.shape[0]):
            if not cs.contains(Umat[i], tol=set_tol_abs(sc.u_scale, 1e-5)):
                return f"control coefficient {i} outside U"
        if self.n_S:
            s_lo, s_hi = self.ocp.dilation_bounds
            tol = 1e-5 * sc.s_scale
            if np.any(S < s_lo - tol) or np.any(S > s_hi + tol):
                return "dilation coefficients outside S"
        if lay.has_accumulator:
            dy = np.diff(Xt[:, lay.iy])
            if np.any(dy > self.cfg.epsilon + 1e-5 * sc.x_aug_scale[lay.iy]):
                return "accumulator increment above epsilon"
        return None

    def _max_dense_violation(self, denses) -> float:
        """Max scaled pointwise path violation over the propagation samples."""
        ocp = self.ocp
        if ocp.n_g + ocp.n_h == 0 or denses is None:
            return 0.0
        worst = 0.0
        lay = self.layout
        for dense in denses:
            for m in range(dense.tau.size):
                t, x, u = dense.t[m], dense.xt[m, lay.ix], dense.u[m]
                if ocp.n_g:
                    gv = np.asarray(ocp.path_ineq(t, x, u), float) / self.rows.g
                    worst = max(worst, float(np.max(gv, initial=0.0)))
                if ocp.n_h:
                    hv = np.asarray(ocp.path_eq(t, x, u), float) / self.rows.h
                    worst = max(worst, float(np.max(np.abs(hv), initial=0.0)))
        return worst

    # -- subproblem --------------------------------------------------------------

    def build_subproblem(self, zs: np.ndarray, gamma: float, rho: float,
                         blocks: list[DefectBlock] | None = None,
                         harden_defects: bool = False) -> SubproblemData:
        """Assemble the scaled slack QP for the convexified model at zs.

        ``harden_defects`` pins the defect slacks of the physical state and
        time rows to zero (exact linearized shooting equalities), leaving
        the accumulator row penalized; used by the finishing phase.
        """
        lay, ocp, sc = self.layout, self.ocp, self.scaling
        z = self.unscale_z(zs)
        Xt, U, S = self.unpack(z)
        if blocks is None:
            blocks = linearize_all(self.system, Xt, U, S, self.grid)

        N, n_aug = self.N, lay.n_aug
        n_zs, n_U, n_S = self.n_zs, self.n_U, self.n_S
        nF = (N - 1) * n_aug
        n_e = (N - 1) if lay.has_accumulator else 0
        nP = ocp.n_P
        nQ = self.n_Qa
        node_g = N * ocp.n_g if self.cfg.node_only else 0
        node_h = N * ocp.n_h if self.cfg.node_only else 0

        idx = {}
        pos = n_zs
        for name, size in [("e", n_e), ("fp", nF), ("fm", nF), ("pP", nP), ("wP", nP),
                           ("qp", nQ), ("qm", nQ), ("pG", node_g), ("wG", node_g),
                           ("hp", node_h), ("hm", node_h)]:
            idx[name] = slice(pos, pos + size)
            pos += size
        n_tot = pos

        m_rows = nF + n_e + nP + nQ + node_g + node_h
        A = np.zeros((m_rows, n_tot))
        b = np.zeros(m_rows)
        penalty_rows = []

        def xsl(k):
            return slice(k * n_aug, (k + 1) * n_aug)

        Usl = slice(N * n_aug, N * n_aug + n_U)
        Ssl = slice(N * n_aug + n_U, n_zs)
        Dx = sc.x_aug_scale
        DU = np.tile(sc.u_scale, self.system.basis_u.n_funcs)
        DS = np.full(n_S, sc.s_scale)

        # defect rows with symmetric-split slacks
        row = 0
        W = self.defect_scale
        Frows = np.zeros((nF, n_zs))
        Frhs = np.zeros(nF)
        for k, blk in enumerate(blocks):
            r = slice(row, row + n_aug)
            Ak = (blk.A * Dx[None, :]) / W[:, None]
            Bk = (blk.B * DU[None, :]) / W[:, None]
            A[r, xsl(k + 1)] = np.diag(Dx / W)
            A[r, xsl(k)] = -Ak
            A[r, Usl] = -Bk
            rhs = (blk.endpoint - sc.x_aug_offset) / W - Ak @ zs[xsl(k)] - Bk @ zs[Usl]
            if n_S:
                Ck = (blk.C * DS[None, :]) / W[:, None]
                A[r, Ssl] = -Ck
                rhs -= Ck @ zs[Ssl]
            A[r, idx["fp"]][:, k * n_aug : (k + 1) * n_aug] = -np.eye(n_aug)
            A[r, idx["fm"]][:, k * n_aug : (k + 1) * n_aug] = np.eye(n_aug)
            b[r] = rhs
            Fs = A[r, :n_zs].copy()
            Frows[k * n_aug : (k + 1) * n_aug] = Fs
            Frhs[k * n_aug : (k + 1) * n_aug] = rhs
            row += n_aug
        penalty_rows.append((Frows, Frhs, "abs"))

        # relaxed accumulator increments: (y_{k+1} - y_k) - e_k = 0, e_k <= eps
        if n_e:
            for k in range(N - 1):
                A[row, xsl(k + 1).start + lay.iy] = 1.0
                A[row, xsl(k).start + lay.iy] = -1.0
                A[row, idx["e"].start + k] = -1.0
                row += 1

        # boundary rows
        JP1, JPN, JQ1, JQN = self._boundary_jacobians(Xt, S)
        Pv, Qv, _ = self._boundary_eval(Xt, S)
        if nP:
            r = slice(row, row + nP)
            A[r, xsl(0)] = JP1
            A[r, xsl(N - 1)] = JPN
            A[r, idx["pP"]] = -np.eye(nP)
            A[r, idx["wP"]] = np.eye(nP)
            b[r] = JP1 @ zs[xsl(0)] + JPN @ zs[xsl(N - 1)] - Pv
            rowsP = np.zeros((nP, n_zs))
            rowsP[:, xsl(0)] = JP1
            rowsP[:, xsl(N - 1)] = JPN
            penalty_rows.append((rowsP, b[r].copy(), "hinge"))
            row += nP
        if nQ:
            r = slice(row, row + nQ)
            A[r, xsl(0)] = JQ1
            A[r, xsl(N - 1)] = JQN
            A[r, idx["qp"]] = -np.eye(nQ)
            A[r, idx["qm"]] = np.eye(nQ)
            b[r] = JQ1 @ zs[xsl(0)] + JQN @ zs[xsl(N - 1)] - Qv
            rowsQ = np.zeros((nQ, n_zs))
            rowsQ[:, xsl(0)] = JQ1
            rowsQ[:, xsl(N - 1)] = JQN
            penalty_rows.append((rowsQ, b[r].copy(), "abs"))
            row += nQ

        # node-only linearized path constraints
        if node_g or node_h:
            row = self._append_node_rows(A, b, penalty_rows, idx, row, zs, Xt, U, S)

        # cost: prox term on the decision block, gamma on penalty slacks
        pdiag = np.zeros(n_tot)
        pdiag[:n_zs] = 1.0 / rho
        q = np.zeros(n_tot)
        cost_grad = self._cost_gradient_scaled(Xt, S)
        q[:n_zs] = cost_grad - zs / rho
        for name in ("fp", "fm", "pP", "qp", "qm", "pG", "hp", "hm"):
            q[idx[name]] = gamma

        qp_blocks = BlockSet([ConvexSetSpec.free(N * n_aug)])
        qp_blocks.extend(self._control_blocks())
        if n_S:
            s_lo = (self.ocp.dilation_bounds[0] - sc.s_offset) / sc.s_scale
            s_hi = (self.ocp.dilation_bounds[1] - sc.s_offset) / sc.s_scale
            qp_blocks.append(ConvexSetSpec.interval(s_lo, s_hi, n_S))
        if n_e:
            eps_s = self.cfg.epsilon / sc.x_aug_scale[lay.iy]
            qp_blocks.append(ConvexSetSpec.interval(-np.inf, eps_s, n_e))
        for name in ("fp", "fm", "pP", "wP", "qp", "qm", "pG", "wG", "hp", "hm"):
            size = idx[name].stop - idx[name].start
            if not size:
                continue
            if harden_defects and name in ("fp", "fm"):
                hi = np.zeros(size)
                if lay.has_accumulator:
                    hi.reshape(N - 1, n_aug)[:, lay.iy] = np.inf
                qp_blocks.append(ConvexSetSpec.box(np.zeros(size), hi))
            else:
                qp_blocks.append(ConvexSetSpec.nonneg(size))

        Lval = float(self.ocp.terminal_cost(*self._terminal_point(Xt, S)))
        problem = QpProblem(q=q, blocks=qp_blocks, A=A, b=b, pdiag=pdiag)
        noise = np.ones(m_rows, dtype=bool)
        if n_e:
            noise[nF : nF + n_e] = False  # relaxed-accumulator rows are hard, not penalized
        return SubproblemData(qp=problem, zs_ref=zs.copy(), gamma=gamma, rho=rho,
                              n_zs=n_zs, cost_ref=Lval, cost_grad=cost_grad,
                              penalty_rows=penalty_rows, noise_rows=noise)

    def _terminal_point(self, Xt, S):
        lay = self.layout
        tN = Xt[-1, lay.it] if lay.has_time_state else self.system.final_time(S)
        return tN, Xt[-1, lay.ix]

    def _cost_gradient_scaled(self, Xt, S) -> np.ndarray:
        lay, sc = self.layout, self.scaling
        tN, xN = self._terminal_point(Xt, S)
        dLdt, dLdx = self.ocp.L_grad(tN, xN)
        g = np.zeros(self.n_zs)
        sl = slice((self.N - 1) * lay.n_aug, self.N * lay.n_aug)
        gx = np.zeros(lay.n_aug)
        gx[lay.ix] = dLdx
        if lay.has_time_state:
            gx[lay.it] = dLdt
        g[sl] = gx * sc.x_aug_scale
        return g

    def _control_blocks(self) -> BlockSet:
        """Scaled per-coefficient control sets (U imposed at coefficient level)."""
        cs = self.ocp.control_set
        sc = self.scaling
        out = BlockSet()
        for _ in range(self.system.basis_u.n_funcs):
            if cs.kind == "ball":
                if not np.allclose(sc.u_scale, sc.u_scale[0]):
                    raise ValueError("ball control sets need a uniform control scale")
                out.append(ConvexSetSpec.ball((cs.center - sc.u_offset) / sc.u_scale,
                                              cs.radius / sc.u_scale[0]))
            else:
                out.append(ConvexSetSpec.box((cs.lower - sc.u_offset) / sc.u_scale,
                                             (cs.upper - sc.u_offset) / sc.u_scale))
        return out

    def _append_node_rows(self, A, b, penalty_rows, idx, row, zs, Xt, U, S):
        lay, ocp, sc = self.layout, self.ocp, self.scaling
        N, n_aug = self.N, lay.n_aug
        DU = np.tile(sc.u_scale, self.system.basis_u.n_funcs)
        Usl = slice(N * n_aug, N * n_aug + self.n_U)
        g_rows = np.zeros((N * ocp.n_g, self.n_zs))
        g_rhs = np.zeros(N * ocp.n_g)
        h_rows = np.zeros((N * ocp.n_h, self.n_zs))
        h_rhs = np.zeros(N * ocp.n_h)
        for k in range(N):
            tau = self.grid.tau[k]
            seg = min(k, self.system.basis_u.nodes.size - 2) if self.system.basis_u.kind != "cgl" else None
            u, _ = self.system.control(tau, U, S, segment=seg)
            gam = eval_basis(self.system.basis_u, tau, segment=seg)
            Ku = np.kron(gam, np.eye(ocp.n_u))  # du(tau_k)/dU
            t = Xt[k, lay.it] if lay.has_time_state else self.system.time_of(tau, Xt[k], S)
            x = Xt[k, lay.ix]
            for (n_c, val_fun, jac_fun, rscale, rows_arr, rhs_arr, offset) in (
                (ocp.n_g, ocp.path_ineq, ocp.g_jac, self.rows.g, g_rows, g_rhs, k * ocp.n_g),
                (ocp.n_h, ocp.path_eq, ocp.h_jac, self.rows.h, h_rows, h_rhs, k * ocp.n_h),
            ):
                if not n_c:
                    continue
                val = np.asarray(val_fun(t, x, u), float) / rscale
                ct, cx, cu = jac_fun(t, x, u)
                Jx = np.zeros((n_c, n_aug))
                Jx[:, lay.ix] = cx
                if lay.has_time_state:
                    Jx[:, lay.it] = ct
                Jx = (Jx * sc.x_aug_scale[None, :]) / rscale[:, None]
                Ju = ((cu @ Ku) * DU[None, :]) / rscale[:, None]
                sl = slice(offset, offset + n_c)
                rows_arr[sl, k * n_aug : (k + 1) * n_aug] = Jx
                rows_arr[sl, Usl] = Ju
                rhs_arr[sl] = Jx @ zs[k * n_aug : (k + 1) * n_aug] + Ju @ zs[Usl] - val
        if ocp.n_g:
            r = slice(row, row + N * ocp.n_g)
            A[r, : self.n_zs] = g_rows
            A[r, idx["pG"]] = -np.eye(N * ocp.n_g)
            A[r, idx["wG"]] = np.eye(N * ocp.n_g)
            b[r] = g_rhs
            penalty_rows.append((g_rows, g_rhs, "hinge"))
            row += N * ocp.n_g
        if ocp.n_h:
            r = slice(row, row + N * ocp.n_h)
            A[r, : self.n_zs] = h_rows
            A[r, idx["hp"]] = -np.eye(N * ocp.n_h)
            A[r, idx["hm"]] = np.eye(N * ocp.n_h)
            b[r] = h_rhs
            penalty_rows.append((h_rows, h_rhs, "abs"))
            row += N * ocp.n_h
        return row

    # -- main loop -----------------------------------------------------------

    def solve(self, init: np.ndarray | None = None, progress=None):
        """Run the prox-linear iteration from a scaled initial point."""
        cfg = self.cfg
        if init is None:
            raise ValueError("an initial (scaled) decision vector is required")
        state = SolverState(z=np.asarray(init, float).copy())
        hyper = HyperState(rho=cfg.rho, gamma=cfg.gamma)
        theta, info = self.penalized_objective(state.z, hyper.gamma)
        if not np.isfinite(theta):
            raise ValueError(f"initial guess outside the hard set Z: {info.get('outside_set')}")

        blocks = None
        warm_p = warm_d = None
        status = "max-iters"
        g_prev = np.inf
        for it in range(1, cfg.k_max + 1):
            t0 = time.perf_counter()
            if blocks is None:
                Xt, U, S = self.unpack(self.unscale_z(state.z))
                blocks = linearize_all(self.system, Xt, U, S, self.grid)
            t1 = time.perf_counter()
            sub = self.build_subproblem(state.z, hyper.gamma, hyper.rho, blocks=blocks)
            qp_sets = scheduled_qp_settings(cfg.qp, hyper.rho, hyper.gamma, sub.qp.m, g_prev)
            sol = solve_qp(sub.qp, qp_sets, warm_primal=warm_p, warm_dual=warm_d)
            if sol.status != "converged":
                # retry without extrapolation; dual cycling on degenerate row
                # pairs (relaxed-accumulator vs y-defect) responds to this
                sol = solve_qp(sub.qp, replace(qp_sets, max_iters=4 * qp_sets.max_iters,
                                               extrapolation=1.0, omega=None),
                               warm_primal=sol.z, warm_dual=sol.y)
            t2 = time.perf_counter()
            if sol.status != "converged" and (sol.stat_res > max(1e-2, 10 * qp_sets.eps_abs)
                                              or sol.primal_res > max(1e-5, 10 * qp_sets.eps_prim_abs)):
                status = "subproblem-failure"
                state.records.append(IterationRecord(
                    it, theta, np.nan, info["max_defect"], info["max_violation"],
                    hyper.rho, hyper.gamma, (t2 - t0) * 1e3, False))
                break
            zs_new = sol.z[: self.n_zs].copy()
            gnorm = prox_gradient_norm(state.z, zs_new, hyper.rho)
            theta_new, info_new = self.penalized_objective(zs_new, hyper.gamma)
            t3 = time.perf_counter()
            # the gamma-weighted slack-row mismatch of the inexact QP solve is
            # indistinguishable from objective noise; widen the accept test by it
            row_gap = sub.penalty_row_gap(sol.z)
            slack = cfg.accept_slack * (1.0 + abs(theta)) + hyper.gamma * row_gap
            required = cfg.sufficient_decrease * hyper.rho * gnorm**2
            accepted = theta_new <= theta - required + slack
            state.timings["linearize"] += t1 - t0
            state.timings["qp"] += t2 - t1
            state.timings["evaluate"] += t3 - t2

            rec = IterationRecord(
                it, theta_new if accepted else theta, gnorm,
                (info_new if accepted else info)["max_defect"],
                (info_new if accepted else info)["max_violation"],
                hyper.rho, hyper.gamma, (t3 - t0) * 1e3, accepted)
            state.records.append(rec)
            if progress:
                progress(rec)
            log.info(rec.format_line())

            g_prev = gnorm
            if accepted:
                state.z = zs_new
                theta, info = theta_new, info_new
                warm_p, warm_d = sol.z, sol.y
                blocks = None
                state.iteration = it
                if gnorm <= cfg.eps_tol and info["penalty_total"] <= cfg.feas_tol:
                    status = "converged"
                    break
            _, _, gamma_changed = update_hyperparameters(
                hyper, cfg, accepted, info["penalty_total"] if accepted else None,
                near_stationary=(gnorm <= 10.0 * cfg.eps_tol))
            if gamma_changed:
                theta = info["terminal_cost"] + hyper.gamma * info["penalty_total"]
                warm_d = None  # dual magnitudes rescale with gamma
            if hyper.rho < cfg.rho_min:
                status = "stalled"
                break

        if cfg.polish_cycles:
            status, theta, info = self._polish(state, hyper, status, theta, info)

        result = SolveResult(
            status=status,
            z_scaled=state.z,
            solver=self,
            theta=theta,
            info=info,
            state=state,
            gamma=hyper.gamma,
            rho=hyper.rho,
        )
        return result

    def _polish(self, state: SolverState, hyper: HyperState, status, theta, info):
        """Finishing cycles: hardened-defect steps, then soft re-projection.

        Hardened steps enforce the linearized shooting equalities exactly
        (the flat-valley traversal the penalized steps crawl through); soft
        steps re-absorb the linearization leftovers. The best iterate by
        (feasibility, terminal cost) wins.
        """
        cfg = self.cfg

        def rank(pen, cost):
            return (0, cost) if pen <= cfg.feas_tol else (1, pen)

        best = (rank(info.get("penalty_total", np.inf), info.get("terminal_cost", np.inf)),
                state.z.copy(), theta, info)
        z_cur = state.z.copy()
        for _cycle in range(cfg.polish_cycles):
            for harden, rho_p, n_steps in ((True, 200.0 * cfg.rho, 8),
                                           (False, 5.0 * cfg.rho, 5)):
                for _ in range(n_steps):
                    t0 = time.perf_counter()
                    Xt, U, S = self.unpack(self.unscale_z(z_cur))
                    try:
                        blocks = linearize_all(self.system, Xt, U, S, self.grid)
                    except Exception:
                        break
                    sub = self.build_subproblem(z_cur, hyper.gamma, rho_p, blocks=blocks,
                                                harden_defects=harden)
                    sol = solve_qp(sub.qp, replace(cfg.qp, eps_abs=1e-6, eps_prim_abs=1e-9))
                    if sol.status != "converged" and max(sol.stat_res, sol.primal_res) > 1e-4:
                        break
                    zs_new = sol.z[: self.n_zs].copy()
                    step = float(np.linalg.norm(zs_new - z_cur))
                    theta_new, info_new = self.penalized_objective(zs_new, hyper.gamma)
                    if not np.isfinite(theta_new):
                        break
                    state.records.append(IterationRecord(
                        len(state.records) + 1, theta_new,
                        prox_gradient_norm(z_cur, zs_new, rho_p),
                        info_new.get("max_defect", np.nan),
                        info_new.get("max_violation", np.nan),
                        rho_p, hyper.gamma, (time.perf_counter() - t0) * 1e3, True))
                    log.info(state.records[-1].format_line())
                    z_cur = zs_new
                    key = rank(info_new.get("penalty_total", np.inf),
                               info_new.get("terminal_cost", np.inf))
                    if key < best[0]:
                        best = (key, zs_new.copy(), theta_new, info_new)
                    if step <= 1e-9 * (1 + float(np.linalg.norm(z_cur))):
                        break
        _, state.z, theta, info = best
        if status != "subproblem-failure" and info.get("penalty_total", np.inf) <= cfg.feas_tol:
            status = "converged"
        return status, theta, info


def set_tol_abs(scale, rel):
    return float(rel * np.max(np.atleast_1d(scale)))


@dataclass
class SolveResult:
    status: str
    z_scaled: np.ndarray
    solver: ProxLinearSolver
    theta: float
    info: dict
    state: SolverState
    gamma: float
    rho: float

    @property
    def Xt(self):
        return self.solver.unpack(self.solver.unscale_z(self.z_scaled))[0]

    @property
    def U(self):
        return self.solver.unpack(self.solver.unscale_z(self.z_scaled))[1]

    @property
    def S(self):
        return self.solver.unpack(self.solver.unscale_z(self.z_scaled))[2]

    @property
    def terminal_cost(self) -> float:
        return self.info.get("terminal_cost", np.nan)

    @property
    def iterations(self) -> int:
        return len(self.state.records)


def solve(ocp: OcpDefinition, cfg: PenaltyConfig, init=None, grid: Grid | None = None,
          basis_u: BasisSpec | None = None, basis_s: BasisSpec | None = None,
          scaling: ProblemScaling | None = None, rows: RowScaling | None = None,
          initial_guess_args: dict | None = None, progress=None) -> SolveResult:
    """Convenience entry point: discretize with defaults and run the loop."""
    grid = grid or Grid.uniform(10)
    basis_u = basis_u or BasisSpec.foh(grid.tau)
    solver = ProxLinearSolver(ocp, cfg, grid, basis_u, basis_s, scaling=scaling, rows=rows)
    if init is None:
        if initial_guess_args is None:
            raise ValueError("either init or initial_guess_args is required")
        init = solver.default_initial_guess(**initial_guess_args)
    return solver.solve(init=init, progress=progress)
