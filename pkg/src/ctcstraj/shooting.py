"""Multiple-shooting propagation, defects, and exact sensitivities.

Each grid interval [tau_k, tau_{k+1}] is integrated with fixed-step
classical RK4 from the node state xt_k under the parameterized augmented
control. The defect at node k+1 is

    F_k = xt_{k+1} - xt^-(tau_{k+1})

and the sensitivity matrices A_k, B_k, C_k (with respect to the node state,
the control coefficients, and the dilation coefficients) are the terminal
values of the variational initial value problem integrated jointly with the
state using the same RK4 stages.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .basis import BasisSpec, eval_basis
from .reform import AugmentedSystem


class PropagationError(RuntimeError):
    """State blow-up or invalid dilation during interval propagation."""


@dataclass(frozen=True)
class Grid:
    """Shooting grid on normalized time with fixed integrator substeps."""

    tau: np.ndarray
    substeps: int = 15

    def __post_init__(self):
        tau = np.asarray(self.tau, dtype=float)
        if tau.ndim != 1 or tau.size < 2:
            raise ValueError("grid needs at least two nodes")
        if np.any(np.diff(tau) <= 0):
            raise ValueError("grid nodes must be strictly increasing")
        if self.substeps < 1:
            raise ValueError("substeps must be >= 1")
        object.__setattr__(self, "tau", tau)

    @classmethod
    def uniform(cls, n: int, substeps: int = 15) -> "Grid":
        return cls(np.linspace(0.0, 1.0, n), substeps)

    @property
    def n_nodes(self) -> int:
        return self.tau.size

    @property
    def n_intervals(self) -> int:
        return self.tau.size - 1


@dataclass
class DenseTrajectory:
    """Substep-resolution samples of one propagated stretch."""

    tau: np.ndarray
    t: np.ndarray
    xt: np.ndarray  # (M, n_aug)
    u: np.ndarray  # (M, n_u)
    s: np.ndarray  # (M,)

    @staticmethod
    def concatenate(parts: list["DenseTrajectory"]) -> "DenseTrajectory":
        # drop the duplicated interval start samples after the first part
        keep = [parts[0]] + [p for p in parts[1:]]
        tau = np.concatenate([keep[0].tau] + [p.tau[1:] for p in keep[1:]])
        t = np.concatenate([keep[0].t] + [p.t[1:] for p in keep[1:]])
        xt = np.vstack([keep[0].xt] + [p.xt[1:] for p in keep[1:]])
        u = np.vstack([keep[0].u] + [p.u[1:] for p in keep[1:]])
        s = np.concatenate([keep[0].s] + [p.s[1:] for p in keep[1:]])
        return DenseTrajectory(tau, t, xt, u, s)


@dataclass
class DefectBlock:
    """Per-interval shooting result and affine model of the defect."""

    index: int
    endpoint: np.ndarray
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    defect: np.ndarray | None = None
    dense: DenseTrajectory | None = None

    def linearized_defect(self, xt_next, xt_k, dxk, dU, dS) -> np.ndarray:
        """Affine model of F_k at deviations from the linearization reference."""
        val = np.asarray(xt_next, float) - self.endpoint - self.A @ dxk - self.B @ dU
        if self.C.shape[1]:
            val -= self.C @ dS
        return val


def _segment_hint(spec: BasisSpec, a: float, b: float) -> int | None:
    """Basis segment containing [a, b], or None if the interval straddles nodes."""
    if spec.kind == "cgl":
        return None
    k = spec.segment_of(0.5 * (a + b))
    if spec.nodes[k] <= a + 1e-12 and b <= spec.nodes[k + 1] + 1e-12:
        return k
    return None


def _time_arg(system: AugmentedSystem, tau: float):
    lay = system.layout
    if lay.has_time_state:
        return None  # read from the state
    if not lay.has_dilation:
        return system.ocp.t_i + tau * system.s_fixed
    return system.ocp.t_i  # declared time-invariant


def propagate_interval(system: AugmentedSystem, xt_k, U, S, k: int, grid: Grid):
    """RK4 propagation of one interval; returns (endpoint, DenseTrajectory)."""
    lay = system.layout
    xt = np.array(xt_k, dtype=float)
    a, b = grid.tau[k], grid.tau[k + 1]
    h = (b - a) / grid.substeps
    seg_u = _segment_hint(system.basis_u, a, b)
    seg_s = _segment_hint(system.basis_s, a, b) if lay.has_dilation else None

    def rhs(tau, state):
        u, s = _control(system, tau, U, S, seg_u, seg_s)
        return system.dynamics(state, u, s, t=_time_arg(system, tau)), u, s

    taus = np.empty(grid.substeps + 1)
    xts = np.empty((grid.substeps + 1, lay.n_aug))
    us = np.empty((grid.substeps + 1, system.ocp.n_u))
    ss = np.empty(grid.substeps + 1)

    f0, u0, s0 = rhs(a, xt)
    taus[0], xts[0], us[0], ss[0] = a, xt, u0, s0
    tau = a
    for m in range(grid.substeps):
        k1 = f0 if m == 0 else rhs(tau, xt)[0]
        k2 = rhs(tau + 0.5 * h, xt + 0.5 * h * k1)[0]
        k3 = rhs(tau + 0.5 * h, xt + 0.5 * h * k2)[0]
        k4, u4, s4 = rhs(tau + h, xt + h * k3)
        xt = xt + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        tau = a + (m + 1) * h
        if not np.all(np.isfinite(xt)):
            raise PropagationError(f"state blew up while propagating interval {k}")
        taus[m + 1], xts[m + 1], us[m + 1], ss[m + 1] = tau, xt, u4, s4

    ts = _times_of(system, taus, xts, S)
    return xt, DenseTrajectory(taus, ts, xts, us, ss)


def _control(system, tau, U, S, seg_u, seg_s):
    from .basis import eval_control

    u = eval_control(U, system.basis_u, system.ocp.n_u, tau, segment=seg_u)
    if system.layout.has_dilation:
        s = float(eval_control(S, system.basis_s, 1, tau, segment=seg_s)[0])
    else:
        s = system.s_fixed
    return u, s


def _times_of(system, taus, xts, S):
    lay = system.layout
    if lay.has_time_state:
        return xts[:, lay.it].copy()
    if not lay.has_dilation:
        return system.ocp.t_i + taus * system.s_fixed
    return np.array([system.time_of(tau, None, S) for tau in taus])


def propagate_with_sensitivities(system: AugmentedSystem, xt_k, U, S, k: int, grid: Grid,
                                 xt_next=None) -> DefectBlock:
    """Joint RK4 integration of the state and the variational equations.

    A_k, B_k, C_k are the terminal values of the (Phi_x, Phi_u, Phi_s) IVP
    with identity/zero initial conditions; the control forcing terms use the
    same basis evaluations as the state propagation.
    """
    lay = system.layout
    n = lay.n_aug
    n_U, n_S = system.n_U, system.n_S
    U = np.asarray(U, dtype=float)
    S = np.asarray(S, dtype=float)

    a, b = grid.tau[k], grid.tau[k + 1]
    h = (b - a) / grid.substeps
    seg_u = _segment_hint(system.basis_u, a, b)
    seg_s = _segment_hint(system.basis_s, a, b) if lay.has_dilation else None

    xt = np.array(xt_k, dtype=float)
    Px = np.eye(n)
    Pu = np.zeros((n, n_U))
    Ps = np.zeros((n, n_S))

    taus = np.empty(grid.substeps + 1)
    xts = np.empty((grid.substeps + 1, n))
    us = np.empty((grid.substeps + 1, system.ocp.n_u))
    ss = np.empty(grid.substeps + 1)

    def stage(tau, state, Sx, Su, Ss):
        u, s = _control(system, tau, U, S, seg_u, seg_s)
        t = _time_arg(system, tau)
        f = system.dynamics(state, u, s, t=t)
        A, dFdu, dFds = system.jacobians(state, u, s, t=t)
        gam_u = eval_basis(system.basis_u, tau, segment=seg_u)
        dSx = A @ Sx
        dSu = A @ Su + np.kron(gam_u, dFdu)
        if n_S:
            gam_s = eval_basis(system.basis_s, tau, segment=seg_s)
            dSs = A @ Ss + np.outer(dFds, gam_s)
        else:
            dSs = np.zeros((n, 0))
        return f, dSx, dSu, dSs, u, s

    f0, *_rest = stage(a, xt, Px, Pu, Ps)
    u0, s0 = _control(system, a, U, S, seg_u, seg_s)
    taus[0], xts[0], us[0], ss[0] = a, xt, u0, s0

    tau = a
    for m in range(grid.substeps):
        k1 = stage(tau, xt, Px, Pu, Ps)
        k2 = stage(tau + 0.5 * h, xt + 0.5 * h * k1[0], Px + 0.5 * h * k1[1],
                   Pu + 0.5 * h * k1[2], Ps + 0.5 * h * k1[3])
        k3 = stage(tau + 0.5 * h, xt + 0.5 * h * k2[0], Px + 0.5 * h * k2[1],
                   Pu + 0.5 * h * k2[2], Ps + 0.5 * h * k2[3])
        k4 = stage(tau + h, xt + h * k3[0], Px + h * k3[1], Pu + h * k3[2], Ps + h * k3[3])
        xt = xt + (h / 6.0) * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        Px = Px + (h / 6.0) * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        Pu = Pu + (h / 6.0) * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2])
        Ps = Ps + (h / 6.0) * (k1[3] + 2 * k2[3] + 2 * k3[3] + k4[3])
        tau = a + (m + 1) * h
        if not (np.all(np.isfinite(xt)) and np.all(np.isfinite(Px))):
            raise PropagationError(f"sensitivity propagation blew up on interval {k}")
        taus[m + 1], xts[m + 1] = tau, xt
        us[m + 1], ss[m + 1] = k4[4], k4[5]

    dense = DenseTrajectory(taus, _times_of(system, taus, xts, S), xts, us, ss)
    defect = None if xt_next is None else np.asarray(xt_next, float) - xt
    return DefectBlock(index=k, endpoint=xt, A=Px, B=Pu, C=Ps, defect=defect, dense=dense)


def compute_defects(system: AugmentedSystem, Xt, U, S, grid: Grid):
    """Defect vectors F_1..F_{N-1} plus the per-interval dense trajectories."""
    Xt = np.asarray(Xt, dtype=float).reshape(grid.n_nodes, system.layout.n_aug)
    defects = np.empty((grid.n_intervals, system.layout.n_aug))
    denses = []
    for k in range(grid.n_intervals):
        endpoint, dense = propagate_interval(system, Xt[k], U, S, k, grid)
        defects[k] = Xt[k + 1] - endpoint
        denses.append(dense)
    return defects, denses


def linearize_all(system: AugmentedSystem, Xt, U, S, grid: Grid) -> list[DefectBlock]:
    """Per-interval affine models of the defects about the given reference."""
    Xt = np.asarray(Xt, dtype=float).reshape(grid.n_nodes, system.layout.n_aug)
    return [
        propagate_with_sensitivities(system, Xt[k], U, S, k, grid, xt_next=Xt[k + 1])
        for k in range(grid.n_intervals)
    ]
