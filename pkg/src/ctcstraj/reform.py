"""Exterior-penalty constraint reformulation and the time-dilated augmented system.

Path constraints are folded into one nonnegative accumulator rate

    Lambda(t, x, u) = sum_i max{0, g_i}^2 + sum_j h_j^2

(with per-row constraint scaling applied first), which is zero exactly when
all path constraints hold at the point. Free-final-time problems are dilated
to normalized time tau in [0, 1] with the dilation factor s = dt/dtau as an
extra control input; the augmented state appends the accumulator y and, for
time-varying problems, the physical time t:

    d/dtau (x, y, t) = (f(t, x, u), Lambda(t, x, u), 1) * s
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .basis import BasisSpec, eval_control, integrate_signal
from .ocp import OcpDefinition, RowScaling


@dataclass(frozen=True)
class AugmentedLayout:
    """Index layout of the augmented state (x, [y], [t]) and control (u, [s]).

    ``has_accumulator`` is dropped in node-only baseline runs;
    ``has_time_state`` is only needed for free-final-time problems whose
    functions depend explicitly on time; ``has_dilation`` is dropped for
    fixed-final-time problems (s is then a fixed constant).
    """

    n_x: int
    n_u: int
    has_accumulator: bool = True
    has_time_state: bool = True
    has_dilation: bool = True

    def __post_init__(self):
        if self.has_time_state and not self.has_dilation:
            raise ValueError("a time state is only used with a dilation control input")

    @property
    def n_aug(self) -> int:
        return self.n_x + int(self.has_accumulator) + int(self.has_time_state)

    @property
    def n_uaug(self) -> int:
        return self.n_u + int(self.has_dilation)

    @property
    def ix(self) -> slice:
        return slice(0, self.n_x)

    @property
    def iy(self) -> int | None:
        return self.n_x if self.has_accumulator else None

    @property
    def it(self) -> int | None:
        if not self.has_time_state:
            return None
        return self.n_x + int(self.has_accumulator)

    @property
    def iu(self) -> slice:
        return slice(0, self.n_u)

    @property
    def i_s(self) -> int | None:
        return self.n_u if self.has_dilation else None

    def _selector(self, rows) -> np.ndarray:
        E = np.zeros((len(rows), self.n_aug))
        for r, c in enumerate(rows):
            E[r, c] = 1.0
        return E

    @property
    def E_x(self) -> np.ndarray:
        return self._selector(range(self.n_x))

    @property
    def E_y(self) -> np.ndarray:
        if not self.has_accumulator:
            return np.zeros((0, self.n_aug))
        return self._selector([self.iy])

    @property
    def E_t(self) -> np.ndarray:
        if not self.has_time_state:
            return np.zeros((0, self.n_aug))
        return self._selector([self.it])

    @property
    def E_u(self) -> np.ndarray:
        E = np.zeros((self.n_u, self.n_uaug))
        E[: self.n_u, : self.n_u] = np.eye(self.n_u)
        return E

    @property
    def E_s(self) -> np.ndarray:
        if not self.has_dilation:
            return np.zeros((0, self.n_uaug))
        E = np.zeros((1, self.n_uaug))
        E[0, self.n_u] = 1.0
        return E


def penalty_lambda(ocp: OcpDefinition, rows: RowScaling, t: float, x, u) -> float:
    """Scalar exterior penalty; zero iff all path constraints hold at (t, x, u)."""
    val = 0.0
    if ocp.n_g:
        g = np.asarray(ocp.path_ineq(t, x, u), dtype=float) / rows.g
        val += float(np.sum(np.maximum(g, 0.0) ** 2))
    if ocp.n_h:
        h = np.asarray(ocp.path_eq(t, x, u), dtype=float) / rows.h
        val += float(np.sum(h**2))
    return val


def penalty_lambda_grads(ocp: OcpDefinition, rows: RowScaling, t: float, x, u):
    """(dLambda/dt, dLambda/dx, dLambda/du) by the chain rule.

    All three vanish exactly wherever g <= 0 and h = 0 because the hinge
    factor max{0, g_i} multiplies every inequality term.
    """
    dt = 0.0
    dx = np.zeros(ocp.n_x)
    du = np.zeros(ocp.n_u)
    if ocp.n_g:
        g = np.asarray(ocp.path_ineq(t, x, u), dtype=float) / rows.g
        hinge = np.maximum(g, 0.0)
        if np.any(hinge > 0.0):
            gt, gx, gu = ocp.g_jac(t, x, u)
            w = 2.0 * hinge / rows.g
            dt += float(w @ gt)
            dx += w @ gx
            du += w @ gu
    if ocp.n_h:
        h = np.asarray(ocp.path_eq(t, x, u), dtype=float) / rows.h
        if np.any(h != 0.0):
            ht, hx, hu = ocp.h_jac(t, x, u)
            w = 2.0 * h / rows.h
            dt += float(w @ ht)
            dx += w @ hx
            du += w @ hu
    return dt, dx, du


@dataclass
class AugmentedSystem:
    """The dilated, penalty-augmented ODE together with its control basis.

    For layouts without a time state the physical time is reconstructed
    from (tau, S); problems declared time-invariant may not have cost or
    boundary functions that depend on the (then untracked) final time.
    """

    ocp: OcpDefinition
    layout: AugmentedLayout
    basis_u: BasisSpec
    basis_s: BasisSpec | None = None
    rows: RowScaling | None = None

    def __post_init__(self):
        if self.rows is None:
            self.rows = RowScaling.ones(self.ocp)
        if self.layout.has_dilation and self.basis_s is None:
            raise ValueError("dilated systems need a dilation basis")

    @property
    def n_U(self) -> int:
        return self.basis_u.n_funcs * self.ocp.n_u

    @property
    def n_S(self) -> int:
        return self.basis_s.n_funcs if self.layout.has_dilation else 0

    @property
    def s_fixed(self) -> float:
        # fixed-final-time problems integrate tau in [0,1] at constant rate
        return self.ocp.fixed_final_time - self.ocp.t_i

    def control(self, tau: float, U, S, segment: int | None = None):
        u = eval_control(U, self.basis_u, self.ocp.n_u, tau, segment=segment)
        if self.layout.has_dilation:
            s = float(eval_control(S, self.basis_s, 1, tau, segment=segment)[0])
        else:
            s = self.s_fixed
        return u, s

    def time_of(self, tau: float, xt, S) -> float:
        if self.layout.has_time_state:
            return float(np.asarray(xt)[self.layout.it])
        if not self.layout.has_dilation:
            return self.ocp.t_i + tau * self.s_fixed
        # time-invariant free-final-time: only needed for reporting
        return self.ocp.t_i + float(integrate_signal(S, self.basis_s, 1, tau)[0])

    def final_time(self, S) -> float:
        if not self.layout.has_dilation:
            return self.ocp.fixed_final_time
        return self.ocp.t_i + float(integrate_signal(S, self.basis_s, 1, 1.0)[0])

    # -- pointwise dynamics -------------------------------------------------

    def dynamics(self, xt, u, s: float, t: float | None = None) -> np.ndarray:
        """Right-hand side d(xt)/dtau at one point of the augmented system."""
        if s <= 0.0:
            raise ValueError(f"dilation factor must be positive, got {s}")
        lay = self.layout
        xt = np.asarray(xt, dtype=float)
        x = xt[lay.ix]
        if t is None:
            t = xt[lay.it] if lay.has_time_state else self.ocp.t_i
        out = np.empty(lay.n_aug)
        out[lay.ix] = np.asarray(self.ocp.dynamics(t, x, u), dtype=float) * s
        if lay.has_accumulator:
            out[lay.iy] = penalty_lambda(self.ocp, self.rows, t, x, u) * s
        if lay.has_time_state:
            out[lay.it] = s
        return out

    def jacobians(self, xt, u, s: float, t: float | None = None):
        """(dF/d(xt), dF/du, dF/ds) of :meth:`dynamics` at one point.

        dF/ds is returned even for fixed-final-time layouts (callers simply
        ignore it there).
        """
        if s <= 0.0:
            raise ValueError(f"dilation factor must be positive, got {s}")
        lay = self.layout
        xt = np.asarray(xt, dtype=float)
        x = xt[lay.ix]
        if t is None:
            t = xt[lay.it] if lay.has_time_state else self.ocp.t_i
        ft, fx, fu = self.ocp.f_jac(t, x, u)
        f = np.asarray(self.ocp.dynamics(t, x, u), dtype=float)

        A = np.zeros((lay.n_aug, lay.n_aug))
        dFdu = np.zeros((lay.n_aug, self.ocp.n_u))
        dFds = np.zeros(lay.n_aug)

        A[lay.ix, lay.ix] = s * fx
        dFdu[lay.ix, :] = s * fu
        dFds[lay.ix] = f
        if lay.has_time_state:
            A[lay.ix, lay.it] = s * ft
            dFds[lay.it] = 1.0
        if lay.has_accumulator:
            lam = penalty_lambda(self.ocp, self.rows, t, x, u)
            lt, lx, lu = penalty_lambda_grads(self.ocp, self.rows, t, x, u)
            A[lay.iy, lay.ix] = s * lx
            if lay.has_time_state:
                A[lay.iy, lay.it] = s * lt
            dFdu[lay.iy, :] = s * lu
            dFds[lay.iy] = lam
        return A, dFdu, dFds


def augmented_dynamics(system: AugmentedSystem, xt, ut, t: float | None = None) -> np.ndarray:
    """Spec-level entry point taking the stacked augmented control (u, s)."""
    ut = np.asarray(ut, dtype=float)
    lay = system.layout
    u = ut[lay.iu]
    s = float(ut[lay.i_s]) if lay.has_dilation else system.s_fixed
    return system.dynamics(xt, u, s, t=t)


def augmented_jacobians(system: AugmentedSystem, xt, ut, t: float | None = None):
    """(dF/d(xt), dF/d(ut)) with the dilation column appended when present."""
    ut = np.asarray(ut, dtype=float)
    lay = system.layout
    u = ut[lay.iu]
    s = float(ut[lay.i_s]) if lay.has_dilation else system.s_fixed
    A, dFdu, dFds = system.jacobians(xt, u, s, t=t)
    if lay.has_dilation:
        return A, np.hstack([dFdu, dFds[:, None]])
    return A, dFdu
