"""Continuous-time optimal control problem definition and validation.

An :class:`OcpDefinition` describes

    minimize    L(t_f, x(t_f))
    subject to  dx/dt = f(t, x, u)
                g(t, x, u) <= 0,  h(t, x, u) = 0        (path constraints)
                P(t_i, x_i, t_f, x_f) <= 0,  Q(...) = 0 (boundary conditions)
                u(t) in a convex set, dilation factor in [s_min, s_max]

with a fixed initial time and either a free or a fixed final time. All
callbacks may optionally come with analytic Jacobians; central finite
differences are substituted when they are absent.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .sets import ConvexSetSpec


def finite_difference_jacobian(fun: Callable, point: np.ndarray, step: float = 1e-6) -> np.ndarray:
    """Central-difference Jacobian of a vector-valued callable.

    Entry (i, j) is ``(fun(x + step*e_j)[i] - fun(x - step*e_j)[i]) / (2*step)``.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    point = np.asarray(point, dtype=float)
    f0 = np.atleast_1d(np.asarray(fun(point), dtype=float))
    jac = np.empty((f0.size, point.size))
    for j in range(point.size):
        e = np.zeros_like(point)
        e[j] = step
        fp = np.atleast_1d(np.asarray(fun(point + e), dtype=float))
        fm = np.atleast_1d(np.asarray(fun(point - e), dtype=float))
        jac[:, j] = (fp - fm) / (2.0 * step)
    return jac


def _fd_step(values: np.ndarray) -> float:
    # step scales with the magnitude of the point being probed
    return 1e-6 * (1.0 + float(np.max(np.abs(values), initial=0.0)))


def _fd_txu(fun, t, x, u, n_out):
    """Finite-difference (d/dt, d/dx, d/du) of a callback fun(t, x, u)."""
    p = np.concatenate(([t], x, u))
    step = _fd_step(p)
    jac = finite_difference_jacobian(
        lambda v: fun(v[0], v[1 : 1 + x.size], v[1 + x.size :]), p, step
    )
    if jac.shape[0] != n_out:
        raise ValueError("callback output dimension changed under perturbation")
    return jac[:, 0], jac[:, 1 : 1 + x.size], jac[:, 1 + x.size :]


@dataclass
class OcpDefinition:
    """User-level continuous-time optimal control problem.

    Callback signatures (all returning numpy arrays):
        dynamics(t, x, u) -> (n_x,)
        path_ineq(t, x, u) -> (n_g,);  path_eq(t, x, u) -> (n_h,)
        boundary_ineq(t_i, x_i, t_f, x_f) -> (n_P,); boundary_eq -> (n_Q,)
        terminal_cost(t_f, x_f) -> float

    Optional analytic Jacobians:
        jac_dynamics(t, x, u) -> (df_dt (n_x,), df_dx, df_du)
        jac_path_ineq / jac_path_eq -> (d_dt, d_dx, d_du)
        jac_boundary_ineq / jac_boundary_eq(t_i, x_i, t_f, x_f)
            -> (d_dxi, d_dtf (n,), d_dxf)
        grad_terminal_cost(t_f, x_f) -> (dL_dtf, dL_dxf)

    ``time_varying`` must be declared by the user: set it to False only when
    the dynamics, path constraints, cost, and boundary functions have no
    explicit time dependence, in which case the time state can be dropped
    from the augmented system.
    """

    n_x: int
    n_u: int
    dynamics: Callable
    t_i: float = 0.0
    n_g: int = 0
    n_h: int = 0
    n_P: int = 0
    n_Q: int = 0
    path_ineq: Callable | None = None
    path_eq: Callable | None = None
    boundary_ineq: Callable | None = None
    boundary_eq: Callable | None = None
    terminal_cost: Callable | None = None
    jac_dynamics: Callable | None = None
    jac_path_ineq: Callable | None = None
    jac_path_eq: Callable | None = None
    jac_boundary_ineq: Callable | None = None
    jac_boundary_eq: Callable | None = None
    grad_terminal_cost: Callable | None = None
    fixed_final_time: float | None = None
    time_varying: bool = True
    control_set: ConvexSetSpec | None = None
    dilation_bounds: tuple[float, float] = (0.1, 10.0)

    # -- Jacobian access (analytic with finite-difference fallback) --------

    def f_jac(self, t, x, u):
        if self.jac_dynamics is not None:
            ft, fx, fu = self.jac_dynamics(t, x, u)
            return np.asarray(ft, float), np.asarray(fx, float), np.asarray(fu, float)
        return _fd_txu(self.dynamics, t, np.asarray(x, float), np.asarray(u, float), self.n_x)

    def g_jac(self, t, x, u):
        if self.jac_path_ineq is not None:
            gt, gx, gu = self.jac_path_ineq(t, x, u)
            return np.asarray(gt, float), np.asarray(gx, float), np.asarray(gu, float)
        return _fd_txu(self.path_ineq, t, np.asarray(x, float), np.asarray(u, float), self.n_g)

    def h_jac(self, t, x, u):
        if self.jac_path_eq is not None:
            ht, hx, hu = self.jac_path_eq(t, x, u)
            return np.asarray(ht, float), np.asarray(hx, float), np.asarray(hu, float)
        return _fd_txu(self.path_eq, t, np.asarray(x, float), np.asarray(u, float), self.n_h)

    def _boundary_jac(self, fun, jac, n_out, t_i, x_i, t_f, x_f):
        if jac is not None:
            dxi, dtf, dxf = jac(t_i, x_i, t_f, x_f)
            return np.asarray(dxi, float), np.asarray(dtf, float), np.asarray(dxf, float)
        x_i = np.asarray(x_i, float)
        x_f = np.asarray(x_f, float)
        p = np.concatenate((x_i, [t_f], x_f))
        step = _fd_step(p)
        jm = finite_difference_jacobian(
            lambda v: fun(t_i, v[: self.n_x], v[self.n_x], v[self.n_x + 1 :]), p, step
        )
        if jm.shape[0] != n_out:
            raise ValueError("boundary callback output dimension mismatch")
        return jm[:, : self.n_x], jm[:, self.n_x], jm[:, self.n_x + 1 :]

    def P_jac(self, t_i, x_i, t_f, x_f):
        return self._boundary_jac(self.boundary_ineq, self.jac_boundary_ineq, self.n_P, t_i, x_i, t_f, x_f)

    def Q_jac(self, t_i, x_i, t_f, x_f):
        return self._boundary_jac(self.boundary_eq, self.jac_boundary_eq, self.n_Q, t_i, x_i, t_f, x_f)

    def L_grad(self, t_f, x_f):
        if self.grad_terminal_cost is not None:
            dt, dx = self.grad_terminal_cost(t_f, x_f)
            return float(dt), np.asarray(dx, float)
        x_f = np.asarray(x_f, float)
        p = np.concatenate(([t_f], x_f))
        step = _fd_step(p)
        jm = finite_difference_jacobian(lambda v: np.array([self.terminal_cost(v[0], v[1:])]), p, step)
        return float(jm[0, 0]), jm[0, 1:]


def validate_ocp(ocp: OcpDefinition, probe: tuple | None = None) -> list[str]:
    """Check an OCP definition for structural problems.

    Returns a list of human-readable violations; an empty list means the
    definition is usable. ``probe`` optionally supplies a point
    ``(t, x, u)`` at which callback output dimensions are verified (a zero
    point is used otherwise).
    """
    report: list[str] = []
    if ocp.n_x < 1:
        report.append("state dimension n_x must be >= 1")
    if ocp.n_u < 1:
        report.append("control dimension n_u must be >= 1")

    s_min, s_max = ocp.dilation_bounds
    if ocp.fixed_final_time is None:
        if not s_min > 0:
            report.append(f"dilation lower bound must be strictly positive, got {s_min}")
        if not np.isfinite(s_max) or s_max < s_min:
            report.append("dilation set must be a bounded interval [s_min, s_max]")
    else:
        if ocp.fixed_final_time <= ocp.t_i:
            report.append("fixed final time must exceed the initial time")

    if ocp.control_set is None:
        report.append("control set is required")
    else:
        if ocp.control_set.dim != ocp.n_u:
            report.append(
                f"control set dimension {ocp.control_set.dim} does not match n_u={ocp.n_u}"
            )
        if not ocp.control_set.is_bounded():
            report.append("control set must be bounded (compact)")

    if probe is None:
        probe = (ocp.t_i, np.zeros(ocp.n_x), np.zeros(ocp.n_u))
    t, x, u = probe
    x = np.asarray(x, float)
    u = np.asarray(u, float)

    def _check_dim(name, fun, args, expected):
        if fun is None:
            if expected > 0:
                report.append(f"{name} callback missing but n_{name} = {expected}")
            return
        try:
            val = np.atleast_1d(np.asarray(fun(*args), dtype=float))
        except Exception as exc:  # report, don't raise: this is a lint pass
            report.append(f"{name} callback failed at probe point: {exc}")
            return
        if val.size != expected:
            report.append(f"{name} returned length {val.size}, declared {expected}")

    _check_dim("dynamics", ocp.dynamics, (t, x, u), ocp.n_x)
    _check_dim("g", ocp.path_ineq, (t, x, u), ocp.n_g)
    _check_dim("h", ocp.path_eq, (t, x, u), ocp.n_h)
    t_f = ocp.fixed_final_time if ocp.fixed_final_time is not None else ocp.t_i + 1.0
    _check_dim("P", ocp.boundary_ineq, (ocp.t_i, x, t_f, x), ocp.n_P)
    _check_dim("Q", ocp.boundary_eq, (ocp.t_i, x, t_f, x), ocp.n_Q)
    if ocp.terminal_cost is None:
        report.append("terminal cost callback is required")
    else:
        try:
            float(ocp.terminal_cost(t_f, x))
        except Exception as exc:
            report.append(f"terminal cost failed at probe point: {exc}")
    return report


@dataclass
class ScalingSpec:
    """Affine variable scaling ``z_scaled = (z - offset) / scale``.

    ``scale`` holds the diagonal of D and must be strictly positive.
    """

    scale: np.ndarray
    offset: np.ndarray

    def __post_init__(self):
        self.scale = np.atleast_1d(np.asarray(self.scale, dtype=float))
        self.offset = np.atleast_1d(np.asarray(self.offset, dtype=float))
        if self.scale.shape != self.offset.shape:
            raise ValueError("scale and offset must have matching shapes")
        if np.any(self.scale <= 0):
            raise ValueError("all scale entries must be strictly positive")

    @classmethod
    def identity(cls, dim: int) -> "ScalingSpec":
        return cls(np.ones(dim), np.zeros(dim))

    @classmethod
    def from_bounds(cls, lower, upper) -> "ScalingSpec":
        """Map declared bounds onto the unit interval per component."""
        lower = np.atleast_1d(np.asarray(lower, dtype=float))
        upper = np.atleast_1d(np.asarray(upper, dtype=float))
        return cls(upper - lower, lower)

    @property
    def dim(self) -> int:
        return self.scale.size

    def apply(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        if z.shape[-1] != self.dim:
            raise ValueError(f"expected trailing dimension {self.dim}, got {z.shape}")
        return (z - self.offset) / self.scale

    def invert(self, z_scaled: np.ndarray) -> np.ndarray:
        z_scaled = np.asarray(z_scaled, dtype=float)
        if z_scaled.shape[-1] != self.dim:
            raise ValueError(f"expected trailing dimension {self.dim}, got {z_scaled.shape}")
        return z_scaled * self.scale + self.offset


def apply_scaling(spec: ScalingSpec, z: np.ndarray) -> np.ndarray:
    return spec.apply(z)


def invert_scaling(spec: ScalingSpec, z_scaled: np.ndarray) -> np.ndarray:
    return spec.invert(z_scaled)


@dataclass
class RowScaling:
    """Per-constraint row scalings applied inside the penalty accumulator.

    Constraint row i is used as g_i / g_scale[i] (and likewise for h, P, Q)
    everywhere the solver sees it, so the relaxation tolerance and reported
    violations are in scaled constraint units.
    """

    g: np.ndarray = field(default_factory=lambda: np.ones(0))
    h: np.ndarray = field(default_factory=lambda: np.ones(0))
    P: np.ndarray = field(default_factory=lambda: np.ones(0))
    Q: np.ndarray = field(default_factory=lambda: np.ones(0))

    def __post_init__(self):
        for name in ("g", "h", "P", "Q"):
            arr = np.atleast_1d(np.asarray(getattr(self, name), dtype=float))
            if np.any(arr <= 0):
                raise ValueError("row scales must be strictly positive")
            setattr(self, name, arr)

    @classmethod
    def ones(cls, ocp: OcpDefinition) -> "RowScaling":
        return cls(np.ones(ocp.n_g), np.ones(ocp.n_h), np.ones(ocp.n_P), np.ones(ocp.n_Q))
