"""Polynomial parameterization of the augmented control input.

The control input and dilation factor are expanded in basis functions on
normalized time tau in [0, 1]:

    u(tau) = (Gamma_u(tau) (x) I_{n_u}) U,     s(tau) = Gamma_s(tau) S

Supported bases: zero-order hold (piecewise constant, left-continuous),
first-order hold (piecewise-linear hat functions), and Chebyshev-Gauss-
Lobatto pseudospectral Lagrange polynomials.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def cgl_nodes(n: int) -> np.ndarray:
    """Chebyshev-Gauss-Lobatto nodes on [-1, 1] including the endpoints.

    The nodes are the roots of (1 - eta^2) * dT_{n-1}/deta, i.e.
    eta_k = -cos(pi*k/(n-1)) for k = 0..n-1, sorted ascending.
    """
    if n < 2:
        raise ValueError("CGL basis needs at least two nodes")
    k = np.arange(n)
    eta = -np.cos(np.pi * k / (n - 1))
    # clean up rounding at the symmetric center
    eta[np.abs(eta) < 1e-15] = 0.0
    return eta


@dataclass(frozen=True)
class BasisSpec:
    """A scalar basis Gamma(tau) = [Gamma^1(tau) ... Gamma^{n_funcs}(tau)].

    ``nodes`` are the basis node locations in [0, 1]. For ``zoh`` there is
    one basis function per grid interval (value k active on
    [nodes[k], nodes[k+1]), left-continuous); for ``foh`` one hat per node;
    for ``cgl`` the nodes are the mapped CGL points and the functions are
    the Lagrange cardinal polynomials.
    """

    kind: str
    nodes: np.ndarray

    def __post_init__(self):
        if self.kind not in ("zoh", "foh", "cgl"):
            raise ValueError(f"unknown basis kind {self.kind!r}")
        nodes = np.asarray(self.nodes, dtype=float)
        if nodes.ndim != 1 or nodes.size < 2:
            raise ValueError("basis needs at least two nodes")
        if np.any(np.diff(nodes) <= 0):
            raise ValueError("basis nodes must be strictly increasing")
        if nodes[0] < -1e-12 or nodes[-1] > 1 + 1e-12:
            raise ValueError("basis nodes must lie in [0, 1]")
        object.__setattr__(self, "nodes", nodes)

    @classmethod
    def zoh(cls, nodes) -> "BasisSpec":
        return cls("zoh", np.asarray(nodes, dtype=float))

    @classmethod
    def foh(cls, nodes) -> "BasisSpec":
        return cls("foh", np.asarray(nodes, dtype=float))

    @classmethod
    def cgl(cls, n: int) -> "BasisSpec":
        return cls("cgl", (cgl_nodes(n) + 1.0) / 2.0)

    @classmethod
    def uniform(cls, kind: str, n: int) -> "BasisSpec":
        if kind == "cgl":
            return cls.cgl(n)
        return cls(kind, np.linspace(0.0, 1.0, n))

    @property
    def n_funcs(self) -> int:
        return self.nodes.size - 1 if self.kind == "zoh" else self.nodes.size

    def segment_of(self, tau: float) -> int:
        """Grid interval index k with tau in [nodes[k], nodes[k+1])."""
        k = int(np.searchsorted(self.nodes, tau, side="right") - 1)
        return min(max(k, 0), self.nodes.size - 2)


def eval_basis(spec: BasisSpec, tau: float, segment: int | None = None) -> np.ndarray:
    """Row vector Gamma(tau) of basis function values.

    ``segment`` pins the active grid interval for the piecewise bases,
    overriding the left-continuous convention at interior nodes (used by
    per-interval quadrature to stay on the interval being integrated).
    """
    if tau < -1e-12 or tau > 1.0 + 1e-12:
        raise ValueError(f"tau = {tau} outside [0, 1]")
    tau = min(max(tau, 0.0), 1.0)
    nodes = spec.nodes
    out = np.zeros(spec.n_funcs)
    if spec.kind == "zoh":
        k = spec.segment_of(tau) if segment is None else segment
        if tau >= nodes[-1]:
            k = spec.n_funcs - 1 if segment is None else segment
        out[min(k, spec.n_funcs - 1)] = 1.0
        return out
    if spec.kind == "foh":
        k = spec.segment_of(tau) if segment is None else segment
        width = nodes[k + 1] - nodes[k]
        lam = (tau - nodes[k]) / width
        out[k] = 1.0 - lam
        out[k + 1] = lam
        return out
    # CGL Lagrange cardinal polynomials, evaluated in eta = 2*tau - 1
    eta = 2.0 * tau - 1.0
    eta_k = 2.0 * nodes - 1.0
    for k in range(spec.n_funcs):
        num = 1.0
        for j in range(spec.n_funcs):
            if j != k:
                num *= (eta - eta_k[j]) / (eta_k[k] - eta_k[j])
        out[k] = num
    return out


def eval_basis_deriv(spec: BasisSpec, tau: float, segment: int | None = None) -> np.ndarray:
    """d(Gamma)/d(tau); for the piecewise bases this is the in-segment slope."""
    nodes = spec.nodes
    out = np.zeros(spec.n_funcs)
    if spec.kind == "zoh":
        return out
    if spec.kind == "foh":
        k = spec.segment_of(tau) if segment is None else segment
        width = nodes[k + 1] - nodes[k]
        out[k] = -1.0 / width
        out[k + 1] = 1.0 / width
        return out
    eta = 2.0 * tau - 1.0
    eta_k = 2.0 * nodes - 1.0
    n = spec.n_funcs
    for k in range(n):
        acc = 0.0
        for m in range(n):
            if m == k:
                continue
            term = 1.0 / (eta_k[k] - eta_k[m])
            for j in range(n):
                if j != k and j != m:
                    term *= (eta - eta_k[j]) / (eta_k[k] - eta_k[j])
            acc += term
        out[k] = 2.0 * acc  # chain rule d(eta)/d(tau) = 2
    return out


def eval_control(coeffs: np.ndarray, spec: BasisSpec, n_channels: int, tau: float,
                 segment: int | None = None) -> np.ndarray:
    """Evaluate a vector-valued signal from stacked coefficients.

    ``coeffs`` stacks the per-node vectors: (c_1, ..., c_{n_funcs}) with
    c_k in R^{n_channels}; the result is (Gamma(tau) (x) I) coeffs.
    """
    coeffs = np.asarray(coeffs, dtype=float)
    if coeffs.size != spec.n_funcs * n_channels:
        raise ValueError(
            f"coefficient vector has size {coeffs.size}, expected {spec.n_funcs * n_channels}"
        )
    gam = eval_basis(spec, tau, segment=segment)
    return gam @ coeffs.reshape(spec.n_funcs, n_channels)


def eval_control_deriv(coeffs: np.ndarray, spec: BasisSpec, n_channels: int, tau: float,
                       segment: int | None = None) -> np.ndarray:
    coeffs = np.asarray(coeffs, dtype=float)
    gam = eval_basis_deriv(spec, tau, segment=segment)
    return gam @ coeffs.reshape(spec.n_funcs, n_channels)


def integrate_signal(coeffs: np.ndarray, spec: BasisSpec, n_channels: int, tau: float) -> np.ndarray:
    """Exact integral of the parameterized signal from 0 to tau.

    Used for the time map t(tau) = t_i + integral of the dilation factor.
    Piecewise bases integrate in closed form; CGL uses fine trapezoid
    quadrature (only needed for reporting, never inside the solver loop).
    """
    coeffs = np.asarray(coeffs, dtype=float).reshape(spec.n_funcs, n_channels)
    nodes = spec.nodes
    total = np.zeros(n_channels)
    if spec.kind in ("zoh", "foh"):
        for k in range(nodes.size - 1):
            a, b = nodes[k], min(nodes[k + 1], tau)
            if b <= a:
                break
            if spec.kind == "zoh":
                total += (b - a) * coeffs[k]
            else:
                ga = eval_basis(spec, a, segment=k)
                gb = eval_basis(spec, b, segment=k)
                total += 0.5 * (b - a) * ((ga + gb) @ coeffs)
        return total
    taus = np.linspace(0.0, tau, 257)
    vals = np.array([eval_basis(spec, s) @ coeffs for s in taus])
    return np.trapezoid(vals, taus, axis=0)
