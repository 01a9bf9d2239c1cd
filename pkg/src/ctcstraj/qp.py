"""First-order solver for the strongly convex QP subproblems.

The algorithm is a primal-dual proportional-integral projected-gradient
iteration with extrapolation: step sizes come from power-iteration estimates
of ||P||_2 and ||A||_2, the primal update projects onto a product of clamp
intervals and balls, and the dual update integrates the equality residual.
A compiled kernel is used when available; a NumPy twin provides the
fallback (select explicitly with the CTCSTRAJ_NATIVE environment variable:
"0" forces the fallback, "1" requires the extension).

Residual conventions: the stationarity residual is

    || (z - proj_D(z - a*(Pz + q + A'y))) / a ||_inf

which equals ||Pz + q + A'y + n||_inf for the normal-cone witness n
produced by the projection step; the primal residual is ||Az - b||_inf.
Stopping uses eps_abs + eps_rel * (magnitude of the terms involved).
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .sets import BlockSet, ConvexSetSpec, project_set

__all__ = [
    "QpProblem",
    "QpSettings",
    "QpSolution",
    "solve_qp",
    "qp_kkt_residuals",
    "project_set",
    "NATIVE_BACKEND",
]

_env = os.environ.get("CTCSTRAJ_NATIVE", "").strip()
if _env == "0":
    _native = None
else:
    try:
        from . import _pipg_native as _native
    except ImportError:  # pragma: no cover - depends on build environment
        _native = None
        if _env == "1":
            raise
from . import _pipg_py as _fallback

NATIVE_BACKEND = _native is not None


@dataclass
class QpProblem:
    """min 0.5 z'Pz + q'z  s.t.  Az = b,  z in blocks (Cartesian product).

    Exactly one of ``pdiag`` (diagonal cost) or ``P`` (dense PSD) is given.
    The quadratic must be strictly positive on the decision (proximal)
    block; slack variables introduced by penalty reformulations may carry a
    zero diagonal since their linear costs pin them at the optimum.
    """

    q: np.ndarray
    blocks: BlockSet
    A: np.ndarray | None = None
    b: np.ndarray | None = None
    pdiag: np.ndarray | None = None
    P: np.ndarray | None = None

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float)
        n = self.q.size
        if (self.pdiag is None) == (self.P is None):
            raise ValueError("exactly one of pdiag or P must be provided")
        if self.pdiag is not None:
            self.pdiag = np.ascontiguousarray(self.pdiag, dtype=float)
            if self.pdiag.shape != (n,):
                raise ValueError("pdiag shape mismatch")
            if np.any(self.pdiag < 0):
                raise ValueError("cost diagonal must be nonnegative")
        else:
            self.P = np.ascontiguousarray(self.P, dtype=float)
            if self.P.shape != (n, n):
                raise ValueError("P shape mismatch")
        if self.A is None:
            self.A = np.zeros((0, n))
            self.b = np.zeros(0)
        self.A = np.ascontiguousarray(self.A, dtype=float)
        self.b = np.ascontiguousarray(self.b, dtype=float)
        if self.A.shape != (self.b.size, n):
            raise ValueError("equality rows shape mismatch")
        if self.blocks.dim != n:
            raise ValueError(f"set blocks cover {self.blocks.dim} of {n} variables")

    @property
    def n(self) -> int:
        return self.q.size

    @property
    def m(self) -> int:
        return self.b.size

    def pmatvec(self, v: np.ndarray) -> np.ndarray:
        return self.pdiag * v if self.pdiag is not None else self.P @ v

    def objective(self, z: np.ndarray) -> float:
        return float(0.5 * z @ self.pmatvec(z) + self.q @ z)


@dataclass
class QpSettings:
    eps_abs: float = 1e-8  # stationarity, gradient units
    eps_prim_abs: float = 1e-8  # equality residual, row units
    eps_rel: float = 1e-9
    max_iters: int = 20000
    check_every: int = 250
    omega: float | None = None  # dual/primal step-size ratio; None = auto
    extrapolation: float = 1.6
    adapt_every: int = 2500
    power_iters: int = 60


@dataclass
class QpSolution:
    z: np.ndarray
    y: np.ndarray
    stat_res: float
    primal_res: float
    set_res: float
    iterations: int
    status: str
    objective: float


def _spectral_norm(mat: np.ndarray, iters: int) -> float:
    if mat.size == 0:
        return 0.0
    v = np.ones(mat.shape[1]) / np.sqrt(mat.shape[1])
    sq = 0.0
    for _ in range(iters):
        w = mat @ v
        v = mat.T @ w
        sq = float(np.linalg.norm(v))
        if sq == 0.0:
            return 0.0
        v /= sq
    return float(np.sqrt(sq)) * 1.01  # small safety margin on the estimate


def _lambda_max(problem: QpProblem, iters: int) -> float:
    if problem.pdiag is not None:
        return float(np.max(problem.pdiag, initial=0.0))
    v = np.ones(problem.n) / np.sqrt(problem.n)
    lam = 0.0
    for _ in range(iters):
        w = problem.P @ v
        lam = float(np.linalg.norm(w))
        if lam == 0.0:
            return 0.0
        v = w / lam
    return lam * 1.01


def _pack_sets(blocks: BlockSet):
    lo, hi = blocks.lower_upper()
    balls = blocks.ball_blocks()
    bs = np.array([s for s, _, _, _ in balls], dtype=np.int64)
    be = np.array([e for _, e, _, _ in balls], dtype=np.int64)
    bc = np.zeros(blocks.dim)
    br = np.array([r for _, _, _, r in balls], dtype=float)
    for (s, e, c, _r) in balls:
        bc[s:e] = c
    return (np.ascontiguousarray(lo), np.ascontiguousarray(hi), bs, be,
            np.ascontiguousarray(bc), br)


def _step_sizes(lam: float, sigma: float, omega: float):
    alpha = 2.0 / (lam + np.sqrt(lam**2 + 4.0 * omega * sigma**2))
    beta = omega * alpha
    return alpha, beta


def solve_qp(problem: QpProblem, settings: QpSettings | None = None,
             warm_primal: np.ndarray | None = None,
             warm_dual: np.ndarray | None = None) -> QpSolution:
    """Solve the QP to the settings tolerances or hit the iteration cap.

    Equality rows are equilibrated to unit norm internally (duals are
    rescaled back on return); residuals are reported for the original data.
    """
    settings = settings or QpSettings()
    n, m = problem.n, problem.m

    if m:
        row_norms = np.linalg.norm(problem.A, axis=1)
        # clamp so near-degenerate rows are not amplified into garbage duals
        floor = max(1e-3 * float(np.max(row_norms, initial=0.0)), 1e-12)
        row_norms = np.maximum(row_norms, floor)
        A = np.ascontiguousarray(problem.A / row_norms[:, None])
        b = np.ascontiguousarray(problem.b / row_norms)
    else:
        row_norms = np.ones(0)
        A, b = problem.A, problem.b

    lam = max(_lambda_max(problem, settings.power_iters), 1e-12)
    sigma = _spectral_norm(A, settings.power_iters) if m else 0.0
    if settings.omega is not None:
        omega = settings.omega
    elif m:
        # duals scale with the largest gradient entries (penalty weights)
        q_inf = float(np.max(np.abs(problem.q), initial=0.0))
        omega = max((lam / max(sigma, 1e-12)) ** 2, (q_inf / max(sigma, 1e-12)) ** 2, 1e-12)
    else:
        omega = 1.0

    alpha, beta = _step_sizes(lam, sigma, omega)

    lo, hi, bs, be, bc, br = _pack_sets(problem.blocks)
    z = problem.blocks.project(warm_primal.copy() if warm_primal is not None else np.zeros(n))
    w = warm_dual * row_norms if warm_dual is not None else np.zeros(m)
    xi = z.copy()
    eta = w.copy()
    At = np.ascontiguousarray(A.T)
    kernel = _native.run_chunk if _native is not None else _fallback.run_chunk

    q_norm = float(np.max(np.abs(problem.q), initial=0.0))
    b_norm = float(np.max(np.abs(b), initial=0.0))

    done = 0
    status = "max_iters"
    r_stat = r_prim = np.inf
    best_score = np.inf
    best_z, best_w = z.copy(), w.copy()
    while done < settings.max_iters:
        chunk = min(settings.check_every, settings.max_iters - done)
        r_stat, r_prim = kernel(
            problem.pdiag, problem.P, problem.q, A, At, b,
            lo, hi, bs, be, bc, br, z, w, xi, eta,
            alpha, beta, settings.extrapolation, chunk,
        )
        done += chunk
        if not (np.isfinite(r_stat) and np.isfinite(r_prim) and np.all(np.isfinite(z))):
            # diverged: back off to the best snapshot with smaller steps
            z[:], w[:] = best_z, best_w
            xi[:] = z
            eta[:] = w
            alpha *= 0.25
            beta *= 0.25
            continue
        smag = max(q_norm, float(np.max(np.abs(problem.pmatvec(z)), initial=0.0)))
        if m:
            smag = max(smag, float(np.max(np.abs(At @ w), initial=0.0)))
        pmag = max(b_norm, float(np.max(np.abs(A @ z), initial=0.0)) if m else 0.0)
        tol_stat = settings.eps_abs + settings.eps_rel * smag
        tol_prim = settings.eps_prim_abs + settings.eps_rel * pmag
        if r_stat <= tol_stat and r_prim <= tol_prim:
            status = "converged"
            break
        score = max(r_stat / max(tol_stat, 1e-300), r_prim / max(tol_prim, 1e-300))
        if score < best_score:
            best_score = score
            best_z, best_w = z.copy(), w.copy()
        if m and settings.adapt_every and done % settings.adapt_every == 0:
            # rebalance primal vs dual progress by shifting the step-size
            # ratio; restart from the best snapshot with fresh extrapolation
            # anchors so a diverged dual state cannot poison the new run
            ratio = (r_prim / max(tol_prim, 1e-300)) / max(r_stat / max(tol_stat, 1e-300), 1e-12)
            factor = float(np.clip(ratio, 1.0 / 16.0, 16.0))
            if factor > 1.5 or factor < 1.0 / 1.5:
                omega *= factor
                alpha, beta = _step_sizes(lam, sigma, omega)
                z[:], w[:] = best_z, best_w
                xi[:] = z
                eta[:] = w

    y = w / row_norms if m else w
    if status != "converged":
        # first-order stall (degenerate corners): finish with an active-set polish
        polished = _polish_active_set(problem, z, settings)
        if polished is not None:
            zp, yp = polished
            rep_p = qp_kkt_residuals(problem, zp, yp)
            rep_i = qp_kkt_residuals(problem, z, y)
            if max(rep_p["stationarity"], rep_p["equality"]) <= max(rep_i["stationarity"],
                                                                    rep_i["equality"]):
                z, y = zp, yp
                smag = max(q_norm, float(np.max(np.abs(problem.pmatvec(z)), initial=0.0)))
                if m:
                    smag = max(smag, float(np.max(np.abs(problem.A.T @ y), initial=0.0)))
                pmag = max(float(np.max(np.abs(problem.b), initial=0.0)),
                           float(np.max(np.abs(problem.A @ z), initial=0.0)) if m else 0.0)
                if (rep_p["stationarity"] <= settings.eps_abs + settings.eps_rel * smag
                        and rep_p["equality"] <= settings.eps_prim_abs + settings.eps_rel * pmag):
                    status = "converged"
    rep = qp_kkt_residuals(problem, z, y)
    return QpSolution(
        z=z, y=y,
        stat_res=rep["stationarity"], primal_res=rep["equality"], set_res=rep["set_distance"],
        iterations=done, status=status, objective=problem.objective(z),
    )


def _polish_active_set(problem: QpProblem, z0: np.ndarray, settings: QpSettings):
    """Active-set polish for clamp-bounded QPs seeded by a near-solution.

    Solves reduced KKT systems with the bound-active variables pinned,
    exchanging actives until primal bounds and multiplier signs are
    consistent. Invoked only when the first-order loop stalls (typically at
    degenerate corners of the slack reformulation); pure dense algebra,
    deterministic. Returns (z, y) or None if it cannot make progress.
    """
    if problem.blocks.ball_blocks():
        return None
    n, m = problem.n, problem.m
    lo, hi = problem.blocks.lower_upper()
    if problem.pdiag is not None:
        P = np.diag(problem.pdiag)
        ridge = max(float(np.max(problem.pdiag)), 1.0) * 1e-8
    else:
        P = problem.P.copy()
        ridge = max(float(np.max(np.abs(problem.P))), 1.0) * 1e-8
    # the ridge keeps the reduced KKT well-posed along free slack pairs
    P = P + ridge * np.eye(n)
    A, b, q = problem.A, problem.b, problem.q

    z = np.clip(z0, lo, hi)
    tol = 1e-9 * (1.0 + float(np.max(np.abs(z))))
    at_lo = z - lo <= tol
    at_hi = hi - z <= tol

    y = np.zeros(m)
    seen: set = set()
    cycling = False
    for _ in range(60 + 2 * n):
        active = at_lo | at_hi
        key = (at_lo.tobytes(), at_hi.tobytes())
        cycling = key in seen
        seen.add(key)
        free = ~active
        zb = np.where(at_hi, hi, np.where(at_lo, lo, 0.0))
        nf = int(np.sum(free))
        K = np.zeros((nf + m, nf + m))
        K[:nf, :nf] = P[np.ix_(free, free)]
        if m:
            K[:nf, nf:] = A[:, free].T
            K[nf:, :nf] = A[:, free]
        rhs = np.concatenate([
            -q[free] - P[np.ix_(free, active)] @ zb[active],
            b - (A[:, active] @ zb[active] if m else np.zeros(0)),
        ])
        if not (np.all(np.isfinite(rhs)) and np.all(np.isfinite(K))):
            return None
        try:
            sol = np.linalg.solve(K, rhs)
            if not np.all(np.isfinite(sol)) or \
                    float(np.linalg.norm(K @ sol - rhs)) > 1e-6 * (1 + float(np.linalg.norm(rhs))):
                sol, *_ = np.linalg.lstsq(K, rhs, rcond=None)
        except np.linalg.LinAlgError:
            try:
                sol, *_ = np.linalg.lstsq(K, rhs, rcond=None)
            except np.linalg.LinAlgError:
                return None
        if not np.all(np.isfinite(sol)):
            return None
        z = zb.copy()
        z[free] = sol[:nf]
        y = sol[nf:]
        grad = P @ z + q + (A.T @ y if m else 0.0)

        viol_lo = np.where(free, lo - z, 0.0)
        viol_hi = np.where(free, z - hi, 0.0)
        if max(viol_lo.max(initial=0.0), viol_hi.max(initial=0.0)) > tol:
            # pin one violator at a time (Bland's rule under cycling)
            cand_lo = viol_lo > tol
            cand_hi = viol_hi > tol
            if cycling:
                idx = int(np.argmax(cand_lo | cand_hi))
            else:
                idx = int(np.argmax(np.maximum(viol_lo, viol_hi)))
            if cand_lo[idx] or viol_lo[idx] >= viol_hi[idx]:
                at_lo[idx] = True
            else:
                at_hi[idx] = True
            continue
        # multiplier sign check: mu = -grad on actives; mu >= 0 at hi, <= 0 at lo
        mu = -grad
        bad_hi = at_hi & (mu < -1e-9) & np.isfinite(hi)
        bad_lo = at_lo & (mu > 1e-9) & np.isfinite(lo)
        strict = hi - lo > tol  # never release pinned variables
        bad = (bad_hi | bad_lo) & strict
        if not np.any(bad):
            return np.clip(z, lo, hi), y
        worst = int(np.argmax(bad)) if cycling else int(np.argmax(np.abs(mu) * bad))
        at_lo[worst] = False
        at_hi[worst] = False
    return None


def qp_kkt_residuals(problem: QpProblem, primal: np.ndarray, dual: np.ndarray) -> dict:
    """KKT residual report recomputed from the given primal/dual vectors.

    The normal-cone witness comes from one projection step with step size
    1/||P||: n = (v - proj(v))/a for v = z - a*(Pz + q + A'y).
    """
    z = np.asarray(primal, dtype=float)
    y = np.asarray(dual, dtype=float)
    grad = problem.pmatvec(z) + problem.q
    if problem.m:
        grad = grad + problem.A.T @ y
        equality = float(np.max(np.abs(problem.A @ z - problem.b)))
    else:
        equality = 0.0
    a = 1.0 / max(_lambda_max(problem, 30), 1.0)
    stat = float(np.max(np.abs(z - problem.blocks.project(z - a * grad)))) / a
    set_dist = float(np.max(np.abs(z - problem.blocks.project(z)), initial=0.0))
    return {"stationarity": stat, "equality": equality, "set_distance": set_dist}
