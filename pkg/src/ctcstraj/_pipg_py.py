"""Pure-NumPy fallback for the extrapolated PIPG iteration chunk.

Mirrors the compiled kernel in ``_pipg_native.pyx``: runs a fixed number of
primal-dual projected-gradient iterations with extrapolation on

    minimize 0.5 z'Pz + q'z   subject to  Az = b,  z in D

where D is a product of clamp intervals and Euclidean balls. Returns the
infinity-norm primal and stationarity residuals at the final iterate.
"""

from __future__ import annotations

import numpy as np


def _project(v, lo, hi, ball_start, ball_end, ball_center, ball_radius):
    z = np.clip(v, lo, hi)
    for i in range(ball_start.size):
        s, e = ball_start[i], ball_end[i]
        d = v[s:e] - ball_center[s:e]
        nrm = np.linalg.norm(d)
        if nrm > ball_radius[i]:
            z[s:e] = ball_center[s:e] + d * (ball_radius[i] / nrm)
        else:
            z[s:e] = v[s:e]
    return z


def run_chunk(pdiag, P, q, A, At, b, lo, hi,
              ball_start, ball_end, ball_center, ball_radius,
              z, w, xi, eta, alpha, beta, rho, n_iters):
    """Run ``n_iters`` xPIPG iterations in place; return (r_stat, r_prim)."""
    use_diag = pdiag is not None
    m = b.size

    for _ in range(n_iters):
        g = (pdiag * xi if use_diag else P @ xi) + q
        if m:
            g += At @ eta
        znew = _project(xi - alpha * g, lo, hi, ball_start, ball_end, ball_center, ball_radius)
        if m:
            wnew = eta + beta * (A @ (2.0 * znew - xi) - b)
        else:
            wnew = eta
        xi += rho * (znew - xi)
        eta += rho * (wnew - eta)
        z[:] = znew
        w[:] = wnew

    grad = (pdiag * z if use_diag else P @ z) + q
    if m:
        grad += At @ w
        r_prim = float(np.max(np.abs(A @ z - b)))
    else:
        r_prim = 0.0
    v = z - alpha * grad
    pz = _project(v, lo, hi, ball_start, ball_end, ball_center, ball_radius)
    r_stat = float(np.max(np.abs(z - pz))) / alpha
    return r_stat, r_prim
