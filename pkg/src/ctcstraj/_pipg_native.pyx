# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled extrapolated-PIPG iteration chunk (hot kernel).

Same contract as ``_pipg_py.run_chunk``; see that module for the algorithm.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport INFINITY, fabs, sqrt

cnp.import_array()


cdef inline void _matvec(double[:, ::1] M, double[::1] v, double[::1] out) noexcept nogil:
    cdef Py_ssize_t i, j, m = M.shape[0], n = M.shape[1]
    cdef double acc
    for i in range(m):
        acc = 0.0
        for j in range(n):
            acc += M[i, j] * v[j]
        out[i] = acc


cdef inline void _project(double[::1] v, double[::1] lo, double[::1] hi,
                          long[::1] bstart, long[::1] bend,
                          double[::1] bcenter, double[::1] bradius,
                          double[::1] out) noexcept nogil:
    cdef Py_ssize_t j, i, s, e, n = v.shape[0]
    cdef double val, nrm, scalefac
    for j in range(n):
        val = v[j]
        if val < lo[j]:
            val = lo[j]
        elif val > hi[j]:
            val = hi[j]
        out[j] = val
    for i in range(bstart.shape[0]):
        s = bstart[i]
        e = bend[i]
        nrm = 0.0
        for j in range(s, e):
            nrm += (v[j] - bcenter[j]) * (v[j] - bcenter[j])
        nrm = sqrt(nrm)
        if nrm > bradius[i]:
            scalefac = bradius[i] / nrm
            for j in range(s, e):
                out[j] = bcenter[j] + (v[j] - bcenter[j]) * scalefac
        else:
            for j in range(s, e):
                out[j] = v[j]


def run_chunk(pdiag, P, double[::1] q, A, At, double[::1] b,
              double[::1] lo, double[::1] hi,
              long[::1] ball_start, long[::1] ball_end,
              double[::1] ball_center, double[::1] ball_radius,
              double[::1] z, double[::1] w, double[::1] xi, double[::1] eta,
              double alpha, double beta, double rho, int n_iters):
    cdef Py_ssize_t n = q.shape[0]
    cdef Py_ssize_t m = b.shape[0]
    cdef bint use_diag = pdiag is not None
    cdef double[::1] pd
    cdef double[:, ::1] Pm
    cdef double[:, ::1] Am
    cdef double[:, ::1] Atm
    if use_diag:
        pd = pdiag
        Pm = np.empty((0, 0))
    else:
        Pm = P
        pd = np.empty(0)
    if m:
        Am = A
        Atm = At
    else:
        Am = np.empty((0, n))
        Atm = np.empty((n, 0))

    buf = np.empty((5, max(n, 1)))
    cdef double[::1] g = buf[0]
    cdef double[::1] tmp = buf[1]
    cdef double[::1] znew = buf[2]
    cdef double[::1] rowbuf = np.empty(max(m, 1))
    cdef double[::1] atw = buf[3]
    cdef double[::1] v = buf[4]

    cdef Py_ssize_t it, j, i
    cdef double acc, r_prim, r_stat

    with nogil:
        for it in range(n_iters):
            # g = P xi + q + A' eta
            if use_diag:
                for j in range(n):
                    g[j] = pd[j] * xi[j] + q[j]
            else:
                _matvec(Pm, xi, g)
                for j in range(n):
                    g[j] += q[j]
            if m:
                _matvec(Atm, eta, atw)
                for j in range(n):
                    g[j] += atw[j]
            for j in range(n):
                v[j] = xi[j] - alpha * g[j]
            _project(v, lo, hi, ball_start, ball_end, ball_center, ball_radius, znew)
            # w = eta + beta * (A (2 znew - xi) - b)
            if m:
                for j in range(n):
                    tmp[j] = 2.0 * znew[j] - xi[j]
                _matvec(Am, tmp, rowbuf)
                for i in range(m):
                    w[i] = eta[i] + beta * (rowbuf[i] - b[i])
            # extrapolate
            for j in range(n):
                xi[j] += rho * (znew[j] - xi[j])
                z[j] = znew[j]
            for i in range(m):
                eta[i] += rho * (w[i] - eta[i])

        # residuals at the final iterate
        if use_diag:
            for j in range(n):
                g[j] = pd[j] * z[j] + q[j]
        else:
            _matvec(Pm, z, g)
            for j in range(n):
                g[j] += q[j]
        r_prim = 0.0
        if m:
            _matvec(Atm, w, atw)
            for j in range(n):
                g[j] += atw[j]
            _matvec(Am, z, rowbuf)
            for i in range(m):
                acc = fabs(rowbuf[i] - b[i])
                if acc > r_prim:
                    r_prim = acc
        for j in range(n):
            v[j] = z[j] - alpha * g[j]
        _project(v, lo, hi, ball_start, ball_end, ball_center, ball_radius, znew)
        r_stat = 0.0
        for j in range(n):
            acc = fabs(z[j] - znew[j])
            if acc > r_stat:
                r_stat = acc
        r_stat /= alpha

    return r_stat, r_prim
