# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled O(N^2) kernels.

Every pairwise sum runs j = 0..N-1 in ascending order for a fixed target i.
Parallelism (OpenMP) is over i only, so results do not depend on the thread
count.  The numpy fallback in ``_pykernels`` mirrors the operation order.
"""

from cython.parallel cimport prange
from libc.math cimport sqrt, pow, fabs
from libc.stdlib cimport malloc, free

import numpy as np

DEF MAXD = 4

# kernel family codes, shared with flocklab.kernels
DEF FAM_CONSTANT = 0
DEF FAM_POWERLAW = 1
DEF FAM_BUMP = 2


cdef inline double _phi(int fam, double par, double r) noexcept nogil:
    cdef double s
    if fam == FAM_CONSTANT:
        return par
    elif fam == FAM_POWERLAW:
        s = 1.0 + r
        if par == 0.5:
            return 1.0 / sqrt(s)
        elif par == 1.0:
            return 1.0 / s
        elif par == 2.0:
            return 1.0 / (s * s)
        return pow(s, -par)
    else:
        if r >= par:
            return 0.0
        return 1.0 - r / par


cdef inline double _dphi(int fam, double par, double r) noexcept nogil:
    cdef double s
    if fam == FAM_CONSTANT:
        return 0.0
    elif fam == FAM_POWERLAW:
        s = 1.0 + r
        if par == 0.5:
            return -0.5 / (s * sqrt(s))
        elif par == 1.0:
            return -1.0 / (s * s)
        elif par == 2.0:
            return -2.0 / (s * s * s)
        return -par * pow(s, -par - 1.0)
    else:
        if r >= par:
            return 0.0
        return -1.0 / par


cdef inline double _gpow(double s, double e) noexcept nogil:
    # |xi|^(p-2) with G_p(0) = 0 for p > 2
    if e == 0.0:
        return 1.0
    if s == 0.0:
        return 0.0
    if e == 1.0:
        return s
    if e == 2.0:
        return s * s
    if e == 0.5:
        return sqrt(s)
    return pow(s, e)


cdef void _coef_span(Py_ssize_t i, Py_ssize_t j0, const double[:, ::1] etaT,
                     const double[:, ::1] velT, int fam, double par, double e,
                     double* out, double* s2) noexcept nogil:
    # out[k] = phi(|eta_i - eta_j|) |v_j - v_i|^(p-2) for j = j0 + k; the
    # loops are kept branch-free so the compiler can vectorize them
    cdef Py_ssize_t d = etaT.shape[0]
    cdef Py_ssize_t m = etaT.shape[1] - j0
    cdef Py_ssize_t a, k
    cdef double xi, ui, t, u, s
    cdef const double* ex
    cdef const double* vx
    for k in range(m):
        out[k] = 0.0
        s2[k] = 0.0
    for a in range(d):
        xi = etaT[a, i]
        ui = velT[a, i]
        ex = &etaT[a, j0]
        vx = &velT[a, j0]
        for k in range(m):
            t = xi - ex[k]
            u = vx[k] - ui
            out[k] = out[k] + t * t
            s2[k] = s2[k] + u * u
    if fam == FAM_CONSTANT:
        for k in range(m):
            out[k] = par
    elif fam == FAM_POWERLAW:
        if par == 0.5:
            for k in range(m):
                out[k] = 1.0 / sqrt(1.0 + sqrt(out[k]))
        elif par == 1.0:
            for k in range(m):
                out[k] = 1.0 / (1.0 + sqrt(out[k]))
        elif par == 2.0:
            for k in range(m):
                s = 1.0 + sqrt(out[k])
                out[k] = 1.0 / (s * s)
        else:
            for k in range(m):
                out[k] = pow(1.0 + sqrt(out[k]), -par)
    else:
        for k in range(m):
            out[k] = _phi(fam, par, sqrt(out[k]))
    if e == 0.0:
        return
    if e == 1.0:
        for k in range(m):
            out[k] = out[k] * sqrt(s2[k])
    elif e == 2.0:
        for k in range(m):
            s = sqrt(s2[k])
            out[k] = out[k] * (s * s)
    elif e == 0.5:
        for k in range(m):
            out[k] = out[k] * sqrt(sqrt(s2[k]))
    else:
        for k in range(m):
            out[k] = out[k] * _gpow(sqrt(s2[k]), e)


cdef void _coef_upper(Py_ssize_t i, const double[:, ::1] etaT,
                      const double[:, ::1] velT, int fam, double par, double e,
                      double[:, ::1] coef) noexcept nogil:
    cdef Py_ssize_t n = etaT.shape[1]
    cdef Py_ssize_t k
    cdef double* s2 = <double*> malloc(n * sizeof(double))
    _coef_span(i, i, etaT, velT, fam, par, e, &coef[i, i], s2)
    free(s2)


DEF TILE = 32


cdef void _mirror_tile_row(Py_ssize_t ib, double[:, ::1] coef) noexcept nogil:
    # fill the strict lower triangle of row block ib from the upper triangle,
    # tile by tile so both reads and writes stay in cache
    cdef Py_ssize_t n = coef.shape[0]
    cdef Py_ssize_t i0 = ib * TILE
    cdef Py_ssize_t i1 = min(i0 + TILE, n)
    cdef Py_ssize_t j0, j1, i, j
    j0 = 0
    while j0 < i1:
        j1 = min(j0 + TILE, n)
        for i in range(i0, i1):
            for j in range(j0, min(j1, i)):
                coef[i, j] = coef[j, i]
        j0 = j1


cdef inline void _accum1(Py_ssize_t n, const double* v0, double vi0,
                         const double* w, const double* row, double* ai,
                         double* di) noexcept nogil:
    cdef Py_ssize_t j
    cdef double a0 = 0.0, dd = 0.0, u0, c
    for j in range(n):
        u0 = v0[j] - vi0
        c = w[j] * row[j]
        a0 = a0 + c * u0
        dd = dd + c * (u0 * u0)
    ai[0] = a0
    di[0] = dd


cdef inline void _accum2(Py_ssize_t n, const double* v0, const double* v1,
                         double vi0, double vi1, const double* w,
                         const double* row, double* ai, double* di) noexcept nogil:
    cdef Py_ssize_t j
    cdef double a0 = 0.0, a1 = 0.0, dd = 0.0, u0, u1, c
    for j in range(n):
        u0 = v0[j] - vi0
        u1 = v1[j] - vi1
        c = w[j] * row[j]
        a0 = a0 + c * u0
        a1 = a1 + c * u1
        dd = dd + c * (u0 * u0 + u1 * u1)
    ai[0] = a0
    ai[1] = a1
    di[0] = dd


cdef inline void _accum3(Py_ssize_t n, const double* v0, const double* v1,
                         const double* v2, double vi0, double vi1, double vi2,
                         const double* w, const double* row, double* ai,
                         double* di) noexcept nogil:
    cdef Py_ssize_t j
    cdef double a0 = 0.0, a1 = 0.0, a2 = 0.0, dd = 0.0, u0, u1, u2, c
    for j in range(n):
        u0 = v0[j] - vi0
        u1 = v1[j] - vi1
        u2 = v2[j] - vi2
        c = w[j] * row[j]
        a0 = a0 + c * u0
        a1 = a1 + c * u1
        a2 = a2 + c * u2
        dd = dd + c * (u0 * u0 + u1 * u1 + u2 * u2)
    ai[0] = a0
    ai[1] = a1
    ai[2] = a2
    di[0] = dd


cdef void _accel_row(Py_ssize_t i, const double[:, ::1] etaT,
                     const double[:, ::1] velT, const double[::1] w, int fam,
                     double par, double e, double kappa, double[:, ::1] coef,
                     bint cached, double[:, ::1] acc, double[::1] diss) noexcept nogil:
    cdef Py_ssize_t d = etaT.shape[0]
    cdef Py_ssize_t n = etaT.shape[1]
    cdef Py_ssize_t j, a
    cdef double s2, c, di
    cdef double dv[MAXD]
    cdef double ai[MAXD]
    cdef double vi[MAXD]
    cdef double* row
    cdef double* scratch = NULL
    if cached:
        row = &coef[i, 0]
    else:
        row = <double*> malloc(2 * n * sizeof(double))
        scratch = row + n
        _coef_span(i, 0, etaT, velT, fam, par, e, row, scratch)
    for a in range(d):
        ai[a] = 0.0
        vi[a] = velT[a, i]
    di = 0.0
    # scalar accumulators for the common dimensions keep the sums in registers
    if d == 1:
        _accum1(n, &velT[0, 0], vi[0], &w[0], row, ai, &di)
    elif d == 2:
        _accum2(n, &velT[0, 0], &velT[1, 0], vi[0], vi[1], &w[0], row, ai, &di)
    elif d == 3:
        _accum3(n, &velT[0, 0], &velT[1, 0], &velT[2, 0], vi[0], vi[1], vi[2],
                &w[0], row, ai, &di)
    else:
        for j in range(n):
            s2 = 0.0
            for a in range(d):
                dv[a] = velT[a, j] - vi[a]
                s2 = s2 + dv[a] * dv[a]
            c = w[j] * row[j]
            for a in range(d):
                ai[a] = ai[a] + c * dv[a]
            di = di + c * s2
    for a in range(d):
        acc[i, a] = kappa * ai[a]
    diss[i] = di
    if not cached:
        free(row)


# beyond this many atoms the N x N coefficient cache is skipped
DEF CACHE_MAX = 4096


def alignment_forces(const double[:, ::1] eta, const double[:, ::1] vel,
                     const double[::1] w, int fam, double par, double p,
                     double kappa, double[:, ::1] acc, int nthreads=1):
    """Fill ``acc`` with the alignment accelerations; return the dissipation rate.

    The rate is (kappa/2) sum_i sum_j w_i w_j phi_ij |v_j - v_i|^p.
    """
    cdef Py_ssize_t n = eta.shape[0]
    cdef Py_ssize_t i
    cdef double tot
    cdef double e = p - 2.0
    cdef bint cached = n <= CACHE_MAX
    cdef double[::1] diss = np.empty(n)
    cdef double[:, ::1] etaT = np.ascontiguousarray(np.asarray(eta).T)
    cdef double[:, ::1] velT = np.ascontiguousarray(np.asarray(vel).T)
    cdef double[:, ::1] coef = np.empty((n if cached else 1, n if cached else 1))
    if eta.shape[1] > MAXD:
        raise ValueError("compiled kernels support dim <= 4")
    if n == 0:
        return 0.0
    if cached:
        for i in prange(n, nogil=True, schedule="dynamic", chunksize=8, num_threads=nthreads):
            _coef_upper(i, etaT, velT, fam, par, e, coef)
        for i in prange((n + TILE - 1) // TILE, nogil=True, schedule="dynamic",
                        num_threads=nthreads):
            _mirror_tile_row(i, coef)
    for i in prange(n, nogil=True, schedule="static", num_threads=nthreads):
        _accel_row(i, etaT, velT, w, fam, par, e, kappa, coef, cached, acc, diss)
    tot = 0.0
    for i in range(n):
        tot = tot + w[i] * diss[i]
    return 0.5 * kappa * tot


cdef void _jac_row(Py_ssize_t i, const double[:, ::1] eta,
                   const double[:, ::1] vel, const double[:, :, ::1] jeta,
                   const double[:, :, ::1] jvel, const double[::1] w, int fam,
                   double par, double e, double kappa,
                   double[:, :, ::1] out) noexcept nogil:
    cdef Py_ssize_t n = eta.shape[0]
    cdef Py_ssize_t d = eta.shape[1]
    cdef Py_ssize_t j, a, b, c
    cdef double r2, s2, r, s, phi, dphi, g, h, acc
    cdef double z[MAXD]
    cdef double dv[MAXD]
    cdef double gradphi[MAXD]
    cdef double jtg[MAXD]
    cdef double src[MAXD * MAXD]
    cdef double damp[MAXD * MAXD]
    for a in range(d * d):
        src[a] = 0.0
        damp[a] = 0.0
    for j in range(n):
        r2 = 0.0
        s2 = 0.0
        for a in range(d):
            z[a] = eta[i, a] - eta[j, a]
            r2 = r2 + z[a] * z[a]
            dv[a] = vel[j, a] - vel[i, a]
            s2 = s2 + dv[a] * dv[a]
        r = sqrt(r2)
        s = sqrt(s2)
        phi = _phi(fam, par, r)
        g = _gpow(s, e)
        # grad phi(z) = phi'(|z|) z/|z|, zero at z = 0
        if r > 0.0:
            dphi = _dphi(fam, par, r) / r
        else:
            dphi = 0.0
        for a in range(d):
            gradphi[a] = dphi * z[a]
        for b in range(d):
            acc = 0.0
            for c in range(d):
                acc = acc + jeta[i, c, b] * gradphi[c]
            jtg[b] = acc
        for a in range(d):
            for b in range(d):
                src[a * d + b] = src[a * d + b] + w[j] * (g * dv[a]) * jtg[b]
        # grad G_p(xi) = (p-2)|xi|^(p-4) xi xi^T + |xi|^(p-2) I
        if e != 0.0 and s > 0.0:
            h = e * g / s2
            for a in range(d):
                for b in range(d):
                    damp[a * d + b] = damp[a * d + b] + w[j] * phi * (h * dv[a] * dv[b])
        for a in range(d):
            damp[a * d + a] = damp[a * d + a] + w[j] * phi * g
    for a in range(d):
        for b in range(d):
            acc = 0.0
            for c in range(d):
                acc = acc + damp[a * d + c] * jvel[i, c, b]
            out[i, a, b] = kappa * (src[a * d + b] - acc)


def jacobian_forces(const double[:, ::1] eta, const double[:, ::1] vel,
                    const double[:, :, ::1] jeta, const double[:, :, ::1] jvel,
                    const double[::1] w, int fam, double par, double p,
                    double kappa, double[:, :, ::1] out, int nthreads=1):
    """Fill ``out`` with d(J^v_i)/dt for every atom i."""
    cdef Py_ssize_t n = eta.shape[0]
    cdef Py_ssize_t i
    if eta.shape[1] > MAXD:
        raise ValueError("compiled kernels support dim <= 4")
    for i in prange(n, nogil=True, schedule="static", num_threads=nthreads):
        _jac_row(i, eta, vel, jeta, jvel, w, fam, par, p - 2.0, kappa, out)


def max_pair_distance(const double[:, ::1] x, int nthreads=1):
    """Exact diameter max_{i,j} |x_i - x_j|."""
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t d = x.shape[1]
    cdef Py_ssize_t i, j, a
    cdef double r2, t, best
    cdef double[::1] rowmax = np.zeros(n)
    for i in prange(n, nogil=True, schedule="static", num_threads=nthreads):
        rowmax[i] = 0.0
        for j in range(i + 1, n):
            r2 = 0.0
            for a in range(d):
                t = x[i, a] - x[j, a]
                r2 = r2 + t * t
            if r2 > rowmax[i]:
                rowmax[i] = r2
    best = 0.0
    for i in range(n):
        if rowmax[i] > best:
            best = rowmax[i]
    return sqrt(best)


def cross_moment(const double[:, ::1] x, const double[:, ::1] y,
                 const double[::1] wy, double q, int nthreads=1):
    """Return (sum_i sum_k wy_k |x_i - y_k|^q, max_{i,k} |x_i - y_k|).

    ``q <= 0`` skips the power sum (only the max is needed for q = inf).
    """
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t m = y.shape[0]
    cdef Py_ssize_t d = x.shape[1]
    cdef Py_ssize_t i, k, a
    cdef double r2, t, r, tot, best
    cdef double[::1] rowsum = np.zeros(n)
    cdef double[::1] rowmax = np.zeros(n)
    for i in prange(n, nogil=True, schedule="static", num_threads=nthreads):
        rowsum[i] = 0.0
        rowmax[i] = 0.0
        for k in range(m):
            r2 = 0.0
            for a in range(d):
                t = x[i, a] - y[k, a]
                r2 = r2 + t * t
            r = sqrt(r2)
            if r > rowmax[i]:
                rowmax[i] = r
            if q == 2.0:
                rowsum[i] = rowsum[i] + wy[k] * r2
            elif q > 0.0:
                rowsum[i] = rowsum[i] + wy[k] * pow(r, q)
    tot = 0.0
    best = 0.0
    for i in range(n):
        tot = tot + rowsum[i]
        if rowmax[i] > best:
            best = rowmax[i]
    return tot, best
