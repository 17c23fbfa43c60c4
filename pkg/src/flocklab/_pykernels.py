"""Pure numpy fallback for the compiled kernels in ``_ckernels.pyx``.

Same signatures, same results.  Pairwise sums are formed with ``np.cumsum``
along the source axis, which adds terms strictly in ascending j like the C
loop does, so both backends agree bit-for-bit whenever libm and numpy agree
on ``pow`` (always true for the sqrt-based special cases).
``nthreads`` is accepted and ignored.
"""

import numpy as np

FAM_CONSTANT, FAM_POWERLAW, FAM_BUMP = 0, 1, 2


def _phi(fam, par, r):
    if fam == FAM_CONSTANT:
        return np.full_like(r, par)
    if fam == FAM_POWERLAW:
        s = 1.0 + r
        if par == 0.5:
            return 1.0 / np.sqrt(s)
        if par == 1.0:
            return 1.0 / s
        if par == 2.0:
            return 1.0 / (s * s)
        return np.power(s, -par)
    return np.where(r >= par, 0.0, 1.0 - r / par)


def _dphi(fam, par, r):
    if fam == FAM_CONSTANT:
        return np.zeros_like(r)
    if fam == FAM_POWERLAW:
        s = 1.0 + r
        if par == 0.5:
            return -0.5 / (s * np.sqrt(s))
        if par == 1.0:
            return -1.0 / (s * s)
        if par == 2.0:
            return -2.0 / (s * s * s)
        return -par * np.power(s, -par - 1.0)
    return np.where(r >= par, 0.0, -1.0 / par)


def _gpow(s, e):
    if e == 0.0:
        return np.ones_like(s)
    if e == 1.0:
        out = s.copy()
    elif e == 2.0:
        out = s * s
    elif e == 0.5:
        out = np.sqrt(s)
    else:
        with np.errstate(divide="ignore"):
            out = np.power(s, e)
    out[s == 0.0] = 0.0
    return out


def _seqsum(a, axis):
    """Sum along ``axis`` strictly left to right."""
    return np.take(np.cumsum(a, axis=axis), -1, axis=axis)


def _pair_geometry(eta, vel):
    n, d = eta.shape
    z = eta[:, None, :] - eta[None, :, :]
    dv = vel[None, :, :] - vel[:, None, :]
    r2 = np.zeros((n, n))
    s2 = np.zeros((n, n))
    for a in range(d):
        r2 = r2 + z[:, :, a] * z[:, :, a]
        s2 = s2 + dv[:, :, a] * dv[:, :, a]
    return z, dv, r2, s2


def alignment_forces(eta, vel, w, fam, par, p, kappa, acc, nthreads=1):
    if len(eta) == 0:
        return 0.0
    _, dv, r2, s2 = _pair_geometry(eta, vel)
    coef = w[None, :] * (_phi(fam, par, np.sqrt(r2)) * _gpow(np.sqrt(s2), p - 2.0))
    acc[...] = kappa * _seqsum(coef[:, :, None] * dv, axis=1)
    diss = _seqsum(coef * s2, axis=1)
    return 0.5 * kappa * float(_seqsum(w * diss, axis=0))


def jacobian_forces(eta, vel, jeta, jvel, w, fam, par, p, kappa, out, nthreads=1):
    n, d = eta.shape
    if n == 0:
        return
    e = p - 2.0
    z, dv, r2, s2 = _pair_geometry(eta, vel)
    r = np.sqrt(r2)
    s = np.sqrt(s2)
    phi = _phi(fam, par, r)
    g = _gpow(s, e)
    with np.errstate(divide="ignore", invalid="ignore"):
        dphi = np.where(r > 0.0, _dphi(fam, par, r) / r, 0.0)
    gradphi = dphi[:, :, None] * z
    # (J^eta_i)^T grad phi, summed over c in ascending order
    jtg = np.zeros((n, n, d))
    for b in range(d):
        acc = np.zeros((n, n))
        for c in range(d):
            acc = acc + jeta[:, None, c, b] * gradphi[:, :, c]
        jtg[:, :, b] = acc
    wj = w[None, :]
    src_inc = (wj[:, :, None, None] * (g[:, :, None, None] * dv[:, :, :, None])) * jtg[:, :, None, :]
    src = _seqsum(src_inc, axis=1)

    wphi = wj * phi
    with np.errstate(divide="ignore", invalid="ignore"):
        h = np.where((s > 0.0) & (e != 0.0), e * g / s2, 0.0)
    hterm = wphi[:, :, None, None] * ((h[:, :, None, None] * dv[:, :, :, None]) * dv[:, :, None, :])
    gterm = np.zeros((n, n, d, d))
    idx = np.arange(d)
    gterm[:, :, idx, idx] = (wphi * g)[:, :, None]
    # C adds the rank-one term, then the diagonal term, for each j in turn
    inc = np.empty((n, 2 * n, d, d))
    inc[:, 0::2] = hterm
    inc[:, 1::2] = gterm
    damp = _seqsum(inc, axis=1)

    res = np.empty((n, d, d))
    for a in range(d):
        for b in range(d):
            acc = np.zeros(n)
            for c in range(d):
                acc = acc + damp[:, a, c] * jvel[:, c, b]
            res[:, a, b] = kappa * (src[:, a, b] - acc)
    out[...] = res


def max_pair_distance(x, nthreads=1, chunk=512):
    n = len(x)
    best = 0.0
    for start in range(0, n, chunk):
        blk = x[start:start + chunk]
        diff = blk[:, None, :] - x[None, :, :]
        r2 = np.einsum("ijk,ijk->ij", diff, diff)
        if r2.size:
            best = max(best, float(r2.max()))
    return float(np.sqrt(best))


def cross_moment(x, y, wy, q, nthreads=1, chunk=256):
    n, d = x.shape
    rowsum = np.zeros(n)
    best = 0.0
    for start in range(0, n, chunk):
        blk = x[start:start + chunk]
        r2 = np.zeros((len(blk), len(y)))
        for a in range(d):
            t = blk[:, None, a] - y[None, :, a]
            r2 = r2 + t * t
        r = np.sqrt(r2)
        if r.size:
            best = max(best, float(r.max()))
        if q == 2.0:
            rowsum[start:start + chunk] = _seqsum(wy[None, :] * r2, axis=1)
        elif q > 0.0:
            rowsum[start:start + chunk] = _seqsum(wy[None, :] * np.power(r, q), axis=1)
    tot = float(_seqsum(rowsum, axis=0)) if n else 0.0
    return tot, best
