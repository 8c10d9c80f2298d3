# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled profiled-deviance kernel and Nelder-Mead driver.

Mirrors :mod:`lmmpower._pykernel` operation for operation; see that module
for the balanced-design reduction and the layout of ``stats`` and ``theta``.
"""
from libc.math cimport sqrt, log, fabs, M_PI, INFINITY

cdef double LOG2PI = log(2.0 * M_PI)
cdef double B0 = 2.0
cdef double B1 = 0.5
cdef int MAXD = 6


cdef double _evaluate(const double* th, const double* st, int p, double* beta,
                      double* r2_out) noexcept nogil:
    cdef double s00 = th[0], s10 = th[1], s11 = th[2]
    cdef double i00 = th[3], i10 = th[4], i11 = th[5]
    cdef double yy = st[0], ty = st[1], txy = st[2]
    cdef double gs00 = st[3], gs01 = st[4], gs11 = st[5]
    cdef double gi00 = st[6], gi01 = st[7], gi11 = st[8]
    cdef double ns = st[9], ni = st[10]
    cdef double nn = ns * ni
    cdef double nobs = 2.0 * nn
    cdef double a0, a1, u0, u1, h00, h01, h11
    cdef double ps00, ps01, ps11, dps, qs, pi00, pi01, pi11, dpi, qi
    cdef double rns, rni, rnn, d, v, quad, logdet, r2, dev
    cdef double M[6][6]
    cdef double rhs[6]
    cdef double z[6]
    cdef int m = 4 + p
    cdef int j, k, r

    a0 = ni * B0
    a1 = ni * B1
    ps00 = a0 * s00 * s00 + a1 * s10 * s10 + 1.0
    ps01 = a1 * s10 * s11
    ps11 = a1 * s11 * s11 + 1.0
    dps = ps00 * ps11 - ps01 * ps01
    u0 = gs00 * s00 + gs01 * s10
    u1 = gs01 * s00 + gs11 * s10
    h00 = s00 * u0 + s10 * u1
    h01 = s11 * u1
    h11 = s11 * s11 * gs11
    qs = (ps11 * h00 - 2.0 * ps01 * h01 + ps00 * h11) / dps

    a0 = ns * B0
    a1 = ns * B1
    pi00 = a0 * i00 * i00 + a1 * i10 * i10 + 1.0
    pi01 = a1 * i10 * i11
    pi11 = a1 * i11 * i11 + 1.0
    dpi = pi00 * pi11 - pi01 * pi01
    u0 = gi00 * i00 + gi01 * i10
    u1 = gi01 * i00 + gi11 * i10
    h00 = i00 * u0 + i10 * u1
    h01 = i11 * u1
    h11 = i11 * i11 * gi11
    qi = (pi11 * h00 - 2.0 * pi01 * h01 + pi00 * h11) / dpi

    rns = sqrt(ns)
    rni = sqrt(ni)
    rnn = sqrt(nn)
    for j in range(m):
        rhs[j] = 0.0
        for k in range(m):
            M[j][k] = 0.0
    M[0][0] = ps00
    M[1][0] = ps01
    M[1][1] = ps11
    M[2][0] = rnn * (B0 * s00 * i00 + B1 * s10 * i10)
    M[2][1] = rnn * (B1 * s11 * i10)
    M[2][2] = pi00
    M[3][0] = rnn * (B1 * s10 * i11)
    M[3][1] = rnn * (B1 * s11 * i11)
    M[3][2] = pi01
    M[3][3] = pi11
    M[4][0] = rns * (ni * B0 * s00)
    M[4][2] = rni * (ns * B0 * i00)
    M[4][4] = nn * B0
    rhs[0] = (s00 * ty + s10 * txy) / rns
    rhs[1] = (s11 * txy) / rns
    rhs[2] = (i00 * ty + i10 * txy) / rni
    rhs[3] = (i11 * txy) / rni
    rhs[4] = ty
    if p == 2:
        M[5][0] = rns * (ni * B1 * s10)
        M[5][1] = rns * (ni * B1 * s11)
        M[5][2] = rni * (ns * B1 * i10)
        M[5][3] = rni * (ns * B1 * i11)
        M[5][5] = nn * B1
        rhs[5] = txy

    for j in range(m):
        d = M[j][j]
        for k in range(j):
            d -= M[j][k] * M[j][k]
        if not d > 0.0:
            r2_out[0] = 0.0
            return INFINITY
        d = sqrt(d)
        M[j][j] = d
        for r in range(j + 1, m):
            v = M[r][j]
            for k in range(j):
                v -= M[r][k] * M[j][k]
            M[r][j] = v / d

    quad = 0.0
    for r in range(m):
        v = rhs[r]
        for k in range(r):
            v -= M[r][k] * z[k]
        v = v / M[r][r]
        z[r] = v
        quad += v * v

    logdet = (ns - 1.0) * log(dps) + (ni - 1.0) * log(dpi)
    for j in range(4):
        logdet += 2.0 * log(M[j][j])
    r2 = yy - qs - qi - quad
    r2_out[0] = r2
    if not r2 > 0.0:
        return INFINITY
    dev = logdet + nobs * (1.0 + LOG2PI + log(r2 / nobs))
    if dev != dev:
        return INFINITY

    if beta != NULL:
        for r in range(m - 1, -1, -1):
            v = z[r]
            for k in range(r + 1, m):
                v -= M[k][r] * z[k]
            z[r] = v / M[r][r]
        for r in range(p):
            beta[r] = z[4 + r]
    return dev


cdef void _load(object seq, double* out, int n) except *:
    cdef int j
    for j in range(n):
        out[j] = float(seq[j])


def deviance(theta, stats, int p):
    """Profiled ML deviance at packed ``theta``; ``inf`` when undefined."""
    cdef double th[6]
    cdef double st[11]
    cdef double r2
    _load(theta, th, 6)
    _load(stats, st, 11)
    return _evaluate(th, st, p, NULL, &r2)


def solution(theta, stats, int p):
    """``(deviance, penalized RSS, beta)`` at packed ``theta`` (beta for centred y)."""
    cdef double th[6]
    cdef double st[11]
    cdef double beta[2]
    cdef double r2, dev
    _load(theta, th, 6)
    _load(stats, st, 11)
    dev = _evaluate(th, st, p, beta, &r2)
    if dev == INFINITY:
        return dev, r2, None
    return dev, r2, tuple(beta[j] for j in range(p))


cdef inline double _f(const double* x, const int* pos, int n, const double* st, int p) noexcept nogil:
    cdef double th[6]
    cdef double r2
    cdef int j
    for j in range(6):
        th[j] = 0.0
    for j in range(n):
        th[pos[j]] = x[j]
    return _evaluate(th, st, p, NULL, &r2)


cdef inline void _feas(double* x, const int* diag, int n) noexcept nogil:
    cdef int j
    for j in range(n):
        if diag[j]:
            x[j] = fabs(x[j])


def nelder_mead(stats, positions, int p, x0, double step, double ftol, long max_evals):
    """Minimize the profiled deviance over the free entries ``positions`` of theta.

    Same contract as :func:`lmmpower._pykernel.nelder_mead`.
    """
    cdef double st[11]
    cdef int pos[6]
    cdef int diag[6]
    cdef double X[7][6]
    cdef double F[7]
    cdef double c[6]
    cdef double xr[6]
    cdef double xe[6]
    cdef double xc[6]
    cdef double tmpx[6]
    cdef double fr, fe, fc, tmpf
    cdef int n = len(positions)
    cdef int j, k, i
    cdef long evals
    cdef bint converged = False
    cdef bint accept

    if n < 1 or n > MAXD:
        raise ValueError("between 1 and 6 free parameters required")
    _load(stats, st, 11)
    for j in range(n):
        pos[j] = positions[j]
        diag[j] = pos[j] in (0, 2, 3, 5)
        X[0][j] = float(x0[j])

    with nogil:
        _feas(X[0], diag, n)
        for k in range(1, n + 1):
            for j in range(n):
                X[k][j] = X[0][j]
            X[k][k - 1] = X[k][k - 1] + step
            _feas(X[k], diag, n)
        for k in range(n + 1):
            F[k] = _f(X[k], pos, n, st, p)
        evals = n + 1

        while True:
            # stable insertion sort by deviance
            for i in range(1, n + 1):
                tmpf = F[i]
                for j in range(n):
                    tmpx[j] = X[i][j]
                k = i - 1
                while k >= 0 and F[k] > tmpf:
                    F[k + 1] = F[k]
                    for j in range(n):
                        X[k + 1][j] = X[k][j]
                    k -= 1
                F[k + 1] = tmpf
                for j in range(n):
                    X[k + 1][j] = tmpx[j]
            if F[0] == INFINITY:
                break
            if F[n] - F[0] < ftol:
                converged = True
                break
            if evals >= max_evals:
                break
            for j in range(n):
                c[j] = 0.0
            for k in range(n):
                for j in range(n):
                    c[j] += X[k][j]
            for j in range(n):
                c[j] = c[j] / n
            for j in range(n):
                xr[j] = c[j] + (c[j] - X[n][j])
            _feas(xr, diag, n)
            fr = _f(xr, pos, n, st, p)
            evals += 1
            if fr < F[0]:
                for j in range(n):
                    xe[j] = c[j] + 2.0 * (c[j] - X[n][j])
                _feas(xe, diag, n)
                fe = _f(xe, pos, n, st, p)
                evals += 1
                if fe < fr:
                    for j in range(n):
                        X[n][j] = xe[j]
                    F[n] = fe
                else:
                    for j in range(n):
                        X[n][j] = xr[j]
                    F[n] = fr
            elif fr < F[n - 1]:
                for j in range(n):
                    X[n][j] = xr[j]
                F[n] = fr
            else:
                if fr < F[n]:
                    for j in range(n):
                        xc[j] = c[j] + 0.5 * (xr[j] - c[j])
                    _feas(xc, diag, n)
                    fc = _f(xc, pos, n, st, p)
                    accept = fc <= fr
                else:
                    for j in range(n):
                        xc[j] = c[j] + 0.5 * (X[n][j] - c[j])
                    _feas(xc, diag, n)
                    fc = _f(xc, pos, n, st, p)
                    accept = fc < F[n]
                evals += 1
                if accept:
                    for j in range(n):
                        X[n][j] = xc[j]
                    F[n] = fc
                else:
                    for k in range(1, n + 1):
                        for j in range(n):
                            X[k][j] = X[0][j] + 0.5 * (X[k][j] - X[0][j])
                        _feas(X[k], diag, n)
                        F[k] = _f(X[k], pos, n, st, p)
                    evals += n

    return [X[0][j] for j in range(n)], F[0], evals, bool(converged)
