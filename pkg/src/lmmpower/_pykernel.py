"""Pure-Python profiled-deviance kernel and Nelder-Mead driver.

This is the fallback for :mod:`lmmpower._ckernel` and performs the same
floating-point operations in the same order, so both backends produce
bit-identical fits.

Balanced-design reduction
-------------------------
With every subject crossed with every item in both conditions (codes
+-0.5), rotating the subject levels and the item levels by orthogonal
(Helmert) matrices splits the penalized normal equations into

* ``n_subjects - 1`` copies of the 2x2 subject block ``P_S``,
* ``n_items - 1`` copies of the 2x2 item block ``P_I``,
* one dense "grand mean" block of order ``4 + p`` coupling the rotated
  mean subject effect, mean item effect and the fixed effects.

The deviance then depends on the data only through

``stats = (yy, ty, txy, gs00, gs01, gs11, gi00, gi01, gi11, ns, ni)``

where ``y`` is centred, ``ty``/``txy`` are the totals of ``y``/``x*y`` and
``gs``/``gi`` are the centred 2x2 scatter matrices of the per-subject and
per-item ``(sum y, sum x*y)`` pairs.

``theta`` is always the packed 6-vector ``(s00, s10, s11, i00, i10, i11)``
of the two lower-triangular relative factors; absent terms are zeros.
"""
import math

LOG2PI = math.log(2.0 * math.pi)
INF = float("inf")
# per-cell cross-products of (1, x) over the two conditions: diag(2, 0.5)
B0 = 2.0
B1 = 0.5
DIAG = (True, False, True, True, False, True)


def _evaluate(th, st, p, want_beta):
    s00, s10, s11, i00, i10, i11 = th
    yy, ty, txy, gs00, gs01, gs11, gi00, gi01, gi11, ns, ni = st
    nn = ns * ni
    nobs = 2.0 * nn

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

    rns = math.sqrt(ns)
    rni = math.sqrt(ni)
    rnn = math.sqrt(nn)
    m = 4 + p
    # lower triangle of the grand-mean block
    M = [[0.0] * m for _ in range(m)]
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
    rhs = [0.0] * m
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

    # in-place Cholesky, lower triangle
    for j in range(m):
        d = M[j][j]
        for k in range(j):
            d -= M[j][k] * M[j][k]
        if not d > 0.0:
            return INF, 0.0, None
        d = math.sqrt(d)
        M[j][j] = d
        for r in range(j + 1, m):
            v = M[r][j]
            for k in range(j):
                v -= M[r][k] * M[j][k]
            M[r][j] = v / d

    z = [0.0] * m
    quad = 0.0
    for r in range(m):
        v = rhs[r]
        for k in range(r):
            v -= M[r][k] * z[k]
        v = v / M[r][r]
        z[r] = v
        quad += v * v

    logdet = (ns - 1.0) * math.log(dps) + (ni - 1.0) * math.log(dpi)
    for j in range(4):
        logdet += 2.0 * math.log(M[j][j])
    r2 = yy - qs - qi - quad
    if not r2 > 0.0:
        return INF, r2, None
    dev = logdet + nobs * (1.0 + LOG2PI + math.log(r2 / nobs))
    if dev != dev:
        return INF, r2, None

    beta = None
    if want_beta:
        w = z[:]
        for r in range(m - 1, -1, -1):
            v = w[r]
            for k in range(r + 1, m):
                v -= M[k][r] * w[k]
            w[r] = v / M[r][r]
        beta = tuple(w[4:])
    return dev, r2, beta


def deviance(theta, stats, p):
    """Profiled ML deviance at packed ``theta``; ``inf`` when undefined."""
    return _evaluate(tuple(theta), tuple(stats), int(p), False)[0]


def solution(theta, stats, p):
    """``(deviance, penalized RSS, beta)`` at packed ``theta`` (beta for centred y)."""
    return _evaluate(tuple(theta), tuple(stats), int(p), True)


def nelder_mead(stats, positions, p, x0, step, ftol, max_evals):
    """Minimize the profiled deviance over the free entries ``positions`` of theta.

    Diagonal factor entries are kept non-negative by reflection (``|x|``).
    Returns ``(x, f, evaluations, converged)``; converged means the deviance
    spread over the simplex fell below ``ftol`` before ``max_evals``.
    """
    st = tuple(float(v) for v in stats)
    pos = tuple(positions)
    n = len(pos)
    diag = tuple(DIAG[q] for q in pos)
    p = int(p)

    def feas(x):
        return [abs(v) if diag[j] else v for j, v in enumerate(x)]

    def f(x):
        th = [0.0] * 6
        for j in range(n):
            th[pos[j]] = x[j]
        return _evaluate(th, st, p, False)[0]

    X = [feas(list(x0))]
    for j in range(n):
        v = list(X[0])
        v[j] = v[j] + step
        X.append(feas(v))
    F = [f(v) for v in X]
    evals = n + 1
    converged = False

    while True:
        order = sorted(range(n + 1), key=lambda k: F[k])
        X = [X[k] for k in order]
        F = [F[k] for k in order]
        if F[0] == INF:
            break
        if F[n] - F[0] < ftol:
            converged = True
            break
        if evals >= max_evals:
            break
        c = [0.0] * n
        for k in range(n):
            for j in range(n):
                c[j] += X[k][j]
        for j in range(n):
            c[j] = c[j] / n
        xw = X[n]
        xr = feas([c[j] + (c[j] - xw[j]) for j in range(n)])
        fr = f(xr)
        evals += 1
        if fr < F[0]:
            xe = feas([c[j] + 2.0 * (c[j] - xw[j]) for j in range(n)])
            fe = f(xe)
            evals += 1
            if fe < fr:
                X[n], F[n] = xe, fe
            else:
                X[n], F[n] = xr, fr
        elif fr < F[n - 1]:
            X[n], F[n] = xr, fr
        else:
            if fr < F[n]:
                xc = feas([c[j] + 0.5 * (xr[j] - c[j]) for j in range(n)])
                fc = f(xc)
                accept = fc <= fr
            else:
                xc = feas([c[j] + 0.5 * (xw[j] - c[j]) for j in range(n)])
                fc = f(xc)
                accept = fc < F[n]
            evals += 1
            if accept:
                X[n], F[n] = xc, fc
            else:
                x0b = X[0]
                for k in range(1, n + 1):
                    X[k] = feas([x0b[j] + 0.5 * (X[k][j] - x0b[j]) for j in range(n)])
                    F[k] = f(X[k])
                evals += n
    return X[0], F[0], evals, converged
