"""Compiled inner loops for the coordinate-descent solvers.

Every kernel mutates its array arguments in place and returns the largest
absolute coordinate change of the pass, which the Python drivers use for
convergence control.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def _st(z, lam):
    if z > lam:
        return z - lam
    if z < -lam:
        return z + lam
    return 0.0


@njit(cache=True)
def glasso_column(W, S, beta, j, pen_pos, pen_neg, tol, max_passes):
    """Solve the column-j subproblem of the graphical lasso in place.

    Minimizes ``0.5 b'W11 b - s12'b + sum(pen_neg*max(b,0) + pen_pos*max(-b,0))``
    over ``b = beta`` (entry j ignored). ``pen_pos`` / ``pen_neg`` are the
    penalty slopes for a positive / negative precision entry; the precision
    entry has the opposite sign of ``b``. Writes ``W11 b`` back into column
    and row j of ``W`` and returns the largest change made to them.
    """
    d = W.shape[0]
    wb = np.zeros(d)
    for i in range(d):
        if i == j:
            continue
        acc = 0.0
        for l in range(d):
            if l != j and beta[l] != 0.0:
                acc += W[i, l] * beta[l]
        wb[i] = acc
    passes = 0
    full = True
    while passes < max_passes:
        passes += 1
        dmax = 0.0
        for i in range(d):
            if i == j:
                continue
            old = beta[i]
            if not full and old == 0.0:
                continue
            a = W[i, i]
            c = S[i, j] - (wb[i] - a * old)
            if c > pen_neg[i]:
                new = (c - pen_neg[i]) / a
            elif c < -pen_pos[i]:
                new = (c + pen_pos[i]) / a
            else:
                new = 0.0
            delta = new - old
            if delta != 0.0:
                beta[i] = new
                for l in range(d):
                    if l != j:
                        wb[l] += W[l, i] * delta
                ad = abs(delta)
                if ad > dmax:
                    dmax = ad
        if dmax <= tol:
            if full:
                break
            full = True
        else:
            full = False
    change = 0.0
    for i in range(d):
        if i == j:
            continue
        ch = abs(W[i, j] - wb[i])
        if ch > change:
            change = ch
        W[i, j] = wb[i]
        W[j, i] = wb[i]
    return change


@njit(cache=True)
def ipbo_sweep(X, R, B, colsq, G1, G2, lam, g1, g2, only_active):
    """One cyclic pass (k outer, j inner) of the Laplacian-penalized solver."""
    n, p = X.shape
    q = R.shape[1]
    scale = 2.0 / n
    dmax = 0.0
    for k in range(q):
        for j in range(p):
            old = B[j, k]
            if only_active and old == 0.0:
                continue
            a = colsq[j]
            z = 0.0
            for i in range(n):
                z += X[i, j] * R[i, k]
            z = scale * z + colsq[j] * old
            if g1 > 0.0:
                a += 2.0 * g1 * G1[k, k]
                s = 0.0
                for kk in range(q):
                    if kk != k:
                        s += G1[k, kk] * B[j, kk]
                z -= 2.0 * g1 * s
            if g2 > 0.0:
                a += 2.0 * g2 * G2[j, j]
                s = 0.0
                for jj in range(p):
                    if jj != j:
                        s += G2[j, jj] * B[jj, k]
                z -= 2.0 * g2 * s
            if a <= 0.0:
                continue
            new = _st(z, lam) / a
            delta = new - old
            if delta != 0.0:
                B[j, k] = new
                for i in range(n):
                    R[i, k] -= delta * X[i, j]
                ad = abs(delta)
                if ad > dmax:
                    dmax = ad
    return dmax


@njit(cache=True)
def lasso_gram_cd(G, c, beta, lam, tol, max_sweeps):
    """Covariance-update coordinate descent for one response.

    Minimizes ``beta'G beta - 2 c'beta + lam*|beta|_1`` where ``G = X'X/n`` and
    ``c = X'y/n``. Returns ``(sweeps, last_max_change)``.
    """
    p = G.shape[0]
    gb = np.zeros(p)
    for j in range(p):
        if beta[j] != 0.0:
            for l in range(p):
                gb[l] += G[l, j] * beta[j]
    sweeps = 0
    full = True
    dmax = 0.0
    while sweeps < max_sweeps:
        sweeps += 1
        dmax = 0.0
        for j in range(p):
            old = beta[j]
            if not full and old == 0.0:
                continue
            a = 2.0 * G[j, j]
            if a <= 0.0:
                continue
            z = 2.0 * (c[j] - gb[j] + G[j, j] * old)
            new = _st(z, lam) / a
            delta = new - old
            if delta != 0.0:
                beta[j] = new
                for l in range(p):
                    gb[l] += G[l, j] * delta
                ad = abs(delta)
                if ad > dmax:
                    dmax = ad
        if dmax <= tol:
            if full:
                return sweeps, dmax
            full = True
        else:
            full = False
    return sweeps, dmax


@njit(cache=True)
def l21_sweep(X, R, B, colsq, lam, only_active):
    """Block coordinate pass over rows for the row-group (l1/l2) penalty."""
    n, p = X.shape
    q = R.shape[1]
    scale = 2.0 / n
    c = np.zeros(q)
    dmax = 0.0
    for j in range(p):
        if only_active:
            nz = False
            for k in range(q):
                if B[j, k] != 0.0:
                    nz = True
                    break
            if not nz:
                continue
        a = colsq[j]
        if a <= 0.0:
            continue
        norm = 0.0
        for k in range(q):
            acc = 0.0
            for i in range(n):
                acc += X[i, j] * R[i, k]
            c[k] = scale * acc + a * B[j, k]
            norm += c[k] * c[k]
        norm = np.sqrt(norm)
        shrink = 0.0
        if norm > lam:
            shrink = (1.0 - lam / norm) / a
        for k in range(q):
            new = shrink * c[k]
            delta = new - B[j, k]
            if delta != 0.0:
                B[j, k] = new
                for i in range(n):
                    R[i, k] -= delta * X[i, j]
                ad = abs(delta)
                if ad > dmax:
                    dmax = ad
    return dmax


@njit(cache=True)
def mrce_sweep(X, R, B, colsq, Theta, lam, only_active):
    """Coordinate pass for ``tr[R'R Theta]/n + lam*|B|_1``, row by row.

    Within row ``j`` the partial gradients only need ``z = (2/n) X_j'R``,
    which moves by ``-delta * colsq[j]`` in slot ``k`` when ``B[j, k]``
    moves by ``delta``; ``R`` is brought up to date once per row.
    """
    n, p = X.shape
    q = R.shape[1]
    scale = 2.0 / n
    dmax = 0.0
    z = np.empty(q)
    moved = np.empty(q)
    for j in range(p):
        if only_active:
            nz = False
            for k in range(q):
                if B[j, k] != 0.0:
                    nz = True
                    break
            if not nz:
                continue
        for k in range(q):
            acc = 0.0
            for i in range(n):
                acc += X[i, j] * R[i, k]
            z[k] = scale * acc
            moved[k] = 0.0
        any_move = False
        for k in range(q):
            old = B[j, k]
            if only_active and old == 0.0:
                continue
            a = colsq[j] * Theta[k, k]
            if a <= 0.0:
                continue
            c = 0.0
            for kk in range(q):
                c += z[kk] * Theta[kk, k]
            new = _st(c + a * old, lam) / a
            delta = new - old
            if delta != 0.0:
                B[j, k] = new
                z[k] -= delta * colsq[j]
                moved[k] += delta
                any_move = True
                ad = abs(delta)
                if ad > dmax:
                    dmax = ad
        if any_move:
            for k in range(q):
                d = moved[k]
                if d != 0.0:
                    for i in range(n):
                        R[i, k] -= d * X[i, j]
    return dmax
