"""Pure-Python versions of the compiled kernels in ``_kernels.pyx``.

Same signatures and same arithmetic order, so results agree with the
extension up to floating-point reassociation inside numpy reductions.
"""

import numpy as np


def _soft(z, t):
    if z > t:
        return z - t
    if z < -t:
        return z + t
    return 0.0


def lasso_cd_gram(G, c, w, beta, yy, tol, max_sweeps):
    p = G.shape[0]
    q = c - G @ beta
    hist = np.empty(max_sweeps)
    sweep = 0
    delta = 0.0
    diag = np.diag(G).copy()
    while sweep < max_sweeps:
        delta = 0.0
        for j in range(p):
            gjj = diag[j]
            if gjj <= 0.0:
                continue
            bj = beta[j]
            new = _soft(q[j] + gjj * bj, w[j]) / gjj
            d = new - bj
            if d != 0.0:
                beta[j] = new
                q -= G[:, j] * d
                if abs(d) > delta:
                    delta = abs(d)
        nz = beta != 0.0
        b = beta[nz]
        hist[sweep] = yy + float(np.sum(-b * (c[nz] + q[nz]) + 2.0 * w[nz] * np.abs(b)))
        sweep += 1
        if delta < tol:
            break
    return sweep, delta, hist[:sweep]


def best_swap(Z, members, others, sum1, sum0, current):
    K = members.shape[0]
    M = others.shape[0]
    J = Z.shape[1]
    # diff[a, b, :] = Z[others[b]] - Z[members[a]]
    diff = Z[others][None, :, :] - Z[members][:, None, :]
    m1 = (sum1 + diff) / K
    m0 = (sum0 - diff) / M
    obj = np.abs(m1 - m0).sum(axis=2) / J
    a, b = np.unravel_index(np.argmin(obj), obj.shape)
    best = float(obj[a, b])
    if best < current:
        return best, int(a), int(b)
    return current, -1, -1
