# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops: Gram-form coordinate descent and best-swap search."""

import numpy as np
cimport numpy as cnp
from libc.math cimport fabs

cnp.import_array()


cdef inline double _soft(double z, double t) nogil:
    if z > t:
        return z - t
    if z < -t:
        return z + t
    return 0.0


def lasso_cd_gram(double[:, ::1] G, double[::1] c, double[::1] w,
                  double[::1] beta, double yy, double tol, int max_sweeps):
    """Cyclic coordinate descent on ``yy - 2 c'b + b'Gb + 2 sum(w|b|)``.

    ``beta`` is updated in place.  Returns ``(sweeps, last_delta, objectives)``
    where ``objectives[k]`` is the objective after sweep ``k``.
    """
    cdef Py_ssize_t p = G.shape[0]
    cdef Py_ssize_t j, k
    cdef int sweep = 0
    cdef double z, new, d, delta = 0.0, gjj, obj
    cdef double[::1] q = np.empty(p)
    hist = np.empty(max_sweeps)
    cdef double[::1] h = hist

    # q = c - G beta
    for j in range(p):
        z = c[j]
        for k in range(p):
            if beta[k] != 0.0:
                z -= G[j, k] * beta[k]
        q[j] = z

    with nogil:
        while sweep < max_sweeps:
            delta = 0.0
            for j in range(p):
                gjj = G[j, j]
                if gjj <= 0.0:
                    continue
                z = q[j] + gjj * beta[j]
                new = _soft(z, w[j]) / gjj
                d = new - beta[j]
                if d != 0.0:
                    beta[j] = new
                    for k in range(p):
                        q[k] -= G[k, j] * d
                    if fabs(d) > delta:
                        delta = fabs(d)
            obj = yy
            for j in range(p):
                if beta[j] != 0.0:
                    obj += -beta[j] * (c[j] + q[j]) + 2.0 * w[j] * fabs(beta[j])
            h[sweep] = obj
            sweep += 1
            if delta < tol:
                break
    return sweep, delta, hist[:sweep]


def best_swap(double[:, ::1] Z, long[::1] members, long[::1] others,
              double[::1] sum1, double[::1] sum0, double current):
    """Best single in/out exchange for the two-group balance objective.

    Returns ``(objective, a, b)`` with ``a`` an index into ``members`` and ``b``
    an index into ``others``; ``a == -1`` when no exchange strictly improves.
    """
    cdef Py_ssize_t K = members.shape[0]
    cdef Py_ssize_t M = others.shape[0]
    cdef Py_ssize_t J = Z.shape[1]
    cdef Py_ssize_t a, b, j, i_in, i_out
    cdef double best = current, obj, m1, m0, diff
    cdef long best_a = -1, best_b = -1
    cdef double inv1 = 1.0 / K, inv0 = 1.0 / M

    with nogil:
        for a in range(K):
            i_out = members[a]
            for b in range(M):
                i_in = others[b]
                obj = 0.0
                for j in range(J):
                    diff = Z[i_in, j] - Z[i_out, j]
                    m1 = (sum1[j] + diff) * inv1
                    m0 = (sum0[j] - diff) * inv0
                    obj += fabs(m1 - m0)
                obj /= J
                if obj < best:
                    best = obj
                    best_a = a
                    best_b = b
    return best, best_a, best_b
