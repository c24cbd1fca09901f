"""Compiled inner loops for the eigensolver (numba)."""
import math

import numba
import numpy as np

EPS = 2.220446049250313e-16


@numba.njit(cache=True)
def tql_implicit(d, e, zt, want_vectors, maxit):
    """Implicit QL with Wilkinson shift on a symmetric tridiagonal matrix.

    ``d`` (n) holds the diagonal and ``e`` (n) the off-diagonal, ``e[i]``
    coupling ``d[i]`` and ``d[i+1]`` (``e[n-1]`` is scratch). On exit ``d``
    holds the unsorted eigenvalues. When ``want_vectors`` is set every plane
    rotation is applied to rows ``i, i+1`` of ``zt``, whose rows are the
    columns of the accumulated transform (any number of columns may be
    tracked). Returns -1 on success, else the index that hit ``maxit``.
    """
    n = d.shape[0]
    if n == 0:
        return -1
    e[n - 1] = 0.0
    ncol = zt.shape[1]
    for l in range(n):
        it = 0
        while True:
            m = l
            while m < n - 1:
                dd = abs(d[m]) + abs(d[m + 1])
                if abs(e[m]) <= EPS * dd:
                    break
                m += 1
            if m == l:
                break
            if it == maxit:
                return l
            it += 1
            g = (d[l + 1] - d[l]) / (2.0 * e[l])
            r = math.hypot(g, 1.0)
            g = d[m] - d[l] + e[l] / (g + math.copysign(r, g))
            s = 1.0
            c = 1.0
            p = 0.0
            i = m - 1
            early = False
            while i >= l:
                f = s * e[i]
                b = c * e[i]
                r = math.hypot(f, g)
                e[i + 1] = r
                if r == 0.0:
                    d[i + 1] -= p
                    e[m] = 0.0
                    early = True
                    break
                s = f / r
                c = g / r
                g = d[i + 1] - p
                r = (d[i] - g) * s + 2.0 * c * b
                p = s * r
                d[i + 1] = g + p
                g = c * r - b
                if want_vectors:
                    for k in range(ncol):
                        t = zt[i + 1, k]
                        zt[i + 1, k] = s * zt[i, k] + c * t
                        zt[i, k] = c * zt[i, k] - s * t
                i -= 1
            if early:
                continue
            d[l] -= p
            e[l] = g
            e[m] = 0.0
    return -1


@numba.njit(cache=True)
def householder_unblocked(a, d, e):
    """Reduce Hermitian ``a`` (overwritten) to real tridiagonal ``d, e``.

    Same reflector convention as the blocked path; used for the many tiny
    matrices evaluated by the principal-submatrix searches.
    """
    n = a.shape[0]
    for k in range(n - 1):
        alpha = a[k + 1, k]
        xn2 = 0.0
        for i in range(k + 2, n):
            xn2 += (a[i, k].conjugate() * a[i, k]).real
        ar = alpha.real
        ai = alpha.imag
        d[k] = a[k, k].real
        if xn2 == 0.0 and ai == 0.0:
            e[k] = ar
            continue
        beta = -math.copysign(math.sqrt(ar * ar + ai * ai + xn2), ar)
        tau = (beta - alpha) / beta
        scale = 1.0 / (alpha - beta)
        m = n - k - 1
        v = np.empty(m, dtype=a.dtype)
        v[0] = 1.0
        for i in range(1, m):
            v[i] = a[k + 1 + i, k] * scale
        e[k] = beta
        p = np.zeros(m, dtype=a.dtype)
        for j in range(m):
            vj = v[j]
            for i in range(m):
                p[i] += a[k + 1 + i, k + 1 + j] * vj
        pv = p[0] * 0.0
        for i in range(m):
            p[i] *= tau
            pv += p[i].conjugate() * v[i]
        corr = -0.5 * tau * pv
        for i in range(m):
            p[i] += corr * v[i]
        for j in range(m):
            vj = v[j].conjugate()
            pj = p[j].conjugate()
            for i in range(m):
                a[k + 1 + i, k + 1 + j] -= v[i] * pj + p[i] * vj
    if n > 0:
        d[n - 1] = a[n - 1, n - 1].real


@numba.njit(cache=True)
def batch_extremes(stack, maxit):
    """(lambda_min, lambda_max) of every matrix in a (b, m, m) stack."""
    b = stack.shape[0]
    m = stack.shape[1]
    lo = np.empty(b)
    hi = np.empty(b)
    dummy = np.zeros((1, 1))
    d = np.empty(m)
    e = np.empty(m)
    for t in range(b):
        a = stack[t].copy()
        householder_unblocked(a, d, e)
        status = tql_implicit(d, e, dummy, False, maxit)
        if status >= 0:
            return lo, hi, t
        lo[t] = d.min()
        hi[t] = d.max()
    return lo, hi, -1
