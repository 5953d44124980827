# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels: bivariate copula families, Student-t quantiles and the
sequential recursions (Markov-chain simulation, DCC filtering).

Family codes: 0 independence, 1 Gaussian, 2 Student t, 3 Clayton, 4 Gumbel,
5 Frank, 6 Joe.  ``p0``/``p1`` are the first and second family parameters
(``p1`` is only read by the Student t family, as its degrees of freedom).
"""
import numpy as np

from libc.math cimport log, exp, sqrt, fabs, pow, lgamma, log1p, expm1, M_PI
from scipy.special.cython_special cimport ndtr, ndtri, stdtr

cdef double EPS = 1e-10
cdef int MAXIT = 200


cdef inline double _clip(double x) noexcept nogil:
    if x < EPS:
        return EPS
    if x > 1.0 - EPS:
        return 1.0 - EPS
    return x


cdef inline double _logaddexp(double x, double y) noexcept nogil:
    if x < y:
        x, y = y, x
    return x + log1p(exp(y - x))


cdef inline double _frank_den(double d, double u, double v) noexcept nogil:
    # 1 - e^-d - (1 - e^-du)(1 - e^-dv), written without cancellation for either sign of d
    if d > 0.0:
        return -exp(-d * u) * expm1(-d * v) - exp(-d * v) * expm1(-d * (1.0 - v))
    return -expm1(-d) - expm1(-d * u) * expm1(-d * v)


# ---------------------------------------------------------------------------
# Student t distribution
# ---------------------------------------------------------------------------

cdef inline double _t_lconst(double nu) noexcept nogil:
    return lgamma(0.5 * (nu + 1.0)) - lgamma(0.5 * nu) - 0.5 * log(nu * M_PI)


cdef double _hill(double p2, double n) noexcept nogil:
    # Hill (1970) starting value; p2 is the two-tailed probability.
    cdef double a, b, c, d, x, y
    if p2 <= 0.0:
        return 1e10
    a = 1.0 / (n - 0.5)
    b = 48.0 / (a * a)
    c = ((20700.0 * a / b - 98.0) * a - 16.0) * a + 96.36
    d = ((94.5 / (b + c) - 3.0) / b + 1.0) * sqrt(a * M_PI * 0.5) * n
    x = d * p2
    y = pow(x, 2.0 / n)
    if y > 0.05 + a:
        x = ndtri(0.5 * p2)
        y = x * x
        if n < 5.0:
            c = c + 0.3 * (n - 4.5) * (x + 0.6)
        c = (((0.05 * d * x - 5.0) * x - 7.0) * x - 2.0) * x + b + c
        y = (((((0.4 * y + 6.3) * y + 36.0) * y + 94.5) / c - y - 3.0) / b + 1.0) * x
        y = expm1(a * y * y)
    else:
        y = ((1.0 / (((n + 6.0) / (n * y) - 0.089 * d - 0.822) * (n + 2.0) * 3.0)
              + 0.5 / (n + 4.0)) * y - 1.0) * (n + 1.0) / (n + 2.0) + 1.0 / y
    if not (y > 0.0):
        return 0.0
    return sqrt(n * y)


cdef double _t_ppf(double p, double nu) noexcept nogil:
    # Halley iteration on log F(x) = log p from the Hill start, lower tail.
    cdef double lower, x, F, lf, g, r, g2, step, den, logp, lc
    cdef int it
    if p == 0.5:
        return 0.0
    lower = p if p < 0.5 else 1.0 - p
    if lower <= 0.0:
        return -1e300 if p < 0.5 else 1e300
    lc = _t_lconst(nu)
    x = -_hill(2.0 * lower, nu)
    logp = log(lower)
    for it in range(60):
        F = stdtr(nu, x)
        if F <= 0.0:
            x = 0.5 * x
            continue
        lf = log(F)
        g = lf - logp
        r = exp(lc - 0.5 * (nu + 1.0) * log1p(x * x / nu) - lf)
        g2 = -r * ((nu + 1.0) * x / (nu + x * x) + r)
        step = g / r
        den = 1.0 - 0.5 * step * g2 / r
        if den > 0.5 and den < 2.0:
            step = step / den
        x = x - step
        if x > 0.0:
            x = 0.0
        if fabs(step) <= 1e-4 * fabs(x) or fabs(step) <= 1e-300:
            break
    return x if p < 0.5 else -x


# ---------------------------------------------------------------------------
# Bivariate families
# ---------------------------------------------------------------------------

cdef double _logpdf(int fam, double p0, double p1, double u, double v) noexcept nogil:
    cdef double x, y, r2, q, a, b, s, lx, ly, ls, big, la, A, ub, vb
    u = _clip(u)
    v = _clip(v)
    if fam == 0:
        return 0.0
    elif fam == 1:
        x = ndtri(u)
        y = ndtri(v)
        r2 = 1.0 - p0 * p0
        return -0.5 * log(r2) - (p0 * p0 * (x * x + y * y) - 2.0 * p0 * x * y) / (2.0 * r2)
    elif fam == 2:
        x = _t_ppf(u, p1)
        y = _t_ppf(v, p1)
        r2 = 1.0 - p0 * p0
        q = (x * x + y * y - 2.0 * p0 * x * y) / (p1 * r2)
        return (lgamma(0.5 * (p1 + 2.0)) + lgamma(0.5 * p1) - 2.0 * lgamma(0.5 * (p1 + 1.0))
                - 0.5 * log(r2) - 0.5 * (p1 + 2.0) * log1p(q)
                + 0.5 * (p1 + 1.0) * (log1p(x * x / p1) + log1p(y * y / p1)))
    elif fam == 3:
        lx = log(u)
        ly = log(v)
        s = exp(-p0 * lx) + exp(-p0 * ly) - 1.0
        return log1p(p0) - (1.0 + p0) * (lx + ly) - (2.0 + 1.0 / p0) * log(s)
    elif fam == 4:
        x = -log(u)
        y = -log(v)
        lx = log(x)
        ly = log(y)
        a = p0 * lx
        b = p0 * ly
        big = a if a > b else b
        ls = big + log(exp(a - big) + exp(b - big))
        A = exp(ls / p0)
        return (-A + x + y + (p0 - 1.0) * (lx + ly) + (1.0 / p0 - 2.0) * ls
                + log(A + p0 - 1.0))
    elif fam == 5:
        s = _frank_den(p0, u, v)
        return log(p0 * (-expm1(-p0))) - p0 * (u + v) - 2.0 * log(fabs(s))
    elif fam == 6:
        ub = log1p(-u)
        vb = log1p(-v)
        a = exp(p0 * ub)
        b = exp(p0 * vb)
        s = a + b - a * b
        return ((1.0 / p0 - 2.0) * log(s) + (p0 - 1.0) * (ub + vb) + log(p0 - 1.0 + s))
    return 0.0


cdef double _hfunc(int fam, double p0, double p1, double u, double v) noexcept nogil:
    # h(u | v) = dC(u, v) / dv
    cdef double x, y, r2, a, b, s, lx, ly, ls, big, A, ub, vb
    u = _clip(u)
    v = _clip(v)
    if fam == 0:
        return u
    elif fam == 1:
        x = ndtri(u)
        y = ndtri(v)
        return ndtr((x - p0 * y) / sqrt(1.0 - p0 * p0))
    elif fam == 2:
        x = _t_ppf(u, p1)
        y = _t_ppf(v, p1)
        r2 = (p1 + y * y) * (1.0 - p0 * p0) / (p1 + 1.0)
        return stdtr(p1 + 1.0, (x - p0 * y) / sqrt(r2))
    elif fam == 3:
        lx = log(u)
        ly = log(v)
        s = exp(-p0 * lx) + exp(-p0 * ly) - 1.0
        return exp(-(1.0 + p0) * ly - (1.0 + 1.0 / p0) * log(s))
    elif fam == 4:
        x = -log(u)
        y = -log(v)
        lx = log(x)
        ly = log(y)
        a = p0 * lx
        b = p0 * ly
        big = a if a > b else b
        ls = big + log(exp(a - big) + exp(b - big))
        A = exp(ls / p0)
        return exp(-A + y + (p0 - 1.0) * ly + (1.0 / p0 - 1.0) * ls)
    elif fam == 5:
        return -expm1(-p0 * u) * exp(-p0 * v) / _frank_den(p0, u, v)
    elif fam == 6:
        ub = log1p(-u)
        vb = log1p(-v)
        a = exp(p0 * ub)
        b = exp(p0 * vb)
        s = a + b - a * b
        return exp((1.0 / p0 - 1.0) * log(s) + (p0 - 1.0) * vb) * (-expm1(p0 * ub))
    return u


cdef double _solve_u(int fam, double p0, double p1, double q, double v, double u,
                     int* fail) noexcept nogil:
    # Safeguarded Newton on u for h(u|v) = q; the derivative is the density.
    cdef double lo = EPS, hi = 1.0 - EPS, f, un
    cdef int it
    if _hfunc(fam, p0, p1, lo, v) >= q:
        return lo
    if _hfunc(fam, p0, p1, hi, v) <= q:
        return hi
    if not (u > lo and u < hi):
        u = 0.5
    for it in range(MAXIT):
        f = _hfunc(fam, p0, p1, u, v) - q
        if fabs(f) <= 1e-15:
            return u
        if f > 0.0:
            hi = u
        else:
            lo = u
        if hi - lo <= 4e-16 * hi:
            return u
        un = u - f / exp(_logpdf(fam, p0, p1, u, v))
        if not (un > lo and un < hi):
            un = 0.5 * (lo + hi)
        u = un
    fail[0] += 1
    return u


cdef double _gumbel_start(double a, double q, double v) noexcept nogil:
    # Solve z + (a-1) log z = y + (a-1) log y - log q on [y, y - log q].
    cdef double y = -log(v), rhs, lo, hi, z, f, zn, x
    cdef int it
    rhs = y + (a - 1.0) * log(y) - log(q)
    lo = y
    hi = y - log(q)
    z = 0.5 * (lo + hi)
    for it in range(60):
        f = z + (a - 1.0) * log(z) - rhs
        if f > 0.0:
            hi = z
        else:
            lo = z
        zn = z - f / (1.0 + (a - 1.0) / z)
        if not (zn > lo and zn < hi):
            zn = 0.5 * (lo + hi)
        if fabs(zn - z) <= 1e-15 * z:
            z = zn
            break
        z = zn
    x = z * exp(log1p(-exp(a * log(y / z))) / a)
    return exp(-x)


cdef double _hinv(int fam, double p0, double p1, double q, double v, int* fail) noexcept nogil:
    cdef double x, y, r2, s, lv, a, u
    q = _clip(q)
    v = _clip(v)
    if fam == 0:
        return q
    elif fam == 1:
        y = ndtri(v)
        return _clip(ndtr(ndtri(q) * sqrt(1.0 - p0 * p0) + p0 * y))
    elif fam == 2:
        y = _t_ppf(v, p1)
        r2 = (p1 + y * y) * (1.0 - p0 * p0) / (p1 + 1.0)
        return _clip(stdtr(p1, _t_ppf(q, p1 + 1.0) * sqrt(r2) + p0 * y))
    elif fam == 3:
        lv = log(v)
        s = exp(-p0 * lv) * expm1(-p0 / (1.0 + p0) * log(q))
        return _clip(exp(-log1p(s) / p0))
    elif fam == 4:
        if p0 == 1.0:
            return q
        u = _gumbel_start(p0, q, v)
        return _solve_u(fam, p0, p1, q, v, u, fail)
    elif fam == 5:
        a = _logaddexp(log1p(-q) - p0 * v, log(q) - p0)
        return _clip(-(a - _logaddexp(log(q), log1p(-q) - p0 * v)) / p0)
    elif fam == 6:
        return _solve_u(fam, p0, p1, q, v, q, fail)
    return q


# ---------------------------------------------------------------------------
# Python-visible array kernels
# ---------------------------------------------------------------------------

def logpdf(int fam, double p0, double p1, const double[::1] u, const double[::1] v):
    cdef Py_ssize_t i, n = u.shape[0]
    out = np.empty(n)
    cdef double[::1] o = out
    with nogil:
        for i in range(n):
            o[i] = _logpdf(fam, p0, p1, u[i], v[i])
    return out


def hfunc(int fam, double p0, double p1, const double[::1] u, const double[::1] v):
    cdef Py_ssize_t i, n = u.shape[0]
    out = np.empty(n)
    cdef double[::1] o = out
    with nogil:
        for i in range(n):
            o[i] = _hfunc(fam, p0, p1, u[i], v[i])
    return out


def hinv(int fam, double p0, double p1, const double[::1] q, const double[::1] v):
    """Return ``(u, n_failed)`` with ``h(u|v) = q`` elementwise."""
    cdef Py_ssize_t i, n = q.shape[0]
    cdef int fail = 0
    out = np.empty(n)
    cdef double[::1] o = out
    with nogil:
        for i in range(n):
            o[i] = _hinv(fam, p0, p1, q[i], v[i], &fail)
    return out, fail


def t_ppf(const double[::1] p, double nu):
    cdef Py_ssize_t i, n = p.shape[0]
    out = np.empty(n)
    cdef double[::1] o = out
    with nogil:
        for i in range(n):
            o[i] = _t_ppf(p[i], nu)
    return out


def simulate_chain(const int[::1] fams, const double[:, ::1] params,
                   const double[::1] innov, const double[::1] init):
    """Iterate the truncated D-vine Markov chain driven by uniform innovations.

    ``init`` holds the ``p`` starting values, oldest first.  Returns
    ``(path, n_failed)``.
    """
    cdef Py_ssize_t p = fams.shape[0], n = innov.shape[0]
    cdef Py_ssize_t t, j, s
    cdef int fail = 0
    cdef double x
    out = np.empty(n)
    cdef double[::1] o = out
    w_arr = np.empty(max(p, 1))
    a_arr = np.zeros((p + 1, p + 1))
    b_arr = np.zeros((p + 1, p + 1))
    cdef double[::1] w = w_arr
    cdef double[:, ::1] A = a_arr
    cdef double[:, ::1] B = b_arr
    for j in range(p):
        w[j] = init[j]
    with nogil:
        for t in range(n):
            if p == 0:
                o[t] = _clip(innov[t])
                continue
            for s in range(p):
                A[1, s] = w[s]
            for s in range(p - 1):
                B[1, s] = w[s + 1]
            for j in range(2, p + 1):
                for s in range(p - j + 1):
                    A[j, s] = _hfunc(fams[j - 2], params[j - 2, 0], params[j - 2, 1],
                                     A[j - 1, s], B[j - 1, s])
                for s in range(p - j):
                    B[j, s] = _hfunc(fams[j - 2], params[j - 2, 0], params[j - 2, 1],
                                     B[j - 1, s + 1], A[j - 1, s + 1])
            x = innov[t]
            for j in range(p, 0, -1):
                x = _hinv(fams[j - 1], params[j - 1, 0], params[j - 1, 1], x, A[j, p - j], &fail)
            o[t] = x
            for s in range(p - 1):
                w[s] = w[s + 1]
            w[p - 1] = x
    return out, fail


def dcc_filter(const double[:, ::1] x, const double[:, ::1] eps, const double[:, ::1] qbar,
               double a, double b, double nu, bint keep):
    """Run the DCC(1,1) correlation recursion and accumulate the t-copula kernel.

    Returns ``(value, R)`` where ``value`` sums ``-0.5 log|R_t| - (nu+d)/2
    log(1 + x_t' R_t^{-1} x_t / nu)`` over rows, or ``-inf`` on a non-PD state.
    ``R`` is the (T, d, d) array of correlation states when ``keep`` is set.
    Passing ``nu <= 0`` switches the kernel to the Gaussian form.
    """
    cdef Py_ssize_t T = x.shape[0], d = x.shape[1]
    cdef Py_ssize_t t, i, j, k
    cdef double total = 0.0, logdet, quad, acc, c0 = 1.0 - a - b
    cdef bint bad = False
    q_arr = np.array(qbar, dtype=float, copy=True)
    r_arr = np.empty((d, d))
    l_arr = np.zeros((d, d))
    z_arr = np.empty(d)
    cdef double[:, ::1] Q = q_arr
    cdef double[:, ::1] R = r_arr
    cdef double[:, ::1] L = l_arr
    cdef double[::1] z = z_arr
    cdef double[:, :, ::1] Rk
    rout = None
    if keep:
        rout = np.empty((T, d, d))
        Rk = rout
    with nogil:
        for t in range(T):
            for i in range(d):
                for j in range(d):
                    R[i, j] = Q[i, j] / sqrt(Q[i, i] * Q[j, j])
            if keep:
                for i in range(d):
                    for j in range(d):
                        Rk[t, i, j] = R[i, j]
            logdet = 0.0
            for j in range(d):
                acc = R[j, j]
                for k in range(j):
                    acc = acc - L[j, k] * L[j, k]
                if acc <= 0.0:
                    bad = True
                    break
                L[j, j] = sqrt(acc)
                logdet = logdet + 2.0 * log(L[j, j])
                for i in range(j + 1, d):
                    acc = R[i, j]
                    for k in range(j):
                        acc = acc - L[i, k] * L[j, k]
                    L[i, j] = acc / L[j, j]
            if bad:
                break
            quad = 0.0
            for i in range(d):
                acc = x[t, i]
                for k in range(i):
                    acc = acc - L[i, k] * z[k]
                z[i] = acc / L[i, i]
                quad = quad + z[i] * z[i]
            if nu > 0.0:
                total = total - 0.5 * logdet - 0.5 * (nu + d) * log1p(quad / nu)
            else:
                total = total - 0.5 * logdet - 0.5 * quad
            for i in range(d):
                for j in range(d):
                    Q[i, j] = c0 * qbar[i, j] + a * eps[t, i] * eps[t, j] + b * Q[i, j]
    if bad:
        return -np.inf, rout
    return total, rout
