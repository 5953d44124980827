"""Pure numpy implementation of the kernels in ``_ckernels.pyx``.

Used when the compiled extension is unavailable or when the environment
variable ``CUDVINE_PURE_PYTHON`` is set.  Signatures and return conventions
match the compiled module exactly.
"""
import numpy as np
from scipy import special

EPS = 1e-10
MAXIT = 200


def _clip(x):
    return np.clip(x, EPS, 1.0 - EPS)


def t_ppf(p, nu):
    return special.stdtrit(nu, np.asarray(p, dtype=float))


def _frank_den(d, u, v):
    # 1 - e^-d - (1 - e^-du)(1 - e^-dv), written without cancellation for either sign of d
    if d > 0:
        return -np.exp(-d * u) * np.expm1(-d * v) - np.exp(-d * v) * np.expm1(-d * (1.0 - v))
    return -np.expm1(-d) - np.expm1(-d * u) * np.expm1(-d * v)


def _logsumexp2(a, b):
    big = np.maximum(a, b)
    return big + np.log(np.exp(a - big) + np.exp(b - big))


def logpdf(fam, p0, p1, u, v):
    u = _clip(np.asarray(u, dtype=float))
    v = _clip(np.asarray(v, dtype=float))
    if fam == 0:
        return np.zeros_like(u)
    if fam == 1:
        x, y = special.ndtri(u), special.ndtri(v)
        r2 = 1.0 - p0 * p0
        return -0.5 * np.log(r2) - (p0 * p0 * (x * x + y * y) - 2.0 * p0 * x * y) / (2.0 * r2)
    if fam == 2:
        x, y = t_ppf(u, p1), t_ppf(v, p1)
        r2 = 1.0 - p0 * p0
        q = (x * x + y * y - 2.0 * p0 * x * y) / (p1 * r2)
        const = (special.gammaln(0.5 * (p1 + 2.0)) + special.gammaln(0.5 * p1)
                 - 2.0 * special.gammaln(0.5 * (p1 + 1.0)) - 0.5 * np.log(r2))
        return (const - 0.5 * (p1 + 2.0) * np.log1p(q)
                + 0.5 * (p1 + 1.0) * (np.log1p(x * x / p1) + np.log1p(y * y / p1)))
    if fam == 3:
        lx, ly = np.log(u), np.log(v)
        s = np.exp(-p0 * lx) + np.exp(-p0 * ly) - 1.0
        return np.log1p(p0) - (1.0 + p0) * (lx + ly) - (2.0 + 1.0 / p0) * np.log(s)
    if fam == 4:
        x, y = -np.log(u), -np.log(v)
        lx, ly = np.log(x), np.log(y)
        ls = _logsumexp2(p0 * lx, p0 * ly)
        A = np.exp(ls / p0)
        return (-A + x + y + (p0 - 1.0) * (lx + ly) + (1.0 / p0 - 2.0) * ls
                + np.log(A + p0 - 1.0))
    if fam == 5:
        s = _frank_den(p0, u, v)
        return np.log(p0 * (-np.expm1(-p0))) - p0 * (u + v) - 2.0 * np.log(np.abs(s))
    if fam == 6:
        ub, vb = np.log1p(-u), np.log1p(-v)
        a, b = np.exp(p0 * ub), np.exp(p0 * vb)
        s = a + b - a * b
        return (1.0 / p0 - 2.0) * np.log(s) + (p0 - 1.0) * (ub + vb) + np.log(p0 - 1.0 + s)
    raise ValueError(f"unknown family code {fam}")


def hfunc(fam, p0, p1, u, v):
    u = _clip(np.asarray(u, dtype=float))
    v = _clip(np.asarray(v, dtype=float))
    if fam == 0:
        return u.copy()
    if fam == 1:
        x, y = special.ndtri(u), special.ndtri(v)
        return special.ndtr((x - p0 * y) / np.sqrt(1.0 - p0 * p0))
    if fam == 2:
        x, y = t_ppf(u, p1), t_ppf(v, p1)
        r2 = (p1 + y * y) * (1.0 - p0 * p0) / (p1 + 1.0)
        return special.stdtr(p1 + 1.0, (x - p0 * y) / np.sqrt(r2))
    if fam == 3:
        lx, ly = np.log(u), np.log(v)
        s = np.exp(-p0 * lx) + np.exp(-p0 * ly) - 1.0
        return np.exp(-(1.0 + p0) * ly - (1.0 + 1.0 / p0) * np.log(s))
    if fam == 4:
        x, y = -np.log(u), -np.log(v)
        lx, ly = np.log(x), np.log(y)
        ls = _logsumexp2(p0 * lx, p0 * ly)
        A = np.exp(ls / p0)
        return np.exp(-A + y + (p0 - 1.0) * ly + (1.0 / p0 - 1.0) * ls)
    if fam == 5:
        return -np.expm1(-p0 * u) * np.exp(-p0 * v) / _frank_den(p0, u, v)
    if fam == 6:
        ub, vb = np.log1p(-u), np.log1p(-v)
        a, b = np.exp(p0 * ub), np.exp(p0 * vb)
        s = a + b - a * b
        return np.exp((1.0 / p0 - 1.0) * np.log(s) + (p0 - 1.0) * vb) * (-np.expm1(p0 * ub))
    raise ValueError(f"unknown family code {fam}")


def _solve_u(fam, p0, p1, q, v, u):
    lo = np.full_like(q, EPS)
    hi = np.full_like(q, 1.0 - EPS)
    out = np.empty_like(q)
    at_lo = hfunc(fam, p0, p1, lo, v) >= q
    at_hi = hfunc(fam, p0, p1, hi, v) <= q
    out[at_lo] = EPS
    out[at_hi & ~at_lo] = 1.0 - EPS
    active = ~(at_lo | at_hi)
    u = np.where((u > lo) & (u < hi), u, 0.5)
    for _ in range(MAXIT):
        if not active.any():
            return out, 0
        idx = np.flatnonzero(active)
        ua, qa, va = u[idx], q[idx], v[idx]
        f = hfunc(fam, p0, p1, ua, va) - qa
        lo[idx] = np.where(f <= 0.0, ua, lo[idx])
        hi[idx] = np.where(f > 0.0, ua, hi[idx])
        done = (np.abs(f) <= 1e-15) | (hi[idx] - lo[idx] <= 4e-16 * hi[idx])
        out[idx[done]] = ua[done]
        active[idx[done]] = False
        un = ua - f / np.exp(logpdf(fam, p0, p1, ua, va))
        bad = ~((un > lo[idx]) & (un < hi[idx]))
        un[bad] = 0.5 * (lo[idx][bad] + hi[idx][bad])
        u[idx] = un
    out[active] = u[active]
    return out, int(active.sum())


def _gumbel_start(a, q, v):
    y = -np.log(v)
    rhs = y + (a - 1.0) * np.log(y) - np.log(q)
    lo, hi = y.copy(), y - np.log(q)
    z = 0.5 * (lo + hi)
    for _ in range(60):
        f = z + (a - 1.0) * np.log(z) - rhs
        lo = np.where(f <= 0.0, z, lo)
        hi = np.where(f > 0.0, z, hi)
        zn = z - f / (1.0 + (a - 1.0) / z)
        zn = np.where((zn > lo) & (zn < hi), zn, 0.5 * (lo + hi))
        if np.all(np.abs(zn - z) <= 1e-15 * z):
            z = zn
            break
        z = zn
    x = z * np.exp(np.log1p(-np.exp(a * np.log(y / z))) / a)
    return np.exp(-x)


def hinv(fam, p0, p1, q, v):
    q = _clip(np.asarray(q, dtype=float))
    v = _clip(np.asarray(v, dtype=float))
    if fam == 0:
        return q.copy(), 0
    if fam == 1:
        y = special.ndtri(v)
        return _clip(special.ndtr(special.ndtri(q) * np.sqrt(1.0 - p0 * p0) + p0 * y)), 0
    if fam == 2:
        y = t_ppf(v, p1)
        r2 = (p1 + y * y) * (1.0 - p0 * p0) / (p1 + 1.0)
        return _clip(special.stdtr(p1, t_ppf(q, p1 + 1.0) * np.sqrt(r2) + p0 * y)), 0
    if fam == 3:
        s = np.exp(-p0 * np.log(v)) * np.expm1(-p0 / (1.0 + p0) * np.log(q))
        return _clip(np.exp(-np.log1p(s) / p0)), 0
    if fam == 4:
        if p0 == 1.0:
            return q.copy(), 0
        return _solve_u(fam, p0, p1, q, v, _gumbel_start(p0, q, v))
    if fam == 5:
        a = np.logaddexp(np.log1p(-q) - p0 * v, np.log(q) - p0)
        return _clip(-(a - np.logaddexp(np.log(q), np.log1p(-q) - p0 * v)) / p0), 0
    if fam == 6:
        return _solve_u(fam, p0, p1, q, v, q.copy())
    raise ValueError(f"unknown family code {fam}")


def _h1(fam, p0, p1, u, v):
    return float(hfunc(fam, p0, p1, np.array([u]), np.array([v]))[0])


def simulate_chain(fams, params, innov, init):
    p = len(fams)
    n = len(innov)
    out = np.empty(n)
    w = [float(x) for x in init[:p]]
    fail = 0
    for t in range(n):
        if p == 0:
            out[t] = min(max(innov[t], EPS), 1.0 - EPS)
            continue
        A = {(1, s): w[s] for s in range(p)}
        B = {(1, s): w[s + 1] for s in range(p - 1)}
        for j in range(2, p + 1):
            f, (a0, a1) = fams[j - 2], params[j - 2]
            for s in range(p - j + 1):
                A[j, s] = _h1(f, a0, a1, A[j - 1, s], B[j - 1, s])
            for s in range(p - j):
                B[j, s] = _h1(f, a0, a1, B[j - 1, s + 1], A[j - 1, s + 1])
        x = np.array([innov[t]])
        for j in range(p, 0, -1):
            x, nf = hinv(fams[j - 1], params[j - 1][0], params[j - 1][1], x,
                         np.array([A[j, p - j]]))
            fail += nf
        out[t] = x[0]
        w = w[1:] + [float(x[0])]
    return out, fail


def dcc_filter(x, eps, qbar, a, b, nu, keep):
    T, d = x.shape
    Q = np.array(qbar, dtype=float, copy=True)
    rout = np.empty((T, d, d)) if keep else None
    total = 0.0
    for t in range(T):
        s = np.sqrt(np.diag(Q))
        R = Q / np.outer(s, s)
        if keep:
            rout[t] = R
        try:
            L = np.linalg.cholesky(R)
        except np.linalg.LinAlgError:
            return -np.inf, rout
        z = np.linalg.solve(L, x[t])
        quad = float(z @ z)
        logdet = 2.0 * float(np.sum(np.log(np.diag(L))))
        if nu > 0:
            total += -0.5 * logdet - 0.5 * (nu + d) * np.log1p(quad / nu)
        else:
            total += -0.5 * logdet - 0.5 * quad
        Q = (1.0 - a - b) * qbar + a * np.outer(eps[t], eps[t]) + b * Q
    return total, rout
