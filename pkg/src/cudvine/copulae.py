"""Bivariate copula families used as the pair copulas of every D-vine tree.

Seven exchangeable one- or two-parameter families are supported:
independence, Gaussian, Student t, Clayton, Gumbel, Frank and Joe.  All
evaluation functions accept array-like ``u``/``v`` and broadcast them.

Conventions
-----------
``hfun(u, v)`` is the conditional distribution ``P(U <= u | V = v)``, i.e.
``dC(u, v)/dv``.  ``hinv`` inverts it in ``u``.  Inputs are clipped to
``[CLIP, 1 - CLIP]`` before evaluation; values outside ``[0, 1]`` raise.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, optimize, special

from . import _backend
from .errors import ConvergenceError, DomainError

CLIP = 1e-10


class Family(str, enum.Enum):
    INDEPENDENCE = "Independence"
    GAUSSIAN = "Gaussian"
    STUDENT_T = "StudentT"
    CLAYTON = "Clayton"
    GUMBEL = "Gumbel"
    FRANK = "Frank"
    JOE = "Joe"

    @property
    def code(self) -> int:
        return _CODES[self]

    @property
    def nparams(self) -> int:
        return _NPARAMS.get(self, 1)

    @classmethod
    def parse(cls, name) -> "Family":
        if isinstance(name, Family):
            return name
        key = str(name).replace("-", "").replace("_", "").replace(" ", "").lower()
        for fam in cls:
            if fam.value.lower() == key:
                return fam
        aliases = {"t": cls.STUDENT_T, "student": cls.STUDENT_T, "normal": cls.GAUSSIAN,
                   "indep": cls.INDEPENDENCE, "independent": cls.INDEPENDENCE}
        if key in aliases:
            return aliases[key]
        raise DomainError(f"unknown copula family {name!r}")


_CODES = {Family.INDEPENDENCE: 0, Family.GAUSSIAN: 1, Family.STUDENT_T: 2, Family.CLAYTON: 3,
          Family.GUMBEL: 4, Family.FRANK: 5, Family.JOE: 6}
_NPARAMS = {Family.INDEPENDENCE: 0, Family.STUDENT_T: 2}

#: The candidate pool of the selection study (independence is always implicit).
DEFAULT_POOL = (Family.GAUSSIAN, Family.STUDENT_T, Family.CLAYTON, Family.GUMBEL,
                Family.FRANK, Family.JOE)

NU_MIN, NU_MAX = 2.001, 100.0


def _check_params(fam: Family, params: tuple) -> None:
    if len(params) != fam.nparams:
        raise DomainError(f"{fam.value} takes {fam.nparams} parameter(s), got {len(params)}")
    if not all(math.isfinite(p) for p in params):
        raise DomainError(f"{fam.value} parameters must be finite, got {params}")
    if fam in (Family.GAUSSIAN, Family.STUDENT_T):
        if not -1.0 < params[0] < 1.0:
            raise DomainError(f"{fam.value} correlation must lie in (-1, 1), got {params[0]}")
        if fam is Family.STUDENT_T and not NU_MIN <= params[1] <= NU_MAX:
            raise DomainError(f"StudentT degrees of freedom must lie in [{NU_MIN}, {NU_MAX}], "
                              f"got {params[1]}")
    elif fam is Family.CLAYTON and not 0.0 < params[0] <= 28.0:
        raise DomainError(f"Clayton theta must lie in (0, 28], got {params[0]}")
    elif fam is Family.GUMBEL and not 1.0 <= params[0] <= 17.0:
        raise DomainError(f"Gumbel alpha must lie in [1, 17], got {params[0]}")
    elif fam is Family.FRANK and not (-35.0 <= params[0] <= 35.0 and params[0] != 0.0):
        raise DomainError(f"Frank delta must lie in [-35, 35] without 0, got {params[0]}")
    elif fam is Family.JOE and not 1.0 < params[0] <= 30.0:
        raise DomainError(f"Joe theta must lie in (1, 30], got {params[0]}")


@dataclass(frozen=True)
class BivariateCopulaSpec:
    """A copula family together with a validated parameter vector."""

    family: Family
    params: tuple = ()

    def __post_init__(self):
        fam = Family.parse(self.family)
        params = tuple(float(p) for p in np.atleast_1d(np.asarray(self.params, dtype=float)))
        _check_params(fam, params)
        object.__setattr__(self, "family", fam)
        object.__setattr__(self, "params", params)

    @classmethod
    def independence(cls) -> "BivariateCopulaSpec":
        return cls(Family.INDEPENDENCE, ())

    @property
    def is_independence(self) -> bool:
        return self.family is Family.INDEPENDENCE

    @property
    def kernel_args(self) -> tuple:
        p = self.params + (0.0, 0.0)
        return self.family.code, p[0], p[1]

    def to_dict(self) -> dict:
        return {"family": self.family.value, "params": list(self.params)}

    @classmethod
    def from_dict(cls, d: dict) -> "BivariateCopulaSpec":
        return cls(d["family"], tuple(d.get("params", ())))

    def __str__(self):
        if self.is_independence:
            return "Independence"
        return f"{self.family.value}({', '.join(f'{p:.4g}' for p in self.params)})"


# ---------------------------------------------------------------------------
# Raw kernel access (no validation; used inside optimisation loops)
# ---------------------------------------------------------------------------

def _flat(x):
    return np.ascontiguousarray(x, dtype=float).ravel()


def raw_logpdf(spec: BivariateCopulaSpec, u, v) -> np.ndarray:
    """Log density without input checks; ``u`` and ``v`` must be 1-D and equal length."""
    return _backend.kernels.logpdf(*spec.kernel_args, _flat(u), _flat(v))


def raw_hfun(spec: BivariateCopulaSpec, u, v) -> np.ndarray:
    return _backend.kernels.hfunc(*spec.kernel_args, _flat(u), _flat(v))


def raw_hinv(spec: BivariateCopulaSpec, q, v) -> np.ndarray:
    out, failed = _backend.kernels.hinv(*spec.kernel_args, _flat(q), _flat(v))
    if failed:
        raise ConvergenceError(f"hinv did not converge for {failed} point(s) of {spec}")
    return out


def t_scores(u, nu: float) -> np.ndarray:
    """Student t quantiles of clipped ``u``."""
    u = np.clip(np.ascontiguousarray(u, dtype=float), CLIP, 1.0 - CLIP)
    return _backend.kernels.t_ppf(u.ravel(), float(nu)).reshape(u.shape)


def t_logpdf_scores(x, y, rho: float, nu: float) -> np.ndarray:
    """Student t copula log density from precomputed scores ``x = t_nu^-1(u)``, ``y = t_nu^-1(v)``."""
    r2 = 1.0 - rho * rho
    q = (x * x + y * y - 2.0 * rho * x * y) / (nu * r2)
    const = (special.gammaln(0.5 * (nu + 2.0)) + special.gammaln(0.5 * nu)
             - 2.0 * special.gammaln(0.5 * (nu + 1.0)) - 0.5 * math.log(r2))
    return (const - 0.5 * (nu + 2.0) * np.log1p(q)
            + 0.5 * (nu + 1.0) * (np.log1p(x * x / nu) + np.log1p(y * y / nu)))


def t_hfun_scores(x, y, rho: float, nu: float) -> np.ndarray:
    """Student t h-function ``h(u | v)`` from precomputed scores."""
    r2 = (nu + y * y) * (1.0 - rho * rho) / (nu + 1.0)
    return special.stdtr(nu + 1.0, (x - rho * y) / np.sqrt(r2))


def _prepare(u, v):
    u, v = np.broadcast_arrays(np.asarray(u, dtype=float), np.asarray(v, dtype=float))
    for name, x in (("u", u), ("v", v)):
        if np.any(np.isnan(x)) or np.any((x < 0.0) | (x > 1.0)):
            raise DomainError(f"{name} must lie in [0, 1]")
    return u.shape, _flat(u), _flat(v)


def _shaped(out, shape):
    return out.reshape(shape) if shape else float(out[0])


# ---------------------------------------------------------------------------
# Public evaluation API
# ---------------------------------------------------------------------------

def logdensity(u, v, spec: BivariateCopulaSpec):
    shape, u, v = _prepare(u, v)
    return _shaped(raw_logpdf(spec, u, v), shape)


def density(u, v, spec: BivariateCopulaSpec):
    """Copula density ``c(u, v)``."""
    return np.exp(logdensity(u, v, spec))


def hfun(u, v, spec: BivariateCopulaSpec):
    """Conditional distribution function ``h(u | v) = dC(u, v)/dv``."""
    shape, u, v = _prepare(u, v)
    return _shaped(raw_hfun(spec, u, v), shape)


def hinv(q, v, spec: BivariateCopulaSpec):
    """Inverse of :func:`hfun` in its first argument.

    Closed forms are used for the independence, Gaussian, t, Clayton and
    Frank families; Gumbel and Joe use a bracketed Newton iteration.
    """
    shape, q, v = _prepare(q, v)
    return _shaped(raw_hinv(spec, q, v), shape)


def _bvn_cdf(x, y, rho):
    # Owen's T representation of the standard bivariate normal CDF.
    x, y = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
    s = math.sqrt(1.0 - rho * rho)
    out = np.empty(x.shape)
    both0 = (x == 0.0) & (y == 0.0)
    out[both0] = 0.25 + math.asin(rho) / (2.0 * math.pi)
    m = ~both0
    xm, ym = x[m], y[m]
    with np.errstate(divide="ignore", invalid="ignore"):
        ax = np.where(xm == 0.0, np.copysign(np.inf, ym - rho * xm), (ym - rho * xm) / (xm * s))
        ay = np.where(ym == 0.0, np.copysign(np.inf, xm - rho * ym), (xm - rho * ym) / (ym * s))
    beta = np.where((xm * ym > 0.0) | ((xm * ym == 0.0) & (xm + ym >= 0.0)), 0.0, 0.5)
    out[m] = (0.5 * (special.ndtr(xm) + special.ndtr(ym))
              - special.owens_t(xm, ax) - special.owens_t(ym, ay) - beta)
    return np.clip(out, 0.0, 1.0)


def _t_cdf_scalar(x, y, rho, nu):
    # Normal scale mixture: (X, Y) = Z / sqrt(W / nu) with W ~ chi2(nu).
    def integrand(w):
        s = math.sqrt(w / nu)
        return float(_bvn_cdf(x * s, y * s, rho)) * math.exp(
            (0.5 * nu - 1.0) * math.log(w) - 0.5 * w - 0.5 * nu * math.log(2.0) - math.lgamma(0.5 * nu))

    mode = max(nu - 2.0, 0.0)
    pts = [mode, nu, nu + 10.0 * math.sqrt(2.0 * nu)]
    total = 0.0
    edges = [0.0] + pts
    for lo, hi in zip(edges[:-1], edges[1:]):
        total += integrate.quad(integrand, lo, hi, epsabs=1e-15, epsrel=1e-13, limit=200)[0]
    total += integrate.quad(integrand, edges[-1], np.inf, epsabs=1e-15, epsrel=1e-13, limit=200)[0]
    return total


def cdf(u, v, spec: BivariateCopulaSpec):
    """Copula distribution function ``C(u, v)``, exact on the boundary of the square."""
    u, v = np.broadcast_arrays(np.asarray(u, dtype=float), np.asarray(v, dtype=float))
    if np.any(np.isnan(u) | np.isnan(v)) or np.any((u < 0) | (u > 1) | (v < 0) | (v > 1)):
        raise DomainError("u and v must lie in [0, 1]")
    shape = u.shape
    u, v = u.ravel(), v.ravel()
    out = np.empty(u.shape)
    edge_zero = (u == 0.0) | (v == 0.0)
    edge_u1 = (u == 1.0) & ~edge_zero
    edge_v1 = (v == 1.0) & ~edge_zero & ~edge_u1
    out[edge_zero] = 0.0
    out[edge_u1] = v[edge_u1]
    out[edge_v1] = u[edge_v1]
    m = ~(edge_zero | edge_u1 | edge_v1)
    a = np.clip(u[m], CLIP, 1.0 - CLIP)
    b = np.clip(v[m], CLIP, 1.0 - CLIP)
    out[m] = _interior_cdf(spec, a, b)
    return out.reshape(shape) if shape else float(out[0])


def _interior_cdf(spec, u, v):
    fam, p = spec.family, spec.params
    if fam is Family.INDEPENDENCE:
        return u * v
    if fam is Family.GAUSSIAN:
        return _bvn_cdf(special.ndtri(u), special.ndtri(v), p[0])
    if fam is Family.STUDENT_T:
        x = special.stdtrit(p[1], u)
        y = special.stdtrit(p[1], v)
        return np.array([_t_cdf_scalar(a, b, p[0], p[1]) for a, b in zip(x, y)])
    if fam is Family.CLAYTON:
        th = p[0]
        return np.exp(-np.log(np.exp(-th * np.log(u)) + np.exp(-th * np.log(v)) - 1.0) / th)
    if fam is Family.GUMBEL:
        a = p[0]
        return np.exp(-((-np.log(u)) ** a + (-np.log(v)) ** a) ** (1.0 / a))
    if fam is Family.FRANK:
        d = p[0]
        if d < 0:
            return -np.log1p(np.expm1(-d * u) * np.expm1(-d * v) / np.expm1(-d)) / d
        # for d > 0 write the log argument as a ratio of positive terms to avoid cancellation
        num = -np.exp(-d * u) * np.expm1(-d * v) - np.exp(-d * v) * np.expm1(-d * (1.0 - v))
        return -(np.log(num) - math.log(-math.expm1(-d))) / d
    if fam is Family.JOE:
        th = p[0]
        a, b = (1.0 - u) ** th, (1.0 - v) ** th
        return 1.0 - (a + b - a * b) ** (1.0 / th)
    raise DomainError(f"unsupported family {fam}")


# ---------------------------------------------------------------------------
# Kendall's tau
# ---------------------------------------------------------------------------

def _frank_tau(delta: float) -> float:
    d = abs(delta)
    debye1 = integrate.quad(lambda t: t / math.expm1(t) if t > 0 else 1.0, 0.0, d,
                            epsabs=1e-14, epsrel=1e-13)[0] / d
    return math.copysign(1.0 - 4.0 / d + 4.0 * debye1 / d, delta)


def _joe_tau(theta: float) -> float:
    # tau = 1 + 4 * int_0^1 phi(t) / phi'(t) dt with generator phi = -log(1 - (1-t)^theta)
    def ratio(t):
        b = (1.0 - t) ** theta
        if b >= 1.0:
            return 0.0
        return math.log1p(-b) * (1.0 - b) / (theta * (1.0 - t) ** (theta - 1.0))

    return 1.0 + 4.0 * integrate.quad(ratio, 0.0, 1.0, epsabs=1e-14, epsrel=1e-13, limit=200)[0]


def tau(spec: BivariateCopulaSpec) -> float:
    """Kendall's tau implied by the copula parameters."""
    fam, p = spec.family, spec.params
    if fam is Family.INDEPENDENCE:
        return 0.0
    if fam in (Family.GAUSSIAN, Family.STUDENT_T):
        return 2.0 / math.pi * math.asin(p[0])
    if fam is Family.CLAYTON:
        return p[0] / (p[0] + 2.0)
    if fam is Family.GUMBEL:
        return 1.0 - 1.0 / p[0]
    if fam is Family.FRANK:
        return _frank_tau(p[0])
    return _joe_tau(p[0])


_TAU_RANGE = {
    Family.CLAYTON: (0.0, 28.0 / 30.0),
    Family.GUMBEL: (0.0, 16.0 / 17.0),
}


def tau_to_param(family, tau_value: float, nu: float = 8.0) -> BivariateCopulaSpec:
    """Invert the Kendall's tau map of ``family``.

    ``nu`` is carried into the Student t spec unchanged (tau does not
    depend on it).  Raises :class:`DomainError` when ``tau_value`` is not
    attainable inside the family's parameter box.
    """
    fam = Family.parse(family)
    t = float(tau_value)
    if not -1.0 < t < 1.0:
        raise DomainError(f"tau must lie in (-1, 1), got {t}")
    if fam is Family.INDEPENDENCE:
        if t != 0.0:
            raise DomainError("independence copula only attains tau = 0")
        return BivariateCopulaSpec.independence()
    if fam is Family.GAUSSIAN:
        return BivariateCopulaSpec(fam, (math.sin(math.pi * t / 2.0),))
    if fam is Family.STUDENT_T:
        return BivariateCopulaSpec(fam, (math.sin(math.pi * t / 2.0), nu))
    if fam in _TAU_RANGE:
        lo, hi = _TAU_RANGE[fam]
        if fam is Family.CLAYTON and not lo < t <= hi or fam is Family.GUMBEL and not lo <= t <= hi:
            raise DomainError(f"tau {t} not attainable by {fam.value}")
        if fam is Family.CLAYTON:
            return BivariateCopulaSpec(fam, (min(2.0 * t / (1.0 - t), 28.0),))
        return BivariateCopulaSpec(fam, (min(1.0 / (1.0 - t), 17.0),))
    if fam is Family.FRANK:
        tmax = _frank_tau(35.0)
        if t == 0.0 or abs(t) > tmax:
            raise DomainError(f"tau {t} not attainable by Frank")
        root = optimize.brentq(lambda d: _frank_tau(d) - abs(t), 1e-6, 35.0, xtol=1e-14, rtol=1e-14)
        return BivariateCopulaSpec(fam, (math.copysign(root, t),))
    tmax = _joe_tau(30.0)
    if not 0.0 < t <= tmax:
        raise DomainError(f"tau {t} not attainable by Joe")
    root = optimize.brentq(lambda th: _joe_tau(th) - t, 1.0 + 1e-9, 30.0, xtol=1e-14, rtol=1e-14)
    return BivariateCopulaSpec(fam, (root,))


def sample_pair(n: int, spec: BivariateCopulaSpec, seed: int) -> np.ndarray:
    """Draw ``n`` pairs ``(u, v)`` by conditional inversion; returns an ``(n, 2)`` array."""
    if n < 1:
        raise DomainError("n must be at least 1")
    rng = np.random.default_rng(seed)
    v = rng.uniform(size=n)
    w = rng.uniform(size=n)
    u = raw_hinv(spec, w, v)
    return np.column_stack([u, np.clip(v, CLIP, 1.0 - CLIP)])
