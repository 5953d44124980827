"""Cross-sectional copulas linking the conditional PITs of ``d`` series.

Four kinds share the elliptical machinery:

* ``GaussianFull``: Gaussian copula with an unstructured correlation matrix.
* ``StudentTFull``: t copula with an unstructured correlation matrix.
* ``GaussianMatern``: Gaussian copula whose correlation is a Matérn kernel of
  inter-site distances.
* ``TimeVaryingT``: t copula whose correlation follows a DCC(1,1) recursion
  driven by standardized t scores of the previous period.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from . import _backend
from .copulae import CLIP
from .errors import DomainError

NU_MIN = 2.001
JITTER = 1e-10


class CrossKind(str, enum.Enum):
    GAUSSIAN_FULL = "GaussianFull"
    STUDENT_T_FULL = "StudentTFull"
    GAUSSIAN_MATERN = "GaussianMatern"
    TIME_VARYING_T = "TimeVaryingT"

    @classmethod
    def parse(cls, name) -> "CrossKind":
        if isinstance(name, CrossKind):
            return name
        for k in cls:
            if k.value.lower() == str(name).lower():
                return k
        raise DomainError(f"unknown cross-copula kind {name!r}; expected one of "
                          f"{[k.value for k in cls]}")

    @property
    def is_t(self) -> bool:
        return self in (CrossKind.STUDENT_T_FULL, CrossKind.TIME_VARYING_T)


def check_correlation(R, name="correlation") -> np.ndarray:
    R = np.array(R, dtype=float)
    if R.ndim != 2 or R.shape[0] != R.shape[1]:
        raise DomainError(f"{name} must be a square matrix")
    if not np.all(np.isfinite(R)):
        raise DomainError(f"{name} has non-finite entries")
    if not np.allclose(R, R.T, atol=1e-12):
        raise DomainError(f"{name} must be symmetric")
    if not np.allclose(np.diag(R), 1.0, atol=1e-12):
        raise DomainError(f"{name} must have unit diagonal")
    try:
        np.linalg.cholesky(R)
    except np.linalg.LinAlgError:
        raise DomainError(f"{name} is not positive definite") from None
    R = 0.5 * (R + R.T)
    np.fill_diagonal(R, 1.0)
    return R


def matern_correlation(distances, range_, smoothness) -> np.ndarray:
    """Matérn correlation ``2^(1-v)/Gamma(v) x^v K_v(x)`` with ``x = sqrt(2 v) h / range``.

    ``smoothness = 0.5`` is evaluated as the exact exponential kernel
    ``exp(-h / range)``.  Off-diagonal entries are shrunk by ``1/(1 + 1e-10)``
    when needed to keep the result positive definite.
    """
    if not (np.isfinite(range_) and range_ > 0):
        raise DomainError(f"Matérn range must be positive, got {range_}")
    if not (np.isfinite(smoothness) and smoothness > 0):
        raise DomainError(f"Matérn smoothness must be positive, got {smoothness}")
    h = np.asarray(distances, dtype=float)
    if np.any(h < 0) or not np.all(np.isfinite(h)):
        raise DomainError("distances must be finite and nonnegative")
    nu = float(smoothness)
    if nu == 0.5:
        R = np.exp(-h / range_)
    else:
        x = math.sqrt(2.0 * nu) * h / range_
        R = np.ones_like(x)
        pos = x > 1e-12
        xp = x[pos]
        with np.errstate(divide="ignore", under="ignore"):
            logr = ((1.0 - nu) * math.log(2.0) - special.gammaln(nu) + nu * np.log(xp)
                    + np.log(special.kve(nu, xp)) - xp)
        R[pos] = np.exp(logr)
    if R.ndim == 2:
        np.fill_diagonal(R, 1.0)
        try:
            np.linalg.cholesky(R)
        except np.linalg.LinAlgError:
            off = ~np.eye(R.shape[0], dtype=bool)
            R[off] /= 1.0 + JITTER
    return R


@dataclass(frozen=True, eq=False)
class CrossCopulaSpec:
    """Parameters of a cross-sectional copula.

    Only the fields relevant to ``kind`` are used: ``correlation`` for the
    full kinds, ``nu`` for the t kinds, ``matern_range``/``matern_smoothness``/
    ``distances`` for ``GaussianMatern`` and ``dcc_a``/``dcc_b``/``qbar`` for
    ``TimeVaryingT``.
    """

    kind: CrossKind
    correlation: np.ndarray = None
    nu: float = None
    matern_range: float = None
    matern_smoothness: float = None
    distances: np.ndarray = None
    dcc_a: float = 0.0
    dcc_b: float = 0.0
    qbar: np.ndarray = None
    _R: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        kind = CrossKind.parse(self.kind)
        object.__setattr__(self, "kind", kind)
        if kind.is_t:
            if self.nu is None or not (np.isfinite(self.nu) and self.nu >= NU_MIN):
                raise DomainError(f"{kind.value} needs nu >= {NU_MIN}, got {self.nu}")
            object.__setattr__(self, "nu", float(self.nu))
        if kind in (CrossKind.GAUSSIAN_FULL, CrossKind.STUDENT_T_FULL):
            if self.correlation is None:
                raise DomainError(f"{kind.value} needs a correlation matrix")
            R = check_correlation(self.correlation)
            object.__setattr__(self, "correlation", R)
        elif kind is CrossKind.GAUSSIAN_MATERN:
            D = np.array(self.distances, dtype=float) if self.distances is not None else None
            if D is None or D.ndim != 2 or D.shape[0] != D.shape[1]:
                raise DomainError("GaussianMatern needs a square distance matrix")
            if not np.allclose(D, D.T) or np.any(np.diag(D) != 0) or np.any(D < 0):
                raise DomainError("distances must be symmetric, nonnegative, with zero diagonal")
            off = ~np.eye(D.shape[0], dtype=bool)
            if np.any(D[off] == 0):
                raise DomainError("two distinct sites at distance 0 make the Matérn "
                                  "correlation degenerate")
            object.__setattr__(self, "distances", D)
            R = matern_correlation(D, self.matern_range, self.matern_smoothness)
            object.__setattr__(self, "matern_range", float(self.matern_range))
            object.__setattr__(self, "matern_smoothness", float(self.matern_smoothness))
        else:
            a, b = float(self.dcc_a), float(self.dcc_b)
            if not (a >= 0 and b >= 0 and a + b < 1):
                raise DomainError(f"DCC parameters need a, b >= 0 and a + b < 1, got a={a}, b={b}")
            object.__setattr__(self, "dcc_a", a)
            object.__setattr__(self, "dcc_b", b)
            if self.qbar is None:
                raise DomainError("TimeVaryingT needs Qbar")
            R = check_correlation(self.qbar, "Qbar")
            object.__setattr__(self, "qbar", R)
        R = np.array(R)
        R.setflags(write=False)
        object.__setattr__(self, "_R", R)

    @property
    def d(self) -> int:
        return self._R.shape[0]

    @property
    def static_correlation(self) -> np.ndarray:
        """Correlation matrix of static kinds; ``Qbar`` for the time-varying kind."""
        return self._R

    @property
    def nparams(self) -> int:
        d = self.d
        k = {CrossKind.GAUSSIAN_FULL: d * (d - 1) // 2, CrossKind.STUDENT_T_FULL: d * (d - 1) // 2 + 1,
             CrossKind.GAUSSIAN_MATERN: 2, CrossKind.TIME_VARYING_T: 3}
        return k[self.kind]

    @classmethod
    def independence(cls, d: int) -> "CrossCopulaSpec":
        return cls(CrossKind.GAUSSIAN_FULL, correlation=np.eye(d))

    def to_dict(self) -> dict:
        out = {"kind": self.kind.value}
        if self.kind.is_t:
            out["nu"] = self.nu
        if self.kind is CrossKind.GAUSSIAN_MATERN:
            out["matern"] = {"range": self.matern_range, "smoothness": self.matern_smoothness,
                             "distances": self.distances.tolist()}
        elif self.kind is CrossKind.TIME_VARYING_T:
            out["dcc"] = {"a": self.dcc_a, "b": self.dcc_b, "qbar": self.qbar.tolist()}
        else:
            out["correlation"] = self.correlation.tolist()
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "CrossCopulaSpec":
        kind = CrossKind.parse(d["kind"])
        kw = {"nu": d.get("nu")}
        if kind is CrossKind.GAUSSIAN_MATERN:
            m = d["matern"]
            kw.update(matern_range=m["range"], matern_smoothness=m["smoothness"],
                      distances=np.array(m["distances"]))
        elif kind is CrossKind.TIME_VARYING_T:
            c = d["dcc"]
            kw.update(dcc_a=c["a"], dcc_b=c["b"], qbar=np.array(c["qbar"]))
        else:
            kw["correlation"] = np.array(d["correlation"])
        return cls(kind, **kw)


# ---------------------------------------------------------------------------
# Latent scores and densities
# ---------------------------------------------------------------------------

def t_ppf(v, nu: float) -> np.ndarray:
    v = np.ascontiguousarray(v, dtype=float)
    return _backend.kernels.t_ppf(v.ravel(), float(nu)).reshape(v.shape)


def latent_scores(v, nu=None) -> np.ndarray:
    """Normal (``nu`` is None) or Student t quantiles of clipped PITs."""
    v = np.clip(np.asarray(v, dtype=float), CLIP, 1.0 - CLIP)
    return special.ndtri(v) if nu is None else t_ppf(v, nu)


def _t_uni_logpdf(x, nu):
    return (special.gammaln(0.5 * (nu + 1.0)) - special.gammaln(0.5 * nu) - 0.5 * math.log(nu * math.pi)
            - 0.5 * (nu + 1.0) * np.log1p(x * x / nu))


def _mv_const(nu, d):
    return (special.gammaln(0.5 * (nu + d)) - special.gammaln(0.5 * nu)
            - 0.5 * d * math.log(nu * math.pi))


def _chol(R):
    try:
        return np.linalg.cholesky(R)
    except np.linalg.LinAlgError:
        raise DomainError("correlation matrix is not positive definite") from None


def elliptical_logdensity(v, R, nu=None) -> np.ndarray:
    """Row-wise log copula density of the Gaussian (``nu`` None) or t copula."""
    v = np.atleast_2d(np.asarray(v, dtype=float))
    x = latent_scores(v, nu)
    L = _chol(R)
    z = np.linalg.solve(L, x.T)
    quad = np.sum(z * z, axis=0)
    logdet = 2.0 * np.sum(np.log(np.diag(L)))
    if nu is None:
        return -0.5 * logdet - 0.5 * (quad - np.sum(x * x, axis=1))
    d = R.shape[0]
    return (_mv_const(nu, d) - 0.5 * logdet - 0.5 * (nu + d) * np.log1p(quad / nu)
            - np.sum(_t_uni_logpdf(x, nu), axis=1))


def logdensity(v, spec: CrossCopulaSpec, state=None):
    """Log copula density at ``v`` (a ``d``-vector, or ``n x d`` rows).

    ``state`` is the correlation matrix ``R_t``; required for ``TimeVaryingT``.
    """
    v = np.asarray(v, dtype=float)
    if v.shape[-1] != spec.d:
        raise DomainError(f"expected {spec.d} coordinates, got {v.shape[-1]}")
    if np.any(np.isnan(v)) or np.any((v < 0) | (v > 1)):
        raise DomainError("v must lie in [0, 1]")
    if spec.kind is CrossKind.TIME_VARYING_T:
        if state is None:
            raise DomainError("TimeVaryingT needs the current correlation state R_t")
        R = check_correlation(state, "state")
    else:
        R = spec.static_correlation if state is None else check_correlation(state, "state")
    out = elliptical_logdensity(v, R, spec.nu if spec.kind.is_t else None)
    return float(out[0]) if v.ndim == 1 else out


# ---------------------------------------------------------------------------
# DCC recursion
# ---------------------------------------------------------------------------

def rescale(Q) -> np.ndarray:
    s = np.sqrt(np.diag(Q))
    R = Q / np.outer(s, s)
    R = 0.5 * (R + R.T)
    np.fill_diagonal(R, 1.0)
    return R


def dcc_step(Q_prev, eps_prev, a: float, b: float, qbar):
    """One DCC(1,1) update; returns ``(Q_next, R_next)``."""
    if not (a >= 0 and b >= 0 and a + b < 1):
        raise DomainError(f"DCC parameters need a, b >= 0 and a + b < 1, got a={a}, b={b}")
    Q_prev = np.asarray(Q_prev, dtype=float)
    e = np.asarray(eps_prev, dtype=float)
    Q = (1.0 - a - b) * np.asarray(qbar, dtype=float) + a * np.outer(e, e) + b * Q_prev
    if np.any(np.diag(Q) <= 0):
        raise DomainError("DCC update produced a non-positive diagonal")
    R = rescale(Q)
    try:
        np.linalg.cholesky(R)
    except np.linalg.LinAlgError:
        raise DomainError("DCC update produced a non positive definite correlation") from None
    return Q, R


def standardized_t(x, nu):
    """Scale t scores to unit variance (the DCC innovations)."""
    return x * math.sqrt((nu - 2.0) / nu)


def dcc_filter(V, a, b, nu, qbar=None, keep=False):
    """Filter a ``T x d`` matrix of conditional PITs through the time-varying t copula.

    Returns ``(loglik, R)`` where ``R`` holds ``R_1..R_T`` (``keep=True``) and
    ``loglik`` is the summed log copula density.  ``qbar`` defaults to the
    sample correlation of the standardized scores.  The recursion starts at
    ``Q_1 = Qbar``.
    """
    x = np.ascontiguousarray(latent_scores(V, nu))
    eps = np.ascontiguousarray(standardized_t(x, nu))
    if qbar is None:
        qbar = np.corrcoef(eps, rowvar=False)
    qbar = np.ascontiguousarray(qbar, dtype=float)
    total, R = _backend.kernels.dcc_filter(x, eps, qbar, float(a), float(b), float(nu), bool(keep))
    if not np.isfinite(total):
        return -np.inf, (None if R is None else np.asarray(R))
    T, d = x.shape
    total += T * _mv_const(nu, d) - float(np.sum(_t_uni_logpdf(x, nu)))
    return float(total), (None if R is None else np.asarray(R))


def dcc_next_state(V_hist, spec: CrossCopulaSpec) -> np.ndarray:
    """Correlation ``R_{T+1}`` implied by the history ``V_1..V_T``."""
    x = latent_scores(V_hist, spec.nu)
    eps = standardized_t(x, spec.nu)
    Q = spec.qbar.copy()
    for e in eps:
        Q = (1.0 - spec.dcc_a - spec.dcc_b) * spec.qbar + spec.dcc_a * np.outer(e, e) + spec.dcc_b * Q
    return rescale(Q)


def series_loglik(V, spec: CrossCopulaSpec) -> float:
    """Summed log copula density of the rows of ``V`` (filtering for TimeVaryingT)."""
    V = np.atleast_2d(np.asarray(V, dtype=float))
    if spec.kind is CrossKind.TIME_VARYING_T:
        return dcc_filter(V, spec.dcc_a, spec.dcc_b, spec.nu, spec.qbar)[0]
    return float(np.sum(elliptical_logdensity(V, spec.static_correlation,
                                              spec.nu if spec.kind.is_t else None)))


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------

def _to_uniform(x, nu):
    u = special.ndtr(x) if nu is None else special.stdtr(nu, x)
    return np.clip(u, CLIP, 1.0 - CLIP)


def sample_latent(n, R, nu, rng) -> np.ndarray:
    L = _chol(R)
    z = rng.standard_normal((n, R.shape[0])) @ L.T
    if nu is not None:
        z /= np.sqrt(rng.chisquare(nu, size=(n, 1)) / nu)
    return z


def _effective(spec, state):
    if state is not None:
        return check_correlation(state, "state")
    return spec.static_correlation


def sample(spec: CrossCopulaSpec, state=None, seed=None, n: int = None):
    """Draw from the copula; one ``d``-vector when ``n`` is None, else ``n x d``."""
    rng = np.random.default_rng(seed) if not isinstance(seed, np.random.Generator) else seed
    nu = spec.nu if spec.kind.is_t else None
    x = sample_latent(1 if n is None else n, _effective(spec, state), nu, rng)
    v = _to_uniform(x, nu)
    return v[0] if n is None else v


def sample_conditional(spec: CrossCopulaSpec, observed_idx, observed_v, state=None, seed=None,
                       n: int = 1) -> np.ndarray:
    """Draw ``n`` full vectors with coordinates ``observed_idx`` fixed at ``observed_v``.

    The unobserved latent scores are drawn from the Gaussian or t conditional
    distribution given the observed latent scores.
    """
    rng = np.random.default_rng(seed) if not isinstance(seed, np.random.Generator) else seed
    R = _effective(spec, state)
    d = R.shape[0]
    obs = np.asarray(observed_idx, dtype=int).ravel()
    if obs.size and (obs.min() < 0 or obs.max() >= d or np.unique(obs).size != obs.size):
        raise DomainError(f"observed indices must be distinct and in [0, {d})")
    vo = np.clip(np.asarray(observed_v, dtype=float).ravel(), CLIP, 1.0 - CLIP)
    if vo.size != obs.size:
        raise DomainError("one observed value per observed index is required")
    nu = spec.nu if spec.kind.is_t else None
    free = np.setdiff1d(np.arange(d), obs)
    out = np.empty((n, d))
    out[:, obs] = vo
    if free.size == 0:
        return out
    if obs.size == 0:
        out[:] = _to_uniform(sample_latent(n, R, nu, rng), nu)
        return out
    xo = latent_scores(vo, nu)
    Roo = R[np.ix_(obs, obs)]
    Rfo = R[np.ix_(free, obs)]
    K = np.linalg.solve(Roo, Rfo.T).T
    mu = K @ xo
    S = R[np.ix_(free, free)] - K @ Rfo.T
    S = 0.5 * (S + S.T)
    z = rng.standard_normal((n, free.size)) @ _chol(S).T
    if nu is not None:
        k = obs.size
        scale = (nu + float(xo @ np.linalg.solve(Roo, xo))) / (nu + k)
        z *= np.sqrt(scale / (rng.chisquare(nu + k, size=(n, 1)) / (nu + k)))
    out[:, free] = _to_uniform(mu + z, nu)
    return out
