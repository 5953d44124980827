"""Sequential selection and two-stage maximum likelihood for CuDvine models.

Stage 1 fits each series' uDvine on its rescaled-ECDF PITs; stage 2 fits the
cross-sectional copula on the resulting conditional PITs.  Standard errors
come from a parametric bootstrap.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from joblib import Parallel, delayed
from scipy import optimize, special, stats

from . import crosscopula as cc
from .copulae import DEFAULT_POOL, BivariateCopulaSpec, Family, raw_logpdf, tau_to_param
from .errors import ConvergenceError, DataError, DomainError
from .marginals import EmpiricalMarginal
from .model import CuDvineModel, TimeSeriesPanel, align_conditional_pits
from .udvine import LOGLIK_SENTINEL, UDvineModel, UDvineSpec, loglik_unchecked, vine_arrays

TIE_TOL = 1e-9
MIN_EXTRA_OBS = 20

# ---------------------------------------------------------------------------
# Box transforms
# ---------------------------------------------------------------------------

# (lo, hi, shift, log): a parameter equals shift + exp(y) (log) or y (linear),
# with y = lo + (hi - lo) * expit(x) for an unconstrained x.
_BOXES = {
    Family.GAUSSIAN: [(-0.999, 0.999, 0.0, False)],
    Family.STUDENT_T: [(-0.999, 0.999, 0.0, False), (math.log(2.001), math.log(100.0), 0.0, True)],
    Family.CLAYTON: [(math.log(1e-4), math.log(28.0), 0.0, True)],
    Family.GUMBEL: [(math.log(1e-6), math.log(16.0), 1.0, True)],
    Family.FRANK: [(math.log(1e-4), math.log(35.0), 0.0, True)],
    Family.JOE: [(math.log(1e-4), math.log(29.0), 1.0, True)],
}


def _to_param(x, box, sign=1.0):
    lo, hi, shift, log = box
    y = lo + (hi - lo) * special.expit(x)
    return sign * (shift + math.exp(y)) if log else y


def _from_param(p, box, sign=1.0):
    lo, hi, shift, log = box
    y = math.log(max(abs(p) - shift, 1e-300)) if log else p
    r = (y - lo) / (hi - lo)
    r = min(max(r, 1e-6), 1.0 - 1e-6)
    return float(special.logit(r))


class _Coder:
    """Maps the parameters of a list of families to one unconstrained vector."""

    def __init__(self, families, signs):
        self.families = [Family.parse(f) for f in families]
        self.signs = signs
        self.sizes = [len(_BOXES.get(f, [])) for f in self.families]

    @property
    def dim(self):
        return sum(self.sizes)

    def decode(self, x):
        out, k = [], 0
        for fam, n, s in zip(self.families, self.sizes, self.signs):
            if fam is Family.INDEPENDENCE:
                out.append(BivariateCopulaSpec.independence())
                continue
            boxes = _BOXES[fam]
            vals = [_to_param(x[k], boxes[0], s if fam is Family.FRANK else 1.0)]
            if n == 2:
                vals.append(_to_param(x[k + 1], boxes[1]))
            out.append(BivariateCopulaSpec(fam, tuple(vals)))
            k += n
        return out

    def encode(self, specs):
        x = []
        for spec, s in zip(specs, self.signs):
            for p, box in zip(spec.params, _BOXES.get(spec.family, [])):
                x.append(_from_param(p, box, s))
        return np.array(x, dtype=float)


def _nelder_mead(fun, x0, xtol=1e-8, ftol=1e-8, step=0.3):
    """Nelder-Mead from ``x0`` followed by one restart from its solution.

    Returns ``(x_best, f_best, info)``; ``x0`` itself is a candidate.
    """
    x0 = np.asarray(x0, dtype=float)
    best_x, best_f = x0, fun(x0)
    info = {"nfev": 1, "restarts": 0, "converged": True}
    if x0.size == 0:
        return best_x, best_f, info
    x = x0
    for attempt in range(2):
        simplex = np.vstack([x, x + step * np.eye(x.size)])
        res = optimize.minimize(fun, x, method="Nelder-Mead",
                                options={"xatol": xtol, "fatol": ftol, "initial_simplex": simplex,
                                         "maxfev": 1000 * x.size})
        info["nfev"] += int(res.nfev)
        info["restarts"] = attempt
        info["converged"] = bool(res.success)
        if np.isfinite(res.fun) and res.fun <= best_f:
            best_x, best_f = res.x, float(res.fun)
        x = best_x
    if not np.isfinite(best_f):
        raise ConvergenceError("optimizer found no finite objective value")
    return best_x, best_f, info


# ---------------------------------------------------------------------------
# Initialisers
# ---------------------------------------------------------------------------

def empirical_tau(a, b) -> float:
    t = stats.kendalltau(a, b).statistic
    return 0.0 if not np.isfinite(t) else float(t)


def init_from_tau(family, tau_hat: float, nu: float = 8.0) -> BivariateCopulaSpec:
    """Tau-inversion start value, with tau moved into the family's attainable range."""
    fam = Family.parse(family)
    if fam is Family.INDEPENDENCE:
        return BivariateCopulaSpec.independence()
    t = float(np.clip(tau_hat, -0.9, 0.9))
    if fam in (Family.CLAYTON, Family.GUMBEL, Family.JOE):
        t = min(max(t, 0.02), 0.85)
    elif fam is Family.FRANK:
        t = math.copysign(max(abs(t), 0.01), t if t != 0 else 1.0)
    return tau_to_param(fam, t, nu=nu)


# ---------------------------------------------------------------------------
# Pair fits and stage 1
# ---------------------------------------------------------------------------

@dataclass
class PairFit:
    spec: BivariateCopulaSpec
    loglik: float
    bic: float
    nfev: int = 0


def fit_pair(a, b, family, n_eff=None) -> PairFit:
    """ML fit of one copula family on pairs ``(a, b)``, started from tau inversion."""
    fam = Family.parse(family)
    a = np.ascontiguousarray(a, dtype=float)
    b = np.ascontiguousarray(b, dtype=float)
    n_eff = a.size if n_eff is None else n_eff
    if fam is Family.INDEPENDENCE:
        return PairFit(BivariateCopulaSpec.independence(), 0.0, 0.0)
    if fam is Family.STUDENT_T:
        return _fit_t_profile(a, b, n_eff)
    init = init_from_tau(fam, empirical_tau(a, b))
    sign = math.copysign(1.0, init.params[0]) if fam is Family.FRANK else 1.0
    coder = _Coder([fam], [sign])

    def nll(x):
        ll = float(np.sum(raw_logpdf(coder.decode(x)[0], a, b)))
        return -ll if np.isfinite(ll) else -LOGLIK_SENTINEL

    x, f, info = _nelder_mead(nll, coder.encode([init]))
    spec = coder.decode(x)[0]
    ll = -f
    return PairFit(spec, ll, -2.0 * ll + fam.nparams * math.log(n_eff), info["nfev"])


def _t_pair_profile(x, y, nu):
    """Maximise the t-copula log-likelihood over rho for scores ``x, y`` at fixed ``nu``."""
    s2 = x * x + y * y
    xy = x * y
    marg = 0.5 * (nu + 1.0) * float(np.sum(np.log1p(x * x / nu) + np.log1p(y * y / nu)))
    const = x.size * (special.gammaln(0.5 * (nu + 2.0)) + special.gammaln(0.5 * nu)
                      - 2.0 * special.gammaln(0.5 * (nu + 1.0)))

    def nll(rho):
        r2 = 1.0 - rho * rho
        return (0.5 * x.size * math.log(r2)
                + 0.5 * (nu + 2.0) * float(np.sum(np.log1p((s2 - 2.0 * rho * xy) / (nu * r2)))))

    res = optimize.minimize_scalar(nll, bounds=(-0.999, 0.999), method="bounded",
                                   options={"xatol": 1e-10})
    return float(res.x), const + marg - float(res.fun), int(res.nfev)


def _fit_t_profile(a, b, n_eff):
    # Profile likelihood: 1-D search over log nu, closed inner search over rho on cached scores.
    lo, hi = math.log(2.001), math.log(100.0)
    cache = {}

    def nll(lognu):
        nu = math.exp(lognu)
        x = cc.t_ppf(np.clip(a, 1e-10, 1 - 1e-10), nu)
        y = cc.t_ppf(np.clip(b, 1e-10, 1 - 1e-10), nu)
        rho, ll, _ = _t_pair_profile(x, y, nu)
        cache[lognu] = rho
        return -ll if np.isfinite(ll) else -LOGLIK_SENTINEL

    res = optimize.minimize_scalar(nll, bounds=(lo, hi), method="bounded", options={"xatol": 1e-8})
    spec = BivariateCopulaSpec(Family.STUDENT_T, (cache[res.x], math.exp(res.x)))
    ll = float(np.sum(raw_logpdf(spec, a, b)))
    return PairFit(spec, ll, -2.0 * ll + 2 * math.log(n_eff), int(res.nfev))


@dataclass
class Stage1Result:
    model: UDvineModel
    loglik: float
    init_loglik: float
    nfev: int
    converged: bool


def _check_length(T, p):
    if T <= p + MIN_EXTRA_OBS:
        raise DataError(f"series of length {T} is too short for order {p} (need more than "
                        f"{p + MIN_EXTRA_OBS})")


def sequential_tau_init(u, families) -> list:
    """Tree-by-tree tau inversion: each tree's start value uses the previous trees' start values."""
    specs = []
    for j, fam in enumerate(families, start=1):
        A, B = vine_arrays(u, specs + [None], upto=j)
        specs.append(init_from_tau(fam, empirical_tau(A[-1], B[-1])))
    return specs


def fit_udvine_pits(u, families, start=None, tol: float = 1e-8) -> tuple:
    """Joint ML fit of the tree parameters on PITs ``u``.  Returns ``(spec, loglik, diagnostics)``.

    The search starts from the sequential tau-inversion values, or from
    ``start`` (one spec per tree, e.g. sequential estimates) when that has the
    higher likelihood.
    """
    families = [Family.parse(f) for f in families]
    u = np.ascontiguousarray(u, dtype=float)
    _check_length(u.size, len(families))
    init = sequential_tau_init(u, families)
    candidates = [init]
    if start is not None:
        start = [s if isinstance(s, BivariateCopulaSpec) else BivariateCopulaSpec.from_dict(s)
                 for s in start]
        if [s.family for s in start] != families:
            raise DomainError("start values do not match the family template")
        candidates.append(start)
    f0 = None
    best = None
    for cand in candidates:
        signs = [math.copysign(1.0, s.params[0]) if s.family is Family.FRANK else 1.0 for s in cand]
        coder = _Coder(families, signs)
        x0 = coder.encode(cand)
        f = -loglik_unchecked(u, UDvineSpec(tuple(coder.decode(x0))))
        f0 = f if f0 is None else f0
        if best is None or f < best[2]:
            best = (coder, x0, f)
    coder, x0, _ = best

    def nll(x):
        return -loglik_unchecked(u, UDvineSpec(tuple(coder.decode(x))))

    x, f, info = _nelder_mead(nll, x0, tol, tol)
    spec = UDvineSpec(tuple(coder.decode(x)))
    diag = {"nfev": info["nfev"], "converged": info["converged"], "init_loglik": -f0}
    return spec, -f, diag


def fit_udvine_stage1(series, spec_template: UDvineSpec) -> Stage1Result:
    """Fit the marginal (rescaled ECDF) and the tree parameters of a fixed family template."""
    marginal = EmpiricalMarginal.fit(series)
    u = marginal.pit(series)
    spec, ll, diag = fit_udvine_pits(u, [t.family for t in spec_template.trees])
    return Stage1Result(UDvineModel(spec, marginal), ll, diag["init_loglik"], diag["nfev"],
                        diag["converged"])


# ---------------------------------------------------------------------------
# Sequential selection
# ---------------------------------------------------------------------------

@dataclass
class SelectionStep:
    tree: int
    n_eff: int
    candidates: dict = field(default_factory=dict)  # family -> (bic, loglik, params)
    chosen: str = "Independence"

    def to_dict(self):
        return {"tree": self.tree, "n_eff": self.n_eff, "chosen": self.chosen,
                "candidates": {k: {"bic": v[0], "loglik": v[1], "params": list(v[2])}
                               for k, v in self.candidates.items()}}


def select_udvine_pits(u, candidate_pool=DEFAULT_POOL, max_order: int = 3):
    """Tree-by-tree BIC selection on PITs.  Returns ``(spec, trail)``."""
    pool = [Family.parse(f) for f in candidate_pool]
    if not pool:
        raise DomainError("candidate pool is empty")
    if max_order < 1:
        raise DomainError("max_order must be at least 1")
    u = np.ascontiguousarray(u, dtype=float)
    T = u.size
    trees, trail = [], []
    for k in range(1, max_order + 1):
        if T - k <= MIN_EXTRA_OBS:
            break
        A, B = vine_arrays(u, trees + [None], upto=k)
        a, b = A[-1], B[-1]
        n_eff = T - k
        step = SelectionStep(k, n_eff)
        step.candidates["Independence"] = (0.0, 0.0, ())
        best_bic, best = 0.0, BivariateCopulaSpec.independence()
        for fam in pool:
            if fam is Family.INDEPENDENCE:
                continue
            pf = fit_pair(a, b, fam, n_eff)
            step.candidates[fam.value] = (pf.bic, pf.loglik, pf.spec.params)
            if pf.bic < best_bic - TIE_TOL:
                best_bic, best = pf.bic, pf.spec
        step.chosen = best.family.value
        trail.append(step)
        if best.is_independence:
            break
        trees.append(best)
    return UDvineSpec(tuple(trees)), trail


def select_udvine(series, candidate_pool=DEFAULT_POOL, max_order: int = 3):
    """Select a uDvine structure for a data-scale series.  Returns ``(spec, trail)``."""
    marginal = EmpiricalMarginal.fit(series)
    return select_udvine_pits(marginal.pit(series), candidate_pool, max_order)


# ---------------------------------------------------------------------------
# Stage 2
# ---------------------------------------------------------------------------

def nearest_correlation(S, floor=1e-8) -> np.ndarray:
    """Clip eigenvalues at ``floor`` and rescale to unit diagonal."""
    S = 0.5 * (np.asarray(S, dtype=float) + np.asarray(S, dtype=float).T)
    w, Q = np.linalg.eigh(S)
    if w.min() > floor:
        return cc.rescale(S)
    return cc.rescale((Q * np.maximum(w, floor)) @ Q.T)


def normal_score_correlation(V) -> np.ndarray:
    z = cc.latent_scores(V)
    return nearest_correlation(z.T @ z / z.shape[0])


def tau_correlation(V) -> np.ndarray:
    d = V.shape[1]
    R = np.eye(d)
    for i in range(d):
        for j in range(i + 1, d):
            R[i, j] = R[j, i] = math.sin(0.5 * math.pi * empirical_tau(V[:, i], V[:, j]))
    return nearest_correlation(R)


@dataclass
class Stage2Result:
    spec: cc.CrossCopulaSpec
    loglik: float
    diagnostics: dict = field(default_factory=dict)


_NU_BOX = (math.log(2.001), math.log(100.0))


def _fit_nu(V, R, tol=1e-8):
    def nll(lognu):
        ll = float(np.sum(cc.elliptical_logdensity(V, R, math.exp(lognu))))
        return -ll if np.isfinite(ll) else -LOGLIK_SENTINEL

    res = optimize.minimize_scalar(nll, bounds=_NU_BOX, method="bounded",
                                   options={"xatol": tol})
    return math.exp(res.x), -float(res.fun), int(res.nfev)


def fit_cross_stage2(V, kind, distances=None, matern_bounds=None, tol: float = 1e-8) -> Stage2Result:
    """Fit the cross-sectional copula on a ``T x d`` matrix of conditional PITs."""
    kind = cc.CrossKind.parse(kind)
    V = np.atleast_2d(np.asarray(V, dtype=float))
    T, d = V.shape
    if d < 2:
        raise DomainError("stage 2 needs at least two series")
    if np.any(np.isnan(V)) or np.any((V <= 0) | (V >= 1)):
        raise DataError("conditional PITs must lie strictly inside (0, 1)")
    if kind is cc.CrossKind.GAUSSIAN_FULL:
        spec = cc.CrossCopulaSpec(kind, correlation=normal_score_correlation(V))
        return Stage2Result(spec, cc.series_loglik(V, spec), {"method": "normal scores"})
    if kind is cc.CrossKind.STUDENT_T_FULL:
        R = tau_correlation(V)
        nu, ll, nfev = _fit_nu(V, R, tol)
        spec = cc.CrossCopulaSpec(kind, correlation=R, nu=nu)
        return Stage2Result(spec, cc.series_loglik(V, spec),
                            {"method": "tau inversion + nu profile", "nfev": nfev})
    if kind is cc.CrossKind.GAUSSIAN_MATERN:
        return _fit_matern(V, distances, matern_bounds, tol)
    return _fit_dcc(V, tol)


def _fit_matern(V, distances, bounds=None, tol=1e-8):
    if distances is None:
        raise DomainError("GaussianMatern needs a distance matrix")
    D = np.asarray(distances, dtype=float)
    # construct once to validate the distances
    cc.CrossCopulaSpec(cc.CrossKind.GAUSSIAN_MATERN, distances=D, matern_range=1.0,
                       matern_smoothness=0.5)
    off = D[~np.eye(D.shape[0], dtype=bool)]
    if bounds is None:
        bounds = {"range": (1e-3 * off.min(), 1e3 * off.max()), "smoothness": (0.05, 10.0)}
    boxes = [(math.log(bounds["range"][0]), math.log(bounds["range"][1]), 0.0, True),
             (math.log(bounds["smoothness"][0]), math.log(bounds["smoothness"][1]), 0.0, True)]

    def decode(x):
        return cc.CrossCopulaSpec(cc.CrossKind.GAUSSIAN_MATERN, distances=D,
                                  matern_range=_to_param(x[0], boxes[0]),
                                  matern_smoothness=_to_param(x[1], boxes[1]))

    def nll(x):
        try:
            ll = cc.series_loglik(V, decode(x))
        except DomainError:
            return -LOGLIK_SENTINEL
        return -ll if np.isfinite(ll) else -LOGLIK_SENTINEL

    x0 = np.array([_from_param(float(np.median(off)), boxes[0]), _from_param(0.5, boxes[1])])
    x, f, info = _nelder_mead(nll, x0, tol, tol)
    spec = decode(x)
    return Stage2Result(spec, cc.series_loglik(V, spec), {"method": "nelder-mead", **info})


def _fit_dcc(V, tol=1e-8):
    # x = (sum a+b in (0, 0.999), share a/(a+b), log nu)
    def decode(x):
        s = 0.999 * special.expit(x[0])
        share = special.expit(x[1])
        nu = _to_param(x[2], (_NU_BOX[0], _NU_BOX[1], 0.0, True))
        return s * share, s * (1.0 - share), nu

    def nll(x):
        a, b, nu = decode(x)
        ll = cc.dcc_filter(V, a, b, nu)[0]
        return -ll if np.isfinite(ll) else -LOGLIK_SENTINEL

    x0 = np.array([special.logit(0.95 / 0.999), special.logit(0.05 / 0.95),
                   _from_param(8.0, (_NU_BOX[0], _NU_BOX[1], 0.0, True))])
    x, f, info = _nelder_mead(nll, x0, tol, tol)
    a, b, nu = decode(x)
    eps = cc.standardized_t(cc.latent_scores(V, nu), nu)
    qbar = nearest_correlation(np.corrcoef(eps, rowvar=False))
    spec = cc.CrossCopulaSpec(cc.CrossKind.TIME_VARYING_T, nu=nu, dcc_a=a, dcc_b=b, qbar=qbar)
    return Stage2Result(spec, cc.series_loglik(V, spec), {"method": "nelder-mead", **info})


# ---------------------------------------------------------------------------
# Full two-stage fit
# ---------------------------------------------------------------------------

@dataclass
class FitConfig:
    """Options of :func:`fit_cudvine`.

    ``templates`` holds one entry per series: a family list (fixed structure)
    or ``None`` for automatic selection.  ``None`` for the whole field means
    automatic selection for every series.
    """

    templates: list = None
    pool: tuple = DEFAULT_POOL
    max_order: int = 3
    cross_kind: str = "GaussianFull"
    distances: np.ndarray = None
    matern_bounds: dict = None
    threads: int = 1
    seed: int = 0
    tol: float = 1e-8


@dataclass
class SeriesReport:
    label: str
    model: UDvineModel
    loglik: float
    selection: list = None
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self):
        out = {"label": self.label, "order": self.model.order,
               "trees": [t.to_dict() for t in self.model.spec.trees],
               "loglik": self.loglik, "marginal": self.model.marginal.to_dict(),
               "diagnostics": self.diagnostics}
        if self.selection is not None:
            out["selection"] = [s.to_dict() for s in self.selection]
        return out


@dataclass
class FitReport:
    series: list
    cross: Stage2Result = None
    bootstrap_se: dict = None
    seed: int = None
    config_hash: str = None

    @property
    def model(self) -> CuDvineModel:
        return CuDvineModel(tuple(s.model for s in self.series),
                            None if self.cross is None else self.cross.spec,
                            tuple(s.label for s in self.series))

    @property
    def loglik(self) -> float:
        return sum(s.loglik for s in self.series) + (0.0 if self.cross is None else self.cross.loglik)

    def recompute_logliks(self, panel: TimeSeriesPanel) -> dict:
        """Evaluate the stored parameters afresh on ``panel``."""
        out = {}
        for i, s in enumerate(self.series):
            out[s.label] = s.model.loglik(panel.values[:, i])
        if self.cross is not None:
            V = self.model.conditional_pits(panel.values)
            out["cross"] = cc.series_loglik(V, self.cross.spec)
        return out

    def verify(self, panel: TimeSeriesPanel, tol: float = 1e-8) -> None:
        """Raise if a stored log-likelihood differs from its recomputation by more than ``tol``."""
        fresh = self.recompute_logliks(panel)
        stored = {s.label: s.loglik for s in self.series}
        if self.cross is not None:
            stored["cross"] = self.cross.loglik
        for k, v in stored.items():
            if abs(fresh[k] - v) > tol * max(1.0, abs(v)):
                raise ConvergenceError(f"stored log-likelihood of {k} ({v}) differs from "
                                       f"recomputed value ({fresh[k]})")

    def parameter_vector(self) -> dict:
        return parameter_vector(self.model)

    def to_dict(self) -> dict:
        out = {"seed": self.seed, "config_hash": self.config_hash,
               "loglik": {"total": self.loglik,
                          "stage1": {s.label: s.loglik for s in self.series},
                          "stage2": None if self.cross is None else self.cross.loglik},
               "series": [s.to_dict() for s in self.series],
               "cross": None if self.cross is None else {**self.cross.spec.to_dict(),
                                                         "loglik": self.cross.loglik,
                                                         "diagnostics": self.cross.diagnostics}}
        if self.bootstrap_se is not None:
            out["bootstrap_se"] = self.bootstrap_se
        return out

    def to_json(self) -> str:
        return json.dumps(_jsonable(self.to_dict()), indent=2, sort_keys=True)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    return obj


def parameter_vector(model: CuDvineModel) -> dict:
    """Flat ``name -> value`` map of every estimated copula parameter."""
    out = {}
    for lab, m in zip(model.labels, model.margins):
        for j, t in enumerate(m.spec.trees, start=1):
            names = {Family.STUDENT_T: ("rho", "nu")}.get(t.family, ("par",))
            for name, v in zip(names, t.params):
                out[f"{lab}.tree{j}.{t.family.value}.{name}"] = v
    cross = model.cross
    if cross is not None:
        if cross.kind in (cc.CrossKind.GAUSSIAN_FULL, cc.CrossKind.STUDENT_T_FULL):
            R = cross.correlation
            for i in range(model.d):
                for j in range(i + 1, model.d):
                    out[f"cross.rho_{model.labels[i]}_{model.labels[j]}"] = float(R[i, j])
        if cross.kind.is_t:
            out["cross.nu"] = cross.nu
        if cross.kind is cc.CrossKind.GAUSSIAN_MATERN:
            out["cross.range"] = cross.matern_range
            out["cross.smoothness"] = cross.matern_smoothness
        if cross.kind is cc.CrossKind.TIME_VARYING_T:
            out["cross.a"] = cross.dcc_a
            out["cross.b"] = cross.dcc_b
    return out


def _fit_series(x, label, template, config):
    marginal = EmpiricalMarginal.fit(x)
    u = marginal.pit(x)
    trail = start = None
    if template is None:
        spec, trail = select_udvine_pits(u, config.pool, config.max_order)
        families = [t.family for t in spec.trees]
        start = list(spec.trees)
    else:
        families = [Family.parse(f.family if isinstance(f, BivariateCopulaSpec) else f)
                    for f in template]
    _check_length(u.size, len(families))
    spec, ll, diag = fit_udvine_pits(u, families, start, config.tol)
    return SeriesReport(label, UDvineModel(spec, marginal), ll, trail, diag)


def fit_cudvine(panel: TimeSeriesPanel, config: FitConfig = None) -> FitReport:
    """Two-stage fit: per-series selection and stage 1, then the cross copula on conditional PITs."""
    config = config or FitConfig()
    templates = config.templates or [None] * panel.d
    if len(templates) != panel.d:
        raise DomainError(f"{len(templates)} templates for {panel.d} series")
    jobs = (delayed(_fit_series)(panel.values[:, i], panel.labels[i], templates[i], config)
            for i in range(panel.d))
    series = list(_parallel(config.threads)(jobs))
    report = FitReport(series, seed=config.seed)
    if panel.d > 1:
        V = report.model.conditional_pits(panel.values)
        report.cross = fit_cross_stage2(V, config.cross_kind, config.distances, config.matern_bounds,
                                        config.tol)
    return report


def _parallel(threads):
    n = 1 if threads is None else int(threads)
    return Parallel(n_jobs=-1 if n == 0 else n, prefer="processes")


# ---------------------------------------------------------------------------
# Parametric bootstrap
# ---------------------------------------------------------------------------

def fit_known_form_pits(U, model: CuDvineModel) -> dict:
    """Refit a model of known parametric form on simulated PITs; returns the parameter vector."""
    specs = []
    margins = []
    for i, m in enumerate(model.margins):
        marginal = EmpiricalMarginal.fit(U[:, i])
        u = marginal.pit(U[:, i])
        spec, _, _ = fit_udvine_pits(u, [t.family for t in m.spec.trees])
        specs.append(spec)
        margins.append(UDvineModel(spec, marginal))
    cross = None
    if model.cross is not None:
        V = align_conditional_pits(np.column_stack([m.marginal.pit(U[:, i])
                                                    for i, m in enumerate(margins)]), specs)
        cross = fit_cross_stage2(V, model.cross.kind, model.cross.distances).spec
    return parameter_vector(CuDvineModel(tuple(margins), cross, model.labels))


def _bootstrap_one(model, T, seed):
    try:
        U = model.simulate_pits(T, seed=seed)
        return fit_known_form_pits(U, model)
    except (ConvergenceError, DomainError, DataError):
        return None


def bootstrap_se(model: CuDvineModel, B: int, T: int, seed: int = 0, threads: int = 1,
                 min_replicates: int = 50) -> dict:
    """Parametric-bootstrap standard errors (replicate ``i`` uses seed ``seed + i``)."""
    if B < min_replicates:
        raise DomainError(f"bootstrap needs B >= {min_replicates}, got {B}")
    if T <= model.max_order + MIN_EXTRA_OBS:
        raise DomainError(f"bootstrap length T={T} is too short")
    fits = _parallel(threads)(delayed(_bootstrap_one)(model, T, seed + i) for i in range(B))
    ok = [f for f in fits if f is not None]
    failed = B - len(ok)
    if failed > 0.1 * B:
        raise ConvergenceError(f"{failed} of {B} bootstrap refits failed")
    names = list(parameter_vector(model))
    est = np.array([[f[k] for k in names] for f in ok])
    se = est.std(axis=0, ddof=1)
    return {"se": dict(zip(names, se.tolist())), "B": B, "failed": failed, "T": T, "seed": seed}
