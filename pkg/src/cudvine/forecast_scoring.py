"""One-step-ahead ensemble forecasts and probabilistic scores."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy import special, stats

from . import crosscopula as cc
from .errors import DataError, DomainError
from .model import CuDvineModel, TimeSeriesPanel
from .udvine import cond_quantile, conditional_pits

PI_LEVELS = (0.025, 0.975)
VAR_LEVEL = 0.95


@dataclass(frozen=True, eq=False)
class ForecastEnsemble:
    """``m`` joint draws of the next observation vector."""

    draws: np.ndarray
    origin: object = None
    labels: tuple = None

    def __post_init__(self):
        x = np.array(self.draws, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if x.shape[0] < 100:
            raise DomainError(f"an ensemble needs at least 100 draws, got {x.shape[0]}")
        if not np.all(np.isfinite(x)):
            raise DomainError("ensemble draws must be finite")
        x.setflags(write=False)
        object.__setattr__(self, "draws", x)

    @property
    def m(self) -> int:
        return self.draws.shape[0]

    @property
    def d(self) -> int:
        return self.draws.shape[1]

    def column(self, i) -> np.ndarray:
        return self.draws[:, i]


def _draws(ens, weights=None) -> np.ndarray:
    x = ens.draws if isinstance(ens, ForecastEnsemble) else np.asarray(ens, dtype=float)
    if weights is not None:
        w = np.asarray(weights, dtype=float)
        x = np.atleast_2d(x.T).T
        if w.size != x.shape[1] or np.any(w < 0) or w.sum() <= 0:
            raise DomainError("weights need one nonnegative entry per series and a positive sum")
        return x @ w / w.sum()
    if x.ndim == 2:
        if x.shape[1] != 1:
            raise DomainError("a multivariate ensemble needs weights to project to one dimension")
        x = x[:, 0]
    return x


def var_quantile(ens, level: float, weights=None) -> float:
    """Type-7 empirical quantile of the (weight-aggregated) draws."""
    if not 0.0 <= level <= 1.0:
        raise DomainError(f"level must lie in [0, 1], got {level}")
    return float(np.quantile(_draws(ens, weights), level))


def crps(ens, y: float, weights=None) -> float:
    """Empirical CRPS ``mean|x - y| - mean|x - x'| / 2`` via the sorted-sample identity."""
    x = np.sort(_draws(ens, weights))
    m = x.size
    if m == 0:
        raise DomainError("empty ensemble")
    k = np.arange(1, m + 1)
    spread = 2.0 * float(np.sum((2 * k - m - 1) * x)) / (m * m)
    return float(np.mean(np.abs(x - y))) - 0.5 * spread


def qrps(ens, y: float, level: float, weights=None) -> float:
    """Quantile score ``(1{y < q} - level) (q - y)`` at the ensemble quantile ``q``."""
    q = var_quantile(ens, level, weights)
    return float(((y < q) - level) * (q - y))


def _z_pvalue(mean, target, se):
    if se == 0:
        return 1.0 if mean == target else 0.0
    return float(2.0 * special.ndtr(-abs(mean - target) / se))


def coverage_tests(indicators, target: float) -> dict:
    """Test that indicators (or per-replication rates) have mean ``target``.

    A boolean vector gets the exact two-sided binomial test and a normal
    approximation; a real vector of rates gets the one-sample z-test only.
    ``z_p`` is ``None`` when a single rate is supplied.
    """
    x = np.asarray(indicators)
    if x.size == 0:
        raise DomainError("coverage_tests needs a nonempty vector")
    if not 0.0 <= target <= 1.0:
        raise DomainError(f"target must lie in [0, 1], got {target}")
    if x.dtype == bool or np.all(np.isin(x, (0, 1))) and x.dtype.kind in "biu":
        k, n = int(np.sum(x)), x.size
        rate = k / n
        binom_p = float(stats.binomtest(k, n, target).pvalue)
        z_p = _z_pvalue(rate, target, math.sqrt(target * (1 - target) / n))
        return {"rate": rate, "n": n, "binomial_p": binom_p, "z_p": z_p}
    r = x.astype(float)
    rate = float(r.mean())
    z_p = None if r.size < 2 else _z_pvalue(rate, target, float(r.std(ddof=1)) / math.sqrt(r.size))
    return {"rate": rate, "n": int(r.size), "binomial_p": None, "z_p": z_p}


# ---------------------------------------------------------------------------
# Forecasting
# ---------------------------------------------------------------------------

def _history_pits(model: CuDvineModel, history):
    h = np.atleast_2d(np.asarray(history, dtype=float))
    if h.shape[1] != model.d:
        raise DataError(f"history has {h.shape[1]} columns, model has {model.d} series")
    if h.shape[0] < model.max_order:
        raise DataError(f"history needs at least {model.max_order} rows, got {h.shape[0]}")
    out = []
    for i, m in enumerate(model.margins):
        p = m.order
        rows = h[h.shape[0] - p:, i][::-1] if p else h[:0, i]
        out.append(m.marginal.pit(rows) if p else np.empty(0))
    return out


def cross_state(model: CuDvineModel, history) -> np.ndarray:
    """Correlation state for the next period (``None`` for static cross copulas)."""
    if model.cross is None or model.cross.kind is not cc.CrossKind.TIME_VARYING_T:
        return None
    h = np.asarray(history, dtype=float)
    if h.shape[0] <= model.max_order:
        return model.cross.qbar
    return cc.dcc_next_state(model.conditional_pits(h), model.cross)


def forecast_one_step(model: CuDvineModel, history, m: int = 1000, seed=None, observed=None,
                      state=None, origin=None) -> ForecastEnsemble:
    """Draw ``m`` joint one-step-ahead forecasts.

    Parameters
    ----------
    history : array_like
        Past observations (rows, data scale).  The last ``max order`` rows
        condition the uDvines; for the time-varying cross copula the whole
        history drives the correlation state unless ``state`` is given.
    observed : dict, optional
        ``{series index: observed value}``.  The cross copula is then drawn
        conditionally on these coordinates and the observed values are
        returned unchanged in their columns.
    """
    if m < 100:
        raise DomainError(f"m must be at least 100, got {m}")
    rng = np.random.default_rng(seed)
    hist = _history_pits(model, history)
    if state is None:
        state = cross_state(model, history)
    d = model.d
    observed = dict(observed or {})
    for k in observed:
        if not 0 <= int(k) < d:
            raise DomainError(f"unknown observed series index {k}")
    if model.cross is None:
        V = rng.uniform(size=(m, d))
    elif observed:
        idx = sorted(int(k) for k in observed)
        vo = []
        for i in idx:
            mi = model.margins[i]
            u_now = mi.marginal.cdf(float(observed[i]))
            chron = np.append(hist[i][::-1], u_now)
            vo.append(conditional_pits(chron, mi.spec)[-1])
        V = cc.sample_conditional(model.cross, idx, vo, state=state, seed=rng, n=m)
    else:
        V = cc.sample(model.cross, state=state, seed=rng, n=m)
    draws = np.empty((m, d))
    for i, mi in enumerate(model.margins):
        if i in observed:
            draws[:, i] = float(observed[i])
            continue
        u = cond_quantile(V[:, i], hist[i], mi.spec)
        draws[:, i] = mi.marginal.quantile(u)
    return ForecastEnsemble(draws, origin, model.labels)


# ---------------------------------------------------------------------------
# Backtesting
# ---------------------------------------------------------------------------

BACKTEST_COLUMNS = ("date", "model", "series", "crps", "qrps_95", "var_violation", "pi_hit")


def _score_rows(ens_x, y, date, name, series, var_level):
    lo, hi = np.quantile(ens_x, PI_LEVELS)
    q = float(np.quantile(ens_x, var_level))
    return {"date": date, "model": name, "series": series, "crps": crps(ens_x, y),
            "qrps_95": float(((y < q) - var_level) * (q - y)),
            "var_violation": int(y > q), "pi_hit": int(lo <= y <= hi)}


def backtest(model: CuDvineModel, panel: TimeSeriesPanel, test_range, m: int = 1000, seed: int = 0,
             name: str = "CuDvine", weights=None, observed_idx=None, var_level: float = VAR_LEVEL):
    """Rolling one-step forecasts over rows ``test_range = (start, stop)`` with the model fixed.

    Returns a list of rows with :data:`BACKTEST_COLUMNS`; day ``k`` of the
    range uses seed ``seed + k``.  With ``weights`` an extra series
    ``"weighted"`` scores the weight-normalized aggregate.  With
    ``observed_idx`` those series are treated as observed on the forecast day
    and only the remaining series are scored.
    """
    start, stop = test_range
    if not (model.max_order <= start < stop <= panel.T):
        raise DomainError(f"test range {test_range} outside the usable rows "
                          f"[{model.max_order}, {panel.T}] of the panel")
    if panel.d != model.d:
        raise DataError(f"panel has {panel.d} series, model has {model.d}")
    X = panel.values
    states = None
    if model.cross is not None and model.cross.kind is cc.CrossKind.TIME_VARYING_T:
        P = model.max_order
        V = model.conditional_pits(X[:stop])
        _, states = cc.dcc_filter(V, model.cross.dcc_a, model.cross.dcc_b, model.cross.nu,
                                  model.cross.qbar, keep=True)
    observed_idx = sorted(observed_idx or [])
    rows = []
    for k, t in enumerate(range(start, stop)):
        state = None
        if states is not None:
            state = states[t - P] if t - P < len(states) and t > P else model.cross.qbar
        obs = {i: X[t, i] for i in observed_idx}
        ens = forecast_one_step(model, X[:t], m, seed + k, observed=obs, state=state,
                                origin=panel.index[t])
        for i, lab in enumerate(panel.labels):
            if i in obs:
                continue
            rows.append(_score_rows(ens.draws[:, i], X[t, i], panel.index[t], name, lab, var_level))
        if weights is not None:
            agg = _draws(ens, weights)
            yw = float(np.dot(X[t], weights) / np.sum(weights))
            rows.append(_score_rows(agg, yw, panel.index[t], name, "weighted", var_level))
    return rows


def summarize(rows, pi_target: float = 0.95, var_target: float = 1.0 - VAR_LEVEL) -> list:
    """Average scores per (model, series) with coverage tests of the P.I. and VaR hits."""
    groups = {}
    for r in rows:
        groups.setdefault((r["model"], r["series"]), []).append(r)
    out = []
    for (name, series), rs in groups.items():
        pi = coverage_tests(np.array([r["pi_hit"] for r in rs], dtype=bool), pi_target)
        var = coverage_tests(np.array([r["var_violation"] for r in rs], dtype=bool), var_target)
        out.append({"model": name, "series": series, "n": len(rs),
                    "crps": float(np.mean([r["crps"] for r in rs])),
                    "qrps_95": float(np.mean([r["qrps_95"] for r in rs])),
                    "pi_coverage": pi["rate"], "pi_binomial_p": pi["binomial_p"],
                    "var_violation_rate": var["rate"], "var_binomial_p": var["binomial_p"]})
    return out


def head_to_head(rows_a, rows_b, tol: float = 1e-12) -> dict:
    """Percentage of (date, series) cells where model A has the lower CRPS; ties count one half."""
    b = {(r["date"], r["series"]): r["crps"] for r in rows_b}
    wins = {}
    for r in rows_a:
        key = (r["date"], r["series"])
        if key not in b:
            continue
        diff = r["crps"] - b[key]
        score = 0.5 if abs(diff) <= tol else float(diff < 0)
        wins.setdefault(r["series"], []).append(score)
    if not wins:
        raise DataError("the two backtest tables share no (date, series) cells")
    return {s: 100.0 * float(np.mean(v)) for s, v in wins.items()}


def write_csv(path, rows, columns=None) -> None:
    columns = list(columns or (rows[0].keys() if rows else BACKTEST_COLUMNS))
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(r.get(k)) for k in columns})


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return "" if v is None else v
