"""Simulation designs and experiment drivers (VaR backtests, selection, two-stage MLE)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from joblib import Parallel, delayed

from .copulae import DEFAULT_POOL, BivariateCopulaSpec, Family
from .crosscopula import CrossCopulaSpec
from .errors import DomainError
from .estimation import (FitConfig, fit_cudvine, fit_known_form_pits, parameter_vector,
                         select_udvine_pits)
from .forecast_scoring import backtest, coverage_tests, forecast_one_step, summarize
from .marginals import EmpiricalMarginal
from .model import CuDvineModel, TimeSeriesPanel
from .udvine import UDvineSpec, simulate_pits


@dataclass(frozen=True)
class GarchSpec:
    """``s2_t = w0 + w1 s2_{t-1} + w2 y_{t-1}^2 + w3 1{y_{t-1} > 0}``, ``y_t = s_t eta_t``."""

    omega0: float
    omega1: float
    omega2: float
    omega3: float = 0.0

    def __post_init__(self):
        w = (self.omega0, self.omega1, self.omega2, self.omega3)
        if any(not np.isfinite(x) or x < 0 for x in w):
            raise DomainError(f"GARCH coefficients must be finite and nonnegative, got {w}")
        if self.omega0 <= 0 and self.omega3 <= 0:
            raise DomainError("omega0 must be positive")
        if self.omega1 + self.omega2 >= 1:
            raise DomainError(f"omega1 + omega2 = {self.omega1 + self.omega2} violates stationarity")

    @property
    def unconditional_variance(self) -> float:
        return (self.omega0 + 0.5 * self.omega3) / (1.0 - self.omega1 - self.omega2)


GARCH = GarchSpec(0.05, 0.85, 0.1, 0.0)
GJR = GarchSpec(0.05, 0.85, 0.1, 0.05)


def simulate_garch(spec: GarchSpec, n: int, seed=None, burn_in: int = 500) -> np.ndarray:
    """Simulate ``n`` observations after ``burn_in`` discarded draws, starting at the unconditional variance."""
    if n < 1:
        raise DomainError("n must be at least 1")
    rng = np.random.default_rng(seed)
    eta = rng.standard_normal(n + burn_in)
    y = np.empty(n + burn_in)
    s2 = spec.unconditional_variance
    w0, w1, w2, w3 = spec.omega0, spec.omega1, spec.omega2, spec.omega3
    for t in range(n + burn_in):
        y[t] = np.sqrt(s2) * eta[t]
        s2 = w0 + w1 * s2 + w2 * y[t] * y[t] + (w3 if y[t] > 0 else 0.0)
    return y[burn_in:]


def _parallel(threads):
    n = 1 if threads is None else int(threads)
    return Parallel(n_jobs=-1 if n == 0 else n, prefer="processes")


# ---------------------------------------------------------------------------
# Designs
# ---------------------------------------------------------------------------

def selection_designs() -> dict:
    """The three uDvine(2) designs with tree-1 tau 0.5 and tree-2 tau 0.2."""
    S = BivariateCopulaSpec
    return {
        "gaussian_gumbel": UDvineSpec((S(Family.GAUSSIAN, (0.7,)), S(Family.GUMBEL, (1.25,)))),
        "t_clayton": UDvineSpec((S(Family.STUDENT_T, (0.7, 3.0)), S(Family.CLAYTON, (0.5,)))),
        "gaussian_gaussian": UDvineSpec((S(Family.GAUSSIAN, (0.7,)), S(Family.GAUSSIAN, (0.3,)))),
    }


def mle_design() -> CuDvineModel:
    """Three-series CuDvine built from the selection designs and a Gaussian cross copula."""
    R = np.array([[1.0, 0.2, 0.5], [0.2, 1.0, 0.8], [0.5, 0.8, 1.0]])
    return CuDvineModel.from_specs(list(selection_designs().values()),
                                   cross=CrossCopulaSpec("GaussianFull", correlation=R))


# ---------------------------------------------------------------------------
# VaR experiment
# ---------------------------------------------------------------------------

def _var_one(spec, T1, T2, q_levels, seed, m, pool, max_order):
    rng = np.random.default_rng(seed)
    y = simulate_garch(spec, T1 + T2, seed=rng)
    report = fit_cudvine(TimeSeriesPanel(y[:T1, None]), FitConfig(pool=pool, max_order=max_order))
    model = report.model
    hits = {q: 0 for q in q_levels}
    for t in range(T1, T1 + T2):
        ens = forecast_one_step(model, y[:t, None], m, seed=rng)
        for q in q_levels:
            hits[q] += int(y[t] > np.quantile(ens.draws[:, 0], 1.0 - q))
    return {"seed": seed, "order": model.max_order,
            "families": "+".join(t.family.value for t in model.margins[0].spec.trees) or "none",
            **{f"rate_q{q:g}": hits[q] / T2 for q in q_levels}}


def experiment_var(spec: GarchSpec, T1: int, T2: int, q0=(0.1, 0.05), replications: int = 100,
                   seed: int = 0, m: int = 1000, pool=DEFAULT_POOL, max_order: int = 3,
                   threads: int = 1) -> dict:
    """Fit a selected uDvine on ``T1`` points and backtest the one-step ``1 - q`` VaR over ``T2``.

    ``q0`` may be one level or several; all levels share the same replications.
    Returns per-level mean violation rates with z-test p-values and the
    per-replication records.
    """
    levels = tuple(np.atleast_1d(np.asarray(q0, dtype=float)).tolist())
    for q in levels:
        if not 0.0 < q < 1.0:
            raise DomainError(f"q0 must lie in (0, 1), got {q}")
    if replications < 1:
        raise DomainError("replications must be at least 1")
    runs = _parallel(threads)(delayed(_var_one)(spec, T1, T2, levels, seed + i, m, pool, max_order)
                              for i in range(replications))
    summary = {}
    for q in levels:
        rates = np.array([r[f"rate_q{q:g}"] for r in runs])
        test = coverage_tests(rates, q)
        summary[q] = {"q0": q, "mean_rate": test["rate"], "z_p": test["z_p"],
                      "replications": replications}
    return {"spec": spec, "T1": T1, "T2": T2, "seed": seed, "levels": summary, "runs": runs}


# ---------------------------------------------------------------------------
# Selection experiment
# ---------------------------------------------------------------------------

def _selection_one(true_spec, T, pool, seed, max_order):
    u = simulate_pits(T, true_spec, seed=seed)
    u = EmpiricalMarginal.fit(u).pit(u)
    spec, _ = select_udvine_pits(u, pool, max_order)
    return {"seed": seed, "order": spec.order,
            "families": [t.family.value for t in spec.trees]}


def experiment_selection(true_spec: UDvineSpec, T: int, replications: int = 100, pool=DEFAULT_POOL,
                         seed: int = 0, max_order: int = 3, threads: int = 1) -> dict:
    """Rates of correctly selected order and per-tree families over replications."""
    if replications < 1:
        raise DomainError("replications must be at least 1")
    runs = _parallel(threads)(delayed(_selection_one)(true_spec, T, pool, seed + i, max_order)
                              for i in range(replications))
    p = true_spec.order
    truth = [t.family.value for t in true_spec.trees]
    out = {"T": T, "replications": replications, "seed": seed,
           "order_rate": float(np.mean([r["order"] == p for r in runs]))}
    for j, fam in enumerate(truth, start=1):
        out[f"tree{j}_rate"] = float(np.mean([len(r["families"]) >= j and r["families"][j - 1] == fam
                                              for r in runs]))
    out["runs"] = runs
    return out


# ---------------------------------------------------------------------------
# Two-stage MLE experiment
# ---------------------------------------------------------------------------

def _mle_one(model, T, seed):
    U = model.simulate_pits(T, seed=seed)
    return fit_known_form_pits(U, model)


def experiment_mle(true_model: CuDvineModel, T: int, replications: int = 100, seed: int = 0,
                   threads: int = 1) -> dict:
    """Replication mean and standard deviation of every estimated parameter."""
    if replications < 1:
        raise DomainError("replications must be at least 1")
    fits = _parallel(threads)(delayed(_mle_one)(true_model, T, seed + i) for i in range(replications))
    truth = parameter_vector(true_model)
    table = []
    for name, v in truth.items():
        est = np.array([f[name] for f in fits])
        table.append({"parameter": name, "truth": float(v), "mean": float(est.mean()),
                      "sd": float(est.std(ddof=1)) if est.size > 1 else 0.0})
    return {"T": T, "replications": replications, "seed": seed, "table": table, "runs": fits}


# ---------------------------------------------------------------------------
# Calibration of the true model
# ---------------------------------------------------------------------------

def experiment_calibration(true_model: CuDvineModel, T_train: int, T_test: int, seed: int = 0,
                           m: int = 1000) -> dict:
    """Backtest the generating model on its own simulated panel over the last ``T_test`` rows."""
    panel = true_model.simulate(T_train + T_test, seed=seed)
    rows = backtest(true_model, panel, (T_train, T_train + T_test), m=m, seed=seed + 1)
    return {"seed": seed, "summary": summarize(rows), "rows": rows}
