import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from cudvine import crosscopula as cc
from cudvine.bench import mle_design
from cudvine.copulae import BivariateCopulaSpec, Family
from cudvine.errors import DataError, DomainError
from cudvine.forecast_scoring import (BACKTEST_COLUMNS, ForecastEnsemble, backtest, coverage_tests,
                                      crps, forecast_one_step, head_to_head, qrps, summarize,
                                      var_quantile, write_csv)
from cudvine.marginals import EmpiricalMarginal
from cudvine.model import CuDvineModel, TimeSeriesPanel
from cudvine.udvine import UDvineSpec, cond_quantile

S = BivariateCopulaSpec


# ---------------------------------------------------------------------------
# Scores
# ---------------------------------------------------------------------------

def test_ensemble_validation():
    with pytest.raises(DomainError):
        ForecastEnsemble(np.zeros(50))
    with pytest.raises(DomainError):
        ForecastEnsemble(np.append(np.zeros(200), np.nan))
    assert ForecastEnsemble(np.zeros((150, 3))).d == 3


def test_var_quantile_examples():
    assert var_quantile(np.full(200, 3.5), 0.9) == 3.5
    assert var_quantile(np.arange(1.0, 1001.0), 0.95) == pytest.approx(950.05, abs=1e-12)
    draws = np.random.default_rng(0).standard_normal((500, 5))
    w = np.array([8235, 5476, 5913, 1120, 1441], dtype=float)
    expected = np.quantile(draws @ w / w.sum(), 0.95)
    assert var_quantile(ForecastEnsemble(draws), 0.95, weights=w) == pytest.approx(expected, abs=1e-14)
    with pytest.raises(DomainError):
        var_quantile(ForecastEnsemble(draws), 0.95)
    with pytest.raises(DomainError):
        var_quantile(draws, 0.95, weights=[1.0, 2.0])


def test_crps_examples():
    assert crps(np.full(10, 2.0), 2.0) == 0.0
    assert crps(np.array([0.0, 1.0]), 0.0) == pytest.approx(0.25, abs=1e-15)
    assert crps(np.array([4.0]), 1.5) == pytest.approx(2.5)
    x = np.random.default_rng(1).standard_normal(300)
    assert crps(2 * x, 2 * 0.3) == pytest.approx(2 * crps(x, 0.3), rel=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-100, 100), min_size=2, max_size=40), st.floats(-120, 120), st.randoms())
def test_crps_matches_pairwise_formula_and_permutation(xs, y, rnd):
    x = np.array(xs)
    pair = np.mean(np.abs(x - y)) - 0.5 * np.mean(np.abs(x[:, None] - x[None, :]))
    assert crps(x, y) == pytest.approx(pair, abs=1e-9 * (1 + np.max(np.abs(x))))
    perm = list(xs)
    rnd.shuffle(perm)
    assert crps(np.array(perm), y) == pytest.approx(crps(x, y), abs=1e-12 * (1 + np.max(np.abs(x))))
    assert crps(x, y) >= -1e-12


def test_crps_matches_integral_oracle():
    x = np.random.default_rng(2).standard_normal(200)
    y = 0.4
    grid = np.linspace(-8, 8, 400_001)
    F = np.searchsorted(np.sort(x), grid, side="right") / x.size
    integral = np.trapezoid((F - (grid >= y)) ** 2, grid)
    assert crps(x, y) == pytest.approx(integral, abs=1e-4)


def test_qrps_examples():
    assert qrps(np.full(200, 1.0), 1.0, 0.95) == 0.0
    assert qrps(np.full(200, 1.0), 0.0, 0.95) == pytest.approx(0.05, abs=1e-15)
    assert qrps(np.full(200, 0.0), 1.0, 0.95) == pytest.approx(0.95, abs=1e-15)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=5, max_size=50), st.floats(-12, 12))
def test_var_monotone_and_qrps_nonnegative(xs, y):
    x = np.array(xs)
    levels = np.linspace(0, 1, 21)
    q = [var_quantile(x, a) for a in levels]
    assert np.all(np.diff(q) >= -1e-12)
    assert all(qrps(x, y, a) >= -1e-12 for a in levels)


def test_coverage_tests_examples():
    hits = np.array([True] * 340 + [False] * 25)
    out = coverage_tests(hits, 0.95)
    assert out["rate"] == pytest.approx(0.9315, abs=5e-5)
    assert out["binomial_p"] == pytest.approx(0.117, abs=0.005)
    assert coverage_tests(np.zeros(50, dtype=bool), 0.0)["binomial_p"] == 1.0
    assert coverage_tests(np.array([True] * 9500 + [False] * 500), 0.95)["binomial_p"] > 0.9
    rates = coverage_tests(np.array([0.1, 0.12, 0.08, 0.1]), 0.1)
    assert rates["binomial_p"] is None and rates["z_p"] == pytest.approx(1.0)
    assert coverage_tests(np.array([0.2]), 0.1)["z_p"] is None
    with pytest.raises(DomainError):
        coverage_tests(np.array([]), 0.5)


def test_coverage_z_test_matches_scipy():
    r = np.random.default_rng(3).uniform(0.05, 0.15, size=30)
    expected = stats.norm.sf(abs(r.mean() - 0.1) / (r.std(ddof=1) / np.sqrt(30))) * 2
    assert coverage_tests(r, 0.1)["z_p"] == pytest.approx(expected, rel=1e-10)


# ---------------------------------------------------------------------------
# Forecasting
# ---------------------------------------------------------------------------

def _indep_model(d=2, n=60, seed=0):
    rng = np.random.default_rng(seed)
    margs = [EmpiricalMarginal.fit(rng.standard_normal(n)) for _ in range(d)]
    return CuDvineModel.from_specs([UDvineSpec(())] * d, None if d == 1 else cc.CrossCopulaSpec.independence(d),
                                   margs)


def test_forecast_independence_resamples_marginals():
    model = _indep_model()
    ens = forecast_one_step(model, np.zeros((3, 2)), m=2000, seed=1)
    for i, mi in enumerate(model.margins):
        assert np.all(np.isin(ens.column(i), mi.marginal.sorted_sample))
        assert stats.chisquare(np.unique(ens.column(i), return_counts=True)[1]).pvalue > 0.001


def test_forecast_d1_is_one_step_simulation(backend):
    spec = UDvineSpec((S(Family.STUDENT_T, (0.6, 4.0)), S(Family.CLAYTON, (0.8,))))
    x = np.random.default_rng(4).standard_normal(300)
    model = CuDvineModel.from_specs([spec], None, [EmpiricalMarginal.fit(x)])
    hist = x[-5:, None]
    ens = forecast_one_step(model, hist, m=500, seed=9)
    q = np.random.default_rng(9).uniform(size=(500, 1))[:, 0]
    h = model.margins[0].marginal.pit(hist[::-1, 0][:2])
    expected = model.margins[0].marginal.quantile(cond_quantile(q, h, spec))
    assert np.array_equal(ens.column(0), expected)


def test_forecast_reproducible_and_errors():
    model = mle_design()
    hist = model.simulate(10, seed=1).values
    a = forecast_one_step(model, hist, m=200, seed=5)
    assert np.array_equal(a.draws, forecast_one_step(model, hist, m=200, seed=5).draws)
    with pytest.raises(DataError):
        forecast_one_step(model, hist[:1], m=200)
    with pytest.raises(DataError):
        forecast_one_step(model, hist[:, :2], m=200)
    with pytest.raises(DomainError):
        forecast_one_step(model, hist, m=50)
    with pytest.raises(DomainError):
        forecast_one_step(model, hist, m=200, observed={7: 0.0})


def test_forecast_conditional_on_observed_shifts_others():
    R = np.array([[1.0, 0.9], [0.9, 1.0]])
    model = CuDvineModel.from_specs([UDvineSpec(()), UDvineSpec(())],
                                    cc.CrossCopulaSpec("GaussianFull", correlation=R))
    hist = np.zeros((2, 2))
    ens = forecast_one_step(model, hist, m=4000, seed=2, observed={0: 1.5})
    assert np.all(ens.column(0) == 1.5)
    assert np.mean(ens.column(1)) == pytest.approx(0.9 * 1.5, abs=0.05)
    assert np.std(ens.column(1)) == pytest.approx(np.sqrt(1 - 0.81), abs=0.03)


def test_forecast_time_varying_state_follows_history():
    qbar = np.array([[1.0, 0.3], [0.3, 1.0]])
    cross = cc.CrossCopulaSpec("TimeVaryingT", qbar=qbar, nu=8.0, dcc_a=0.2, dcc_b=0.75)
    model = CuDvineModel.from_specs([UDvineSpec(()), UDvineSpec(())], cross)
    hist = np.tile([[2.0, 2.0]], (20, 1)) + np.random.default_rng(0).normal(0, 0.01, (20, 2))
    from cudvine.forecast_scoring import cross_state
    R = cross_state(model, hist)
    assert R[0, 1] > 0.6
    ens = forecast_one_step(model, hist, m=3000, seed=3)
    assert stats.kendalltau(ens.column(0), ens.column(1)).statistic > 0.4


# ---------------------------------------------------------------------------
# Backtests
# ---------------------------------------------------------------------------

def test_backtest_rows_summary_and_head_to_head(tmp_path):
    model = mle_design()
    panel = model.simulate(80, seed=4)
    rows = backtest(model, panel, (60, 80), m=200, seed=1, weights=[1.0, 2.0, 3.0])
    assert len(rows) == 20 * 4
    assert set(rows[0]) == set(BACKTEST_COLUMNS)
    assert rows == backtest(model, panel, (60, 80), m=200, seed=1, weights=[1.0, 2.0, 3.0])
    summ = summarize(rows)
    assert {s["series"] for s in summ} == {"y1", "y2", "y3", "weighted"}
    assert all(s["n"] == 20 for s in summ)
    h2h = head_to_head(rows, rows)
    assert all(v == 50.0 for v in h2h.values())
    other = [dict(r, crps=r["crps"] + 1.0) for r in rows]
    assert all(v == 100.0 for v in head_to_head(rows, other).values())
    write_csv(tmp_path / "bt.csv", rows, BACKTEST_COLUMNS)
    lines = (tmp_path / "bt.csv").read_text().splitlines()
    assert lines[0] == ",".join(BACKTEST_COLUMNS)
    assert len(lines) == 81


def test_backtest_observed_series_are_not_scored():
    model = mle_design()
    panel = model.simulate(40, seed=5)
    rows = backtest(model, panel, (30, 40), m=200, observed_idx=[0])
    assert {r["series"] for r in rows} == {"y2", "y3"}


def test_backtest_errors():
    model = mle_design()
    panel = model.simulate(40, seed=5)
    with pytest.raises(DomainError):
        backtest(model, panel, (1, 10))
    with pytest.raises(DomainError):
        backtest(model, panel, (30, 50))
    with pytest.raises(DataError):
        backtest(model, TimeSeriesPanel(panel.values[:, :2]), (30, 40))
    with pytest.raises(DataError):
        head_to_head([{"date": "a", "series": "x", "crps": 1.0}], [{"date": "b", "series": "x", "crps": 1.0}])


def test_backtest_true_model_pi_coverage():
    model = CuDvineModel.from_specs([UDvineSpec((S(Family.GAUSSIAN, (0.7,)),))])
    panel = model.simulate(700, seed=8)
    rows = backtest(model, panel, (100, 700), m=500, seed=3)
    hits = np.array([r["pi_hit"] for r in rows])
    lo, hi = stats.binom.ppf([0.025, 0.975], hits.size, 0.95)
    assert lo <= hits.sum() <= hi
