import numpy as np
import pytest
from scipy import stats

from cudvine import crosscopula as cc
from cudvine.bench import (GARCH, GJR, GarchSpec, experiment_calibration, experiment_mle,
                           experiment_selection, experiment_var, mle_design, selection_designs,
                           simulate_garch)
from cudvine.errors import DomainError
from cudvine.model import CuDvineModel
from cudvine.udvine import UDvineSpec


def test_garch_spec_validation():
    with pytest.raises(DomainError):
        GarchSpec(0.05, 0.5, 0.5)
    with pytest.raises(DomainError):
        GarchSpec(-0.1, 0.5, 0.1)
    with pytest.raises(DomainError):
        GarchSpec(0.0, 0.5, 0.1, 0.0)
    assert GARCH.unconditional_variance == pytest.approx(1.0)


def test_garch_unconditional_variance():
    y = simulate_garch(GARCH, 100_000, seed=1)
    assert np.var(y) == pytest.approx(1.0, rel=0.1)


def test_gjr_heavy_tails_and_reproducibility():
    y = simulate_garch(GJR, 100_000, seed=2)
    assert stats.kurtosis(y, fisher=False) > 3.0
    assert np.array_equal(y, simulate_garch(GJR, 100_000, seed=2))


def test_zero_dynamics_is_iid_normal():
    y = simulate_garch(GarchSpec(0.7, 0.0, 0.0, 0.0), 20_000, seed=3)
    assert stats.kstest(y / np.sqrt(0.7), "norm").pvalue > 0.001
    assert abs(stats.pearsonr(y[:-1] ** 2, y[1:] ** 2).statistic) < 0.03


def test_designs():
    d = selection_designs()
    assert set(d) == {"gaussian_gumbel", "t_clayton", "gaussian_gaussian"}
    assert all(s.order == 2 for s in d.values())
    m = mle_design()
    assert m.d == 3
    assert m.cross.correlation[1, 2] == 0.8


def test_experiment_var_guards_and_single_replication():
    with pytest.raises(DomainError):
        experiment_var(GARCH, 300, 10, q0=1.0, replications=1)
    with pytest.raises(DomainError):
        experiment_var(GARCH, 300, 10, q0=0.1, replications=0)
    out = experiment_var(GARCH, 300, 10, q0=0.1, replications=1, m=200)
    assert out["levels"][0.1]["z_p"] is None
    assert 0.0 <= out["levels"][0.1]["mean_rate"] <= 1.0


def test_experiment_selection_independence_truth_and_seed():
    out = experiment_selection(UDvineSpec(()), 500, replications=10, seed=4)
    assert out["order_rate"] >= 0.9
    again = experiment_selection(UDvineSpec(()), 500, replications=10, seed=4)
    assert out["runs"] == again["runs"]
    assert [r["seed"] for r in out["runs"]] == list(range(4, 14))


def test_experiment_mle_zero_correlation_cross():
    spec = selection_designs()["gaussian_gaussian"]
    model = CuDvineModel.from_specs([spec, spec], cc.CrossCopulaSpec.independence(2))
    out = experiment_mle(model, 1000, replications=3, seed=5)
    row = next(r for r in out["table"] if r["parameter"].startswith("cross.rho"))
    assert abs(row["mean"]) < 0.05
    assert {r["parameter"] for r in out["table"]} == set(out["runs"][0])


def test_experiment_mle_sd_shrinks_with_T():
    model = CuDvineModel.from_specs([UDvineSpec(selection_designs()["gaussian_gaussian"].trees[:1])])
    small = experiment_mle(model, 1000, replications=12, seed=6)["table"][0]["sd"]
    large = experiment_mle(model, 5000, replications=12, seed=6)["table"][0]["sd"]
    assert large < small


def test_experiment_calibration_small():
    out = experiment_calibration(mle_design(), 200, 30, seed=1, m=200)
    assert len(out["rows"]) == 90
    assert {s["series"] for s in out["summary"]} == {"y1", "y2", "y3"}
