import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import special, stats

from cudvine.copulae import BivariateCopulaSpec, Family, density, hfun, hinv, logdensity
from cudvine.errors import DataError, DomainError
from cudvine.marginals import EmpiricalMarginal
from cudvine.udvine import (LOGLIK_SENTINEL, UDvineModel, UDvineSpec, cond_quantile,
                            conditional_pits, g_condcdf, loglik, simulate, simulate_pits,
                            w_density)

S = BivariateCopulaSpec
IND = S.independence()
G7 = S(Family.GAUSSIAN, (0.7,))
GU = S(Family.GUMBEL, (1.25,))

# moderate trees used for combinations across orders
TREES = [S(Family.GAUSSIAN, (0.6,)), S(Family.STUDENT_T, (-0.3, 6.0)), S(Family.CLAYTON, (1.2,)),
         S(Family.GUMBEL, (1.4,)), S(Family.FRANK, (-3.0,)), S(Family.JOE, (1.5,)), IND]


def _combos():
    out = [UDvineSpec((t,)) for t in TREES[:-1]]
    out += [UDvineSpec((a, b)) for a, b in itertools.product(TREES[:3], TREES[3:])]
    out += [UDvineSpec((TREES[3], TREES[1], TREES[4])), UDvineSpec((TREES[0], TREES[5], TREES[2]))]
    return out


COMBOS = _combos()


def _sid(spec):
    return str(spec)


def test_spec_properties_and_serialization():
    spec = UDvineSpec((G7, S(Family.STUDENT_T, (0.3, 4.0)), IND))
    assert spec.order == 3
    assert spec.nparams == 3
    assert spec.truncated().order == 2
    assert UDvineSpec.from_dict(spec.to_dict()) == spec
    assert UDvineSpec.from_dict(spec.to_dict()["trees"]) == spec
    assert UDvineSpec(({"family": "Gaussian", "params": [0.7]},)).trees == (G7,)


def test_independence_w_is_one(backend):
    assert w_density([0.2, 0.9], UDvineSpec((IND,))) == 1.0
    assert g_condcdf([0.3, 0.9, 0.1], UDvineSpec((IND, IND))) == pytest.approx(0.3, abs=1e-15)


def test_p1_reduces_to_bivariate_density(backend):
    spec = UDvineSpec((S(Family.CLAYTON, (2.0,)),))
    assert w_density([0.3, 0.8], spec) == pytest.approx(density(0.8, 0.3, spec.trees[0]), rel=1e-13)


@pytest.mark.parametrize("u", [(0.5, 0.5, 0.5), (0.2, 0.7, 0.4), (0.9, 0.1, 0.6)])
def test_p2_matches_hand_composition(u, backend):
    spec = UDvineSpec((G7, GU))
    u1, u2, u3 = u
    brute = density(u2, u1, G7) * density(hfun(u3, u2, G7), hfun(u1, u2, G7), GU)
    assert w_density(u, spec) == pytest.approx(brute, rel=1e-12)
    assert g_condcdf(u, spec) == pytest.approx(hfun(hfun(u1, u2, G7), hfun(u3, u2, G7), GU), abs=1e-13)


def test_gaussian_g_closed_form(backend):
    spec = UDvineSpec((S(Family.GAUSSIAN, (0.5,)),))
    assert g_condcdf([0.5, 0.5], spec) == pytest.approx(0.5, abs=1e-14)
    u, v = 0.3, 0.8
    x, y = special.ndtri(u), special.ndtri(v)
    assert g_condcdf([u, v], spec) == pytest.approx(special.ndtr((x - 0.5 * y) / np.sqrt(0.75)), abs=1e-13)
    q = 0.77
    assert cond_quantile(q, [v], spec) == pytest.approx(
        special.ndtr(0.5 * y + np.sqrt(0.75) * special.ndtri(q)), abs=1e-12)


def test_truncation_consistency(backend):
    a, b = UDvineSpec((G7,)), UDvineSpec((G7, IND))
    for u in [(0.2, 0.6, 0.9), (0.75, 0.1, 0.3)]:
        assert abs(w_density(u, b) - w_density(u[:2], a)) <= 1e-12
        assert abs(g_condcdf(u, b) - g_condcdf(u[:2], a)) <= 1e-12


@pytest.mark.parametrize("spec", COMBOS, ids=_sid)
def test_g_derivative_is_w(spec, backend):
    rng = np.random.default_rng(spec.order * 7 + len(str(spec)))
    for _ in range(5):
        u = rng.uniform(0.05, 0.95, size=spec.order + 1)
        d = 1e-6
        up, dn = u.copy(), u.copy()
        up[0] += d
        dn[0] -= d
        fd = (g_condcdf(up, spec) - g_condcdf(dn, spec)) / (2 * d)
        assert fd == pytest.approx(w_density(u, spec), abs=1e-4)


@pytest.mark.parametrize("spec", COMBOS, ids=_sid)
def test_w_normalizes_over_current_value(spec, backend):
    x, wts = np.polynomial.legendre.leggauss(64)
    x, wts = 0.5 * (x + 1.0), 0.5 * wts
    rng = np.random.default_rng(5)
    hist = rng.uniform(0.2, 0.8, size=spec.order)
    total = sum(wt * w_density(np.concatenate([[xi], hist]), spec) for xi, wt in zip(x, wts))
    assert total == pytest.approx(1.0, abs=1e-4)


@pytest.mark.parametrize("spec", COMBOS, ids=_sid)
def test_cond_quantile_round_trip(spec, backend):
    rng = np.random.default_rng(11)
    hist = rng.uniform(0.05, 0.95, size=spec.order)
    qs = np.linspace(0.01, 0.99, 13)
    us = cond_quantile(qs, hist, spec)
    for q, u in zip(qs, us):
        assert g_condcdf(np.concatenate([[u], hist]), spec) == pytest.approx(q, abs=1e-9)


def test_cond_quantile_independence_and_errors():
    spec = UDvineSpec((IND, IND))
    assert cond_quantile(0.37, [0.1, 0.9], spec) == pytest.approx(0.37, abs=1e-15)
    with pytest.raises(DomainError):
        cond_quantile(0.5, [0.1], spec)
    with pytest.raises(DomainError):
        w_density([0.1, 0.2], spec)
    with pytest.raises(DomainError):
        g_condcdf([0.1, 1.4, 0.2], spec)


@settings(max_examples=60, deadline=None)
@given(st.floats(0.001, 0.999), st.lists(st.floats(0.01, 0.99), min_size=2, max_size=2),
       st.sampled_from(COMBOS[6:18]))
def test_cond_quantile_round_trip_property(q, hist, spec):
    u = cond_quantile(q, hist, spec)
    assert abs(g_condcdf([u, *hist], spec) - q) <= 1e-8


def test_loglik_examples(backend):
    u = np.random.default_rng(2).uniform(size=200)
    assert loglik(u, UDvineSpec((IND, IND))) == 0.0
    expected = float(np.sum(logdensity(u[:-1], u[1:], G7)))
    assert loglik(u, UDvineSpec((G7,))) == pytest.approx(expected, rel=1e-12)
    with pytest.raises(DataError):
        loglik(u[:2], UDvineSpec((G7, G7)))


def test_loglik_sum_of_w(backend):
    spec = COMBOS[-1]
    u = np.random.default_rng(3).uniform(0.02, 0.98, size=40)
    p = spec.order
    direct = sum(np.log(w_density(u[t - p:t + 1][::-1], spec)) for t in range(p, u.size))
    assert loglik(u, spec) == pytest.approx(direct, rel=1e-10)


def test_loglik_sentinel_on_underflow(monkeypatch):
    import cudvine.udvine as ud
    spec = UDvineSpec((S(Family.CLAYTON, (28.0,)),))
    u = np.array([1e-10, 1 - 1e-10, 1e-10, 1 - 1e-10])
    assert np.isfinite(loglik(u, spec))
    monkeypatch.setattr(ud, "raw_logpdf", lambda cop, a, b: np.full(a.shape, -np.inf))
    assert loglik(u, spec) == LOGLIK_SENTINEL


def test_loglik_dominance_at_truth(backend):
    u = simulate_pits(2000, UDvineSpec((G7,)), seed=7)
    assert loglik(u, UDvineSpec((G7,))) > loglik(u, UDvineSpec((S(Family.GAUSSIAN, (0.3,)),)))


def test_conditional_pits_match_point_function(backend):
    spec = COMBOS[-2]
    u = simulate_pits(30, spec, seed=1)
    cp = conditional_pits(u, spec)
    p = spec.order
    assert cp.size == u.size - p
    for t in range(p, u.size):
        assert cp[t - p] == pytest.approx(g_condcdf(u[t - p:t + 1][::-1], spec), abs=1e-13)


def test_conditional_pits_of_simulation_are_uniform(backend):
    spec = UDvineSpec((S(Family.STUDENT_T, (0.7, 3.0)), S(Family.CLAYTON, (0.5,))))
    cp = conditional_pits(simulate_pits(3000, spec, seed=3), spec)
    assert stats.kstest(cp, "uniform").pvalue > 0.001
    assert abs(stats.kendalltau(cp[:-1], cp[1:]).statistic) < 0.04


def test_simulation_tau_and_determinism(backend):
    spec = UDvineSpec((G7,))
    u = simulate_pits(10_000, spec, seed=12)
    assert stats.kendalltau(u[:-1], u[1:]).statistic == pytest.approx(0.494, abs=0.03)
    assert np.array_equal(u, simulate_pits(10_000, spec, seed=12))
    with pytest.raises(DomainError):
        simulate_pits(0, spec)
    with pytest.raises(DomainError):
        simulate_pits(5, spec, innovations=np.full(3, 0.5))


def test_simulation_autocorrelation_decays(backend):
    u = simulate_pits(20_000, UDvineSpec((G7,)), seed=21)
    z = special.ndtri(u)
    z = z - z.mean()
    acf = np.array([np.dot(z[:-k], z[k:]) / np.dot(z, z) for k in range(1, 51)])
    assert acf[0] == pytest.approx(0.7, abs=0.03)
    assert np.all(np.diff(acf[:8]) < 0)
    assert abs(acf[-1]) < 0.05


def test_independence_simulation_resamples_marginal(backend):
    sample = np.random.default_rng(4).standard_normal(50)
    m = UDvineModel(UDvineSpec(()), EmpiricalMarginal.fit(sample))
    y = simulate(500, m, seed=5)
    assert np.all(np.isin(y, sample))
    y1 = UDvineModel(UDvineSpec((IND,)), m.marginal).simulate(500, seed=5)
    assert np.all(np.isin(y1, sample))
    assert np.array_equal(y, simulate(500, m, seed=5))


def test_backends_simulate_identically():
    from cudvine import _backend
    if "compiled" not in _backend.available():
        pytest.skip("compiled kernels not built")
    spec = UDvineSpec((S(Family.STUDENT_T, (0.5, 4.0)), S(Family.JOE, (1.6,)), S(Family.FRANK, (-2.0,))))
    paths = {}
    prev = _backend.current()
    try:
        for name in ("compiled", "python"):
            _backend.set_backend(name)
            paths[name] = simulate_pits(500, spec, seed=8)
    finally:
        _backend.set_backend(prev)
    assert np.max(np.abs(paths["compiled"] - paths["python"])) < 1e-9


def test_hinv_agrees_with_cond_quantile_for_p1(backend):
    t = S(Family.JOE, (2.2,))
    assert cond_quantile(0.3, [0.6], UDvineSpec((t,))) == pytest.approx(hinv(0.3, 0.6, t), abs=1e-14)
