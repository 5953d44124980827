import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import special, stats

from cudvine.copulae import (CLIP, BivariateCopulaSpec, Family, cdf, density, hfun, hinv, logdensity,
                             sample_pair, tau, tau_to_param)
from cudvine.errors import ConvergenceError, DomainError
from grids import FAMILY_GRID, MODERATE_GRID, interior_grid, spec_id

S = BivariateCopulaSpec


# ---------------------------------------------------------------------------
# Spec construction
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("family,params", [
    ("Gaussian", (1.0,)), ("Gaussian", (-1.2,)), ("StudentT", (0.5, 2.0)), ("StudentT", (0.5, 101.0)),
    ("Clayton", (0.0,)), ("Clayton", (28.5,)), ("Gumbel", (0.99,)), ("Gumbel", (17.5,)),
    ("Frank", (0.0,)), ("Frank", (36.0,)), ("Joe", (1.0,)), ("Joe", (30.5,)),
    ("Gaussian", ()), ("StudentT", (0.5,)), ("Independence", (0.1,)), ("Gaussian", (float("nan"),)),
])
def test_spec_rejects_out_of_domain(family, params):
    with pytest.raises(DomainError):
        S(family, params)


def test_spec_parse_and_roundtrip():
    spec = S("t", (0.3, 5.0))
    assert spec.family is Family.STUDENT_T
    assert S.from_dict(spec.to_dict()) == spec
    assert spec.to_dict() == {"family": "StudentT", "params": [0.3, 5.0]}
    assert S.independence().is_independence
    with pytest.raises(DomainError):
        Family.parse("Galambos")


def test_inputs_outside_unit_interval_rejected():
    spec = S(Family.GAUSSIAN, (0.5,))
    for bad in (-0.1, 1.2, float("nan")):
        with pytest.raises(DomainError):
            density(bad, 0.5, spec)
        with pytest.raises(DomainError):
            hfun(0.5, bad, spec)


# ---------------------------------------------------------------------------
# Worked examples
# ---------------------------------------------------------------------------

def test_density_examples(backend):
    assert density(0.3, 0.7, S.independence()) == 1.0
    assert density(0.2, 0.9, S(Family.GAUSSIAN, (0.0,))) == pytest.approx(1.0, abs=1e-14)
    g = S(Family.GAUSSIAN, (0.5,))
    assert density(0.5, 0.5, g) == pytest.approx(1.0 / math.sqrt(0.75), abs=1e-12)
    # cross-check by a mixed second difference of the CDF
    h = 1e-4
    fd = (cdf(0.5 + h, 0.5 + h, g) - cdf(0.5 + h, 0.5 - h, g) - cdf(0.5 - h, 0.5 + h, g)
          + cdf(0.5 - h, 0.5 - h, g)) / (4 * h * h)
    assert fd == pytest.approx(1.154701, abs=1e-5)


def test_clayton_examples(backend):
    c = S(Family.CLAYTON, (1.0,))
    assert cdf(0.5, 0.5, c) == pytest.approx(1.0 / 3.0, abs=1e-14)
    uv = sample_pair(200_000, c, seed=4)
    mc = np.mean((uv[:, 0] <= 0.5) & (uv[:, 1] <= 0.5))
    assert mc == pytest.approx(1.0 / 3.0, abs=4 * math.sqrt(1 / 3 * 2 / 3 / 200_000))
    assert hfun(0.5, 0.5, c) == pytest.approx(4.0 / 9.0, abs=1e-14)
    d = 1e-6
    assert (cdf(0.5, 0.5 + d, c) - cdf(0.5, 0.5 - d, c)) / (2 * d) == pytest.approx(4 / 9, abs=1e-8)
    assert hinv(4.0 / 9.0, 0.5, c) == pytest.approx(0.5, abs=1e-12)


def test_independence_h_functions(backend):
    ind = S.independence()
    q = np.linspace(0.01, 0.99, 7)
    assert np.allclose(hfun(q, 0.3, ind), q)
    assert np.allclose(hinv(q, 0.3, ind), q)


@pytest.mark.parametrize("spec,expected", [
    (S(Family.GUMBEL, (1.25,)), 0.2),
    (S(Family.CLAYTON, (0.5,)), 0.2),
    (S(Family.GAUSSIAN, (0.7,)), 2 / math.pi * math.asin(0.7)),
    (S(Family.STUDENT_T, (0.7, 3.0)), 2 / math.pi * math.asin(0.7)),
    (S.independence(), 0.0),
])
def test_tau_examples(spec, expected):
    assert tau(spec) == pytest.approx(expected, abs=1e-12)
    if spec.family is Family.GAUSSIAN:
        assert tau(spec) == pytest.approx(0.4936, abs=1e-4)


@pytest.mark.parametrize("theta", [1.3, 2.5, 8.0, 20.0])
def test_joe_tau_matches_digamma_form(theta):
    expected = 1.0 + 2.0 / (2.0 - theta) * (special.digamma(2.0) - special.digamma(2.0 / theta + 1.0))
    assert tau(S(Family.JOE, (theta,))) == pytest.approx(expected, abs=1e-10)


@pytest.mark.parametrize("delta", [-20.0, -3.0, 0.5, 5.0, 30.0])
def test_frank_tau_matches_high_precision_debye(delta):
    d = mpmath.mpf(abs(delta))
    debye = mpmath.quad(lambda t: t / mpmath.expm1(t), [0, d]) / d
    expected = math.copysign(float(1 - 4 / d + 4 * debye / d), delta)
    assert tau(S(Family.FRANK, (delta,))) == pytest.approx(expected, abs=1e-12)


@pytest.mark.parametrize("spec", [s for s in FAMILY_GRID], ids=spec_id)
def test_tau_inversion_round_trip(spec):
    back = tau_to_param(spec.family, tau(spec), nu=spec.params[1] if len(spec.params) == 2 else 8.0)
    tol = 1e-5 if spec.family in (Family.FRANK, Family.JOE) else 1e-8
    assert back.params[0] == pytest.approx(spec.params[0], abs=tol * max(1.0, abs(spec.params[0])))


def test_tau_to_param_rejects_unattainable():
    with pytest.raises(DomainError):
        tau_to_param(Family.CLAYTON, -0.2)
    with pytest.raises(DomainError):
        tau_to_param(Family.GUMBEL, 0.99)
    with pytest.raises(DomainError):
        tau_to_param(Family.FRANK, 0.0)
    with pytest.raises(DomainError):
        tau_to_param(Family.GAUSSIAN, 1.0)


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------

def test_sample_pair_tau_and_determinism(backend):
    ind = sample_pair(10_000, S.independence(), seed=1)
    assert abs(stats.kendalltau(ind[:, 0], ind[:, 1]).statistic) < 0.03
    g = sample_pair(10_000, S(Family.GAUSSIAN, (0.7,)), seed=2)
    assert stats.kendalltau(g[:, 0], g[:, 1]).statistic == pytest.approx(0.4936, abs=0.03)
    assert np.array_equal(sample_pair(50, S(Family.JOE, (2.0,)), 9), sample_pair(50, S(Family.JOE, (2.0,)), 9))
    with pytest.raises(DomainError):
        sample_pair(0, S.independence(), 1)


@pytest.mark.parametrize("spec", MODERATE_GRID[1:], ids=spec_id)
def test_sample_pair_matches_tau(spec):
    uv = sample_pair(5000, spec, seed=11)
    assert stats.kendalltau(uv[:, 0], uv[:, 1]).statistic == pytest.approx(tau(spec), abs=0.04)


# ---------------------------------------------------------------------------
# Properties over the family grid
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("spec", FAMILY_GRID, ids=spec_id)
def test_hfun_is_derivative_of_cdf(spec, backend):
    u, v = interior_grid()
    d = 1e-6
    fd = (cdf(u, v + d, spec) - cdf(u, v - d, spec)) / (2 * d)
    assert np.max(np.abs(fd - hfun(u, v, spec))) <= 1e-5


@pytest.mark.parametrize("spec", FAMILY_GRID, ids=spec_id)
def test_density_is_symmetric(spec, backend):
    u, v = interior_grid()
    assert np.allclose(logdensity(u, v, spec), logdensity(v, u, spec), rtol=1e-10, atol=1e-10)


def _graded_rule(nodes=20):
    # composite Gauss-Legendre with panels graded toward the tails of [0, 1]
    b = np.array([0.0, 1e-8, 1e-6, 1e-4, 1e-3, 1e-2, 0.05, 0.2, 0.5])
    b = np.concatenate([b, 1.0 - b[::-1][1:]])
    x, w = np.polynomial.legendre.leggauss(nodes)
    lo, hi = b[:-1, None], b[1:, None]
    return ((lo + hi) / 2 + (hi - lo) / 2 * x).ravel(), ((hi - lo) / 2 * w).ravel()


@pytest.mark.parametrize("spec", FAMILY_GRID, ids=spec_id)
def test_density_normalizes(spec, backend):
    x, w = _graded_rule()
    U, V = np.meshgrid(x, x)
    assert float(np.sum(density(U, V, spec) * np.outer(w, w))) == pytest.approx(1.0, abs=1e-4)


@pytest.mark.parametrize("spec", FAMILY_GRID, ids=spec_id)
def test_hinv_round_trip(spec, backend):
    u, v = interior_grid()
    q = hfun(u, v, spec)
    u_back = hinv(q, v, spec)
    # residual in probability is tight everywhere, on the clipped scale
    q_c = np.clip(q, CLIP, 1.0 - CLIP)
    assert np.max(np.abs(np.clip(hfun(u_back, v, spec), CLIP, 1.0 - CLIP) - q_c)) <= 1e-10
    # in u the inverse is only determined where the conditional density is not flat
    ok = np.minimum(q, 1.0 - q) > 1e-6
    assert np.max(np.abs(u_back - u)[ok]) <= 1e-8


@pytest.mark.parametrize("spec", FAMILY_GRID, ids=spec_id)
def test_hfun_monotone_with_unit_boundaries(spec, backend):
    u = np.linspace(0.0, 1.0, 201)
    for v in (0.1, 0.5, 0.9):
        h = hfun(u, np.full_like(u, v), spec)
        assert np.all(np.diff(h) >= -1e-14)
        assert h[0] <= 1e-6 and h[-1] >= 1 - 1e-6
        assert hfun(1.0, v, spec) == pytest.approx(1.0, abs=1e-6)


@pytest.mark.parametrize("spec", FAMILY_GRID + [S.independence()], ids=spec_id)
def test_cdf_boundaries(spec):
    v = np.array([0.0, 0.2, 0.7, 1.0])
    assert np.array_equal(cdf(v, np.ones(4), spec), v)
    assert np.array_equal(cdf(np.ones(4), v, spec), v)
    assert np.all(cdf(np.zeros(4), v, spec) == 0.0)
    assert np.all(cdf(v, np.zeros(4), spec) == 0.0)


@pytest.mark.parametrize("spec", FAMILY_GRID, ids=spec_id)
def test_cdf_is_two_increasing(spec):
    g = np.linspace(0.02, 0.98, 9)
    C = cdf(g[:, None], g[None, :], spec)
    rect = C[1:, 1:] - C[1:, :-1] - C[:-1, 1:] + C[:-1, :-1]
    assert np.all(rect >= -1e-12)


def test_hinv_reports_nonconvergence(monkeypatch):
    from cudvine import _backend

    class Failing:
        def __getattr__(self, name):
            return getattr(_backend._pykernels, name)

        def hinv(self, fam, p0, p1, q, v):
            return q.copy(), 3

    monkeypatch.setattr(_backend, "kernels", Failing())
    with pytest.raises(ConvergenceError, match="Joe"):
        hinv(0.3, 0.4, S(Family.JOE, (2.0,)))


_fams = st.sampled_from([
    (Family.GAUSSIAN, st.floats(-0.98, 0.98)),
    (Family.CLAYTON, st.floats(0.01, 15.0)),
    (Family.GUMBEL, st.floats(1.0, 8.0)),
    (Family.FRANK, st.floats(0.1, 30.0)),
    (Family.JOE, st.floats(1.01, 10.0)),
])


@settings(max_examples=150, deadline=None)
@given(data=st.data(), u=st.floats(0.01, 0.99), v=st.floats(0.01, 0.99),
       sign=st.sampled_from([1.0, -1.0]), nu=st.floats(2.5, 60.0))
def test_hinv_hfun_round_trip_property(data, u, v, sign, nu):
    fam, par = data.draw(_fams)
    p = data.draw(par)
    spec = S(fam, (sign * p,)) if fam is Family.FRANK else S(fam, (p,))
    q = hfun(u, v, spec)
    back = float(np.clip(hfun(hinv(q, v, spec), v, spec), CLIP, 1.0 - CLIP))
    assert abs(back - float(np.clip(q, CLIP, 1.0 - CLIP))) <= 1e-10
    t = S(Family.STUDENT_T, (data.draw(st.floats(-0.95, 0.95)), nu))
    q = hfun(u, v, t)
    if min(q, 1.0 - q) > 1e-6:
        assert hinv(q, v, t) == pytest.approx(u, abs=1e-8)
