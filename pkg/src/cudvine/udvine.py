"""Truncated, homogeneous univariate D-vine time-series model.

Conventions
-----------
Series-level functions take chronologically ordered PITs ``u_0, ..., u_{T-1}``.
Point functions (:func:`w_density`, :func:`g_condcdf`, :func:`cond_quantile`)
take the current value first followed by the past, newest first:
``(u_t, u_{t-1}, ..., u_{t-p})``.

The conditional distribution functions of the D-vine are stored tree by tree.
For tree ``j`` and edge ``(s, s + j)`` let ``A_j[s] = F(u_s | u_{s+1:s+j-1})``
and ``B_j[s] = F(u_{s+j} | u_{s+1:s+j-1})``.  Then ``A_1[s] = u_s``,
``B_1[s] = u_{s+1}`` and

    A_{j+1}[s] = h_j(A_j[s] | B_j[s]),   B_{j+1}[s] = h_j(B_j[s+1] | A_j[s+1]).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _backend
from .copulae import (CLIP, BivariateCopulaSpec, Family, raw_hfun, raw_hinv, raw_logpdf,
                      t_hfun_scores, t_logpdf_scores, t_scores)
from .errors import ConvergenceError, DataError, DomainError
from .marginals import EmpiricalMarginal

#: Returned by :func:`loglik` instead of ``-inf``.
LOGLIK_SENTINEL = -1e10
MAX_ORDER = 5


@dataclass(frozen=True)
class UDvineSpec:
    """Order ``p`` is ``len(trees)``; tree ``j`` governs all lag-``j`` edges."""

    trees: tuple = ()

    def __post_init__(self):
        trees = tuple(t if isinstance(t, BivariateCopulaSpec) else BivariateCopulaSpec.from_dict(t)
                      for t in self.trees)
        object.__setattr__(self, "trees", trees)

    @property
    def order(self) -> int:
        return len(self.trees)

    @property
    def nparams(self) -> int:
        return sum(t.family.nparams for t in self.trees)

    def truncated(self) -> "UDvineSpec":
        """Drop trailing independence trees (they do not change the model)."""
        trees = list(self.trees)
        while trees and trees[-1].is_independence:
            trees.pop()
        return UDvineSpec(tuple(trees))

    def kernel_arrays(self):
        fams = np.array([t.family.code for t in self.trees], dtype=np.int32)
        params = np.array([t.kernel_args[1:] for t in self.trees], dtype=float).reshape(-1, 2)
        return fams, np.ascontiguousarray(params)

    def to_dict(self) -> dict:
        return {"order": self.order, "trees": [t.to_dict() for t in self.trees]}

    @classmethod
    def from_dict(cls, d) -> "UDvineSpec":
        trees = d["trees"] if isinstance(d, dict) else d
        return cls(tuple(BivariateCopulaSpec.from_dict(t) for t in trees))

    def __str__(self):
        return "uDvine(" + ", ".join(str(t) for t in self.trees) + ")"


def _as_pits(u) -> np.ndarray:
    u = np.asarray(u, dtype=float).ravel()
    if np.any(np.isnan(u)) or np.any((u < 0.0) | (u > 1.0)):
        raise DomainError("PIT values must lie in [0, 1]")
    return np.clip(u, CLIP, 1.0 - CLIP)


def _level_pass(u, trees, upto, p=None):
    """Walk the D-vine levels ``1..upto``; optionally collect tree log densities.

    With ``p`` given, ``logdens[j-1]`` holds the tree-``j`` terms for ``t >= p``.
    Student t trees evaluate their quantile scores once per level and derive
    both the density and the next-level h-values from them.
    """
    A, B, L = [], [], []
    if upto == 0:
        return A, B, L
    a, b = u[:-1], u[1:]
    for j in range(1, upto + 1):
        A.append(a)
        B.append(b)
        need_next = j < upto
        need_l = p is not None and j <= p
        if not (need_next or need_l):
            break
        cop = trees[j - 1]
        lo = 0 if p is None else p - j
        if cop.family is Family.STUDENT_T:
            rho, nu = cop.params
            if j == 1:
                xs = t_scores(u, nu)
                xa, xb = xs[:-1], xs[1:]
            else:
                xa, xb = t_scores(a, nu), t_scores(b, nu)
            if need_l:
                L.append(t_logpdf_scores(xa[lo:], xb[lo:], rho, nu))
            if need_next:
                a, b = (t_hfun_scores(xa[:-1], xb[:-1], rho, nu),
                        t_hfun_scores(xb[1:], xa[1:], rho, nu))
        else:
            if need_l:
                L.append(raw_logpdf(cop, a[lo:], b[lo:]))
            if need_next:
                a, b = raw_hfun(cop, a[:-1], b[:-1]), raw_hfun(cop, b[1:], a[1:])
    return A, B, L


def vine_arrays(pits, trees, upto=None):
    """Conditional CDF arrays ``A_j, B_j`` for ``j = 1 .. upto`` (default: all trees).

    Returns two lists indexed from 0 (``A[j - 1]`` holds ``A_j``).  Tree ``j``
    arrays have length ``T - j``.  Building level ``j`` needs trees ``1..j-1``.
    """
    u = np.asarray(pits, dtype=float)
    upto = len(trees) if upto is None else upto
    A, B, _ = _level_pass(u, trees, upto)
    return A, B


def tree_logdens(pits, spec: UDvineSpec):
    """Per-tree log-density terms; entry ``j-1`` has length ``T - p`` (terms for ``t >= p``)."""
    p = spec.order
    return _level_pass(np.asarray(pits, dtype=float), spec.trees, p, p)[2]


def _finite_sum(terms) -> float:
    total = float(sum(np.sum(t) for t in terms))
    return total if np.isfinite(total) else LOGLIK_SENTINEL


def loglik(pits, spec: UDvineSpec) -> float:
    """Sum over ``t >= p`` of ``log w(u_t, ..., u_{t-p})``.

    Returns :data:`LOGLIK_SENTINEL` if any factor underflows to zero.
    """
    u = _as_pits(pits)
    if u.size <= spec.order:
        raise DataError(f"need more than p={spec.order} observations, got {u.size}")
    return _finite_sum(tree_logdens(u, spec))


def loglik_unchecked(u, spec: UDvineSpec) -> float:
    return _finite_sum(tree_logdens(u, spec))


def conditional_pits(pits, spec: UDvineSpec) -> np.ndarray:
    """``g(u_t, ..., u_{t-p})`` for ``t = p .. T-1`` (length ``T - p``)."""
    u = _as_pits(pits)
    p = spec.order
    if u.size <= p:
        raise DataError(f"need more than p={p} observations, got {u.size}")
    if p == 0:
        return u.copy()
    A, B = vine_arrays(u, spec.trees)
    return raw_hfun(spec.trees[p - 1], B[p - 1], A[p - 1])


def _point(u, spec):
    u = _as_pits(u)
    if u.size != spec.order + 1:
        raise DomainError(f"expected {spec.order + 1} values (u_t, ..., u_t-p), got {u.size}")
    return u[::-1].copy()


def w_density(u, spec: UDvineSpec) -> float:
    """Copula factor ``f(y_t | past) / f(y_t)`` at ``u = (u_t, u_{t-1}, ..., u_{t-p})``."""
    chron = _point(u, spec)
    return float(np.exp(sum(float(t[0]) for t in tree_logdens(chron, spec))))


def g_condcdf(u, spec: UDvineSpec) -> float:
    """Conditional CDF of ``u_t`` given ``(u_{t-1}, ..., u_{t-p})``."""
    chron = _point(u, spec)
    return float(conditional_pits(chron, spec)[-1])


def history_levels(history_chron, spec: UDvineSpec) -> np.ndarray:
    """``A_j[t - j]`` for ``j = 1..p`` given the last ``p`` PITs in chronological order."""
    p = spec.order
    h = np.asarray(history_chron, dtype=float)
    # append a dummy current value so the recursion reaches lag p
    A, _ = vine_arrays(np.append(h, 0.5), spec.trees)
    return np.array([A[j - 1][p - j] for j in range(1, p + 1)])


def cond_quantile(q, history, spec: UDvineSpec):
    """Invert :func:`g_condcdf` in ``u_t``.

    Parameters
    ----------
    q : float or array_like
        Target conditional probabilities; an array is inverted against one history.
    history : array_like
        ``(u_{t-1}, ..., u_{t-p})``, newest first.
    """
    p = spec.order
    hist = _as_pits(history)
    if hist.size != p:
        raise DomainError(f"history must hold p={p} values, got {hist.size}")
    scalar = np.ndim(q) == 0
    x = _as_pits(q)
    if p:
        levels = history_levels(hist[::-1], spec)
        for j in range(p, 0, -1):
            x = raw_hinv(spec.trees[j - 1], x, np.full(x.shape, levels[j - 1]))
    return float(x[0]) if scalar else x


def simulate_pits(n: int, spec: UDvineSpec, seed=None, burn_in: int = 500,
                  innovations=None, init=None) -> np.ndarray:
    """Simulate ``n`` PITs of the Markov chain.

    ``innovations`` (length ``burn_in + n``) replaces the uniform draws when
    given; ``init`` replaces the ``p`` independent uniform starting values.
    """
    if n < 1:
        raise DomainError("n must be at least 1")
    if burn_in < 0:
        raise DomainError("burn_in must be nonnegative")
    rng = np.random.default_rng(seed)
    p = spec.order
    if init is None:
        init = rng.uniform(size=p)
    if innovations is None:
        innovations = rng.uniform(size=burn_in + n)
    innov = np.ascontiguousarray(innovations, dtype=float)
    if innov.size != burn_in + n:
        raise DomainError(f"expected {burn_in + n} innovations, got {innov.size}")
    fams, params = spec.kernel_arrays()
    path, failed = _backend.kernels.simulate_chain(fams, params, innov,
                                                   np.ascontiguousarray(init, dtype=float))
    if failed:
        raise ConvergenceError(f"conditional inversion failed {failed} time(s) while simulating {spec}")
    return np.asarray(path)[burn_in:]


@dataclass(frozen=True)
class UDvineModel:
    """A uDvine copula specification together with the marginal of its series."""

    spec: UDvineSpec
    marginal: EmpiricalMarginal

    @property
    def order(self) -> int:
        return self.spec.order

    def pits(self, series) -> np.ndarray:
        return self.marginal.pit(series)

    def loglik(self, series) -> float:
        return loglik(self.pits(series), self.spec)

    def conditional_pits(self, series) -> np.ndarray:
        return conditional_pits(self.pits(series), self.spec)

    def simulate(self, n: int, seed=None, burn_in: int = 500) -> np.ndarray:
        return self.marginal.quantile(simulate_pits(n, self.spec, seed, burn_in))

    def to_dict(self) -> dict:
        return {**self.spec.to_dict(), "marginal": self.marginal.to_dict()}


def simulate(n: int, model: UDvineModel, seed=None, burn_in: int = 500) -> np.ndarray:
    """Data-scale simulation: chain PITs mapped through the marginal quantile."""
    return model.simulate(n, seed, burn_in)
