"""Panel container and the composed CuDvine model."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special

from . import crosscopula as cc
from .errors import DataError, DomainError
from .marginals import EmpiricalMarginal
from .udvine import UDvineModel, UDvineSpec, conditional_pits, simulate_pits


@dataclass(frozen=True, eq=False)
class TimeSeriesPanel:
    """``T x d`` observations with series labels and a time index."""

    values: np.ndarray
    labels: tuple = None
    index: tuple = None

    def __post_init__(self):
        x = np.array(self.values, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if x.ndim != 2:
            raise DataError("panel values must be a T x d matrix")
        T, d = x.shape
        if T < 2:
            raise DataError(f"panel needs at least 2 rows, got {T}")
        labels = tuple(self.labels) if self.labels is not None else tuple(f"y{i + 1}" for i in range(d))
        if len(labels) != d:
            raise DataError(f"{len(labels)} labels for {d} series")
        if len(set(labels)) != d:
            raise DataError("series labels must be unique")
        index = tuple(self.index) if self.index is not None else tuple(str(t) for t in range(T))
        if len(index) != T:
            raise DataError(f"{len(index)} time labels for {T} rows")
        for j, name in enumerate(labels):
            col = x[:, j]
            bad = np.flatnonzero(~np.isfinite(col))
            if bad.size:
                raise DataError(f"series {name!r} has a missing or non-finite value at row {bad[0]}")
            if np.all(col == col[0]):
                raise DataError(f"series {name!r} is constant")
        x.setflags(write=False)
        object.__setattr__(self, "values", x)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "index", index)

    @property
    def T(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]

    def column(self, key) -> np.ndarray:
        if isinstance(key, str):
            if key not in self.labels:
                raise DataError(f"unknown series {key!r}")
            key = self.labels.index(key)
        return self.values[:, key]

    def slice(self, start, stop) -> "TimeSeriesPanel":
        return TimeSeriesPanel(self.values[start:stop], self.labels, self.index[start:stop])


@dataclass(frozen=True, eq=False)
class CuDvineModel:
    """``d`` uDvine models linked by a cross-sectional copula (``None`` when ``d == 1``)."""

    margins: tuple
    cross: cc.CrossCopulaSpec = None
    labels: tuple = None

    def __post_init__(self):
        margins = tuple(self.margins)
        if not margins:
            raise DomainError("a CuDvine needs at least one series")
        object.__setattr__(self, "margins", margins)
        if self.cross is not None and self.cross.d != len(margins):
            raise DomainError(f"cross copula has dimension {self.cross.d}, model has {len(margins)} series")
        labels = self.labels or tuple(f"y{i + 1}" for i in range(len(margins)))
        object.__setattr__(self, "labels", tuple(labels))

    @property
    def d(self) -> int:
        return len(self.margins)

    @property
    def max_order(self) -> int:
        return max(m.order for m in self.margins)

    @property
    def specs(self):
        return [m.spec for m in self.margins]

    def conditional_pits(self, values) -> np.ndarray:
        """Row-aligned conditional PITs for rows ``t >= max order`` of ``values``."""
        values = np.asarray(values, dtype=float)
        P = self.max_order
        cols = []
        for i, m in enumerate(self.margins):
            cols.append(m.conditional_pits(values[:, i])[P - m.order:])
        return np.column_stack(cols)

    def simulate_cross(self, n: int, rng) -> np.ndarray:
        """``n x d`` sequence of cross-sectional innovations ``V_t``."""
        d = self.d
        if self.cross is None:
            return rng.uniform(size=(n, d))
        spec = self.cross
        if spec.kind is not cc.CrossKind.TIME_VARYING_T:
            return cc.sample(spec, seed=rng, n=n)
        out = np.empty((n, d))
        Q = spec.qbar.copy()
        w = 1.0 - spec.dcc_a - spec.dcc_b
        for t in range(n):
            R = cc.rescale(Q)
            x = cc.sample_latent(1, R, spec.nu, rng)[0]
            out[t] = np.clip(special.stdtr(spec.nu, x), cc.CLIP, 1.0 - cc.CLIP)
            e = cc.standardized_t(x, spec.nu)
            Q = w * spec.qbar + spec.dcc_a * np.outer(e, e) + spec.dcc_b * Q
        return out

    def simulate_pits(self, n: int, seed=None, burn_in: int = 500) -> np.ndarray:
        """Simulate ``n x d`` marginal PITs ``u_ti`` of the model."""
        rng = np.random.default_rng(seed)
        V = self.simulate_cross(n + burn_in, rng)
        out = np.empty((n, self.d))
        for i, m in enumerate(self.margins):
            init = rng.uniform(size=m.order)
            out[:, i] = simulate_pits(n, m.spec, burn_in=burn_in, innovations=V[:, i], init=init)
        return out

    def simulate(self, n: int, seed=None, burn_in: int = 500) -> TimeSeriesPanel:
        U = self.simulate_pits(n, seed, burn_in)
        X = np.column_stack([m.marginal.quantile(U[:, i]) for i, m in enumerate(self.margins)])
        return TimeSeriesPanel(X, self.labels)

    def to_dict(self) -> dict:
        return {
            "series": [{"label": lab, **m.to_dict()} for lab, m in zip(self.labels, self.margins)],
            "cross": None if self.cross is None else self.cross.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict, marginals=None) -> "CuDvineModel":
        """Rebuild from :meth:`to_dict` or a fit report; marginals are not serialized and are supplied."""
        series = d["series"]
        specs = [UDvineSpec.from_dict(s["trees"]) for s in series]
        cross = None if d.get("cross") is None else cc.CrossCopulaSpec.from_dict(d["cross"])
        return cls.from_specs(specs, cross, marginals, tuple(s["label"] for s in series))

    @classmethod
    def from_specs(cls, specs, cross=None, marginals=None, labels=None) -> "CuDvineModel":
        """Build a model from uDvine specs; marginals default to the standard normal on a fine grid."""
        if marginals is None:
            marginals = [standard_normal_marginal()] * len(specs)
        margins = tuple(UDvineModel(s if isinstance(s, UDvineSpec) else UDvineSpec(tuple(s)), m)
                        for s, m in zip(specs, marginals))
        return cls(margins, cross, labels)


def standard_normal_marginal(n: int = 9999) -> EmpiricalMarginal:
    """An empirical marginal on the ``k/(n+1)`` normal quantiles, used for simulation designs."""
    return EmpiricalMarginal(special.ndtri(np.arange(1, n + 1) / (n + 1.0)))


def align_conditional_pits(pits_matrix, specs) -> np.ndarray:
    """Conditional PITs of each column of ``pits_matrix`` aligned on rows ``t >= max order``."""
    P = max((s.order for s in specs), default=0)
    return np.column_stack([conditional_pits(pits_matrix[:, i], s)[P - s.order:]
                            for i, s in enumerate(specs)])
