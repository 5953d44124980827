"""Rescaled empirical marginal distribution."""
from __future__ import annotations

import numpy as np

from .errors import DataError

#: Minimum fraction of distinct values before a series counts as degenerate.
MIN_UNIQUE_FRACTION = 0.5


class EmpiricalMarginal:
    """Empirical CDF rescaled by ``T + 1`` so that PITs stay inside ``(0, 1)``.

    Parameters
    ----------
    sorted_sample : array_like
        Observations in ascending order.  Use :meth:`fit` to build from raw data.
    """

    __slots__ = ("sorted_sample",)

    def __init__(self, sorted_sample):
        x = np.array(sorted_sample, dtype=float)
        x.setflags(write=False)
        self.sorted_sample = x

    @property
    def T(self) -> int:
        return self.sorted_sample.size

    @classmethod
    def fit(cls, series, check_ties: bool = True) -> "EmpiricalMarginal":
        x = np.asarray(series, dtype=float).ravel()
        if x.size < 2:
            raise DataError(f"a marginal needs at least 2 observations, got {x.size}")
        if not np.all(np.isfinite(x)):
            raise DataError("series contains NaN or infinite values")
        xs = np.sort(x)
        if xs[0] == xs[-1]:
            raise DataError("series is constant; its marginal is degenerate")
        if check_ties and np.count_nonzero(np.diff(xs)) + 1 < MIN_UNIQUE_FRACTION * x.size:
            raise DataError("series has massive ties (fewer than half of the values are distinct)")
        return cls(xs)

    def cdf(self, x):
        """``#{sample <= x} / (T + 1)``, clipped to ``[1/(T+1), T/(T+1)]``."""
        n = self.T
        k = np.searchsorted(self.sorted_sample, np.asarray(x, dtype=float), side="right")
        out = np.clip(k, 1, n) / (n + 1.0)
        return out if np.ndim(out) else float(out)

    def pit(self, series) -> np.ndarray:
        return np.atleast_1d(self.cdf(np.asarray(series, dtype=float)))

    def quantile(self, q):
        """Generalized inverse of :meth:`cdf`: the smallest sample value with cdf >= q."""
        n = self.T
        q = np.asarray(q, dtype=float)
        k = np.ceil(q * (n + 1.0) - 1e-9).astype(np.int64)
        out = self.sorted_sample[np.clip(k, 1, n) - 1]
        return out if np.ndim(out) else float(out)

    def to_dict(self) -> dict:
        return {"T": self.T, "min": float(self.sorted_sample[0]), "max": float(self.sorted_sample[-1])}

    def __eq__(self, other):
        return isinstance(other, EmpiricalMarginal) and np.array_equal(self.sorted_sample,
                                                                       other.sorted_sample)

    def __repr__(self):
        return f"EmpiricalMarginal(T={self.T})"
