"""Kernel backend selection.

The compiled Cython module is used when importable; setting the environment
variable ``CUDVINE_PURE_PYTHON=1`` (or calling :func:`set_backend`) forces the
numpy implementation.  Callers reach the active module through
``_backend.kernels`` at call time so switching takes effect immediately.
"""
import os

from . import _pykernels

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

# Closed-form families run faster as vectorised numpy than as scalar libm loops;
# the compiled backend keeps C for the Student t family, the iterative
# inversions and the sequential recursions.
_NUMPY_DENSITY = frozenset((0, 1, 3, 4, 5, 6))
_NUMPY_INVERSE = frozenset((0, 1, 3, 5))


class _Hybrid:
    def __init__(self, ext):
        self.ext = ext
        self.t_ppf = ext.t_ppf
        self.simulate_chain = ext.simulate_chain
        self.dcc_filter = ext.dcc_filter

    def logpdf(self, fam, p0, p1, u, v):
        return (_pykernels if fam in _NUMPY_DENSITY else self.ext).logpdf(fam, p0, p1, u, v)

    def hfunc(self, fam, p0, p1, u, v):
        return (_pykernels if fam in _NUMPY_DENSITY else self.ext).hfunc(fam, p0, p1, u, v)

    def hinv(self, fam, p0, p1, q, v):
        return (_pykernels if fam in _NUMPY_INVERSE else self.ext).hinv(fam, p0, p1, q, v)


_compiled = None if _ckernels is None else _Hybrid(_ckernels)
kernels = _pykernels if (_compiled is None or os.environ.get("CUDVINE_PURE_PYTHON")) else _compiled


def available():
    """Names of the backends that can be selected in this environment."""
    return ["python"] if _ckernels is None else ["compiled", "python"]


def current():
    return "python" if kernels is _pykernels else "compiled"


def set_backend(name):
    """Select ``"compiled"`` or ``"python"``; returns the previous backend name."""
    global kernels
    previous = current()
    if name == "compiled":
        if _ckernels is None:
            raise ImportError("compiled kernels are not built")
        kernels = _compiled
    elif name == "python":
        kernels = _pykernels
    else:
        raise ValueError(f"unknown backend {name!r}")
    return previous
