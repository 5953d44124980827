"""Exception hierarchy shared by the library and the command-line front end."""


class CuDvineError(Exception):
    """Base class for all errors raised by :mod:`cudvine`."""


class DomainError(CuDvineError, ValueError):
    """A parameter or input lies outside its admissible domain."""


class DataError(CuDvineError, ValueError):
    """Input data cannot be used (NaN cells, degenerate columns, bad shape)."""


class ConfigError(CuDvineError, ValueError):
    """A run configuration failed schema validation."""


class ConvergenceError(CuDvineError, RuntimeError):
    """A numerical routine did not converge within its iteration cap."""
