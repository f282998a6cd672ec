"""Input validation helpers used by the estimators and public functions."""

import numbers

import numpy as np

from .exceptions import ConfigError, DataError


def check_fraction(f, name="f"):
    """Return ``f`` as float, requiring ``0 < f <= 1``."""
    if not isinstance(f, numbers.Real) or isinstance(f, bool):
        raise ConfigError(f"{name} must be a real number, got {f!r}")
    f = float(f)
    if not (0.0 < f <= 1.0) or not np.isfinite(f):
        raise ConfigError(f"{name} must lie in (0, 1], got {f}")
    return f


def check_probability(p, name="p", open_interval=False):
    p = float(p)
    ok = (0.0 < p < 1.0) if open_interval else (0.0 <= p <= 1.0)
    if not ok or not np.isfinite(p):
        bounds = "(0, 1)" if open_interval else "[0, 1]"
        raise ConfigError(f"{name} must lie in {bounds}, got {p}")
    return p


def check_positive_int(k, name):
    if isinstance(k, bool) or not isinstance(k, numbers.Integral) or k < 1:
        raise ConfigError(f"{name} must be a positive integer, got {k!r}")
    return int(k)


def check_cell_array(a, shape, name, dtype=float):
    """Coerce ``a`` to an array of the given (J, D) shape."""
    a = np.asarray(a, dtype=dtype)
    if a.shape != tuple(shape):
        raise DataError(f"{name} has shape {a.shape}, expected {tuple(shape)}")
    return a


def check_probabilities(p, name="p"):
    p = np.asarray(p, dtype=float)
    bad = ~((p >= 0.0) & (p <= 1.0))
    if bad.any():
        idx = tuple(int(i) for i in np.argwhere(bad)[0])
        raise DataError(f"{name} outside [0, 1] at cell {idx}: {p[idx]}")
    return p


def readonly(a):
    """Return a read-only view; fitted objects are shared across workers."""
    a = np.asarray(a)
    a = a.view()
    a.flags.writeable = False
    return a
