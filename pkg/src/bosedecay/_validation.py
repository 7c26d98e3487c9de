"""Input validation helpers shared by the estimators and the functional core."""

import numbers
import warnings

import numpy as np


class NormalizationWarning(UserWarning):
    """A density or wave function was not normalized to the expected tolerance."""


class QuadratureWarning(UserWarning):
    """A radial quadrature did not resolve its integrand; refine the grid."""


class ConvergenceError(RuntimeError):
    """An iterative solver stopped before reaching its tolerance.

    The last residual (and any history the solver kept) is attached so the
    caller can decide whether to retry with a larger budget.
    """

    def __init__(self, message, residual=None, history=None):
        super().__init__(message)
        self.residual = residual
        self.history = history


def check_positive(value, name, strict=True):
    if not isinstance(value, numbers.Real) or not np.isfinite(value):
        raise ValueError(f"{name} must be a finite real number, got {value!r}")
    if strict and value <= 0:
        raise ValueError(f"{name} must be > 0, got {value!r}")
    if not strict and value < 0:
        raise ValueError(f"{name} must be >= 0, got {value!r}")
    return float(value)


def check_int(value, name, minimum=None, maximum=None):
    if isinstance(value, bool) or not isinstance(value, numbers.Integral):
        raise TypeError(f"{name} must be an integer, got {type(value).__name__}")
    value = int(value)
    if minimum is not None and value < minimum:
        raise ValueError(f"{name} must be >= {minimum}, got {value}")
    if maximum is not None and value > maximum:
        raise ValueError(f"{name} must be <= {maximum}, got {value}")
    return value


def check_grid_function(values, grid, name="values", dtype=float):
    """Return ``values`` as a 1D array matching ``grid``; reject NaN/inf."""
    arr = np.asarray(values, dtype=dtype)
    if arr.shape != (grid.n,):
        raise ValueError(f"{name} must have shape ({grid.n},), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def warn_if_not_normalized(total, expected=1.0, tol=1e-8, what="density"):
    if abs(total - expected) > tol:
        warnings.warn(
            f"{what} integrates to {total:.12g}, expected {expected:.12g}",
            NormalizationWarning,
            stacklevel=3,
        )
        return False
    return True
