"""Projection dimensionality from the Johnson-Lindenstrauss bound.

The minimum dimension is

    p(eps) = 12 log N / (eps^2 (1.5 - eps))

which is the same quantity as 24 log N / (3 eps^2 - 2 eps^3). The log is
base 10: that base reproduces the published (N, eps, p) triples, e.g.
(50000, 0.4) -> 320, whereas the natural log would give 738.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument

LOG_BASE = 10.0

EPS_GRID_START = 0.05
EPS_GRID_STOP = 0.95
EPS_GRID_STEP = 0.005
EPS_CLAMP = (0.3, 0.4)
DEFAULT_FLATNESS_TOL = 0.01


@dataclass(frozen=True)
class DimensionSelection:
    n_samples: int
    epsilon: float
    p: int
    derivative: float


def _check(n, eps):
    if not isinstance(n, (int, np.integer)) or n < 2:
        raise InvalidArgument(f"n must be an integer >= 2, got {n!r}")
    if not (0.0 < eps < 1.0):
        raise InvalidArgument(f"eps must lie in (0, 1), got {eps!r}")


def _log(n):
    return math.log(n) / math.log(LOG_BASE)


def jl_dimension_real(n: int, eps: float) -> float:
    """Un-rounded dimension bound."""
    _check(n, eps)
    return 12.0 * _log(n) / (eps * eps * (1.5 - eps))


def jl_min_dimension(n: int, eps: float) -> int:
    """Smallest projection dimension preserving pairwise distances to (1 +/- eps).

    Rounded to the nearest integer; a floor would turn 280.7 into 280 for
    (13104, 0.4) where 281 is the reference value.
    """
    return max(1, int(round(jl_dimension_real(n, eps))))


def jl_dimension_derivative(n: int, eps: float) -> float:
    """dp/deps = 36 log N (eps - 1) / (eps^3 (1.5 - eps)^2), negative on (0, 1)."""
    _check(n, eps)
    return 36.0 * _log(n) * (eps - 1.0) / (eps**3 * (1.5 - eps) ** 2)


def _grid(step):
    count = int(round((EPS_GRID_STOP - EPS_GRID_START) / step))
    return EPS_GRID_START + step * np.arange(count + 1)


def select_epsilon(n: int, flatness_tol: float = DEFAULT_FLATNESS_TOL,
                   step: float = EPS_GRID_STEP) -> float:
    """Pick the perturbation budget where the p(eps) curve has flattened.

    Scans eps upward and returns the first grid value whose slope magnitude
    is below ``flatness_tol`` times the slope at the start of the grid,
    clamped into [0.3, 0.4].
    """
    if not flatness_tol > 0:
        raise InvalidArgument(f"flatness_tol must be positive, got {flatness_tol!r}")
    if not step > 0:
        raise InvalidArgument(f"step must be positive, got {step!r}")
    ref = abs(jl_dimension_derivative(n, EPS_GRID_START))
    chosen = EPS_GRID_STOP
    for eps in _grid(step):
        if abs(jl_dimension_derivative(n, float(eps))) < flatness_tol * ref:
            chosen = float(eps)
            break
    lo, hi = EPS_CLAMP
    return float(min(max(chosen, lo), hi))


def select_dimension(n: int, eps: float | None = None,
                     flatness_tol: float = DEFAULT_FLATNESS_TOL) -> DimensionSelection:
    if eps is None:
        eps = select_epsilon(n, flatness_tol)
    return DimensionSelection(n, float(eps), jl_min_dimension(n, eps),
                              jl_dimension_derivative(n, eps))


def emit_dimension_curve(n: int, grid) -> list[tuple[float, int, float]]:
    """Rows of (epsilon, p, dp/deps) sorted by epsilon."""
    grid = [float(e) for e in grid]
    if not grid:
        raise InvalidArgument("epsilon grid is empty")
    return [(e, jl_min_dimension(n, e), jl_dimension_derivative(n, e))
            for e in sorted(grid)]


def format_float(x: float) -> str:
    return "%.17g" % x


def curve_to_csv(rows) -> str:
    buf = io.StringIO()
    buf.write("epsilon,p,dp_deps\n")
    for eps, p, deriv in rows:
        buf.write(f"{format_float(eps)},{p},{format_float(deriv)}\n")
    return buf.getvalue()
