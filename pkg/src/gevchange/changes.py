"""Per-cell change metrics between two endpoint years.

A change field compares the r-year return value evaluated at the two
endpoints of the analysis window, cell by cell, either as a ratio to
the starting value (relative) or as a plain difference (absolute).
The annual composition takes the largest seasonal return value at each
endpoint first and differences those, so an annual change can never
exceed the largest seasonal change.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError
from .gev import return_value_arrays
from .ingest import SEASONS
from .spatial import CoefficientField, Grid

__all__ = [
    "METRICS",
    "ChangeField",
    "SeasonalReturnSet",
    "change_field",
    "change_from_return_values",
    "annual_change",
]

METRICS = ("relative", "absolute")


@dataclass
class ChangeField:
    """Estimated change per grid cell plus the endpoint return values.

    delta is NaN where the metric is undefined (relative change with a
    zero starting value, or an annual cell with every season masked).
    n_seasons counts the seasons contributing at each cell for annual
    fields; seasonal fields leave it as None.
    """

    grid: Grid
    metric: str
    delta: np.ndarray
    r: float
    t1: float
    t2: float
    phi_t1: np.ndarray
    phi_t2: np.ndarray
    n_seasons: np.ndarray | None = field(default=None)


@dataclass
class SeasonalReturnSet:
    """Endpoint return values for all four seasons on one grid.

    Masked season cells are NaN; a season missing at either endpoint
    of a cell is excluded from that cell's annual composition.
    """

    grid: Grid
    r: float
    t1: float
    t2: float
    phi_t1: dict
    phi_t2: dict

    def __post_init__(self):
        for table in (self.phi_t1, self.phi_t2):
            missing = [s for s in SEASONS if s not in table]
            if missing:
                raise InvalidArgumentError(
                    f"seasonal return set lacks {missing}")


def change_from_return_values(phi1, phi2, metric):
    """Difference or ratio-minus-one of two return-value fields."""
    if metric not in METRICS:
        raise InvalidArgumentError(f"unknown metric: {metric!r}")
    phi1 = np.asarray(phi1, dtype=float)
    phi2 = np.asarray(phi2, dtype=float)
    if metric == "absolute":
        return phi2 - phi1
    ok = phi1 != 0.0
    return np.where(ok, (phi2 - phi1) / np.where(ok, phi1, 1.0), np.nan)


def change_field(coeffs: CoefficientField, metric, r, t1, t2,
                 time_ref=0.0) -> ChangeField:
    """Change in the r-year return value between years t1 and t2.

    Coefficients are read in the frame where the location parameter is
    mu0 + mu1 * (t - time_ref); pass the time_ref the coefficients were
    fitted with.  Under this layout the absolute field is exactly
    mu1 * (t2 - t1).
    """
    if metric not in METRICS:
        raise InvalidArgumentError(f"unknown metric: {metric!r}")
    if t1 == t2:
        raise InvalidArgumentError("endpoint years must differ")
    phi = {}
    for t in (t1, t2):
        mu_t = coeffs.mu0 + coeffs.mu1 * (t - time_ref)
        phi[t] = return_value_arrays(mu_t, coeffs.sigma, coeffs.xi, r)
    return ChangeField(
        grid=coeffs.grid, metric=metric,
        delta=change_from_return_values(phi[t1], phi[t2], metric),
        r=float(r), t1=float(t1), t2=float(t2),
        phi_t1=phi[t1], phi_t2=phi[t2])


def annual_change(seasonal: SeasonalReturnSet, metric) -> ChangeField:
    """Change in the largest-across-seasons return value.

    The max at each endpoint runs over the seasons available at that
    cell; a season missing at either endpoint is left out of both
    maxima.  Cells with no surviving season get NaN.
    """
    if metric not in METRICS:
        raise InvalidArgumentError(f"unknown metric: {metric!r}")
    stack1 = np.stack([np.asarray(seasonal.phi_t1[s], dtype=float)
                       for s in SEASONS])
    stack2 = np.stack([np.asarray(seasonal.phi_t2[s], dtype=float)
                       for s in SEASONS])
    contributing = np.isfinite(stack1) & np.isfinite(stack2)
    n_seasons = contributing.sum(axis=0)
    neg_inf = np.float64(-np.inf)
    max1 = np.where(contributing, stack1, neg_inf).max(axis=0)
    max2 = np.where(contributing, stack2, neg_inf).max(axis=0)
    any_season = n_seasons > 0
    max1 = np.where(any_season, max1, np.nan)
    max2 = np.where(any_season, max2, np.nan)
    return ChangeField(
        grid=seasonal.grid, metric=metric,
        delta=change_from_return_values(max1, max2, metric),
        r=seasonal.r, t1=seasonal.t1, t2=seasonal.t2,
        phi_t1=max1, phi_t2=max2, n_seasons=n_seasons)
