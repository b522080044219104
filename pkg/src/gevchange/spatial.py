"""Gaussian-process smoothing of station coefficients onto a grid.

A stationary Matern covariance (smoothness 1.5) over great-circle
distance, with a constant mean estimated by generalized least squares
and the variance profiled out analytically.  Hyperparameters (range and
nugget-to-variance ratio) are chosen by maximizing the Gaussian log
likelihood over a coarse candidate grid followed by simplex refinement.

The batched entry points fit many surfaces that share one station
layout (the replicate engines lean on this); the single-surface
functions are the batch of one, so both paths produce identical
numbers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    InsufficientDataError,
    InvalidArgumentError,
    NumericDegeneracyError,
)
from .optimize import nelder_mead_batch

__all__ = [
    "EARTH_RADIUS_KM",
    "Grid",
    "KrigingModel",
    "CoefficientField",
    "haversine_km",
    "pairwise_distances_km",
    "matern32",
    "fit_kriging_model",
    "fit_kriging_models_shared_coords",
    "krige",
    "krige_batch",
    "smooth_coefficients",
]

EARTH_RADIUS_KM = 6371.0
MIN_STATIONS = 10
NUGGET_RATIO_FLOOR = 1e-10  # keeps factorizations stable
_PENALTY = 1e12
_VAR_FLOOR = 1e-300


@dataclass(frozen=True)
class Grid:
    """Regular cell centers in degrees plus the spacing that made them."""

    lons: np.ndarray
    lats: np.ndarray
    resolution: float

    def __post_init__(self):
        if self.resolution <= 0:
            raise InvalidArgumentError("grid resolution must be positive")
        if len(self.lons) != len(self.lats):
            raise InvalidArgumentError("lon/lat arrays must align")
        cells = set(zip(self.lons.tolist(), self.lats.tolist()))
        if len(cells) != len(self.lons):
            raise InvalidArgumentError("grid cells must be unique")

    @classmethod
    def regular(cls, lon_min, lon_max, lat_min, lat_max, resolution) -> "Grid":
        """Cell centers covering the box at the given spacing."""
        if resolution <= 0:
            raise InvalidArgumentError("grid resolution must be positive")
        lon_c = np.arange(lon_min + resolution / 2.0, lon_max, resolution)
        lat_c = np.arange(lat_min + resolution / 2.0, lat_max, resolution)
        gg_lon, gg_lat = np.meshgrid(lon_c, lat_c)
        return cls(lons=gg_lon.ravel(), lats=gg_lat.ravel(), resolution=resolution)

    @property
    def coords(self) -> np.ndarray:
        return np.column_stack([self.lons, self.lats])

    def __len__(self):
        return len(self.lons)


@dataclass(frozen=True)
class KrigingModel:
    """Fitted stationary covariance: Matern(1.5) plus nugget, constant mean."""

    variance: float
    range_km: float
    nugget: float
    mean: float
    smoothness: float = 1.5


@dataclass
class CoefficientField:
    """Gridded best estimates of the four climatological coefficients."""

    grid: Grid
    mu0: np.ndarray
    mu1: np.ndarray
    sigma: np.ndarray
    xi: np.ndarray


def haversine_km(lon1, lat1, lon2, lat2):
    """Great-circle distance in km between points given in degrees."""
    lon1, lat1, lon2, lat2 = (np.radians(np.asarray(a, dtype=float))
                              for a in (lon1, lat1, lon2, lat2))
    dlat = lat2 - lat1
    dlon = lon2 - lon1
    h = np.sin(dlat / 2.0) ** 2 + np.cos(lat1) * np.cos(lat2) * np.sin(dlon / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.clip(h, 0.0, 1.0)))


def pairwise_distances_km(coords_a, coords_b) -> np.ndarray:
    """(len(a), len(b)) matrix of great-circle distances; coords are (lon, lat)."""
    a = np.asarray(coords_a, dtype=float)
    b = np.asarray(coords_b, dtype=float)
    return haversine_km(a[:, None, 0], a[:, None, 1], b[None, :, 0], b[None, :, 1])


def matern32(d, range_km):
    """Matern correlation with smoothness 1.5: (1 + s)exp(-s), s = sqrt(3)d/range."""
    s = np.sqrt(3.0) * np.asarray(d, dtype=float) / range_km
    return (1.0 + s) * np.exp(-s)


def _profile_nll_rows(dist, values_rows, log_range, log_nugget):
    """Profiled Gaussian negative log likelihood, one value per row.

    values_rows is (m, n); log_range/log_nugget are (m,).  The constant
    mean and the variance are profiled out analytically, leaving only
    (range, nugget ratio) free.  Also returns the profiled mean and
    variance so the optimum needs no recomputation.  Rows are processed
    in slices so the (rows, n, n) workspace stays modest.
    """
    m, n = values_rows.shape
    step = max(1, int(5e7 // max(n * n, 1)))
    if m > step:
        parts = [_profile_nll_rows(dist, values_rows[lo:lo + step],
                                   log_range[lo:lo + step],
                                   log_nugget[lo:lo + step])
                 for lo in range(0, m, step)]
        return tuple(np.concatenate([p[i] for p in parts]) for i in range(3))
    rng_km = np.exp(log_range)
    eta = np.exp(log_nugget)
    M = matern32(dist[None, :, :], rng_km[:, None, None])
    M[:, np.arange(n), np.arange(n)] += eta[:, None]

    nll = np.full(m, _PENALTY)
    mean = np.zeros(m)
    var = np.zeros(m)
    try:
        sign, logdet = np.linalg.slogdet(M)
        rhs = np.concatenate(
            [values_rows[:, :, None], np.ones((m, n, 1))], axis=2)
        sol = np.linalg.solve(M, rhs)
    except np.linalg.LinAlgError:
        return nll, mean, var
    a = sol[:, :, 0]          # M^-1 y
    u = sol[:, :, 1]          # M^-1 1
    denom = np.sum(u, axis=1)            # 1' M^-1 1
    ok = (sign > 0) & np.isfinite(logdet) & (denom > 0)
    denom_safe = np.where(ok, denom, 1.0)
    mhat = np.einsum("ij,ij->i", values_rows, u) / denom_safe
    resid = values_rows - mhat[:, None]
    s2 = np.einsum("ij,ij->i", resid, a - mhat[:, None] * u) / n
    s2 = np.maximum(s2, _VAR_FLOOR)
    val = 0.5 * n * np.log(s2) + 0.5 * logdet
    good = ok & np.isfinite(val)
    nll = np.where(good, val, _PENALTY)
    mean = np.where(good, mhat, 0.0)
    var = np.where(good, s2, 0.0)
    return nll, mean, var


def _profile_nll_shared(dist, values_rows, log_range, log_nugget):
    """Same as _profile_nll_rows with one (range, nugget) for every row.

    One factorization serves the whole batch, which makes the coarse
    candidate sweep cheap.
    """
    R, n = values_rows.shape
    M = matern32(dist, np.exp(log_range))
    M[np.arange(n), np.arange(n)] += np.exp(log_nugget)
    bad = (np.full(R, _PENALTY), np.zeros(R), np.zeros(R))
    try:
        sign, logdet = np.linalg.slogdet(M)
        sol = np.linalg.solve(M, np.concatenate(
            [values_rows.T, np.ones((n, 1))], axis=1))
    except np.linalg.LinAlgError:
        return bad
    if sign <= 0 or not np.isfinite(logdet):
        return bad
    a = sol[:, :R].T
    u = sol[:, R]
    denom = np.sum(u)
    if denom <= 0:
        return bad
    mhat = values_rows @ u / denom
    resid = values_rows - mhat[:, None]
    s2 = np.einsum("ij,ij->i", resid, a - mhat[:, None] * u[None, :]) / n
    s2 = np.maximum(s2, _VAR_FLOOR)
    val = 0.5 * n * np.log(s2) + 0.5 * logdet
    good = np.isfinite(val)
    return (np.where(good, val, _PENALTY), np.where(good, mhat, 0.0),
            np.where(good, s2, 0.0))


def _candidate_starts(dist):
    """Coarse (log range, log nugget ratio) candidates from the distances."""
    pos = dist[np.triu_indices_from(dist, k=1)]
    pos = pos[pos > 0]
    d_lo = max(np.percentile(pos, 5.0), 1e-3)
    d_hi = max(pos.max() * 2.0, d_lo * 10.0)
    ranges = np.geomspace(d_lo, d_hi, 6)
    nuggets = np.array([1e-8, 1e-4, 1e-2, 1e-1, 1.0])
    return np.log(ranges), np.log(nuggets)


def fit_kriging_models_shared_coords(coords, values_rows, xatol=1e-6,
                                     refine_maxiter=200):
    """Fit hyperparameters for many surfaces over one station layout.

    Parameters
    ----------
    coords : ndarray, shape (n, 2)
        Station (lon, lat), no duplicates, n >= MIN_STATIONS.
    values_rows : ndarray, shape (R, n)
        One surface per row.
    xatol, refine_maxiter
        Simplex refinement tolerances; replicate engines relax them
        since hyperparameter jitter is absorbed by the resampling.

    Returns
    -------
    dict of ndarrays keyed variance, range_km, nugget, mean, each (R,).
    """
    coords = np.asarray(coords, dtype=float)
    values_rows = np.atleast_2d(np.asarray(values_rows, dtype=float))
    n = coords.shape[0]
    if n < MIN_STATIONS:
        raise InsufficientDataError(
            f"need at least {MIN_STATIONS} stations, got {n}")
    dist = pairwise_distances_km(coords, coords)
    off_diag = dist[np.triu_indices_from(dist, k=1)]
    if np.any(off_diag == 0.0):
        raise InvalidArgumentError("duplicate station coordinates")

    R = values_rows.shape[0]
    log_r_cands, log_n_cands = _candidate_starts(dist)
    best_nll = np.full(R, np.inf)
    best_start = np.zeros((R, 2))
    for lr in log_r_cands:
        for ln in log_n_cands:
            nll, _, _ = _profile_nll_shared(dist, values_rows, lr, ln)
            better = nll < best_nll
            best_nll = np.where(better, nll, best_nll)
            best_start[better] = (lr, ln)
    if np.any(best_nll >= _PENALTY):
        raise NumericDegeneracyError("covariance singular at every candidate")

    lo_r, hi_r = log_r_cands[0] - np.log(10.0), log_r_cands[-1] + np.log(10.0)
    lo_n = np.log(NUGGET_RATIO_FLOOR)
    hi_n = np.log(1e3)

    def objective(theta, rows):
        lr = theta[:, 0]
        ln = np.clip(theta[:, 1], lo_n, hi_n)
        out_of_box = (lr < lo_r) | (lr > hi_r) | (theta[:, 1] < lo_n - 50) | \
            (theta[:, 1] > hi_n + 50)
        nll, _, _ = _profile_nll_rows(dist, values_rows[rows], lr, ln)
        return np.where(out_of_box, _PENALTY, nll)

    res = nelder_mead_batch(objective, best_start, xatol=xatol, fatol=1e-9,
                            maxiter=refine_maxiter)
    log_r = res.x[:, 0]
    log_n = np.clip(res.x[:, 1], lo_n, hi_n)
    nll, mean, var = _profile_nll_rows(dist, values_rows, log_r, log_n)
    # fall back to the coarse winner where refinement went infeasible
    bad = nll >= _PENALTY
    if bad.any():
        log_r = np.where(bad, best_start[:, 0], log_r)
        log_n = np.where(bad, best_start[:, 1], log_n)
        nll, mean, var = _profile_nll_rows(dist, values_rows, log_r, log_n)
        if np.any(nll >= _PENALTY):
            raise NumericDegeneracyError("covariance singular after refinement")
    eta = np.maximum(np.exp(log_n), NUGGET_RATIO_FLOOR)
    return {
        "variance": var,
        "range_km": np.exp(log_r),
        "nugget": eta * var,
        "mean": mean,
    }


def fit_kriging_model(coords, values) -> KrigingModel:
    """Fit one surface; see fit_kriging_models_shared_coords."""
    fitted = fit_kriging_models_shared_coords(coords, np.asarray(values)[None, :])
    return KrigingModel(
        variance=float(fitted["variance"][0]),
        range_km=float(fitted["range_km"][0]),
        nugget=float(fitted["nugget"][0]),
        mean=float(fitted["mean"][0]),
    )


def krige(model: KrigingModel, coords, values, grid: Grid):
    """Predict a fitted surface at grid cells.

    Returns (predictions, prediction standard deviations).  With a zero
    nugget the prediction at a station coordinate reproduces the
    station value; far from every station the prediction decays to the
    fitted mean and the standard deviation to sqrt(variance).
    """
    if len(grid) == 0:
        raise InvalidArgumentError("grid is empty")
    coords = np.asarray(coords, dtype=float)
    values = np.asarray(values, dtype=float)
    if model.variance <= _VAR_FLOOR * 10:
        return (np.full(len(grid), model.mean), np.zeros(len(grid)))
    eta = model.nugget / model.variance
    n = coords.shape[0]
    dist = pairwise_distances_km(coords, coords)
    M = matern32(dist, model.range_km)
    M[np.arange(n), np.arange(n)] += max(eta, NUGGET_RATIO_FLOOR)
    cross = matern32(pairwise_distances_km(grid.coords, coords), model.range_km)
    try:
        alpha = np.linalg.solve(M, values - model.mean)
        back = np.linalg.solve(M, cross.T)
    except np.linalg.LinAlgError as exc:
        raise NumericDegeneracyError("singular kriging covariance") from exc
    pred = model.mean + cross @ alpha
    q = np.einsum("ij,ji->i", cross, back)
    sd = np.sqrt(model.variance * np.clip(1.0 - q, 0.0, None))
    return pred, sd


def krige_batch(coords, values_rows, grid_coords, range_km, nugget_ratio, mean):
    """Batched simple-kriging predictions over a shared station layout.

    values_rows is (R, n); range_km, nugget_ratio, mean are (R,).
    Returns predictions of shape (R, M).  No standard deviations; the
    replicate engines only need the point predictions.
    """
    coords = np.asarray(coords, dtype=float)
    values_rows = np.atleast_2d(np.asarray(values_rows, dtype=float))
    R, n = values_rows.shape
    M_cells = len(grid_coords)
    dist = pairwise_distances_km(coords, coords)
    cross_dist = pairwise_distances_km(np.asarray(grid_coords, dtype=float), coords)
    out = np.empty((R, M_cells))
    chunk = max(1, int(2e7 // max(M_cells * n, 1)))
    for lo in range(0, R, chunk):
        hi = min(R, lo + chunk)
        rows = slice(lo, hi)
        m = hi - lo
        K = matern32(dist[None, :, :], range_km[rows, None, None])
        K[:, np.arange(n), np.arange(n)] += np.maximum(
            nugget_ratio[rows, None], NUGGET_RATIO_FLOOR)
        resid = (values_rows[rows] - mean[rows, None])[:, :, None]
        alpha = np.linalg.solve(K, resid)[:, :, 0]
        cross = matern32(cross_dist[None, :, :], range_km[rows, None, None])
        out[rows] = np.einsum("rmn,rn->rm", cross, alpha) + mean[rows, None]
    return out


def smooth_coefficients(coords, fits, grid: Grid) -> CoefficientField:
    """Krige the four coefficient surfaces of converged station fits.

    The scale is smoothed in log space and exponentiated so every cell
    keeps a positive scale; the shape is clipped to [-1, 1].
    """
    if not all(f.converged for f in fits):
        raise InvalidArgumentError("all station fits must have converged")
    mu0 = np.array([f.params.mu0 for f in fits])
    mu1 = np.array([f.params.mu1 for f in fits])
    sigma0 = np.array([f.params.sigma0 for f in fits])
    xi0 = np.array([f.params.xi0 for f in fits])
    if np.any(sigma0 <= 0):
        raise InvalidArgumentError("station scales must be positive")
    surfaces = smooth_coefficient_arrays(
        coords, np.column_stack([mu0, mu1, np.log(sigma0), xi0]), grid)
    return CoefficientField(
        grid=grid,
        mu0=surfaces[:, 0],
        mu1=surfaces[:, 1],
        sigma=np.exp(surfaces[:, 2]),
        xi=np.clip(surfaces[:, 3], -1.0, 1.0),
    )


def smooth_coefficient_arrays(coords, value_columns, grid: Grid) -> np.ndarray:
    """Krige several surfaces (columns) independently onto the grid.

    Returns an array of shape (len(grid), n_surfaces) of predictions.
    The transform conventions (log scale, shape clipping) are the
    caller's business.
    """
    value_columns = np.asarray(value_columns, dtype=float)
    rows = value_columns.T
    fitted = fit_kriging_models_shared_coords(coords, rows)
    preds = krige_batch(
        coords, rows, np.asarray(grid.coords, dtype=float),
        fitted["range_km"], fitted["nugget"] / np.maximum(fitted["variance"], _VAR_FLOOR),
        fitted["mean"])
    return preds.T
