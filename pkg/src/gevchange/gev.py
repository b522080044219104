"""Generalized extreme value distribution with temporal trends.

Provides the GEV family for seasonal block maxima: the distribution
function, negative log likelihood under five nested trend models,
maximum-likelihood fitting by derivative-free simplex search, return
values in closed form, and the closed-form change metrics the return
values imply under a linear location trend.

Trend models (label, free parameters):

    M0  location linear in time, scale and shape constant        (4)
    M1  location quadratic in time                               (5)
    M2  location and scale linear in time                        (5)
    M3  location and shape linear in time                        (5)
    M4  location, scale, and shape all linear in time            (6)

The time covariate everywhere in this module is a raw numeric index.
Public entry points that accept calendar years center them at a
reference year (by default the midpoint of the observed span) before
fitting, which keeps the location intercept interpretable and the
optimization well conditioned.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateDataError,
    InsufficientDataError,
    InvalidArgumentError,
    NumericDegeneracyError,
)
from .optimize import nelder_mead_batch

__all__ = [
    "MODELS",
    "MIN_BLOCKS",
    "ModelSpec",
    "GevParams",
    "AltTrendParams",
    "GevFit",
    "gev_cdf",
    "neg_log_likelihood",
    "fit_gev",
    "fit_gev_batch",
    "quantile_factor",
    "return_value",
    "return_value_arrays",
    "rel_change_closed_form",
    "abs_change_closed_form",
    "wiel_return_value",
    "predictive_aic",
]

XI_ZERO_TOL = 1e-8  # |xi| below this uses the Gumbel limit branch
XI_BOX = 1.0        # |xi_t| cap enforced during optimization
PENALTY = 1e10      # objective value for infeasible parameter points
MIN_BLOCKS = 20     # fewest valid maxima accepted for a fit
EULER_GAMMA = 0.5772156649015329

_CHUNK = 8192  # rows per optimizer chunk; bounds memory, never results


@dataclass(frozen=True)
class ModelSpec:
    """A trend-model label and its free-parameter count."""

    label: str
    n_par: int


MODELS = {
    "M0": ModelSpec("M0", 4),
    "M1": ModelSpec("M1", 5),
    "M2": ModelSpec("M2", 5),
    "M3": ModelSpec("M3", 5),
    "M4": ModelSpec("M4", 6),
}

# optimizer vector layout per model (stationary = M0 with the location
# slope frozen at zero, used by the simulation study)
_LAYOUTS = {
    "M0": ("mu0", "mu1", "sigma0", "xi0"),
    "M1": ("mu0", "mu1", "mu2", "sigma0", "xi0"),
    "M2": ("mu0", "mu1", "sigma0", "sigma1", "xi0"),
    "M3": ("mu0", "mu1", "sigma0", "xi0", "xi1"),
    "M4": ("mu0", "mu1", "sigma0", "sigma1", "xi0", "xi1"),
    "stationary": ("mu0", "sigma0", "xi0"),
}


@dataclass(frozen=True)
class GevParams:
    """Climatological coefficients of a fitted GEV trend model.

    ``mu2``, ``sigma1``, and ``xi1`` are None for models that do not
    use them.  Evaluating at a time index t gives

        mu_t    = mu0 + mu1*t + mu2*t^2
        sigma_t = sigma0 + sigma1*t
        xi_t    = xi0 + xi1*t

    with absent terms treated as zero.
    """

    mu0: float
    mu1: float = 0.0
    sigma0: float = 1.0
    xi0: float = 0.0
    mu2: float | None = None
    sigma1: float | None = None
    xi1: float | None = None

    def at(self, t):
        """Return (mu_t, sigma_t, xi_t) at time index t (scalar or array)."""
        t = np.asarray(t, dtype=float)
        mu = self.mu0 + self.mu1 * t
        if self.mu2 is not None:
            mu = mu + self.mu2 * t * t
        sigma = self.sigma0 + (self.sigma1 * t if self.sigma1 is not None else 0.0)
        xi = self.xi0 + (self.xi1 * t if self.xi1 is not None else 0.0)
        return mu, sigma, xi


@dataclass(frozen=True)
class AltTrendParams:
    """Exponential-shift trend in which location and scale grow together.

    mu_t = mu0 * exp(alpha*t/mu0) and sigma_t = sigma0 * exp(alpha*t/mu0),
    so the ratio mu_t/sigma_t is constant over time.
    """

    mu0: float
    alpha: float
    sigma0: float
    xi: float

    def __post_init__(self):
        if not (self.mu0 > 0 and self.sigma0 > 0):
            raise InvalidArgumentError("mu0 and sigma0 must be positive")


@dataclass(frozen=True)
class GevFit:
    """Outcome of a maximum-likelihood GEV fit."""

    params: GevParams
    model: ModelSpec
    neg_log_lik: float
    converged: bool
    n_blocks: int


def _params_to_vector(params: GevParams, layout) -> np.ndarray:
    out = []
    for name in layout:
        v = getattr(params, name)
        out.append(0.0 if v is None else float(v))
    return np.array(out)


def _vector_to_params(theta, model_label: str) -> GevParams:
    layout = _LAYOUTS[model_label]
    kw = dict(zip(layout, (float(v) for v in theta)))
    return GevParams(**kw)


def _nll_rows(theta, y, t, valid, layout):
    """Vectorized negative log likelihood, one value per row.

    theta is (m, P); y, t, valid are (m, T).  Rows violating scale
    positivity, the support condition, or the shape box get PENALTY.
    """
    cols = {name: theta[:, j] for j, name in enumerate(layout)}
    # absent coefficients are structural zeros; skipping their terms keeps
    # constant parameters at shape (m, 1) so the masks and the scale log
    # stay T times smaller on the hot stationary/M0 paths
    mu_t = cols["mu0"][:, None]
    if "mu1" in cols:
        mu_t = mu_t + cols["mu1"][:, None] * t
    if "mu2" in cols:
        mu_t = mu_t + cols["mu2"][:, None] * (t * t)
    sg_t = cols["sigma0"][:, None]
    if "sigma1" in cols:
        sg_t = sg_t + cols["sigma1"][:, None] * t
    xi_t = cols["xi0"][:, None]
    if "xi1" in cols:
        xi_t = xi_t + cols["xi1"][:, None] * t

    bad_scale = np.any(valid & (sg_t <= 0.0), axis=1)
    bad_shape = np.any(valid & (np.abs(xi_t) > XI_BOX), axis=1)

    sg_safe = np.where(sg_t > 0.0, sg_t, 1.0)
    z = (y - mu_t) / sg_safe
    gumbel = np.abs(xi_t) < XI_ZERO_TOL
    u = 1.0 + xi_t * z
    bad_support = np.any(valid & ~gumbel & (u <= 0.0), axis=1)

    u_safe = np.where(u > 0.0, u, 1.0)
    xi_safe = np.where(gumbel, 1.0, xi_t)
    log_u = np.log(u_safe)
    # u**(-1/xi) via exp, capped to keep huge-but-feasible points finite
    tail = np.exp(np.minimum(-log_u / xi_safe, 700.0))
    term_gev = np.log(sg_safe) + (1.0 + 1.0 / xi_safe) * log_u + tail
    term_gum = np.log(sg_safe) + z + np.exp(np.minimum(-z, 700.0))
    term = np.where(gumbel, term_gum, term_gev)
    nll = np.sum(np.where(valid, term, 0.0), axis=1)

    bad = bad_scale | bad_shape | bad_support | ~np.isfinite(nll)
    return np.where(bad, PENALTY, nll)


def gev_cdf(y, mu, sigma, xi):
    """GEV distribution function G(y) for location mu, scale sigma, shape xi.

    Uses the Gumbel limit when |xi| < 1e-8.  Returns 0 below the lower
    support endpoint (xi > 0) and 1 above the upper endpoint (xi < 0).
    Accepts scalars or broadcastable arrays; scalar inputs give a float.

    Raises
    ------
    InvalidArgumentError
        On non-finite inputs or sigma <= 0.
    """
    y, mu, sigma, xi = np.broadcast_arrays(
        *(np.asarray(a, dtype=float) for a in (y, mu, sigma, xi))
    )
    if not (np.all(np.isfinite(y)) and np.all(np.isfinite(mu))
            and np.all(np.isfinite(sigma)) and np.all(np.isfinite(xi))):
        raise InvalidArgumentError("gev_cdf requires finite arguments")
    if np.any(sigma <= 0.0):
        raise InvalidArgumentError("sigma must be positive")

    z = (y - mu) / sigma
    gumbel = np.abs(xi) < XI_ZERO_TOL
    u = 1.0 + xi * z
    u_safe = np.where(u > 0.0, u, 1.0)
    xi_safe = np.where(gumbel, 1.0, xi)
    with np.errstate(over="ignore"):
        g = np.exp(-np.exp(-np.log(u_safe) / xi_safe))
        g_gum = np.exp(-np.exp(-z))
    out = np.where(gumbel, g_gum, g)
    # off-support: below the lower endpoint for xi>0, above the upper for xi<0
    out = np.where(~gumbel & (u <= 0.0), np.where(xi > 0.0, 0.0, 1.0), out)
    return float(out) if out.ndim == 0 else out


def _series_arrays(maxima):
    y = np.asarray(maxima.maxima, dtype=float)
    years = np.asarray(maxima.years, dtype=float)
    valid = np.isfinite(y)
    return y, years, valid


def _default_time_ref(years, valid):
    vy = years[valid]
    return 0.5 * (vy.min() + vy.max())


def neg_log_likelihood(maxima, model: ModelSpec, params: GevParams, time_ref=None) -> float:
    """Negative log likelihood of a block-maxima series under a trend model.

    Support violations or a nonpositive scale at any observation return
    the penalty value rather than raising.

    Parameters
    ----------
    maxima : BlockMaximaSeries
        Missing entries (NaN) are skipped.
    model : ModelSpec
    params : GevParams
    time_ref : float, optional
        Year subtracted from the calendar years to form the time
        covariate; defaults to the midpoint of the valid span.
    """
    y, years, valid = _series_arrays(maxima)
    if not valid.any():
        raise InvalidArgumentError("series has no valid block maxima")
    if time_ref is None:
        time_ref = _default_time_ref(years, valid)
    t = years - time_ref
    layout = _LAYOUTS[model.label]
    theta = _params_to_vector(params, layout)
    y0 = np.where(valid, y, 0.0)
    return float(_nll_rows(theta[None, :], y0[None, :], t[None, :], valid[None, :], layout)[0])


def _moment_start(y_rows, valid, layout):
    """Gumbel moment initialization per row: one start vector each."""
    n = valid.sum(axis=1)
    mean = np.sum(np.where(valid, y_rows, 0.0), axis=1) / n
    dev = np.where(valid, y_rows - mean[:, None], 0.0)
    sd = np.sqrt(np.sum(dev * dev, axis=1) / np.maximum(n - 1, 1))
    sigma = sd * np.sqrt(6.0) / np.pi
    sigma = np.where(sigma > 0.0, sigma, 1.0)
    mu = mean - EULER_GAMMA * sigma
    m = y_rows.shape[0]
    x0 = np.zeros((m, len(layout)))
    for j, name in enumerate(layout):
        if name == "mu0":
            x0[:, j] = mu
        elif name == "sigma0":
            x0[:, j] = sigma
        elif name == "xi0":
            x0[:, j] = 0.05
    return x0, sigma


# deterministic restart offsets, applied only to rows that fail to
# converge from the previous start
_RESTARTS = (
    {"mu0": -0.5, "sigma0": 0.8, "xi0": -0.1},
    {"mu0": 0.0, "sigma0": 1.4, "xi0": 0.2},
    {"mu0": 0.5, "sigma0": 0.4, "xi0": -0.3},
)


def fit_gev_batch(y_rows, t, valid=None, model: ModelSpec = MODELS["M0"],
                  stationary=False, xatol=1e-8, fatol=1e-10):
    """Fit many block-maxima rows at once by batched simplex search.

    Parameters
    ----------
    y_rows : ndarray, shape (S, T)
        Block maxima; NaN marks missing entries.
    t : ndarray, shape (T,) or (S, T)
        Time covariate, already centered by the caller.
    valid : ndarray of bool, optional
        Defaults to finite entries of ``y_rows``.
    model : ModelSpec
    stationary : bool
        Fit the no-trend restriction (location slope frozen at zero;
        only meaningful with M0).

    Returns
    -------
    theta : ndarray, shape (S, P)
        Fitted optimizer vectors (NaN rows for unfittable inputs).
    nll : ndarray, shape (S,)
    converged : ndarray of bool, shape (S,)

    Rows with fewer than MIN_BLOCKS valid maxima or a constant series
    are reported as non-converged rather than raising, so replicate
    engines can count them as failures.
    """
    y_rows = np.asarray(y_rows, dtype=float)
    if y_rows.ndim != 2:
        raise InvalidArgumentError("y_rows must be 2-D")
    S, T = y_rows.shape
    t = np.asarray(t, dtype=float)
    t_rows = np.broadcast_to(t, (S, T)) if t.ndim == 1 else t
    if valid is None:
        valid = np.isfinite(y_rows)
    layout = _LAYOUTS["stationary"] if stationary else _LAYOUTS[model.label]
    P = len(layout)

    n_valid = valid.sum(axis=1)
    spread = np.max(np.where(valid, y_rows, -np.inf), axis=1) - \
        np.min(np.where(valid, y_rows, np.inf), axis=1)
    fittable = (n_valid >= MIN_BLOCKS) & (spread > 0.0)

    theta = np.full((S, P), np.nan)
    nll = np.full(S, np.inf)
    converged = np.zeros(S, dtype=bool)
    rows_all = np.nonzero(fittable)[0]
    for lo in range(0, rows_all.size, _CHUNK):
        rows = rows_all[lo:lo + _CHUNK]
        th, fv, cv = _fit_chunk(y_rows[rows], t_rows[rows], valid[rows], layout, xatol, fatol)
        theta[rows] = th
        nll[rows] = fv
        converged[rows] = cv
    return theta, nll, converged


def _fit_chunk(y, t, valid, layout, xatol, fatol):
    y0 = np.where(valid, y, 0.0)

    def objective(th, rows):
        return _nll_rows(th, y0[rows], t[rows], valid[rows], layout)

    x0, sigma_hat = _moment_start(y0, valid, layout)
    res = nelder_mead_batch(objective, x0, xatol=xatol, fatol=fatol)
    theta, fval, conv = res.x.copy(), res.fun.copy(), res.converged.copy()

    for offsets in _RESTARTS:
        retry = np.nonzero(~conv)[0]
        if retry.size == 0:
            break
        x1 = x0[retry].copy()
        for j, name in enumerate(layout):
            if name == "mu0":
                x1[:, j] += offsets["mu0"] * sigma_hat[retry]
            elif name == "sigma0":
                x1[:, j] = sigma_hat[retry] * offsets["sigma0"]
            elif name == "xi0":
                x1[:, j] = offsets["xi0"]

        def retry_objective(th, rows, retry=retry):
            sub = retry[rows]
            return _nll_rows(th, y0[sub], t[sub], valid[sub], layout)

        res2 = nelder_mead_batch(retry_objective, x1, xatol=xatol, fatol=fatol)
        better = res2.converged | (res2.fun < fval[retry])
        take = retry[better]
        sel = np.nonzero(better)[0]
        theta[take] = res2.x[sel]
        fval[take] = res2.fun[sel]
        conv[take] = res2.converged[sel]
    return theta, fval, conv


def fit_gev(maxima, model: ModelSpec = MODELS["M0"], time_ref=None) -> GevFit:
    """Maximum-likelihood GEV fit of one block-maxima series.

    Starts from the Gumbel moment initialization (sigma = sd*sqrt(6)/pi,
    mu = mean - 0.5772*sigma, xi = 0.05) and minimizes the negative log
    likelihood by simplex search, retrying from up to three fixed
    offset starts if the search fails to collapse.

    Raises
    ------
    InsufficientDataError
        Fewer than MIN_BLOCKS valid maxima.
    DegenerateDataError
        All valid maxima identical.
    """
    y, years, valid = _series_arrays(maxima)
    n = int(valid.sum())
    if n < MIN_BLOCKS:
        raise InsufficientDataError(
            f"need at least {MIN_BLOCKS} valid block maxima, got {n}")
    if np.ptp(y[valid]) == 0.0:
        raise DegenerateDataError("all valid block maxima are identical")
    if time_ref is None:
        time_ref = _default_time_ref(years, valid)
    t = years - time_ref
    theta, nll, conv = fit_gev_batch(
        y[None, :], t[None, :], valid[None, :], model=model)
    return GevFit(
        params=_vector_to_params(theta[0], model.label),
        model=model,
        neg_log_lik=float(nll[0]),
        converged=bool(conv[0]),
        n_blocks=n,
    )


def quantile_factor(xi, r):
    """The factor f_xi(r) such that the r-block return value is mu - sigma*f.

    f_xi(r) = (1 - L^(-xi))/xi with L = -log(1 - 1/r) for xi away from
    zero, and log(L) in the Gumbel limit.
    """
    xi = np.asarray(xi, dtype=float)
    r = np.asarray(r, dtype=float)
    if np.any(r <= 1.0):
        raise InvalidArgumentError("return period must exceed 1")
    L = -np.log1p(-1.0 / r)
    gumbel = np.abs(xi) < XI_ZERO_TOL
    xi_safe = np.where(gumbel, 1.0, xi)
    f = (1.0 - L ** (-xi_safe)) / xi_safe
    out = np.where(gumbel, np.log(L), f)
    return float(out) if out.ndim == 0 else out


def return_value(params: GevParams, model: ModelSpec, r, t) -> float:
    """The r-block return value at time index t.

    Evaluates the time-varying coefficients at t, then applies the
    closed-form quantile: phi = mu_t - sigma_t * f_xi(r).
    """
    if not np.all(np.asarray(r, dtype=float) > 1.0):
        raise InvalidArgumentError("return period must exceed 1")
    mu_t, sigma_t, xi_t = params.at(t)
    return return_value_arrays(mu_t, sigma_t, xi_t, r)


def return_value_arrays(mu, sigma, xi, r):
    """Vectorized return value from coefficient arrays (no validation)."""
    out = mu - sigma * quantile_factor(xi, r)
    return float(out) if np.ndim(out) == 0 else out


def rel_change_closed_form(params: GevParams, r, t1, t2) -> float:
    """Relative change in the r-block return value between t1 and t2.

    Closed form under a linear location trend with constant scale and
    shape: mu1*(t2 - t1) / (mu0 + mu1*t1 - sigma*f_xi(r)).  The value
    depends on r through the denominator.

    Raises
    ------
    NumericDegeneracyError
        When the t1 return value is zero.
    """
    denom = params.mu0 + params.mu1 * t1 - params.sigma0 * quantile_factor(params.xi0, r)
    if denom == 0.0:
        raise NumericDegeneracyError("return value at t1 is zero")
    return params.mu1 * (t2 - t1) / denom


def abs_change_closed_form(params: GevParams, t1, t2) -> float:
    """Absolute change in return value between t1 and t2 under a linear
    location trend: mu1*(t2 - t1), the same for every return period."""
    return params.mu1 * (t2 - t1)


def wiel_return_value(alt: AltTrendParams, r, t) -> float:
    """Return value under the exponential-shift trend.

    Both location and scale are scaled by exp(alpha*t/mu0), so their
    ratio stays constant; unlike the linear-location case, both the
    relative and the absolute change implied by this trend depend on r.
    """
    growth = np.exp(alt.alpha * np.asarray(t, dtype=float) / alt.mu0)
    mu_t = alt.mu0 * growth
    sigma_t = alt.sigma0 * growth
    out = mu_t - sigma_t * quantile_factor(alt.xi, r)
    return float(out) if np.ndim(out) == 0 else out


def predictive_aic(station_maxima, smoothed_params, model: ModelSpec, time_ref=None) -> float:
    """Predictive information criterion for spatially smoothed coefficients.

    Computes each station's log likelihood under its smoothed (not
    individually fitted) coefficients, averages over stations, and
    returns -2*meanLogL + 2*n_par.
    """
    if len(station_maxima) != len(smoothed_params):
        raise InvalidArgumentError("one parameter set per station required")
    if not station_maxima:
        raise InvalidArgumentError("no stations given")
    logliks = [
        -neg_log_likelihood(m, model, p, time_ref=time_ref)
        for m, p in zip(station_maxima, smoothed_params)
    ]
    return -2.0 * float(np.mean(logliks)) + 2.0 * model.n_par
