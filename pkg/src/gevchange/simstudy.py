"""Perfect-data simulation study used as the built-in verification oracle.

Block maxima are drawn from simple parents whose maximum distribution
is known exactly, records are fit with the stationary GEV, and the
estimator is scored two ways: RMSE of the return-value estimate
against the exact quantile, and the relative error of the bootstrap
standard error against the Monte Carlo spread.  A separate diagnostic
measures how fast the normalized block maximum approaches its Gumbel
limit.

Parents are zero-inflated: a draw is exactly zero with probability p,
otherwise Exponential(rate 1) or Gamma(shape 1/3, scale 3), both with
unit mean on the nonzero part.  The exact maximum distribution is
taken as F_nonzero(y)^(n(1-p)): a point mass only thins the effective
number of nonzero draws per block.

The per-replicate standard error comes from a parametric bootstrap:
B synthetic records simulated from the replicate's own fitted
distribution, each refit.  Resampling the T observed maxima with
replacement was measured to understate the Monte Carlo spread by
roughly 6% at T=68 (resamples never exceed the observed record
maximum, which truncates the refitted tail), while the parametric
form is calibrated to within about a percent.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gammainc

from .errors import InvalidArgumentError
from .fileio import fmt_float, write_rows
from .gev import XI_ZERO_TOL, fit_gev_batch, return_value_arrays

__all__ = [
    "ParentDist",
    "SimConfig",
    "SimCell",
    "SimStudyResult",
    "EXPONENTIAL",
    "GAMMA",
    "DEFAULT_Y_GRID",
    "true_return_value",
    "gumbel_convergence",
    "simulate_block_maxima",
    "run_sim_study",
    "write_convergence_csv",
]

FAMILIES = ("exponential", "gamma")
_GAMMA_SHAPE = 1.0 / 3.0
_GAMMA_SCALE = 3.0

DEFAULT_BLOCK_SIZES = (5, 10, 25, 50, 100, 200)
DEFAULT_RETURN_PERIODS = (10.0, 20.0, 50.0, 100.0, 500.0, 1000.0)
DEFAULT_Y_GRID = np.linspace(-3.0, 10.0, 1301)

# spawn-key tags for the per-replicate streams, disjoint from the
# resampling module's plan tags
_DATA_TAG = 3
_BOOT_TAG = 4

FAILURE_FLAG_FRACTION = 0.05

RESULT_HEADER = ["family", "p", "n", "r", "rmse", "re_percent", "mc_sd",
                 "mean_boot_se", "failures"]
CONVERGENCE_HEADER = ["n", "sup_distance"]


@dataclass(frozen=True)
class ParentDist:
    """Zero-inflated parent: zero with probability p, else the family."""

    family: str
    p: float = 0.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise InvalidArgumentError(f"unknown family: {self.family!r}")
        if not (0.0 <= self.p < 1.0):
            raise InvalidArgumentError("zero probability must lie in [0, 1)")

    def cdf_nonzero(self, x):
        """CDF of the continuous part, zero below the origin."""
        x = np.asarray(x, dtype=float)
        pos = np.clip(x, 0.0, None)
        if self.family == "exponential":
            out = -np.expm1(-pos)
        else:
            out = gammainc(_GAMMA_SHAPE, pos / _GAMMA_SCALE)
        return np.where(x < 0.0, 0.0, out)

    def sample_nonzero(self, rng, shape):
        if self.family == "exponential":
            return rng.exponential(1.0, shape)
        return rng.gamma(_GAMMA_SHAPE, _GAMMA_SCALE, shape)


EXPONENTIAL = ParentDist("exponential", 0.0)
GAMMA = ParentDist("gamma", 0.0)


@dataclass(frozen=True)
class SimConfig:
    """Sweep definition; the defaults are the desk-scale experiment."""

    seed: int = 0
    n_blocks: int = 68
    block_sizes: tuple = DEFAULT_BLOCK_SIZES
    return_periods: tuple = DEFAULT_RETURN_PERIODS
    replicates: int = 1000
    bootstrap_replicates: int = 100
    parents: tuple = (EXPONENTIAL, GAMMA)

    def __post_init__(self):
        if self.n_blocks < 1 or self.replicates < 1 or \
                self.bootstrap_replicates < 1:
            raise InvalidArgumentError("all counts must be at least 1")
        if not self.block_sizes or any(n < 1 for n in self.block_sizes):
            raise InvalidArgumentError("block sizes must be at least 1")
        if not self.return_periods or any(r <= 1 for r in self.return_periods):
            raise InvalidArgumentError("return periods must exceed 1")
        if not self.parents:
            raise InvalidArgumentError("need at least one parent")
        for parent in self.parents:
            for n in self.block_sizes:
                if n * (1.0 - parent.p) < 1.0:
                    raise InvalidArgumentError(
                        f"effective block size n(1-p) < 1 for n={n}, "
                        f"p={parent.p}")


@dataclass(frozen=True)
class SimCell:
    """One (parent, block size, return period) cell of the sweep."""

    family: str
    p: float
    n: int
    r: float
    rmse: float
    re_percent: float
    mc_sd: float
    mean_boot_se: float
    failures: int
    flagged: bool


@dataclass
class SimStudyResult:
    cells: list
    config: SimConfig

    def get(self, family, n, r, p=0.0) -> SimCell:
        for cell in self.cells:
            if (cell.family, cell.p, cell.n, cell.r) == (family, float(p),
                                                         int(n), float(r)):
                return cell
        raise KeyError((family, p, n, r))

    def write_csv(self, path):
        rows = ([c.family, fmt_float(c.p), str(c.n), fmt_float(c.r),
                 fmt_float(c.rmse), fmt_float(c.re_percent),
                 fmt_float(c.mc_sd), fmt_float(c.mean_boot_se),
                 str(c.failures)] for c in self.cells)
        write_rows(path, RESULT_HEADER, rows)


def true_return_value(parent: ParentDist, n, r) -> float:
    """Exact return value of the n-draw block maximum, by bisection.

    Solves F_nonzero(y)^(n(1-p)) = 1 - 1/r to an interval of 1e-12.
    """
    if r <= 1:
        raise InvalidArgumentError("return period must exceed 1")
    ne = n * (1.0 - parent.p)
    if ne < 1.0:
        raise InvalidArgumentError("effective block size n(1-p) must be >= 1")
    target = (1.0 - 1.0 / r) ** (1.0 / ne)
    lo, hi = 0.0, 1.0
    while float(parent.cdf_nonzero(hi)) < target:
        hi *= 2.0
        if hi > 1e12:
            raise InvalidArgumentError("quantile bracket failed")
    while hi - lo > 1e-12:
        mid = 0.5 * (lo + hi)
        if float(parent.cdf_nonzero(mid)) < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def gumbel_convergence(n, y_grid=DEFAULT_Y_GRID) -> float:
    """Sup distance between the normalized block-max law and its limit.

    Uses the Exponential parent with the log-n shift: the block
    maximum of n unit exponentials, centered by log n, has CDF
    F(y + log n)^n, which approaches exp(-exp(-y)).
    """
    if n < 1:
        raise InvalidArgumentError("block size must be at least 1")
    y = np.asarray(y_grid, dtype=float)
    shifted = EXPONENTIAL.cdf_nonzero(y + np.log(n)) ** n
    limit = np.exp(-np.exp(-y))
    return float(np.max(np.abs(shifted - limit)))


def simulate_block_maxima(parent: ParentDist, n_blocks, n, rng):
    """Maxima of n_blocks independent blocks of n parent draws."""
    values = parent.sample_nonzero(rng, (n_blocks, n))
    if parent.p > 0.0:
        values = np.where(rng.random((n_blocks, n)) < parent.p, 0.0, values)
    return values.max(axis=1)


def _replicate_rng(seed, tag, cell, replicate):
    return np.random.default_rng(
        np.random.SeedSequence(seed, spawn_key=(tag, cell, replicate)))


def _gev_sample(rng, mu, sigma, xi, shape):
    """Inverse-CDF draws from one fitted GEV."""
    u = rng.random(shape)
    if abs(xi) < XI_ZERO_TOL:
        return mu - sigma * np.log(-np.log(u))
    return mu + sigma * ((-np.log(u)) ** (-xi) - 1.0) / xi


def _cell_stats(phi_obs, phi_boot_sd, truth, ok):
    """RMSE / RE aggregates for one (cell, return period) column."""
    est = phi_obs[ok]
    rmse = float(np.sqrt(np.mean((est - truth) ** 2)))
    mc_sd = float(np.std(est, ddof=1)) if est.size > 1 else float("nan")
    se = phi_boot_sd[ok]
    se = se[np.isfinite(se)]
    mean_se = float(se.mean()) if se.size else float("nan")
    re = 100.0 * (mc_sd / mean_se - 1.0) if mean_se and np.isfinite(mean_se) \
        else float("nan")
    return rmse, re, mc_sd, mean_se


def run_sim_study(config: SimConfig) -> SimStudyResult:
    """Run the full sweep; every replicate is independently seeded.

    Per replicate: simulate a record of block maxima, fit the
    stationary GEV, estimate return values, and refit B parametric
    resamples of the fitted distribution to get a standard error for
    each.  Cells where more than 5% of replicate fits fail are
    flagged.
    """
    T = config.n_blocks
    B = config.bootstrap_replicates
    reps = config.replicates
    t_zero = np.zeros(T)
    cells = []
    cell_id = 0
    for parent in config.parents:
        for n in config.block_sizes:
            maxima = np.empty((reps, T))
            for rep in range(reps):
                rng = _replicate_rng(config.seed, _DATA_TAG, cell_id, rep)
                maxima[rep] = simulate_block_maxima(parent, T, n, rng)
            theta, _, conv = fit_gev_batch(maxima, t_zero, stationary=True)

            # one flat batch of every replicate's bootstrap refits,
            # chunked to keep the workspace bounded
            boot_sd = np.full((reps, len(config.return_periods)), np.nan)
            chunk = max(1, int(4e6 // max(B * T, 1)))
            for lo in range(0, reps, chunk):
                group = [rep for rep in range(lo, min(lo + chunk, reps))
                         if conv[rep]]
                if not group:
                    continue
                rows = np.empty((len(group) * B, T))
                for g, rep in enumerate(group):
                    rng = _replicate_rng(config.seed, _BOOT_TAG, cell_id, rep)
                    rows[g * B:(g + 1) * B] = _gev_sample(
                        rng, theta[rep, 0], theta[rep, 1], theta[rep, 2],
                        (B, T))
                theta_b, _, conv_b = fit_gev_batch(rows, t_zero,
                                                   stationary=True)
                for j, r in enumerate(config.return_periods):
                    phi_b = return_value_arrays(
                        theta_b[:, 0], theta_b[:, 1], theta_b[:, 2], r)
                    phi_b = np.where(conv_b, phi_b, np.nan)
                    for g, rep in enumerate(group):
                        col = phi_b[g * B:(g + 1) * B]
                        col = col[np.isfinite(col)]
                        if col.size >= 2:
                            boot_sd[rep, j] = float(np.std(col, ddof=1))

            failures = int(reps - conv.sum())
            flagged = failures > FAILURE_FLAG_FRACTION * reps
            for j, r in enumerate(config.return_periods):
                truth = true_return_value(parent, n, r)
                phi = return_value_arrays(theta[:, 0], theta[:, 1],
                                          theta[:, 2], r)
                rmse, re, mc_sd, mean_se = _cell_stats(
                    phi, boot_sd[:, j], truth, conv)
                cells.append(SimCell(
                    family=parent.family, p=parent.p, n=int(n), r=float(r),
                    rmse=rmse, re_percent=re, mc_sd=mc_sd,
                    mean_boot_se=mean_se, failures=failures,
                    flagged=flagged))
            cell_id += 1
    return SimStudyResult(cells=cells, config=config)


def write_convergence_csv(path, block_sizes, y_grid=DEFAULT_Y_GRID):
    """Sup distance to the Gumbel limit for each block size."""
    rows = ([str(int(n)), fmt_float(gumbel_convergence(n, y_grid))]
            for n in block_sizes)
    write_rows(path, CONVERGENCE_HEADER, rows)
