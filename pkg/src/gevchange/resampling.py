"""Replicate plans and the statistics built from them.

Two replicate kinds share one plumbing: bootstrap rows draw block
indices with replacement and carry the year covariate along with each
drawn maximum, so trends survive; permutation rows shuffle the maxima
while the covariate stays in its original consecutive order, which
destroys any real trend and yields a null ensemble.  A plan stores
1-based index rows so dumped replicate files are self-describing.

Every station uses the same index row within a replicate, which
preserves cross-station spatial structure.  The bootstrap spread
standardizes the observed change; the permutation spread standardizes
the permutation changes themselves (one shared value per cell rather
than a fresh bootstrap per replicate).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import InvalidArgumentError, ResamplingFailureError
from .ingest import BlockMaximaSeries

__all__ = [
    "RESAMPLE_KINDS",
    "MAX_STATION_FAILURE_FRACTION",
    "MAX_DROPPED_FRACTION",
    "DEFAULT_REPLICATES",
    "ResamplePlan",
    "ZScoreField",
    "make_plan",
    "replicate_rng",
    "resample_series",
    "resample_maxima",
    "apply_drop_policy",
    "replicate_standard_errors",
    "standardize",
    "permutation_z",
    "bootstrap_standard_errors",
    "permutation_null",
]

RESAMPLE_KINDS = ("bootstrap", "permutation")
_KIND_TAGS = {"bootstrap": 1, "permutation": 2}

DEFAULT_REPLICATES = 250

# a replicate with more than 10% failed station fits is dropped; a run
# that drops more than 25% of its replicates is abandoned
MAX_STATION_FAILURE_FRACTION = 0.10
MAX_DROPPED_FRACTION = 0.25


@dataclass(frozen=True)
class ResamplePlan:
    """Reproducible index rows; indices is (n_replicates, n_blocks), 1-based."""

    kind: str
    seed: int
    n_replicates: int
    n_blocks: int
    indices: np.ndarray


@dataclass(frozen=True)
class ZScoreField:
    """Per-cell z values tagged with where they came from."""

    z: np.ndarray
    provenance: str
    grid: object = None


def replicate_rng(kind: str, seed: int, replicate: int) -> np.random.Generator:
    """Generator for one replicate, stable across runs and platforms.

    Streams are independent across kinds and replicate numbers because
    each gets its own spawn key.
    """
    if kind not in RESAMPLE_KINDS:
        raise InvalidArgumentError(f"unknown replicate kind: {kind!r}")
    ss = np.random.SeedSequence(seed, spawn_key=(_KIND_TAGS[kind], replicate))
    return np.random.default_rng(ss)


def make_plan(kind: str, seed: int, n_replicates: int, n_blocks: int) -> ResamplePlan:
    """Draw every replicate's index row up front."""
    if kind not in RESAMPLE_KINDS:
        raise InvalidArgumentError(f"unknown replicate kind: {kind!r}")
    if n_replicates < 1:
        raise InvalidArgumentError("need at least one replicate")
    if n_blocks < 2:
        raise InvalidArgumentError("need at least two blocks to resample")
    rows = np.empty((n_replicates, n_blocks), dtype=np.int64)
    for r in range(1, n_replicates + 1):
        rng = replicate_rng(kind, seed, r)
        if kind == "bootstrap":
            rows[r - 1] = rng.integers(1, n_blocks + 1, size=n_blocks)
        else:
            rows[r - 1] = rng.permutation(n_blocks) + 1
    return ResamplePlan(kind=kind, seed=seed, n_replicates=n_replicates,
                        n_blocks=n_blocks, indices=rows)


def resample_series(values, valid, years, indices, kind):
    """Apply one 1-based index row to stacked station series.

    values and valid are (n_stations, n_blocks); years is (n_blocks,).
    Bootstrap moves the year along with the drawn maximum; permutation
    leaves the year axis untouched so maxima land on consecutive
    covariates.  Missing-block flags travel with their values either
    way.
    """
    if kind not in RESAMPLE_KINDS:
        raise InvalidArgumentError(f"unknown replicate kind: {kind!r}")
    j = np.asarray(indices, dtype=np.int64) - 1
    if j.min() < 0 or j.max() >= np.asarray(years).shape[0]:
        raise InvalidArgumentError("replicate indices out of range")
    values = np.asarray(values, dtype=float)
    valid = np.asarray(valid, dtype=bool)
    years = np.asarray(years)
    if kind == "bootstrap":
        return values[:, j], valid[:, j], years[j]
    return values[:, j], valid[:, j], years


def resample_maxima(maxima: BlockMaximaSeries, sequence, kind) -> BlockMaximaSeries:
    """One station's series under one replicate's index sequence."""
    seq = np.asarray(sequence, dtype=np.int64)
    if seq.shape != maxima.years.shape:
        raise InvalidArgumentError(
            "index sequence length must match the number of blocks")
    vals, valid, years = resample_series(
        maxima.maxima[None, :], np.isfinite(maxima.maxima)[None, :],
        maxima.years, seq, kind)
    return replace(maxima, years=years, maxima=vals[0],
                   missing_fraction=maxima.missing_fraction[seq - 1])


def apply_drop_policy(stat_rows, failure_fractions,
                      max_station_failure_fraction=MAX_STATION_FAILURE_FRACTION,
                      max_dropped_fraction=MAX_DROPPED_FRACTION):
    """Discard bad replicates; abandon the run if too many go.

    stat_rows is (R, M) per-replicate cell statistics and
    failure_fractions is (R,) the fraction of stations whose fit
    failed in each replicate.  Returns (kept_rows, kept_mask).
    """
    stat_rows = np.asarray(stat_rows, dtype=float)
    failure_fractions = np.asarray(failure_fractions, dtype=float)
    if stat_rows.shape[0] != failure_fractions.shape[0]:
        raise InvalidArgumentError("statistics and failure fractions must align")
    bad = (failure_fractions > max_station_failure_fraction) | \
        ~np.all(np.isfinite(stat_rows), axis=1)
    n = len(bad)
    if bad.sum() > max_dropped_fraction * n:
        raise ResamplingFailureError(
            f"dropped {int(bad.sum())} of {n} replicates, "
            f"more than {max_dropped_fraction:.0%}")
    keep = ~bad
    return stat_rows[keep], keep


def replicate_standard_errors(delta_rows):
    """Per-cell sample standard deviation over replicate rows."""
    delta_rows = np.asarray(delta_rows, dtype=float)
    if delta_rows.ndim != 2 or delta_rows.shape[0] < 2:
        raise InvalidArgumentError(
            "need at least two replicates for a standard error")
    return np.std(delta_rows, axis=0, ddof=1)


def standardize(values, se):
    """values / se with NaN wherever the spread is zero (z undefined)."""
    values = np.asarray(values, dtype=float)
    se = np.asarray(se, dtype=float)
    usable = se > 0.0
    return np.where(usable, values / np.where(usable, se, 1.0), np.nan)


def permutation_z(null_rows):
    """Standardize permutation statistics by their own shared spread.

    One standard error per cell, the sample standard deviation of that
    cell's statistics across replicates, divides each replicate's
    statistic.  Cells with zero spread get NaN rows.

    Returns (z_null (H, M), se (M,)).
    """
    null_rows = np.asarray(null_rows, dtype=float)
    se = replicate_standard_errors(null_rows)
    return standardize(null_rows, se[None, :]), se


def _run_replicates(pipeline, plan):
    """Evaluate every replicate and apply the drop policy.

    pipeline(indices) takes the full (R, T) 1-based index matrix and
    returns (stat_rows (R, M), failure_fractions (R,)); vectorized
    implementations process all rows in one pass.
    """
    stat_rows, failure_fractions = pipeline(plan.indices)
    stat_rows = np.asarray(stat_rows, dtype=float)
    if stat_rows.shape[0] != plan.n_replicates:
        raise InvalidArgumentError(
            "pipeline must return one statistics row per replicate")
    return apply_drop_policy(stat_rows, failure_fractions)


def bootstrap_standard_errors(pipeline, plan):
    """Per-cell standard error of the change from bootstrap reruns."""
    if plan.kind != "bootstrap":
        raise InvalidArgumentError("plan kind must be bootstrap")
    kept, _ = _run_replicates(pipeline, plan)
    return replicate_standard_errors(kept)


def permutation_null(pipeline, plan):
    """Null z-score fields from permutation reruns, one per kept replicate."""
    if plan.kind != "permutation":
        raise InvalidArgumentError("plan kind must be permutation")
    kept, mask = _run_replicates(pipeline, plan)
    z_rows, _ = permutation_z(kept)
    kept_ids = np.flatnonzero(mask) + 1
    return [ZScoreField(z=row, provenance=f"permutation:{h}")
            for row, h in zip(z_rows, kept_ids)]
