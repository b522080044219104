"""Multiple-testing decisions from permutation z-scores.

Two complementary summaries of the same ingredients (observed per-cell
z-scores and a null ensemble of permutation z-scores):

* an empirical false-discovery-rate cutoff: the smallest |z| threshold
  at which the estimated fraction of false rejections stays within a
  target q, giving per-cell reject flags, and
* a field-significance curve: at each cutoff, the share of permutation
  replicates whose |z| CDF sits strictly below the observed |z| CDF.

Cells whose z-score is undefined (zero permutation spread upstream)
carry NaN and are excluded from every count; their number is reported
so nothing disappears silently.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError

__all__ = [
    "FdrResult",
    "FieldSignificance",
    "estimate_false_rejections",
    "fdr_threshold",
    "field_significance",
]

DEFAULT_Q_LOW = 0.33
DEFAULT_Q_HIGH = 0.1


@dataclass(frozen=True)
class FdrResult:
    """Cutoff decision for one target false-discovery rate."""

    q: float
    c_star: float
    rejected: np.ndarray
    v_hat: float
    r_hat: int
    n_usable: int
    n_undefined: int


@dataclass(frozen=True)
class FieldSignificance:
    """FS(c) per cutoff, plus exact-tie counts for the record."""

    cutoffs: np.ndarray
    fs: np.ndarray
    ties: np.ndarray
    n_replicates: int
    n_usable: int


def _null_rows(null_z):
    """Normalize the null ensemble to a list of finite |z| arrays."""
    if isinstance(null_z, np.ndarray) and null_z.ndim == 2:
        rows = list(null_z)
    else:
        rows = [np.asarray(r, dtype=float).ravel() for r in null_z]
    if len(rows) == 0:
        raise InvalidArgumentError("null ensemble is empty")
    out = []
    for r in rows:
        r = np.abs(np.asarray(r, dtype=float).ravel())
        out.append(r[np.isfinite(r)])
    return out


def estimate_false_rejections(null_z, c) -> float:
    """Mean count, over replicates, of cells whose null |z| exceeds c."""
    if not np.isfinite(c) or c < 0:
        raise InvalidArgumentError("cutoff must be a finite value >= 0")
    rows = _null_rows(null_z)
    return float(np.mean([np.sum(r > c) for r in rows]))


def fdr_threshold(observed_z, null_z, q) -> FdrResult:
    """Smallest cutoff whose estimated false-rejection share is within q.

    Candidate cutoffs are zero plus every distinct observed |z|; the
    counting functions only step at those points, so the scan is exact.
    A candidate with zero rejections never qualifies.  When nothing
    qualifies the cutoff is +inf and nothing is rejected.
    """
    if not (0.0 < q < 1.0):
        raise InvalidArgumentError("q must lie strictly between 0 and 1")
    observed_z = np.asarray(observed_z, dtype=float)
    abs_obs = np.abs(observed_z)
    usable = np.isfinite(abs_obs)
    vals = np.sort(abs_obs[usable])
    n_usable = int(vals.size)
    n_undefined = int(observed_z.size - n_usable)

    rows = _null_rows(null_z)
    H = len(rows)
    null_flat = np.sort(np.concatenate(rows)) if H else np.array([])

    candidates = np.concatenate([[0.0], np.unique(vals)])
    r_hat = n_usable - np.searchsorted(vals, candidates, side="right")
    exceed = null_flat.size - np.searchsorted(null_flat, candidates, side="right")
    v_hat = exceed / H

    feasible = (r_hat > 0) & (v_hat <= q * r_hat)
    if feasible.any():
        k = int(np.argmax(feasible))
        c_star = float(candidates[k])
        chosen_v = float(v_hat[k])
        chosen_r = int(r_hat[k])
    else:
        c_star = np.inf
        chosen_v = 0.0
        chosen_r = 0
    rejected = np.zeros(observed_z.shape, dtype=bool)
    rejected[usable] = abs_obs[usable] > c_star
    return FdrResult(q=q, c_star=c_star, rejected=rejected, v_hat=chosen_v,
                     r_hat=chosen_r, n_usable=n_usable,
                     n_undefined=n_undefined)


def field_significance(observed_z, null_z, cutoffs) -> FieldSignificance:
    """Share of replicate |z| CDFs strictly below the observed |z| CDF.

    Evaluated cutoff by cutoff.  Exact CDF ties are not counted toward
    FS(c) but are tallied in ties.  Cells are compared over the common
    set where the observed and every replicate z-score are finite, so
    the CDF comparison reduces to integer counts and ties are exact.
    """
    cutoffs = np.asarray(cutoffs, dtype=float)
    if cutoffs.size == 0:
        raise InvalidArgumentError("need at least one cutoff")
    observed_z = np.asarray(observed_z, dtype=float)
    null_z = np.asarray(null_z, dtype=float)
    if null_z.ndim != 2 or null_z.shape[1] != observed_z.size:
        raise InvalidArgumentError("null ensemble must be (H, n_cells)")
    if null_z.shape[0] == 0:
        raise InvalidArgumentError("null ensemble is empty")
    usable = np.isfinite(observed_z) & np.all(np.isfinite(null_z), axis=0)
    n_usable = int(usable.sum())
    if n_usable == 0:
        raise InvalidArgumentError("no cells with defined z-scores")
    abs_obs = np.sort(np.abs(observed_z[usable]))
    abs_null = np.sort(np.abs(null_z[:, usable]), axis=1)
    H = null_z.shape[0]

    # counts of values <= c; equal denominators make ties exact
    obs_counts = np.searchsorted(abs_obs, cutoffs, side="right")
    null_counts = np.stack([
        np.searchsorted(abs_null[h], cutoffs, side="right") for h in range(H)
    ])
    below = null_counts < obs_counts[None, :]
    equal = null_counts == obs_counts[None, :]
    return FieldSignificance(
        cutoffs=cutoffs,
        fs=below.mean(axis=0),
        ties=equal.sum(axis=0),
        n_replicates=H,
        n_usable=n_usable,
    )
