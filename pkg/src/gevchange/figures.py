"""Diagnostic figures rendered to files alongside the delimited output.

Line plots only: score distributions, significance curves, and the
simulation summaries.  Every writer strips the renderer metadata from
the PNG so identical inputs produce identical bytes.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = [
    "zscore_cdf_figure",
    "fs_curve_figure",
    "re_profile_figure",
    "rmse_profile_figure",
    "convergence_figure",
]

_SAVE = {"dpi": 120, "metadata": {"Software": None}}


def _finite_abs(values):
    arr = np.asarray(values, dtype=float).ravel()
    return np.sort(np.abs(arr[np.isfinite(arr)]))


def _ecdf_steps(sorted_abs):
    n = sorted_abs.size
    return sorted_abs, np.arange(1, n + 1) / n


def zscore_cdf_figure(z_obs, z_null, path):
    """Empirical CDF of observed |z| against the permutation ensemble.

    Each gray step curve is one permutation replicate; the red curve
    is the observed field.  An observed curve that leaves the gray
    band is what the field-significance count quantifies.
    """
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    null = np.asarray(z_null, dtype=float)
    for row in null:
        x, y = _ecdf_steps(_finite_abs(row))
        if x.size:
            ax.step(x, y, where="post", color="0.75", lw=0.6, alpha=0.4)
    x, y = _ecdf_steps(_finite_abs(z_obs))
    if x.size:
        ax.step(x, y, where="post", color="C3", lw=1.8, label="observed")
        ax.legend(loc="lower right", frameon=False)
    ax.set_xlabel("|z|")
    ax.set_ylabel("empirical CDF")
    ax.set_ylim(0.0, 1.02)
    fig.tight_layout()
    fig.savefig(path, **_SAVE)
    plt.close(fig)


def fs_curve_figure(fs, path):
    """Fraction of null replicates under the observed CDF, by cutoff."""
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    ax.step(fs.cutoffs, fs.fs, where="post", color="C0", lw=1.5)
    ax.axhline(0.95, color="0.6", lw=0.8, ls="--")
    ax.set_xlabel("cutoff c")
    ax.set_ylabel("fraction of null replicates below")
    ax.set_ylim(-0.02, 1.02)
    fig.tight_layout()
    fig.savefig(path, **_SAVE)
    plt.close(fig)


def re_profile_figure(block_sizes, re_by_family, path):
    """Relative error of the bootstrap standard error against block count.

    re_by_family maps a label to an array aligned with block_sizes.
    """
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for label, re in sorted(re_by_family.items()):
        ax.plot(block_sizes, re, marker="o", ms=4, lw=1.2, label=label)
    ax.axhline(0.0, color="0.6", lw=0.8)
    ax.set_xscale("log")
    ax.set_xlabel("blocks per record")
    ax.set_ylabel("standard error relative error (%)")
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, **_SAVE)
    plt.close(fig)


def rmse_profile_figure(return_periods, rmse_by_n, path):
    """Estimator RMSE against return period, one line per record length."""
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for n, rmse in sorted(rmse_by_n.items()):
        ax.plot(return_periods, rmse, marker="o", ms=4, lw=1.2,
                label=f"n={n}")
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("return period (blocks)")
    ax.set_ylabel("RMSE")
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, **_SAVE)
    plt.close(fig)


def convergence_figure(block_counts, sup_distances, path):
    """Worst-case distance between the block-max law and its limit."""
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    ax.plot(block_counts, sup_distances, marker="o", ms=4, lw=1.2,
            color="C0")
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("values per block")
    ax.set_ylabel("sup CDF distance")
    fig.tight_layout()
    fig.savefig(path, **_SAVE)
    plt.close(fig)
