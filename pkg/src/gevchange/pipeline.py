"""End-to-end analysis over a persistent run directory.

One seasonal run walks the whole chain: station fits, coefficient
smoothing onto the grid, the observed change field, bootstrap reruns
for its standard error, permutation reruns for the null ensemble, then
the multiple-testing decisions and the field-significance curve.
Every intermediate lands in the season's directory as delimited text,
one file per replicate under run/<kind>/, so long runs can resume and
an annual composition can be built later without refitting anything.

All floats are written in shortest round-trip form and the manifest
holds no timestamps, so rerunning with an identical config and seed
reproduces every byte.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .changes import (
    METRICS,
    ChangeField,
    SeasonalReturnSet,
    annual_change,
    change_field,
    change_from_return_values,
)
from .errors import InsufficientDataError, InvalidArgumentError
from .fileio import atomic_write_json, fmt_float, read_json, write_rows
from .gev import MODELS, fit_gev_batch, return_value_arrays
from .ingest import SEASONS, read_block_maxima_csv
from .resampling import (
    DEFAULT_REPLICATES,
    apply_drop_policy,
    make_plan,
    permutation_z,
    replicate_standard_errors,
    standardize,
)
from .significance import (
    DEFAULT_Q_HIGH,
    DEFAULT_Q_LOW,
    FieldSignificance,
    fdr_threshold,
    field_significance,
)
from .spatial import (
    MIN_STATIONS,
    CoefficientField,
    Grid,
    fit_kriging_models_shared_coords,
    krige_batch,
)
from . import __version__

__all__ = [
    "GridSpec",
    "RunConfig",
    "StationStack",
    "SeasonAnalysis",
    "stack_station_series",
    "maxima_path",
    "analyze_season",
    "run_analysis",
    "run_annual",
    "read_field_csv",
]

FORMAT_VERSION = 1

# replicate kriging and GEV refits run with relaxed simplex tolerances
# so the hyperparameter and likelihood searches do not dominate runtime;
# both are orders of magnitude below the resampling spread they feed
_REPLICATE_KRIGE_XATOL = 1e-3
_REPLICATE_KRIGE_MAXITER = 60
_REPLICATE_FIT_XATOL = 1e-5
_REPLICATE_FIT_FATOL = 1e-8

_FIELD_HEADER = ["lon", "lat", "phi_t1", "phi_t2", "delta"]


@dataclass(frozen=True)
class GridSpec:
    """Bounding box plus spacing, the part of the config the grid needs."""

    lon_min: float
    lon_max: float
    lat_min: float
    lat_max: float
    resolution: float

    def build(self) -> Grid:
        return Grid.regular(self.lon_min, self.lon_max,
                            self.lat_min, self.lat_max, self.resolution)

    def as_dict(self):
        return {
            "lon_min": self.lon_min, "lon_max": self.lon_max,
            "lat_min": self.lat_min, "lat_max": self.lat_max,
            "resolution": self.resolution,
        }


@dataclass
class RunConfig:
    """Everything a run needs; JSON-loadable with flag overrides.

    threads is accepted as a scheduling hint only: the engines are
    vectorized, chunk sizes are fixed, and no result depends on it, so
    it is excluded from the config hash.
    """

    seed: int
    output_dir: str
    start_year: int
    end_year: int
    maxima_dir: str | None = None
    daily_csv: str | None = None
    seasons: tuple = SEASONS
    grid: GridSpec | None = None
    model: str = "M0"
    metric: str = "relative"
    r: float = 20.0
    bootstrap_replicates: int = DEFAULT_REPLICATES
    permutation_replicates: int = DEFAULT_REPLICATES
    q_levels: tuple = (DEFAULT_Q_LOW, DEFAULT_Q_HIGH)
    masks: dict = field(default_factory=dict)
    threads: int = 1

    _KEYS = ("seed", "output_dir", "start_year", "end_year", "maxima_dir",
             "daily_csv", "seasons", "grid", "model", "metric", "r",
             "bootstrap_replicates", "permutation_replicates", "q_levels",
             "masks", "threads")

    def __post_init__(self):
        if self.start_year >= self.end_year:
            raise InvalidArgumentError("start_year must precede end_year")
        if self.model not in MODELS:
            raise InvalidArgumentError(f"unknown model: {self.model!r}")
        if self.metric not in METRICS:
            raise InvalidArgumentError(f"unknown metric: {self.metric!r}")
        if self.r <= 1:
            raise InvalidArgumentError("return period must exceed 1")
        if not self.q_levels:
            raise InvalidArgumentError("need at least one q level")
        for q in self.q_levels:
            if not (0.0 < q < 1.0):
                raise InvalidArgumentError("q levels must lie in (0, 1)")
        if self.bootstrap_replicates < 2 or self.permutation_replicates < 2:
            raise InvalidArgumentError("need at least two replicates")
        bad = [s for s in self.seasons if s not in SEASONS]
        if bad:
            raise InvalidArgumentError(f"unknown seasons: {bad}")
        if self.threads < 1:
            raise InvalidArgumentError("threads must be positive")

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        unknown = sorted(set(raw) - set(cls._KEYS))
        if unknown:
            raise InvalidArgumentError(f"unknown config keys: {unknown}")
        data = dict(raw)
        if "grid" in data and data["grid"] is not None:
            data["grid"] = GridSpec(**data["grid"])
        if "seasons" in data:
            data["seasons"] = tuple(data["seasons"])
        if "q_levels" in data:
            data["q_levels"] = tuple(data["q_levels"])
        missing = [k for k in ("seed", "output_dir", "start_year", "end_year")
                   if k not in data]
        if missing:
            raise InvalidArgumentError(f"config missing keys: {missing}")
        return cls(**data)

    def canonical(self) -> dict:
        """Result-determining fields only, for hashing and manifests."""
        return {
            "seed": self.seed,
            "start_year": self.start_year,
            "end_year": self.end_year,
            "maxima_dir": self.maxima_dir,
            "daily_csv": self.daily_csv,
            "seasons": list(self.seasons),
            "grid": self.grid.as_dict() if self.grid else None,
            "model": self.model,
            "metric": self.metric,
            "r": self.r,
            "bootstrap_replicates": self.bootstrap_replicates,
            "permutation_replicates": self.permutation_replicates,
            "q_levels": list(self.q_levels),
            "masks": dict(sorted(self.masks.items())),
        }

    def config_hash(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


@dataclass
class StationStack:
    """Aligned per-station arrays over one shared year axis."""

    ids: list
    coords: np.ndarray
    years: np.ndarray
    values: np.ndarray
    valid: np.ndarray


@dataclass
class SeasonAnalysis:
    """In-memory mirror of one season's run directory."""

    season: str
    grid: Grid
    coeffs: CoefficientField | None
    change: ChangeField
    se: np.ndarray
    z_obs: np.ndarray
    z_null: np.ndarray
    decisions: dict
    fs: FieldSignificance
    manifest: dict


def stack_station_series(series_list) -> StationStack:
    """Align one season's station series on a common year axis."""
    if not series_list:
        raise InsufficientDataError("no station series to analyze")
    ordered = sorted(series_list, key=lambda s: s.station_id)
    ids = [s.station_id for s in ordered]
    if len(set(ids)) != len(ids):
        raise InvalidArgumentError("duplicate station ids")
    years = ordered[0].years
    for s in ordered[1:]:
        if not np.array_equal(s.years, years):
            raise InvalidArgumentError(
                "stations must share an identical block-year axis")
    values = np.stack([s.maxima for s in ordered])
    return StationStack(
        ids=ids,
        coords=np.array([[s.lon, s.lat] for s in ordered]),
        years=np.asarray(years, dtype=float),
        values=values,
        valid=np.isfinite(values),
    )


def maxima_path(maxima_dir, season) -> Path:
    return Path(maxima_dir) / f"{season}_maxima.csv"


def _surface_rows(theta, keep):
    """Stack the four smoothing inputs for one converged-station subset.

    theta is (S, 4) in (mu0, mu1, sigma0, xi0) order; returns (4, S_keep)
    with the scale already in log space.
    """
    sub = theta[keep]
    return np.stack([sub[:, 0], sub[:, 1], np.log(sub[:, 2]), sub[:, 3]])


def _phi_pair(pred4, r, t1, t2, time_ref):
    """Endpoint return values from four smoothed surfaces (4, M)."""
    mu0, mu1 = pred4[0], pred4[1]
    sigma = np.exp(pred4[2])
    xi = np.clip(pred4[3], -1.0, 1.0)
    phi1 = return_value_arrays(mu0 + mu1 * (t1 - time_ref), sigma, xi, r)
    phi2 = return_value_arrays(mu0 + mu1 * (t2 - time_ref), sigma, xi, r)
    return phi1, phi2


def _write_field_csv(path, grid, phi1, phi2, delta):
    rows = ([fmt_float(lon), fmt_float(lat), fmt_float(a), fmt_float(b),
             fmt_float(d)]
            for lon, lat, a, b, d in zip(grid.lons, grid.lats, phi1, phi2,
                                         delta))
    write_rows(path, _FIELD_HEADER, rows)


def read_field_csv(path, grid=None):
    """Read one lon,lat,phi_t1,phi_t2,delta file back into arrays.

    With a grid supplied, the cell coordinates must match it exactly.
    """
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != _FIELD_HEADER:
            raise InvalidArgumentError(f"{path}: unexpected header {header}")
        cols = [[], [], [], [], []]
        for row in reader:
            if len(row) != 5:
                raise InvalidArgumentError(f"{path}: malformed row {row}")
            for c, text in zip(cols, row):
                c.append(float(text))
    lon, lat, phi1, phi2, delta = (np.asarray(c, dtype=float) for c in cols)
    if grid is not None:
        if not (np.array_equal(lon, grid.lons) and np.array_equal(lat, grid.lats)):
            raise InvalidArgumentError(f"{path}: cells do not match the grid")
    return lon, lat, phi1, phi2, delta


def _replicate_fields(stack: StationStack, used, plan, grid: Grid, config,
                      time_ref, run_dir: Path, resume: bool):
    """Per-replicate change fields, persisted one CSV per replicate.

    Returns (deltas (R, M), failure_fractions (R,), completed indices).
    Replicates whose fit or smoothing collapses entirely carry NaN rows
    and a failure fraction of 1; the drop policy sorts them out.
    """
    kind_dir = run_dir / plan.kind
    kind_dir.mkdir(parents=True, exist_ok=True)
    values = stack.values[used]
    valid = stack.valid[used]
    coords = stack.coords[used]
    S, T = values.shape
    M = len(grid)
    grid_coords = np.asarray(grid.coords, dtype=float)
    tc = stack.years - time_ref
    t1c = float(config.start_year)
    t2c = float(config.end_year)
    model = MODELS[config.model]

    R = plan.n_replicates
    deltas = np.full((R, M), np.nan)
    fracs = np.ones(R)
    completed = []

    # failure fractions live in a sidecar so a resumed run makes the
    # exact drop decisions the interrupted one would have
    failures_path = kind_dir / "failures.json"
    stored_fracs = {}
    if resume and failures_path.exists():
        stored_fracs = {int(k): float(v)
                        for k, v in read_json(failures_path).items()}

    todo = []
    for i in range(1, R + 1):
        path = kind_dir / f"{i}.csv"
        if resume and path.exists() and i in stored_fracs:
            _, _, _, _, delta = read_field_csv(path, grid)
            deltas[i - 1] = delta
            fracs[i - 1] = stored_fracs[i]
            completed.append(i)
        else:
            todo.append(i - 1)
    kept_fracs = {i: stored_fracs[i] for i in completed}

    chunk = max(1, int(6e6 // max(S * T, 1)))
    for lo in range(0, len(todo), chunk):
        batch = np.array(todo[lo:lo + chunk], dtype=int)
        k = batch.size
        j = plan.indices[batch] - 1            # (k, T)
        vals_k = np.transpose(values[:, j], (1, 0, 2))   # (k, S, T)
        valid_k = np.transpose(valid[:, j], (1, 0, 2))
        if plan.kind == "bootstrap":
            t_rows = tc[j]
        else:
            t_rows = np.broadcast_to(tc, (k, T))
        t_flat = np.broadcast_to(t_rows[:, None, :], (k, S, T)).reshape(k * S, T)
        theta, _, conv = fit_gev_batch(
            vals_k.reshape(k * S, T), t_flat, valid_k.reshape(k * S, T),
            model=model, xatol=_REPLICATE_FIT_XATOL,
            fatol=_REPLICATE_FIT_FATOL)
        conv = conv.reshape(k, S)
        theta = theta.reshape(k, S, -1)
        fracs[batch] = 1.0 - conv.mean(axis=1)

        groups = {}
        for pos in range(k):
            groups.setdefault(conv[pos].tobytes(), []).append(pos)
        for pattern, members in sorted(groups.items()):
            keep = np.frombuffer(pattern, dtype=bool)
            if keep.sum() < MIN_STATIONS:
                continue
            rows = np.concatenate(
                [_surface_rows(theta[pos], keep) for pos in members])
            fitted = fit_kriging_models_shared_coords(
                coords[keep], rows, xatol=_REPLICATE_KRIGE_XATOL,
                refine_maxiter=_REPLICATE_KRIGE_MAXITER)
            preds = krige_batch(
                coords[keep], rows, grid_coords, fitted["range_km"],
                fitted["nugget"] / np.maximum(fitted["variance"], 1e-300),
                fitted["mean"])
            for g, pos in enumerate(members):
                phi1, phi2 = _phi_pair(preds[4 * g:4 * g + 4], config.r,
                                       t1c, t2c, time_ref)
                deltas[batch[pos]] = change_from_return_values(
                    phi1, phi2, config.metric)
                _write_field_csv(kind_dir / f"{batch[pos] + 1}.csv", grid,
                                 phi1, phi2, deltas[batch[pos]])
                completed.append(int(batch[pos] + 1))
        for pos in range(k):
            if conv[pos].sum() < MIN_STATIONS:
                nan = np.full(M, np.nan)
                _write_field_csv(kind_dir / f"{batch[pos] + 1}.csv", grid,
                                 nan, nan, nan)
                completed.append(int(batch[pos] + 1))
        for pos in range(k):
            kept_fracs[int(batch[pos] + 1)] = float(fracs[batch[pos]])
        atomic_write_json(failures_path,
                          {str(i): v for i, v in sorted(kept_fracs.items())})
    return deltas, fracs, sorted(completed)


def _candidate_cutoffs(z_obs):
    finite = np.abs(z_obs[np.isfinite(z_obs)])
    return np.concatenate([[0.0], np.unique(finite)])


def _write_outputs(out_dir: Path, config, season, grid, coeffs, change,
                   se, z_obs, z_null, decisions, fs, manifest_extra):
    """All per-season tables plus the manifest, deterministically."""
    if coeffs is not None:
        write_rows(
            out_dir / "coefficients.csv",
            ["lon", "lat", "mu0", "mu1", "sigma", "xi"],
            ([fmt_float(lon), fmt_float(lat), fmt_float(a), fmt_float(b),
              fmt_float(c), fmt_float(d)]
             for lon, lat, a, b, c, d in zip(
                 grid.lons, grid.lats, coeffs.mu0, coeffs.mu1,
                 coeffs.sigma, coeffs.xi)))
    _write_field_csv(out_dir / "observed.csv", grid, change.phi_t1,
                     change.phi_t2, change.delta)
    write_rows(
        out_dir / "change.csv",
        ["lon", "lat", "delta", "metric", "r", "t1", "t2"],
        ([fmt_float(lon), fmt_float(lat), fmt_float(d), change.metric,
          fmt_float(change.r), fmt_float(change.t1), fmt_float(change.t2)]
         for lon, lat, d in zip(grid.lons, grid.lats, change.delta)))
    write_rows(
        out_dir / "zscores.csv",
        ["lon", "lat", "delta", "se", "z"],
        ([fmt_float(lon), fmt_float(lat), fmt_float(d), fmt_float(s),
          fmt_float(z)]
         for lon, lat, d, s, z in zip(grid.lons, grid.lats, change.delta,
                                      se, z_obs)))
    q_sorted = sorted(config.q_levels, reverse=True)
    reject_cols = [decisions[q].rejected for q in q_sorted]
    write_rows(
        out_dir / "decisions.csv",
        ["lon", "lat", "z"] + [f"reject_q{int(round(q * 100))}"
                               for q in q_sorted],
        ([fmt_float(lon), fmt_float(lat), fmt_float(z)]
         + [str(int(col[i])) for col in reject_cols]
         for i, (lon, lat, z) in enumerate(zip(grid.lons, grid.lats,
                                               z_obs))))
    write_rows(
        out_dir / "fs.csv",
        ["cutoff", "fs"],
        ([fmt_float(c), fmt_float(v)] for c, v in zip(fs.cutoffs, fs.fs)))

    manifest = {
        "format_version": FORMAT_VERSION,
        "version": __version__,
        "season": season,
        "config": config.canonical(),
        "config_hash": config.config_hash(),
        "status": "complete",
        "c_star": {repr(q): (None if math.isinf(d.c_star) else d.c_star)
                   for q, d in decisions.items()},
        "n_rejections": {repr(q): d.r_hat for q, d in decisions.items()},
        "n_cells": len(grid),
        "n_cells_undefined": decisions[q_sorted[0]].n_undefined,
    }
    manifest.update(manifest_extra)
    atomic_write_json(out_dir / "manifest.json", manifest)
    return manifest


def _render_figures(out_dir: Path, z_obs, z_null, fs):
    from .figures import fs_curve_figure, zscore_cdf_figure
    fig_dir = out_dir / "figures"
    fig_dir.mkdir(exist_ok=True)
    zscore_cdf_figure(z_obs, z_null, fig_dir / "zscore_cdf.png")
    fs_curve_figure(fs, fig_dir / "fs_curve.png")


def _check_resume(out_dir: Path, config, force: bool, resume: bool):
    """Refuse to clobber finished output unless told how to proceed.

    The config stamp is written before any replicate, so even a run
    that crashed early can be verified against the resuming config.
    """
    stamp_path = out_dir / "config.json"
    manifest_path = out_dir / "manifest.json"
    if resume:
        if stamp_path.exists():
            old = read_json(stamp_path)
            if old.get("config_hash") != config.config_hash():
                raise InvalidArgumentError(
                    f"{out_dir}: existing run used a different config; "
                    "refusing to resume")
    elif manifest_path.exists() and not force:
        raise InvalidArgumentError(
            f"{out_dir}: output already exists (use --force to overwrite "
            "or --resume to continue)")


def analyze_season(config: RunConfig, season: str, *, force=False,
                   resume=False, figures=True) -> SeasonAnalysis:
    """Run the full chain for one season and persist the run directory."""
    if config.grid is None:
        raise InvalidArgumentError("analysis requires a grid spec")
    if config.maxima_dir is None:
        raise InvalidArgumentError("analysis requires maxima_dir")
    if config.model != "M0":
        raise InvalidArgumentError(
            "the gridded analysis smooths the constant-trend layout; "
            "only model M0 is supported here")
    out_dir = Path(config.output_dir) / season
    _check_resume(out_dir, config, force, resume)
    out_dir.mkdir(parents=True, exist_ok=True)
    atomic_write_json(out_dir / "config.json",
                      {"config": config.canonical(),
                       "config_hash": config.config_hash()})

    series = [s for s in read_block_maxima_csv(maxima_path(config.maxima_dir,
                                                           season))
              if s.season == season]
    stack = stack_station_series(series)
    year_lo, year_hi = int(stack.years.min()), int(stack.years.max())
    if year_lo != config.start_year or year_hi != config.end_year:
        raise InvalidArgumentError(
            f"maxima cover {year_lo}-{year_hi}, config wants "
            f"{config.start_year}-{config.end_year}")

    t1, t2 = float(config.start_year), float(config.end_year)
    time_ref = (t1 + t2) / 2.0
    tc = stack.years - time_ref
    grid = config.grid.build()

    theta, _, conv = fit_gev_batch(stack.values, tc, stack.valid,
                                   model=MODELS[config.model])
    used = conv.copy()
    if used.sum() < MIN_STATIONS:
        raise InsufficientDataError(
            f"only {int(used.sum())} stations fit successfully; "
            f"need {MIN_STATIONS}")

    obs_rows = _surface_rows(theta, used)
    fitted = fit_kriging_models_shared_coords(stack.coords[used], obs_rows)
    preds = krige_batch(
        stack.coords[used], obs_rows, np.asarray(grid.coords, dtype=float),
        fitted["range_km"],
        fitted["nugget"] / np.maximum(fitted["variance"], 1e-300),
        fitted["mean"])
    coeffs = CoefficientField(
        grid=grid, mu0=preds[0], mu1=preds[1],
        sigma=np.exp(preds[2]), xi=np.clip(preds[3], -1.0, 1.0))
    change = change_field(coeffs, config.metric, config.r, t1, t2,
                          time_ref=time_ref)

    T = stack.years.size
    run_dir = out_dir / "run"
    results = {}
    for kind, count in (("bootstrap", config.bootstrap_replicates),
                        ("permutation", config.permutation_replicates)):
        plan = make_plan(kind, config.seed, count, T)
        results[kind] = _replicate_fields(stack, used, plan, grid, config,
                                          time_ref, run_dir, resume)

    boot_deltas, boot_fracs, boot_done = results["bootstrap"]
    kept_boot, boot_mask = apply_drop_policy(boot_deltas, boot_fracs)
    se = replicate_standard_errors(kept_boot)

    perm_deltas, perm_fracs, perm_done = results["permutation"]
    kept_perm, perm_mask = apply_drop_policy(perm_deltas, perm_fracs)
    z_null, _ = permutation_z(kept_perm)

    z_obs = standardize(change.delta, se)
    decisions = {q: fdr_threshold(z_obs, z_null, q) for q in config.q_levels}
    fs = field_significance(z_obs, z_null, _candidate_cutoffs(z_obs))

    manifest = _write_outputs(
        out_dir, config, season, grid, coeffs, change, se, z_obs, z_null,
        decisions, fs,
        {
            "command": "analyze",
            "t1": t1, "t2": t2, "time_ref": time_ref, "n_blocks": T,
            "n_stations_input": len(stack.ids),
            "n_stations_used": int(used.sum()),
            "bootstrap": {
                "replicates": config.bootstrap_replicates,
                "seed": config.seed,
                "completed": boot_done,
                "dropped": (np.flatnonzero(~boot_mask) + 1).tolist(),
            },
            "permutation": {
                "replicates": config.permutation_replicates,
                "seed": config.seed,
                "completed": perm_done,
                "dropped": (np.flatnonzero(~perm_mask) + 1).tolist(),
            },
        })
    if figures:
        _render_figures(out_dir, z_obs, z_null, fs)
    return SeasonAnalysis(season=season, grid=grid, coeffs=coeffs,
                          change=change, se=se, z_obs=z_obs, z_null=z_null,
                          decisions=decisions, fs=fs, manifest=manifest)


def run_analysis(config: RunConfig, *, force=False, resume=False,
                 figures=True) -> dict:
    """Analyze every configured season; returns season -> SeasonAnalysis."""
    return {season: analyze_season(config, season, force=force,
                                   resume=resume, figures=figures)
            for season in config.seasons}


def _load_mask(path, grid) -> np.ndarray:
    """Boolean mask of grid cells listed in a lon,lat CSV."""
    masked = np.zeros(len(grid), dtype=bool)
    cells = {(lon, lat): i
             for i, (lon, lat) in enumerate(zip(grid.lons, grid.lats))}
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["lon", "lat"]:
            raise InvalidArgumentError(f"{path}: mask header must be lon,lat")
        for row in reader:
            key = (float(row[0]), float(row[1]))
            if key not in cells:
                raise InvalidArgumentError(
                    f"{path}: masked cell {key} is not a grid cell")
            masked[cells[key]] = True
    return masked


def run_annual(config: RunConfig, *, force=False, figures=True) -> SeasonAnalysis:
    """Compose the across-season change and retest it.

    Requires all four seasonal run directories, produced with the same
    seed and replicate counts so replicate b means the same year
    sequence in every season.  Seasonal masks from the config are
    applied before the max; a replicate missing (or dropped) in any
    season is dropped from the annual ensembles.
    """
    base = Path(config.output_dir)
    out_dir = base / "annual"
    _check_resume(out_dir, config, force, resume=False)

    manifests = {}
    for season in SEASONS:
        path = base / season / "manifest.json"
        if not path.exists():
            raise InvalidArgumentError(
                f"annual composition needs a completed {season} run")
        manifests[season] = read_json(path)
    ref = manifests[SEASONS[0]]
    for season, man in manifests.items():
        for key in ("t1", "t2", "n_blocks"):
            if man[key] != ref[key]:
                raise InvalidArgumentError(
                    f"seasonal runs disagree on {key}; cannot compose")
        for kind in ("bootstrap", "permutation"):
            if man[kind]["seed"] != ref[kind]["seed"] or \
                    man[kind]["replicates"] != ref[kind]["replicates"]:
                raise InvalidArgumentError(
                    "seasonal runs used different replicate plans; "
                    "cannot compose")
        if man["config"]["grid"] != ref["config"]["grid"]:
            raise InvalidArgumentError("seasonal runs used different grids")
        if man["config"]["r"] != ref["config"]["r"]:
            raise InvalidArgumentError(
                "seasonal runs used different return periods; cannot compose")

    grid = GridSpec(**ref["config"]["grid"]).build()
    out_dir.mkdir(parents=True, exist_ok=True)
    atomic_write_json(out_dir / "config.json",
                      {"config": config.canonical(),
                       "config_hash": config.config_hash()})
    masks = {s: _load_mask(p, grid) for s, p in config.masks.items()}

    def masked(season, arr):
        m = masks.get(season)
        if m is None:
            return arr
        out = arr.copy()
        out[m] = np.nan
        return out

    t1, t2 = float(ref["t1"]), float(ref["t2"])
    phi1_obs, phi2_obs = {}, {}
    for season in SEASONS:
        _, _, p1, p2, _ = read_field_csv(base / season / "observed.csv", grid)
        phi1_obs[season] = masked(season, p1)
        phi2_obs[season] = masked(season, p2)
    seasonal = SeasonalReturnSet(grid=grid, r=float(ref["config"]["r"]),
                                 t1=t1, t2=t2, phi_t1=phi1_obs,
                                 phi_t2=phi2_obs)
    change = annual_change(seasonal, config.metric)

    ensembles = {}
    for kind in ("bootstrap", "permutation"):
        R = ref[kind]["replicates"]
        common = set(range(1, R + 1))
        for season in SEASONS:
            man = manifests[season][kind]
            common &= set(man["completed"]) - set(man["dropped"])
        deltas = np.full((R, len(grid)), np.nan)
        fracs = np.ones(R)
        for i in sorted(common):
            p1s, p2s = [], []
            for season in SEASONS:
                _, _, p1, p2, _ = read_field_csv(
                    base / season / "run" / kind / f"{i}.csv", grid)
                p1s.append(masked(season, p1))
                p2s.append(masked(season, p2))
            stack1 = np.stack(p1s)
            stack2 = np.stack(p2s)
            ok = np.isfinite(stack1) & np.isfinite(stack2)
            any_ok = ok.any(axis=0)
            m1 = np.where(ok, stack1, -np.inf).max(axis=0)
            m2 = np.where(ok, stack2, -np.inf).max(axis=0)
            m1 = np.where(any_ok, m1, np.nan)
            m2 = np.where(any_ok, m2, np.nan)
            row = change_from_return_values(m1, m2, config.metric)
            # a fully masked cell stays NaN for every replicate; only
            # judge the cells the observed composition defines
            defined = np.isfinite(change.delta)
            if np.all(np.isfinite(row[defined])):
                deltas[i - 1] = row
                fracs[i - 1] = 0.0
        kept, mask = apply_drop_policy(
            np.where(np.isfinite(change.delta)[None, :], deltas, 0.0), fracs)
        restore = ~np.isfinite(change.delta)
        kept[:, restore] = np.nan
        ensembles[kind] = (kept, mask)

    kept_boot, boot_mask = ensembles["bootstrap"]
    se = replicate_standard_errors(kept_boot)
    kept_perm, perm_mask = ensembles["permutation"]
    z_null, _ = permutation_z(kept_perm)
    z_obs = standardize(change.delta, se)
    decisions = {q: fdr_threshold(z_obs, z_null, q) for q in config.q_levels}
    fs = field_significance(z_obs, z_null, _candidate_cutoffs(z_obs))

    manifest = _write_outputs(
        out_dir, config, "annual", grid, None, change, se, z_obs, z_null,
        decisions, fs,
        {
            "command": "annual",
            "t1": t1, "t2": t2, "n_blocks": ref["n_blocks"],
            "bootstrap": {
                "replicates": ref["bootstrap"]["replicates"],
                "seed": ref["bootstrap"]["seed"],
                "completed": (np.flatnonzero(boot_mask) + 1).tolist(),
                "dropped": (np.flatnonzero(~boot_mask) + 1).tolist(),
            },
            "permutation": {
                "replicates": ref["permutation"]["replicates"],
                "seed": ref["permutation"]["seed"],
                "completed": (np.flatnonzero(perm_mask) + 1).tolist(),
                "dropped": (np.flatnonzero(~perm_mask) + 1).tolist(),
            },
            "masked_seasons": sorted(masks),
        })
    if figures:
        _render_figures(out_dir, z_obs, z_null, fs)
    return SeasonAnalysis(season="annual", grid=grid, coeffs=None,
                          change=change, se=se, z_obs=z_obs, z_null=z_null,
                          decisions=decisions, fs=fs, manifest=manifest)
