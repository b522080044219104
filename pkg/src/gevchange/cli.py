"""Batch command-line front end.

Subcommands cover the whole workflow: extract block maxima from daily
records, run the seasonal analysis into a resumable run directory,
compose the annual change, run the simulation study, and apply the
significance tests or the kriging fit to standalone files.

Exit codes: 0 success, 1 analysis failure (degenerate data, resampling
collapse), 2 usage or input error (bad flags, malformed files,
refusing to overwrite without --force).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .errors import (
    DuplicateRecordError,
    GevChangeError,
    InvalidArgumentError,
    ParseError,
)
from .fileio import atomic_write_json, fmt_float, write_rows
from .ingest import (
    MIN_RECORD_COMPLETENESS,
    extract_block_maxima,
    parse_daily_csv,
    station_completeness,
    write_block_maxima_csv,
)
from .significance import fdr_threshold, field_significance
from .spatial import fit_kriging_model

__all__ = ["main"]

_USAGE_ERRORS = (InvalidArgumentError, ParseError, DuplicateRecordError,
                 FileNotFoundError, NotADirectoryError, PermissionError,
                 json.JSONDecodeError)


def _load_json(path):
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def _require(path, what):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"{what} not found: {path}")
    return path


def _refuse_existing(paths, force):
    existing = [str(p) for p in paths if Path(p).exists()]
    if existing and not force:
        raise InvalidArgumentError(
            "refusing to overwrite existing output (use --force): "
            + ", ".join(existing))


def cmd_extract(args) -> int:
    raw = _load_json(_require(args.config, "config file"))
    from .pipeline import RunConfig, maxima_path

    config = RunConfig.from_dict(raw)
    if config.daily_csv is None or config.maxima_dir is None:
        raise InvalidArgumentError(
            "extract requires daily_csv and maxima_dir in the config")
    daily = _require(config.daily_csv, "daily input")
    out_dir = Path(config.maxima_dir)
    targets = [maxima_path(out_dir, s) for s in config.seasons]
    _refuse_existing(targets, args.force)
    out_dir.mkdir(parents=True, exist_ok=True)

    stations = parse_daily_csv(daily)
    window = (f"{config.start_year}-01-01", f"{config.end_year}-12-31")
    kept = [s for s in stations
            if station_completeness(s, *window) >= MIN_RECORD_COMPLETENESS]
    print(f"{len(stations)} stations read, {len(kept)} pass the "
          f"two-thirds completeness rule")
    for season, target in zip(config.seasons, targets):
        series = [extract_block_maxima(s, season, config.start_year,
                                       config.end_year) for s in kept]
        write_block_maxima_csv(target, series)
        print(f"wrote {target}")
    return 0


def cmd_analyze(args) -> int:
    config = _run_config(args)
    from .pipeline import maxima_path, run_analysis

    if config.maxima_dir is None:
        raise InvalidArgumentError("analyze requires maxima_dir in the config")
    for season in config.seasons:
        _require(maxima_path(config.maxima_dir, season),
                 f"{season} maxima file")
    results = run_analysis(config, force=args.force, resume=args.resume)
    for season, res in results.items():
        counts = ", ".join(
            f"q={q:g}: {d.r_hat} rejected" for q, d in
            sorted(res.decisions.items(), reverse=True))
        print(f"{season}: {len(res.grid)} cells, {counts}")
    return 0


def cmd_annual(args) -> int:
    config = _run_config(args)
    from .pipeline import run_annual

    res = run_annual(config, force=args.force)
    counts = ", ".join(
        f"q={q:g}: {d.r_hat} rejected" for q, d in
        sorted(res.decisions.items(), reverse=True))
    print(f"annual: {len(res.grid)} cells, {counts}")
    return 0


def cmd_simulate(args) -> int:
    from .figures import (
        convergence_figure,
        re_profile_figure,
        rmse_profile_figure,
    )
    from .simstudy import (
        ParentDist,
        SimConfig,
        gumbel_convergence,
        run_sim_study,
        write_convergence_csv,
    )

    raw = _load_json(_require(args.config, "config file")) if args.config \
        else {}
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.replicates is not None:
        raw["replicates"] = args.replicates
    if args.bootstrap_replicates is not None:
        raw["bootstrap_replicates"] = args.bootstrap_replicates
    if args.families is not None:
        raw["parents"] = [{"family": f} for f in args.families]
    for key in ("block_sizes", "return_periods"):
        if key in raw:
            raw[key] = tuple(raw[key])
    try:
        if "parents" in raw:
            raw["parents"] = tuple(ParentDist(**p) for p in raw["parents"])
        config = SimConfig(**raw)
    except TypeError as exc:
        raise InvalidArgumentError(f"bad simulation config: {exc}") from None

    out_dir = Path(args.out)
    result_csv = out_dir / "simstudy.csv"
    conv_csv = out_dir / "convergence.csv"
    _refuse_existing([result_csv, conv_csv], args.force)
    out_dir.mkdir(parents=True, exist_ok=True)

    result = run_sim_study(config)
    result.write_csv(result_csv)
    write_convergence_csv(conv_csv, sorted(config.block_sizes))
    print(f"wrote {result_csv}")
    print(f"wrote {conv_csv}")

    ns = sorted(config.block_sizes)
    rs = sorted(config.return_periods)
    for parent in config.parents:
        label = parent.family if parent.p == 0.0 else \
            f"{parent.family}_p{parent.p:g}"
        re_by = {label: [result.get(parent.family, n, rs[0], parent.p
                                    ).re_percent for n in ns]}
        re_profile_figure(ns, re_by, out_dir / f"re_{label}.png")
        rmse_by = {n: [result.get(parent.family, n, r, parent.p).rmse
                       for r in rs] for n in ns}
        rmse_profile_figure(rs, rmse_by, out_dir / f"rmse_{label}.png")
    convergence_figure(ns, [gumbel_convergence(n) for n in ns],
                       out_dir / "convergence.png")
    flagged = [c for c in result.cells if c.flagged]
    if flagged:
        worst = max(flagged, key=lambda c: c.failures)
        print(f"warning: {len(flagged)} sweep cells exceeded the 5% fit "
              f"failure threshold (worst: {worst.family} n={worst.n}, "
              f"{worst.failures} failures)")
    return 0


def _read_csv_columns(path, expected_header):
    import csv as _csv

    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = _csv.reader(fh)
        header = next(reader, None)
        if header != expected_header:
            raise InvalidArgumentError(
                f"{path}: expected header {','.join(expected_header)}, "
                f"got {header}")
        rows = list(reader)
    if not rows:
        raise InvalidArgumentError(f"{path}: no data rows")
    if any(len(r) != len(expected_header) for r in rows):
        raise InvalidArgumentError(f"{path}: malformed row")
    return rows


def _floats(strings, path):
    try:
        return np.array([float(s) for s in strings])
    except ValueError as exc:
        raise InvalidArgumentError(f"{path}: {exc}") from None


def cmd_fdr(args) -> int:
    obs_rows = _read_csv_columns(_require(args.observed, "observed z file"),
                                 ["lon", "lat", "z"])
    cells = [(r[0], r[1]) for r in obs_rows]
    if len(set(cells)) != len(cells):
        raise InvalidArgumentError("observed file repeats a cell")
    index = {c: i for i, c in enumerate(cells)}
    z_obs = _floats([r[2] for r in obs_rows], args.observed)

    null_rows = _read_csv_columns(_require(args.null, "null z file"),
                                  ["replicate", "lon", "lat", "z"])
    replicates = sorted({r[0] for r in null_rows}, key=lambda v: (len(v), v))
    z_null = np.full((len(replicates), len(cells)), np.nan)
    rep_index = {rep: h for h, rep in enumerate(replicates)}
    z_vals = _floats([r[3] for r in null_rows], args.null)
    for (rep, lon, lat, _), z in zip(null_rows, z_vals):
        cell = (lon, lat)
        if cell not in index:
            raise InvalidArgumentError(
                f"null replicate {rep} covers unknown cell {cell}")
        z_null[rep_index[rep], index[cell]] = z

    qs = sorted(args.q, reverse=True)
    decisions = {q: fdr_threshold(z_obs, z_null, q) for q in qs}
    cutoffs = np.concatenate(
        [[0.0], np.unique(np.abs(z_obs[np.isfinite(z_obs)]))])
    fs = field_significance(z_obs, z_null, cutoffs)

    out_dir = Path(args.out)
    dec_csv = out_dir / "decisions.csv"
    fs_csv = out_dir / "fs.csv"
    _refuse_existing([dec_csv, fs_csv], args.force)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_rows(
        dec_csv,
        ["lon", "lat", "z"] + [f"reject_q{int(round(q * 100))}" for q in qs],
        ([lon, lat, fmt_float(z)] + [str(int(decisions[q].rejected[i]))
                                     for q in qs]
         for i, ((lon, lat), z) in enumerate(zip(cells, z_obs))))
    write_rows(fs_csv, ["cutoff", "fs"],
               ([fmt_float(c), fmt_float(v)]
                for c, v in zip(fs.cutoffs, fs.fs)))
    for q in qs:
        d = decisions[q]
        c_star = "inf" if np.isinf(d.c_star) else fmt_float(d.c_star)
        print(f"q={q:g}: c*={c_star}, {d.r_hat} of {d.n_usable} cells "
              f"rejected")
    print(f"wrote {dec_csv}")
    print(f"wrote {fs_csv}")
    return 0


def cmd_kriging_fit(args) -> int:
    rows = _read_csv_columns(_require(args.values, "values file"),
                             ["lon", "lat", "value"])
    coords = np.column_stack([_floats([r[0] for r in rows], args.values),
                              _floats([r[1] for r in rows], args.values)])
    values = _floats([r[2] for r in rows], args.values)
    out = Path(args.out)
    _refuse_existing([out], args.force)
    model = fit_kriging_model(coords, values)
    atomic_write_json(out, {
        "variance": model.variance,
        "range_km": model.range_km,
        "nugget": model.nugget,
        "mean": model.mean,
        "smoothness": model.smoothness,
        "n_stations": len(values),
    })
    print(f"wrote {out}")
    return 0


def _run_config(args):
    from .pipeline import RunConfig

    raw = _load_json(_require(args.config, "config file"))
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.threads is not None:
        raw["threads"] = args.threads
    return RunConfig.from_dict(raw)


def _add_common(sub, *, seed=True, threads=True, force=True, resume=False):
    if seed:
        sub.add_argument("--seed", type=int, default=None,
                         help="override the config seed")
    if threads:
        sub.add_argument("--threads", type=int, default=None,
                         help="scheduling hint; results never depend on it")
    if force:
        sub.add_argument("--force", action="store_true",
                         help="overwrite existing outputs")
    if resume:
        sub.add_argument("--resume", action="store_true",
                         help="continue an interrupted run with the same "
                              "config")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gevchange",
        description="Detect changes in block-maxima extremes on a grid.")
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("extract",
                        help="extract seasonal block maxima from daily data")
    p.add_argument("--config", required=True, help="JSON run config")
    _add_common(p, seed=False, threads=False)
    p.set_defaults(func=cmd_extract)

    p = subs.add_parser("analyze",
                        help="run the seasonal change analysis")
    p.add_argument("--config", required=True, help="JSON run config")
    _add_common(p, resume=True)
    p.set_defaults(func=cmd_analyze)

    p = subs.add_parser("annual",
                        help="compose the annual change from four seasons")
    p.add_argument("--config", required=True, help="JSON run config")
    _add_common(p)
    p.set_defaults(func=cmd_annual)

    p = subs.add_parser("simulate", help="run the simulation study")
    p.add_argument("--config", default=None,
                   help="JSON simulation config (optional)")
    p.add_argument("--out", default="simstudy", help="output directory")
    p.add_argument("--replicates", type=int, default=None)
    p.add_argument("--bootstrap-replicates", type=int, default=None)
    p.add_argument("--families", nargs="+", default=None,
                   choices=["exponential", "gamma"],
                   help="restrict the sweep to these parents")
    _add_common(p)
    p.set_defaults(func=cmd_simulate)

    p = subs.add_parser("fdr",
                        help="test precomputed z-fields against a null "
                             "ensemble")
    p.add_argument("--observed", required=True,
                   help="CSV of lon,lat,z for the observed field")
    p.add_argument("--null", required=True,
                   help="CSV of replicate,lon,lat,z for the null ensemble")
    p.add_argument("--q", type=float, nargs="+", default=[0.33, 0.1],
                   help="FDR levels")
    p.add_argument("--out", default="fdr_out", help="output directory")
    _add_common(p, seed=False, threads=False)
    p.set_defaults(func=cmd_fdr)

    p = subs.add_parser("kriging-fit",
                        help="fit covariance hyperparameters to one surface")
    p.add_argument("--values", required=True, help="CSV of lon,lat,value")
    p.add_argument("--out", default="kriging_model.json",
                   help="output JSON path")
    _add_common(p, seed=False, threads=False)
    p.set_defaults(func=cmd_kriging_fit)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _USAGE_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except GevChangeError as exc:
        print(f"analysis failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
