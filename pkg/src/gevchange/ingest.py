"""Daily station records and seasonal block-maxima extraction.

Input is a long-format CSV of daily precipitation totals
(``station_id,lon,lat,date,prcp_mm``, ISO dates, empty value = missing).
Blocks are the four meteorological seasons, labeled by season year: the
winter (DJF) block of year t runs from December 1 of t-1 through the
last day of February of t, so a winter spans the calendar boundary but
carries a single year label.  A block whose season is more than one
third missing yields a missing maximum.
"""

from __future__ import annotations

import calendar
import csv
import datetime as dt
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DuplicateRecordError, InvalidArgumentError, ParseError
from .fileio import fmt_float

__all__ = [
    "SEASONS",
    "DailySeries",
    "BlockMaximaSeries",
    "parse_daily_csv",
    "station_completeness",
    "extract_block_maxima",
    "write_block_maxima_csv",
    "read_block_maxima_csv",
]

SEASONS = ("DJF", "MAM", "JJA", "SON")

DAILY_HEADER = ["station_id", "lon", "lat", "date", "prcp_mm"]
BLOCK_HEADER = ["station_id", "lon", "lat", "season", "year", "max_mm", "missing_fraction"]

# fraction of a season's days that may be missing before its maximum is
# discarded; mirrors the record-level two-thirds completeness rule
MAX_BLOCK_MISSING = 1.0 / 3.0

# record-level completeness threshold, expressed exactly so that a
# station with precisely two of every three days present passes
MIN_RECORD_COMPLETENESS = 2.0 / 3.0


@dataclass
class DailySeries:
    """One station's daily precipitation record.

    dates are strictly increasing numpy datetime64[D]; values are mm
    with NaN marking missing measurements.  Days absent from the file
    entirely also count as missing for completeness purposes.
    """

    station_id: str
    lon: float
    lat: float
    dates: np.ndarray
    values: np.ndarray


@dataclass
class BlockMaximaSeries:
    """Per-station seasonal maxima, one entry per season year."""

    station_id: str
    lon: float
    lat: float
    season: str
    years: np.ndarray
    maxima: np.ndarray
    missing_fraction: np.ndarray


def parse_daily_csv(path) -> list[DailySeries]:
    """Read a daily CSV into one series per station, sorted by station id.

    Raises
    ------
    ParseError
        Malformed header or row (with the offending line number);
        negative precipitation is rejected.
    DuplicateRecordError
        Two rows for the same (station, date).
    """
    path = Path(path)
    stations: dict[str, dict] = {}
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty file", line=1) from None
        if header != DAILY_HEADER:
            raise ParseError(
                f"expected header {','.join(DAILY_HEADER)}, got {','.join(header)}", line=1)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 5:
                raise ParseError(f"expected 5 fields, got {len(row)}", line=lineno)
            sid, lon_s, lat_s, date_s, val_s = row
            try:
                lon = float(lon_s)
                lat = float(lat_s)
            except ValueError:
                raise ParseError("unparseable coordinates", line=lineno) from None
            try:
                day = dt.date.fromisoformat(date_s)
            except ValueError:
                raise ParseError(f"unparseable date {date_s!r}", line=lineno) from None
            if val_s == "":
                value = np.nan
            else:
                try:
                    value = float(val_s)
                except ValueError:
                    raise ParseError(f"unparseable precipitation {val_s!r}", line=lineno) from None
                if value < 0.0:
                    raise ParseError(f"negative precipitation {val_s}", line=lineno)
            rec = stations.setdefault(sid, {"lon": lon, "lat": lat, "rows": {}})
            if rec["lon"] != lon or rec["lat"] != lat:
                raise ParseError(f"conflicting coordinates for station {sid}", line=lineno)
            if day in rec["rows"]:
                raise DuplicateRecordError(
                    f"duplicate record for station {sid} on {date_s}", line=lineno)
            rec["rows"][day] = value

    out = []
    for sid in sorted(stations):
        rec = stations[sid]
        days = sorted(rec["rows"])
        dates = np.array([np.datetime64(d) for d in days], dtype="datetime64[D]")
        values = np.array([rec["rows"][d] for d in days], dtype=float)
        out.append(DailySeries(sid, rec["lon"], rec["lat"], dates, values))
    return out


def _as_date(x) -> dt.date:
    if isinstance(x, dt.date):
        return x
    return dt.date.fromisoformat(str(x))


def station_completeness(series: DailySeries, start, end) -> float:
    """Fraction of calendar days in [start, end] with a nonmissing value.

    Callers filter stations whose fraction falls below
    MIN_RECORD_COMPLETENESS (two thirds; equality passes).
    """
    start = _as_date(start)
    end = _as_date(end)
    if not start < end:
        raise InvalidArgumentError("start must precede end")
    total = (end - start).days + 1
    if series.dates.size == 0:
        return 0.0
    lo = np.datetime64(start)
    hi = np.datetime64(end)
    sel = (series.dates >= lo) & (series.dates <= hi)
    present = int(np.isfinite(series.values[sel]).sum())
    return present / total


def _season_window(season: str, year: int) -> tuple[dt.date, dt.date]:
    if season == "DJF":
        return dt.date(year - 1, 12, 1), dt.date(year, 2, calendar.monthrange(year, 2)[1])
    if season == "MAM":
        return dt.date(year, 3, 1), dt.date(year, 5, 31)
    if season == "JJA":
        return dt.date(year, 6, 1), dt.date(year, 8, 31)
    if season == "SON":
        return dt.date(year, 9, 1), dt.date(year, 11, 30)
    raise InvalidArgumentError(f"unknown season {season!r}")


def extract_block_maxima(series: DailySeries, season: str, start_year: int,
                         end_year: int) -> BlockMaximaSeries:
    """Seasonal maxima for every season year in [start_year, end_year].

    Each block's maximum is taken over the days present in that season's
    window; a block with more than one third of its days missing (or no
    data at all) gets a NaN maximum.  The reported missing fraction
    counts both absent dates and present-but-missing values.
    """
    if season not in SEASONS:
        raise InvalidArgumentError(f"unknown season {season!r}")
    years = np.arange(start_year, end_year + 1, dtype=int)
    maxima = np.full(years.shape, np.nan)
    missing_fraction = np.ones(years.shape)
    for i, year in enumerate(years):
        w0, w1 = _season_window(season, int(year))
        total = (w1 - w0).days + 1
        lo = np.datetime64(w0)
        hi = np.datetime64(w1)
        a = int(np.searchsorted(series.dates, lo, side="left"))
        b = int(np.searchsorted(series.dates, hi, side="right"))
        vals = series.values[a:b]
        finite = np.isfinite(vals)
        present = int(finite.sum())
        frac_missing = (total - present) / total
        missing_fraction[i] = frac_missing
        if present > 0 and not frac_missing > MAX_BLOCK_MISSING:
            maxima[i] = float(np.max(vals[finite]))
    return BlockMaximaSeries(
        station_id=series.station_id,
        lon=series.lon,
        lat=series.lat,
        season=season,
        years=years,
        maxima=maxima,
        missing_fraction=missing_fraction,
    )


def write_block_maxima_csv(path, series_list) -> None:
    """Write block maxima in the documented schema; missing maxima are
    empty fields."""
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(BLOCK_HEADER) + "\n")
        for s in series_list:
            for year, mx, mf in zip(s.years, s.maxima, s.missing_fraction):
                mx_s = "" if not np.isfinite(mx) else fmt_float(mx)
                fh.write(
                    f"{s.station_id},{fmt_float(s.lon)},{fmt_float(s.lat)},"
                    f"{s.season},{int(year)},{mx_s},{fmt_float(mf)}\n")


def read_block_maxima_csv(path) -> list[BlockMaximaSeries]:
    """Read a block-maxima CSV back into per-(station, season) series."""
    path = Path(path)
    groups: dict[tuple[str, str], dict] = {}
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != BLOCK_HEADER:
            raise ParseError(
                f"expected header {','.join(BLOCK_HEADER)}, got {','.join(header)}", line=1)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 7:
                raise ParseError(f"expected 7 fields, got {len(row)}", line=lineno)
            sid, lon_s, lat_s, season, year_s, max_s, mf_s = row
            key = (sid, season)
            g = groups.setdefault(
                key, {"lon": float(lon_s), "lat": float(lat_s),
                      "years": [], "maxima": [], "mf": []})
            g["years"].append(int(year_s))
            g["maxima"].append(np.nan if max_s == "" else float(max_s))
            g["mf"].append(float(mf_s))
    out = []
    for (sid, season), g in sorted(groups.items()):
        order = np.argsort(np.asarray(g["years"]), kind="stable")
        out.append(BlockMaximaSeries(
            station_id=sid, lon=g["lon"], lat=g["lat"], season=season,
            years=np.asarray(g["years"], dtype=int)[order],
            maxima=np.asarray(g["maxima"], dtype=float)[order],
            missing_fraction=np.asarray(g["mf"], dtype=float)[order]))
    return out
