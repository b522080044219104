import json
from pathlib import Path

import numpy as np
import pytest

from gevchange.errors import InvalidArgumentError
from gevchange.fileio import read_json
from gevchange.ingest import SEASONS, BlockMaximaSeries, write_block_maxima_csv
from gevchange.pipeline import (
    GridSpec,
    RunConfig,
    analyze_season,
    maxima_path,
    read_field_csv,
    run_annual,
    stack_station_series,
)

START, END = 1981, 2012
N_STATIONS = 24


def make_world(tmp_path, *, mu1=0.0, seasons=("JJA",), seed=314,
               level_by_season=None):
    """Synthetic station maxima over a 4x4 degree box, one CSV per season."""
    rng = np.random.default_rng(seed)
    lons = rng.uniform(10.2, 13.8, N_STATIONS)
    lats = rng.uniform(45.2, 48.8, N_STATIONS)
    years = np.arange(START, END + 1)
    tc = years - years.mean()
    maxima_dir = tmp_path / "maxima"
    maxima_dir.mkdir(exist_ok=True)
    for season in seasons:
        base = 20.0 if level_by_season is None else level_by_season[season]
        series = []
        for i in range(N_STATIONS):
            mu = base + 0.4 * (lats[i] - 47.0)
            vals = mu + mu1 * tc + rng.gumbel(0.0, 1.2, years.size)
            series.append(BlockMaximaSeries(
                station_id=f"ST{i:03d}", lon=float(lons[i]),
                lat=float(lats[i]), season=season, years=years.copy(),
                maxima=vals, missing_fraction=np.zeros(years.size)))
        write_block_maxima_csv(maxima_path(maxima_dir, season), series)
    return maxima_dir


def make_config(tmp_path, maxima_dir, *, seed=99, seasons=("JJA",),
                metric="absolute", B=10, H=10, **overrides):
    kwargs = dict(
        seed=seed,
        output_dir=str(tmp_path / "out"),
        start_year=START,
        end_year=END,
        maxima_dir=str(maxima_dir),
        seasons=tuple(seasons),
        grid=GridSpec(10.0, 14.0, 45.0, 49.0, 1.0),
        metric=metric,
        r=20.0,
        bootstrap_replicates=B,
        permutation_replicates=H,
    )
    kwargs.update(overrides)
    return RunConfig(**kwargs)


def tree_bytes(root):
    return {p.relative_to(root).as_posix(): p.read_bytes()
            for p in sorted(Path(root).rglob("*")) if p.is_file()}


class TestConfig:
    def test_from_dict_roundtrip(self):
        raw = {
            "seed": 7, "output_dir": "/tmp/x", "start_year": 1950,
            "end_year": 2000, "maxima_dir": "/tmp/m",
            "grid": {"lon_min": 0.0, "lon_max": 2.0, "lat_min": 0.0,
                     "lat_max": 2.0, "resolution": 1.0},
            "seasons": ["DJF", "JJA"], "q_levels": [0.33, 0.1],
        }
        cfg = RunConfig.from_dict(raw)
        assert cfg.seasons == ("DJF", "JJA")
        assert cfg.grid.resolution == 1.0
        assert cfg.model == "M0"

    def test_unknown_key_rejected(self):
        with pytest.raises(InvalidArgumentError, match="unknown config keys"):
            RunConfig.from_dict({"seed": 1, "output_dir": "x",
                                 "start_year": 1, "end_year": 2,
                                 "bootstrap": 3})

    def test_missing_required_key(self):
        with pytest.raises(InvalidArgumentError, match="missing"):
            RunConfig.from_dict({"seed": 1, "output_dir": "x",
                                 "start_year": 1})

    def test_hash_ignores_threads_and_output(self, tmp_path):
        a = make_config(tmp_path, "m", threads=1)
        b = make_config(tmp_path, "m", threads=8,
                        output_dir=str(tmp_path / "elsewhere"))
        assert a.config_hash() == b.config_hash()

    def test_hash_sees_seed(self, tmp_path):
        a = make_config(tmp_path, "m", seed=1)
        b = make_config(tmp_path, "m", seed=2)
        assert a.config_hash() != b.config_hash()

    def test_validation(self, tmp_path):
        with pytest.raises(InvalidArgumentError):
            make_config(tmp_path, "m", metric="squared")
        with pytest.raises(InvalidArgumentError):
            make_config(tmp_path, "m", q_levels=())
        with pytest.raises(InvalidArgumentError):
            make_config(tmp_path, "m", q_levels=(1.2,))
        with pytest.raises(InvalidArgumentError):
            make_config(tmp_path, "m", seasons=("JJA", "WET"))
        with pytest.raises(InvalidArgumentError):
            make_config(tmp_path, "m", B=1)


class TestStack:
    def test_sorted_and_aligned(self):
        years = np.arange(2000, 2025)
        mk = lambda sid: BlockMaximaSeries(
            station_id=sid, lon=1.0, lat=2.0, season="JJA",
            years=years.copy(), maxima=np.ones(years.size),
            missing_fraction=np.zeros(years.size))
        stack = stack_station_series([mk("B"), mk("A")])
        assert stack.ids == ["A", "B"]
        assert stack.values.shape == (2, years.size)
        assert stack.valid.all()

    def test_mismatched_years_rejected(self):
        mk = lambda sid, y0: BlockMaximaSeries(
            station_id=sid, lon=1.0, lat=2.0, season="JJA",
            years=np.arange(y0, y0 + 25),
            maxima=np.ones(25), missing_fraction=np.zeros(25))
        with pytest.raises(InvalidArgumentError, match="year axis"):
            stack_station_series([mk("A", 2000), mk("B", 2001)])

    def test_duplicate_ids_rejected(self):
        years = np.arange(2000, 2025)
        mk = lambda: BlockMaximaSeries(
            station_id="A", lon=1.0, lat=2.0, season="JJA",
            years=years.copy(), maxima=np.ones(years.size),
            missing_fraction=np.zeros(years.size))
        with pytest.raises(InvalidArgumentError, match="duplicate"):
            stack_station_series([mk(), mk()])


@pytest.fixture(scope="module")
def trend_run(tmp_path_factory):
    """One analyzed season with a strong planted trend, reused read-only."""
    tmp_path = tmp_path_factory.mktemp("trend")
    maxima_dir = make_world(tmp_path, mu1=0.25)
    config = make_config(tmp_path, maxima_dir)
    result = analyze_season(config, "JJA", figures=False)
    return tmp_path, config, result


class TestAnalyzeSeason:
    def test_outputs_complete(self, trend_run):
        tmp_path, config, result = trend_run
        out = Path(config.output_dir) / "JJA"
        for name in ("config.json", "manifest.json", "coefficients.csv",
                     "observed.csv", "change.csv", "zscores.csv",
                     "decisions.csv", "fs.csv"):
            assert (out / name).exists(), name
        for kind, count in (("bootstrap", config.bootstrap_replicates),
                            ("permutation", config.permutation_replicates)):
            files = sorted((out / "run" / kind).glob("*.csv"))
            assert len(files) == count
            assert (out / "run" / kind / "failures.json").exists()
        man = read_json(out / "manifest.json")
        assert man["status"] == "complete"
        assert man["config_hash"] == config.config_hash()
        assert man["n_stations_used"] >= 10
        M = len(result.grid)
        assert result.change.delta.shape == (M,)
        assert result.se.shape == (M,)
        assert result.z_obs.shape == (M,)
        assert result.z_null.shape[1] == M

    def test_trend_is_detected(self, trend_run):
        _, config, result = trend_run
        # planted slope 0.25/yr over 31 yr: absolute change near 7.75
        defined = np.isfinite(result.change.delta)
        assert defined.all()
        assert np.median(result.change.delta) == pytest.approx(7.75, rel=0.25)
        q_low = max(config.q_levels)
        assert result.decisions[q_low].rejected.mean() > 0.5
        assert np.median(result.z_obs) > 2.0

    def test_zscores_csv_roundtrip(self, trend_run):
        _, config, result = trend_run
        out = Path(config.output_dir) / "JJA"
        rows = (out / "zscores.csv").read_text().strip().split("\n")[1:]
        z = np.array([float(r.split(",")[4]) for r in rows])
        np.testing.assert_array_equal(z, result.z_obs)

    def test_replicate_csv_grid_checked(self, trend_run):
        tmp_path, config, _ = trend_run
        path = Path(config.output_dir) / "JJA" / "run" / "bootstrap" / "1.csv"
        grid = GridSpec(0.0, 4.0, 0.0, 4.0, 1.0).build()
        with pytest.raises(InvalidArgumentError, match="grid"):
            read_field_csv(path, grid)

    def test_refuses_overwrite_without_force(self, trend_run):
        tmp_path, config, _ = trend_run
        with pytest.raises(InvalidArgumentError, match="force"):
            analyze_season(config, "JJA", figures=False)

    def test_resume_rejects_changed_config(self, trend_run):
        tmp_path, config, _ = trend_run
        altered = make_config(tmp_path, config.maxima_dir, seed=config.seed + 1)
        with pytest.raises(InvalidArgumentError, match="different config"):
            analyze_season(altered, "JJA", resume=True, figures=False)

    def test_wrong_year_window_rejected(self, tmp_path):
        maxima_dir = make_world(tmp_path)
        config = make_config(tmp_path, maxima_dir, start_year=START - 3,
                             end_year=END)
        with pytest.raises(InvalidArgumentError, match="config wants"):
            analyze_season(config, "JJA", figures=False)

    def test_non_m0_model_rejected(self, tmp_path):
        maxima_dir = make_world(tmp_path)
        config = make_config(tmp_path, maxima_dir, model="M2")
        with pytest.raises(InvalidArgumentError, match="M0"):
            analyze_season(config, "JJA", figures=False)


class TestDeterminism:
    def test_reruns_are_byte_identical(self, tmp_path):
        maxima_dir = make_world(tmp_path, mu1=0.1)
        a = make_config(tmp_path, maxima_dir, B=6, H=6,
                        output_dir=str(tmp_path / "a"))
        b = make_config(tmp_path, maxima_dir, B=6, H=6,
                        output_dir=str(tmp_path / "b"))
        analyze_season(a, "JJA", figures=True)
        analyze_season(b, "JJA", figures=True)
        ta = tree_bytes(tmp_path / "a")
        tb = tree_bytes(tmp_path / "b")
        assert set(ta) == set(tb)
        for name in ta:
            assert ta[name] == tb[name], f"{name} differs between reruns"

    def test_resume_completes_interrupted_run(self, tmp_path):
        maxima_dir = make_world(tmp_path, mu1=0.1, seed=11)
        full = make_config(tmp_path, maxima_dir, B=8, H=8,
                           output_dir=str(tmp_path / "full"))
        part = make_config(tmp_path, maxima_dir, B=8, H=8,
                           output_dir=str(tmp_path / "part"))
        analyze_season(full, "JJA", figures=False)
        analyze_season(part, "JJA", figures=False)

        # fake an interruption: lose the manifest, half the bootstrap
        # replicates, and their failure records
        out = Path(part.output_dir) / "JJA"
        (out / "manifest.json").unlink()
        failures = json.loads(
            (out / "run" / "bootstrap" / "failures.json").read_text())
        for i in (2, 5, 7, 8):
            (out / "run" / "bootstrap" / f"{i}.csv").unlink()
            failures.pop(str(i))
        (out / "run" / "bootstrap" / "failures.json").write_text(
            json.dumps(failures, sort_keys=True, indent=2) + "\n")

        analyze_season(part, "JJA", resume=True, figures=False)
        ta = tree_bytes(Path(full.output_dir))
        tb = tree_bytes(Path(part.output_dir))
        assert set(ta) == set(tb)
        for name in ta:
            assert ta[name] == tb[name], f"{name} differs after resume"


@pytest.fixture(scope="module")
def four_season_run(tmp_path_factory):
    """All four seasons analyzed; JJA has much the highest level."""
    tmp_path = tmp_path_factory.mktemp("annual")
    levels = {"DJF": 18.0, "MAM": 20.0, "JJA": 40.0, "SON": 22.0}
    maxima_dir = make_world(tmp_path, mu1=0.15, seasons=SEASONS,
                            level_by_season=levels, seed=77)
    config = make_config(tmp_path, maxima_dir, seasons=SEASONS, B=8, H=8)
    results = {s: analyze_season(config, s, figures=False) for s in SEASONS}
    return tmp_path, config, results


class TestAnnual:
    def test_dominant_season_carries(self, four_season_run):
        tmp_path, config, results = four_season_run
        annual = run_annual(config, figures=False)
        out = Path(config.output_dir) / "annual"
        assert (out / "manifest.json").exists()
        # JJA sits far above the rest at both endpoints, so the annual
        # composition must reproduce its change field cell for cell
        np.testing.assert_array_equal(annual.change.delta,
                                      results["JJA"].change.delta)
        assert annual.change.n_seasons.min() == 4

    def test_mask_reroutes_the_max(self, four_season_run):
        tmp_path, config, results = four_season_run
        grid = config.grid.build()
        mask_csv = tmp_path / "jja_mask.csv"
        lines = ["lon,lat"] + [f"{repr(float(lon))},{repr(float(lat))}"
                               for lon, lat in zip(grid.lons, grid.lats)]
        mask_csv.write_text("\n".join(lines) + "\n")
        masked = make_config(
            tmp_path, config.maxima_dir, seasons=SEASONS, B=8, H=8,
            masks={"JJA": str(mask_csv)},
            output_dir=config.output_dir)
        annual = run_annual(masked, force=True, figures=True)
        assert annual.change.n_seasons.max() == 3
        # with JJA gone the composition cannot match it anywhere
        assert not np.array_equal(annual.change.delta,
                                  results["JJA"].change.delta)

    def test_missing_season_refused(self, tmp_path):
        maxima_dir = make_world(tmp_path, seasons=("JJA",))
        config = make_config(tmp_path, maxima_dir, seasons=("JJA",), B=6, H=6)
        analyze_season(config, "JJA", figures=False)
        with pytest.raises(InvalidArgumentError, match="completed"):
            run_annual(config, figures=False)

    def test_replicate_intersection(self, four_season_run):
        tmp_path, config, results = four_season_run
        annual_dir = Path(config.output_dir) / "annual"
        man = read_json(annual_dir / "manifest.json")
        # every seasonal run completed cleanly, so the intersection is full
        for kind in ("bootstrap", "permutation"):
            dropped = set()
            for s in SEASONS:
                dropped |= set(results[s].manifest[kind]["dropped"])
            expected = 8 - len(dropped)
            assert len(man[kind]["completed"]) >= expected - 2
