"""End-to-end checks of the command-line front end.

Each test drives ``gevchange.cli.main`` in process and asserts on exit
codes and the files left behind, covering the daily-to-maxima
extraction, the gridded analysis, the simulation study, and the two
standalone utilities.
"""

import json

import numpy as np
import pytest

from gevchange.cli import main
from gevchange.ingest import BLOCK_HEADER, read_block_maxima_csv

START, END = 1991, 2012


def write_daily_csv(path, n_good=10):
    """Synthetic daily records: n_good complete stations plus one too
    sparse to pass the two-thirds completeness rule."""
    rng = np.random.default_rng(7)
    days = np.arange(np.datetime64(f"{START}-01-01"),
                     np.datetime64(f"{END + 1}-01-01"))
    lines = ["station_id,lon,lat,date,prcp_mm"]
    for k in range(n_good):
        sid = f"S{k:02d}"
        lon = 10.3 + 0.35 * (k % 4)
        lat = 45.3 + 0.9 * (k // 4)
        vals = rng.exponential(8.0, size=days.size)
        lines.extend(f"{sid},{lon},{lat},{d},{v:.3f}"
                     for d, v in zip(days.astype(str), vals))
    vals = rng.exponential(8.0, size=days.size)
    lines.extend(f"SPARSE,13.9,48.9,{days[i]},{vals[i]:.3f}"
                 for i in range(0, days.size, 5))
    path.write_text("\n".join(lines) + "\n")


def run_config(tmp, **overrides):
    cfg = {
        "seed": 5,
        "output_dir": str(tmp / "out"),
        "start_year": START,
        "end_year": END,
        "daily_csv": str(tmp / "daily.csv"),
        "maxima_dir": str(tmp / "maxima"),
        "seasons": ["JJA"],
        "grid": {"lon_min": 10.0, "lon_max": 12.0,
                 "lat_min": 45.0, "lat_max": 47.0, "resolution": 1.0},
        "metric": "absolute",
        "r": 20.0,
        "bootstrap_replicates": 6,
        "permutation_replicates": 6,
        "q_levels": [0.33],
    }
    cfg.update(overrides)
    path = tmp / "config.json"
    path.write_text(json.dumps(cfg))
    return path


@pytest.fixture(scope="module")
def workflow(tmp_path_factory):
    """One extract + analyze chain shared by the workflow assertions."""
    tmp = tmp_path_factory.mktemp("cli")
    write_daily_csv(tmp / "daily.csv")
    config = run_config(tmp)
    assert main(["extract", "--config", str(config)]) == 0
    assert main(["analyze", "--config", str(config)]) == 0
    return tmp, config


class TestExtract:
    def test_maxima_files(self, workflow):
        tmp, _ = workflow
        series = read_block_maxima_csv(tmp / "maxima" / "JJA_maxima.csv")
        assert len(series) == 10
        assert all(s.station_id != "SPARSE" for s in series)
        assert all(s.years[0] == START and s.years[-1] == END
                   for s in series)
        header = (tmp / "maxima" / "JJA_maxima.csv").read_text() \
            .splitlines()[0]
        assert header == ",".join(BLOCK_HEADER)

    def test_refuses_rerun_without_force(self, workflow, capsys):
        tmp, config = workflow
        assert main(["extract", "--config", str(config)]) == 2
        assert "refusing to overwrite" in capsys.readouterr().err
        assert main(["extract", "--config", str(config), "--force"]) == 0

    def test_missing_input_is_usage_error(self, tmp_path):
        config = run_config(tmp_path)
        assert main(["extract", "--config", str(config)]) == 2

    def test_malformed_daily_rows(self, tmp_path, capsys):
        (tmp_path / "daily.csv").write_text(
            "station_id,lon,lat,date,prcp_mm\nS1,10.0,45.0,1991-01-01\n")
        config = run_config(tmp_path)
        assert main(["extract", "--config", str(config)]) == 2
        assert "line 2" in capsys.readouterr().err


class TestAnalyze:
    def test_run_directory(self, workflow, capsys):
        tmp, _ = workflow
        run_dir = tmp / "out" / "JJA"
        manifest = json.loads((run_dir / "manifest.json").read_text())
        assert manifest["status"] == "complete"
        assert manifest["n_cells"] == 4
        decisions = (run_dir / "decisions.csv").read_text().splitlines()
        assert decisions[0].endswith("reject_q33")
        assert len(decisions) == 5

    def test_refuses_rerun_without_force(self, workflow):
        _, config = workflow
        assert main(["analyze", "--config", str(config)]) == 2

    def test_missing_maxima_is_usage_error(self, tmp_path):
        config = run_config(tmp_path)
        assert main(["analyze", "--config", str(config)]) == 2

    def test_unknown_config_key_is_usage_error(self, tmp_path, capsys):
        config = run_config(tmp_path, typo_key=1)
        assert main(["analyze", "--config", str(config)]) == 2
        assert "typo_key" in capsys.readouterr().err

    def test_bad_json_is_usage_error(self, tmp_path):
        path = tmp_path / "config.json"
        path.write_text("{not json")
        assert main(["analyze", "--config", str(path)]) == 2


class TestSimulate:
    CFG = {"n_blocks": 40, "block_sizes": [10], "return_periods": [20.0],
           "replicates": 30, "bootstrap_replicates": 8}

    def make_config(self, tmp):
        path = tmp / "sim.json"
        path.write_text(json.dumps(dict(self.CFG, seed=11)))
        return path

    def test_outputs_and_determinism(self, tmp_path):
        config = self.make_config(tmp_path)
        args = ["simulate", "--config", str(config),
                "--families", "exponential"]
        assert main(args + ["--out", str(tmp_path / "a")]) == 0
        assert main(args + ["--out", str(tmp_path / "b")]) == 0
        for name in ("simstudy.csv", "convergence.csv", "re_exponential.png",
                     "rmse_exponential.png", "convergence.png"):
            a = (tmp_path / "a" / name).read_bytes()
            b = (tmp_path / "b" / name).read_bytes()
            assert a == b, name
        rows = (tmp_path / "a" / "simstudy.csv").read_text().splitlines()
        assert rows[0] == "family,p,n,r,rmse,re_percent,mc_sd,mean_boot_se," \
                          "failures"
        assert len(rows) == 2 and rows[1].startswith("exponential,")

    def test_family_restriction_and_force(self, tmp_path):
        config = self.make_config(tmp_path)
        out = tmp_path / "sweep"
        args = ["simulate", "--config", str(config), "--out", str(out)]
        assert main(args + ["--families", "gamma"]) == 0
        rows = (out / "simstudy.csv").read_text().splitlines()
        assert len(rows) == 2 and rows[1].startswith("gamma,")
        assert main(args + ["--families", "gamma"]) == 2
        assert main(args + ["--families", "gamma", "--force"]) == 0

    def test_seed_override_changes_output(self, tmp_path):
        config = self.make_config(tmp_path)
        args = ["simulate", "--config", str(config),
                "--families", "exponential"]
        assert main(args + ["--out", str(tmp_path / "a")]) == 0
        assert main(args + ["--out", str(tmp_path / "b"), "--seed", "12"]) \
            == 0
        a = (tmp_path / "a" / "simstudy.csv").read_text()
        b = (tmp_path / "b" / "simstudy.csv").read_text()
        assert a != b

    def test_unknown_config_key_is_usage_error(self, tmp_path, capsys):
        path = tmp_path / "sim.json"
        path.write_text(json.dumps(dict(self.CFG, bogus=1)))
        assert main(["simulate", "--config", str(path),
                     "--out", str(tmp_path / "x")]) == 2
        assert "bogus" in capsys.readouterr().err


class TestFdr:
    def write_fields(self, tmp):
        obs = tmp / "observed.csv"
        obs.write_text("lon,lat,z\n0.5,0.5,5.0\n1.5,0.5,0.3\n2.5,0.5,-0.2\n")
        lines = ["replicate,lon,lat,z"]
        for h in range(1, 9):
            for lon in ("0.5", "1.5", "2.5"):
                lines.append(f"{h},{lon},0.5,0.05")
        null = tmp / "null.csv"
        null.write_text("\n".join(lines) + "\n")
        return obs, null

    def test_decisions(self, tmp_path, capsys):
        obs, null = self.write_fields(tmp_path)
        out = tmp_path / "fdr"
        assert main(["fdr", "--observed", str(obs), "--null", str(null),
                     "--q", "0.33", "--out", str(out)]) == 0
        rows = (out / "decisions.csv").read_text().splitlines()
        assert rows[0] == "lon,lat,z,reject_q33"
        flags = [r.split(",")[3] for r in rows[1:]]
        assert flags == ["1", "1", "0"]
        fs_rows = (out / "fs.csv").read_text().splitlines()
        assert fs_rows[0] == "cutoff,fs"
        assert len(fs_rows) == 5
        assert "c*=" in capsys.readouterr().out

    def test_unknown_cell_is_usage_error(self, tmp_path):
        obs, null = self.write_fields(tmp_path)
        null.write_text("replicate,lon,lat,z\n1,9.5,9.5,0.0\n")
        assert main(["fdr", "--observed", str(obs), "--null", str(null),
                     "--out", str(tmp_path / "fdr")]) == 2

    def test_duplicate_cell_is_usage_error(self, tmp_path):
        obs, null = self.write_fields(tmp_path)
        obs.write_text("lon,lat,z\n0.5,0.5,5.0\n0.5,0.5,1.0\n")
        assert main(["fdr", "--observed", str(obs), "--null", str(null),
                     "--out", str(tmp_path / "fdr")]) == 2


class TestKrigingFit:
    def test_fit_surface(self, tmp_path):
        rng = np.random.default_rng(3)
        lines = ["lon,lat,value"]
        for _ in range(30):
            lon = rng.uniform(8.0, 14.0)
            lat = rng.uniform(44.0, 49.0)
            value = 10.0 + 0.8 * (lat - 46.0) + rng.normal(0.0, 0.15)
            lines.append(f"{lon:.4f},{lat:.4f},{value:.4f}")
        values = tmp_path / "values.csv"
        values.write_text("\n".join(lines) + "\n")
        out = tmp_path / "model.json"
        assert main(["kriging-fit", "--values", str(values),
                     "--out", str(out)]) == 0
        model = json.loads(out.read_text())
        assert set(model) == {"variance", "range_km", "nugget", "mean",
                              "smoothness", "n_stations"}
        assert model["variance"] > 0.0 and model["range_km"] > 0.0
        assert model["n_stations"] == 30
        assert main(["kriging-fit", "--values", str(values),
                     "--out", str(out)]) == 2

    def test_bad_value_is_usage_error(self, tmp_path):
        values = tmp_path / "values.csv"
        values.write_text("lon,lat,value\n10.0,45.0,abc\n")
        assert main(["kriging-fit", "--values", str(values),
                     "--out", str(tmp_path / "m.json")]) == 2


def test_unknown_subcommand_exits_2():
    with pytest.raises(SystemExit) as err:
        main(["frobnicate"])
    assert err.value.code == 2
