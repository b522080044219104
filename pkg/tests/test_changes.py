"""Change metrics and the across-season composition."""

import numpy as np
import pytest

from gevchange.errors import InvalidArgumentError
from gevchange.changes import (
    ChangeField,
    SeasonalReturnSet,
    annual_change,
    change_field,
    change_from_return_values,
)
from gevchange.gev import GevParams, abs_change_closed_form, rel_change_closed_form
from gevchange.ingest import SEASONS
from gevchange.spatial import CoefficientField, Grid


def uniform_field(n_cells, mu0=10.0, mu1=0.1, sigma=1.0, xi=0.0):
    side = int(np.ceil(np.sqrt(n_cells)))
    grid = Grid.regular(0.0, side * 1.0, 0.0, side * 1.0, 1.0)
    m = len(grid)
    return CoefficientField(
        grid=grid,
        mu0=np.full(m, mu0), mu1=np.full(m, mu1),
        sigma=np.full(m, sigma), xi=np.full(m, xi))


class TestChangeField:
    def test_known_relative_and_absolute(self):
        coeffs = uniform_field(9)
        rel = change_field(coeffs, "relative", 20, 0.0, 67.0)
        ab = change_field(coeffs, "absolute", 20, 0.0, 67.0)
        assert rel.delta[0] == pytest.approx(0.51657, abs=5e-6)
        assert ab.delta[0] == pytest.approx(6.7, abs=1e-12)
        params = GevParams(mu0=10.0, mu1=0.1, sigma0=1.0, xi0=0.0)
        assert rel.delta[0] == pytest.approx(
            rel_change_closed_form(params, 20, 0.0, 67.0), abs=1e-12)
        assert ab.delta[0] == pytest.approx(
            abs_change_closed_form(params, 0.0, 67.0), abs=1e-12)

    def test_no_trend_means_no_change(self):
        coeffs = uniform_field(4, mu1=0.0)
        for metric in ("relative", "absolute"):
            out = change_field(coeffs, metric, 20, 0.0, 67.0)
            assert np.all(out.delta == 0.0)

    def test_relative_depends_on_r_absolute_does_not(self):
        coeffs = uniform_field(4, xi=0.1)
        rel20 = change_field(coeffs, "relative", 20, 0.0, 67.0)
        rel50 = change_field(coeffs, "relative", 50, 0.0, 67.0)
        ab20 = change_field(coeffs, "absolute", 20, 0.0, 67.0)
        ab50 = change_field(coeffs, "absolute", 50, 0.0, 67.0)
        assert abs(rel20.delta[0] - rel50.delta[0]) > 1e-4
        assert np.allclose(ab20.delta, ab50.delta, atol=1e-12)

    def test_absolute_equals_slope_times_span(self):
        rng = np.random.default_rng(0)
        grid = Grid.regular(0.0, 5.0, 0.0, 5.0, 1.0)
        m = len(grid)
        coeffs = CoefficientField(
            grid=grid, mu0=rng.uniform(5, 50, m), mu1=rng.normal(0, 0.2, m),
            sigma=rng.uniform(0.5, 5, m), xi=rng.uniform(-0.4, 0.4, m))
        out = change_field(coeffs, "absolute", 20, 1950.0, 2017.0,
                           time_ref=1983.5)
        assert np.allclose(out.delta, coeffs.mu1 * 67.0, rtol=1e-10)

    def test_zero_start_flagged_for_relative_only(self):
        from gevchange.gev import quantile_factor
        mu0_for_zero = float(quantile_factor(0.0, 20.0))
        coeffs = uniform_field(4, mu0=mu0_for_zero, mu1=0.1, sigma=1.0, xi=0.0)
        rel = change_field(coeffs, "relative", 20, 0.0, 67.0)
        ab = change_field(coeffs, "absolute", 20, 0.0, 67.0)
        assert np.all(rel.phi_t1 == 0.0)
        assert np.all(np.isnan(rel.delta))
        assert np.all(np.isfinite(ab.delta))

    def test_absolute_antisymmetric_in_endpoints(self):
        coeffs = uniform_field(4, mu1=0.07, xi=-0.2)
        fwd = change_field(coeffs, "absolute", 20, 1950.0, 2017.0)
        bwd = change_field(coeffs, "absolute", 20, 2017.0, 1950.0)
        assert np.allclose(fwd.delta, -bwd.delta, atol=1e-12)

    def test_signs_agree_when_start_positive(self):
        rng = np.random.default_rng(1)
        grid = Grid.regular(0.0, 8.0, 0.0, 8.0, 1.0)
        m = len(grid)
        coeffs = CoefficientField(
            grid=grid, mu0=rng.uniform(10, 60, m), mu1=rng.normal(0, 0.15, m),
            sigma=rng.uniform(0.5, 4, m), xi=rng.uniform(-0.3, 0.3, m))
        rel = change_field(coeffs, "relative", 20, 1950.0, 2017.0,
                           time_ref=1983.5)
        ab = change_field(coeffs, "absolute", 20, 1950.0, 2017.0,
                          time_ref=1983.5)
        positive_start = rel.phi_t1 > 0
        assert positive_start.all()
        assert np.array_equal(np.sign(rel.delta), np.sign(ab.delta))
        assert np.all(rel.delta[rel.phi_t2 > 0] > -1.0)

    def test_bad_arguments(self):
        coeffs = uniform_field(4)
        with pytest.raises(InvalidArgumentError):
            change_field(coeffs, "log", 20, 0.0, 67.0)
        with pytest.raises(InvalidArgumentError):
            change_field(coeffs, "relative", 20, 5.0, 5.0)
        with pytest.raises(InvalidArgumentError):
            change_field(coeffs, "relative", 1.0, 0.0, 67.0)


def seasonal_set(grid, phi1_by_season, phi2_by_season, r=20.0):
    return SeasonalReturnSet(
        grid=grid, r=r, t1=1950.0, t2=2017.0,
        phi_t1={s: np.asarray(phi1_by_season[s], dtype=float) for s in SEASONS},
        phi_t2={s: np.asarray(phi2_by_season[s], dtype=float) for s in SEASONS})


class TestAnnualChange:
    def make_grid(self, m):
        return Grid(lons=np.arange(m, dtype=float), lats=np.zeros(m),
                    resolution=1.0)

    def test_dominant_season_carries_through(self):
        grid = self.make_grid(1)
        p1 = {"DJF": [50.0], "MAM": [10.0], "JJA": [5.0], "SON": [8.0]}
        p2 = {"DJF": [58.0], "MAM": [11.0], "JJA": [6.0], "SON": [9.0]}
        out = annual_change(seasonal_set(grid, p1, p2), "absolute")
        assert out.delta[0] == pytest.approx(8.0)
        rel = annual_change(seasonal_set(grid, p1, p2), "relative")
        assert rel.delta[0] == pytest.approx(8.0 / 50.0)

    def test_flat_dominant_hides_large_lesser_change(self):
        grid = self.make_grid(1)
        p1 = {"DJF": [100.0], "MAM": [10.0], "JJA": [5.0], "SON": [8.0]}
        p2 = {"DJF": [100.0], "MAM": [50.0], "JJA": [6.0], "SON": [9.0]}
        out = annual_change(seasonal_set(grid, p1, p2), "absolute")
        assert out.delta[0] == pytest.approx(0.0)

    def test_never_exceeds_largest_seasonal_change(self):
        rng = np.random.default_rng(2)
        m = 1000
        grid = self.make_grid(m)
        p1 = {s: rng.uniform(1.0, 100.0, m) for s in SEASONS}
        p2 = {s: p1[s] + rng.normal(0.0, 10.0, m) for s in SEASONS}
        out = annual_change(seasonal_set(grid, p1, p2), "absolute")
        seasonal_deltas = np.stack([p2[s] - p1[s] for s in SEASONS])
        assert np.all(out.delta <= seasonal_deltas.max(axis=0) + 1e-12)

    def test_masked_season_excluded_from_both_endpoints(self):
        grid = self.make_grid(2)
        p1 = {"DJF": [50.0, 50.0], "MAM": [10.0, 10.0],
              "JJA": [5.0, 5.0], "SON": [8.0, 8.0]}
        p2 = {"DJF": [np.nan, 58.0], "MAM": [11.0, 11.0],
              "JJA": [6.0, 6.0], "SON": [9.0, 9.0]}
        out = annual_change(seasonal_set(grid, p1, p2), "absolute")
        assert out.n_seasons[0] == 3 and out.n_seasons[1] == 4
        assert out.delta[0] == pytest.approx(1.0)
        assert out.delta[1] == pytest.approx(8.0)

    def test_all_seasons_masked_is_undefined(self):
        grid = self.make_grid(1)
        nanv = [np.nan]
        p1 = {s: nanv for s in SEASONS}
        p2 = {s: nanv for s in SEASONS}
        out = annual_change(seasonal_set(grid, p1, p2), "absolute")
        assert out.n_seasons[0] == 0
        assert np.isnan(out.delta[0])

    def test_missing_season_key_rejected(self):
        grid = self.make_grid(1)
        with pytest.raises(InvalidArgumentError):
            SeasonalReturnSet(grid=grid, r=20.0, t1=1950.0, t2=2017.0,
                              phi_t1={"DJF": np.array([1.0])},
                              phi_t2={s: np.array([1.0]) for s in SEASONS})


class TestHelper:
    def test_helper_antisymmetry_and_nan(self):
        phi1 = np.array([2.0, 0.0, -1.0])
        phi2 = np.array([3.0, 1.0, 2.0])
        ab = change_from_return_values(phi1, phi2, "absolute")
        assert np.allclose(ab, [1.0, 1.0, 3.0])
        assert np.allclose(change_from_return_values(phi2, phi1, "absolute"), -ab)
        rel = change_from_return_values(phi1, phi2, "relative")
        assert rel[0] == pytest.approx(0.5)
        assert np.isnan(rel[1])
        assert rel[2] == pytest.approx(-3.0)
