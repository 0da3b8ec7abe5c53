import json
import math

import numpy as np
import pytest
from scipy import stats

from precipnet.data import PrecipLabel
from precipnet.evaluation import (Grid, accumulate_grid, band_means, confusion,
                                  estimation_metrics, histogram, write_grid_csv,
                                  write_metrics, zonal_mean)
from precipnet.errors import GridError

R, S, N = PrecipLabel.RAIN, PrecipLabel.SNOW, PrecipLabel.NONE


class TestConfusion:
    def test_hand_count(self):
        c = confusion([R, R, N, N], [R, R, R, N], R)
        assert (c.tp, c.fp, c.tn, c.fn) == (2, 0, 1, 1)
        assert c.tpr == pytest.approx(2 / 3) and c.fpr == 0.0

    def test_identity(self):
        truth = [R, S, N, S, R, N]
        for phase in (R, S):
            c = confusion(truth, truth, phase)
            assert c.tpr == 1.0 and c.fpr == 0.0

    def test_degenerate_denominator(self):
        c = confusion([R, N, N, R], [N, N, N, N], R)
        assert c.tpr is None
        assert c.fpr == 0.5

    def test_one_vs_rest(self):
        # snow predicted for rain truth counts against rain (fn) and snow (fp)
        c_rain = confusion([S], [R], R)
        c_snow = confusion([S], [R], S)
        assert c_rain.fn == 1 and c_snow.fp == 1

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            confusion([R], [R, N], R)


class TestEstimationMetrics:
    def test_constant_offset(self):
        truth = np.array([0.5, 1.0, 7.0])
        bias, ubrmse, ubmae = estimation_metrics(truth + 0.5, truth)
        assert bias == pytest.approx(0.5) and ubrmse == pytest.approx(0, abs=1e-15)
        assert ubmae == pytest.approx(0, abs=1e-15)

    def test_hand_computation(self):
        assert tuple(estimation_metrics([1.0, 3.0], [2.0, 2.0])) == (0.0, 1.0, 1.0)

    def test_trim_keeps_975_of_1000(self):
        rng = np.random.default_rng(0)
        truth = rng.lognormal(size=1000)
        m = estimation_metrics(truth, truth, trim_percentile=97.5)
        # linear quantile position 0.975 * 999 = 974.025 -> order statistics 0..974 kept
        assert m.n == 975

    def test_empty(self):
        with pytest.raises(ValueError):
            estimation_metrics([], [])


class TestHistogram:
    def test_single_bin(self):
        h = histogram([0.5, 0.6, 0.7], [0, 1, 2])
        assert list(h.masses) == [1.0, 0.0]

    def test_symmetric(self):
        h = histogram([-1.5, -0.5, 0.5, 1.5], [-2, 0, 2])
        assert list(h.masses) == [0.5, 0.5]

    def test_out_of_range(self):
        h = histogram([-5, 0.5, 9], [0, 1])
        assert (h.n_in, h.n_below, h.n_above) == (1, 1, 1)
        assert h.masses.sum() == 1.0

    def test_unsorted_edges(self):
        with pytest.raises(ValueError):
            histogram([1.0], [0, 2, 1])

    def test_lognormal_mode_bin(self):
        rng = np.random.default_rng(1)
        x = rng.lognormal(0, 1, 100_000)
        edges = np.geomspace(0.01, 100, 21)
        h = histogram(x, edges)
        # density = mass per unit rate; its peak bin holds the analytic mode exp(mu - sigma^2)
        density = h.masses / np.diff(edges)
        mode = math.exp(0.0 - 1.0)
        assert edges[np.argmax(density)] <= mode < edges[np.argmax(density) + 1]


class TestGrid:
    def test_placement(self):
        g = accumulate_grid([0.05], [0.05], [R], [1.0], resolution=0.1)
        (cell,) = g.samples
        assert g.lat_edge(cell[0]) == pytest.approx(0.0)
        assert g.lon_edge(cell[1]) == pytest.approx(0.0)
        assert g.samples[cell] == 1
        assert g.ledgers["rain"][cell][0] == 1

    def test_lower_edge_inclusive_upper_closed(self):
        g = Grid(1.0)
        assert g.cell_of(0.0, 0.0) == (90, 180)
        assert g.cell_of(90.0, 180.0)[0] == 179
        assert g.cell_of(-90.0, -180.0) == (0, 0)

    def test_occurrence_threshold(self):
        g = accumulate_grid([0.05], [0.05], [R], [0.005], occurrence_threshold=0.01)
        (cell,) = g.samples
        assert g.ledgers["rain"][cell][0] == 0
        assert g.cell_sum("rain", cell) == 0.005

    def test_compensated_sum(self):
        rates = [1e16, 1.0, -1e16 + 3.0, 1.0] * 3
        rates = [abs(r) for r in rates]
        g = accumulate_grid([0.05] * 12, [0.05] * 12, [R] * 12, rates)
        (cell,) = g.samples
        assert g.cell_sum("rain", cell) == math.fsum(rates)

    def test_out_of_range(self):
        with pytest.raises(GridError):
            accumulate_grid([91.0], [0.0], [R], [1.0])
        with pytest.raises(GridError):
            Grid(0.7)

    def test_merge_equals_single_pass(self):
        rng = np.random.default_rng(2)
        lat, lon = rng.uniform(-10, 10, 500), rng.uniform(-10, 10, 500)
        lab, rate = rng.choice([0, 1, 2], 500), rng.lognormal(size=500)
        whole = accumulate_grid(lat, lon, lab, rate, 1.0)
        a = accumulate_grid(lat[:200], lon[:200], lab[:200], rate[:200], 1.0)
        b = accumulate_grid(lat[200:], lon[200:], lab[200:], rate[200:], 1.0)
        merged = a.merge(b)
        assert merged.samples == whole.samples
        for phase in ("rain", "snow"):
            for cell in whole.samples:
                assert merged.cell_sum(phase, cell) == pytest.approx(
                    whole.cell_sum(phase, cell), rel=1e-15)

    def test_merge_geometry_mismatch(self):
        with pytest.raises(GridError):
            Grid(1.0).merge(Grid(0.5))


class TestZonalMean:
    def test_uniform_field(self):
        lat = np.repeat(np.arange(-85, 90, 10.0), 4)
        lon = np.tile([-150.0, -50.0, 50.0, 150.0], len(lat) // 4)
        g = accumulate_grid(lat, lon, [R] * len(lat), [2.5] * len(lat), 5.0)
        _, prof = zonal_mean(g, "rain")
        assert np.all(prof[np.isfinite(prof)] == 2.5)
        assert np.sum(np.isfinite(prof)) == 18

    def test_single_cell(self):
        g = accumulate_grid([10.0, 10.01], [20.0, 20.01], [R, R], [1.0, 3.0], 1.0)
        centers, prof = zonal_mean(g, "rain")
        assert prof[100] == 2.0
        assert np.sum(np.isfinite(prof)) == 1
        assert centers[100] == pytest.approx(10.5)

    def test_brute_force_oracle(self):
        rng = np.random.default_rng(3)
        n = 3000
        lat, lon = rng.uniform(-60, 60, n), rng.uniform(-180, 180, n)
        lab, rate = rng.choice([0, 1, 2], n), rng.lognormal(size=n)
        res = 2.0
        g = accumulate_grid(lat, lon, lab, rate, res)
        _, prof = zonal_mean(g, "rain")
        rows = np.floor((lat + 90) / res).astype(int)
        cols = np.floor((lon + 180) / res).astype(int)
        for i in np.unique(rows):
            means = []
            for j in np.unique(cols[rows == i]):
                m = (rows == i) & (cols == j)
                means.append(np.sum(np.where(lab[m] == R, rate[m], 0.0)) / m.sum())
            assert prof[i] == pytest.approx(np.mean(means), rel=1e-12, abs=1e-15)

    def test_band_means(self):
        g = accumulate_grid([1.0, 6.0], [0.0, 0.0], [S, S], [2.0, 4.0], 1.0)
        out = band_means(g, [-90, 0, 5, 10, 90], "snow")
        assert np.isnan(out[0]) and out[1] == 2.0 and out[2] == 4.0 and np.isnan(out[3])


class TestExports:
    def test_grid_csv(self, tmp_path):
        g = accumulate_grid([0.05], [0.05], [R], [1.25], 0.1)
        write_grid_csv(g, tmp_path / "g.csv")
        lines = (tmp_path / "g.csv").read_text().splitlines()
        assert lines[0] == "lat_index,lon_index,lat_center,lon_center,phase,occurrence,sum_rate,n_samples"
        rain = [l for l in lines if ",rain," in l][0].split(",")
        assert rain[5:] == ["1", "1.25", "1"]

    def test_metrics(self, tmp_path):
        write_metrics({"b": 1.5, "a": None}, tmp_path / "m.json", tmp_path / "m.txt")
        assert json.loads((tmp_path / "m.json").read_text()) == {"a": None, "b": 1.5}
        assert (tmp_path / "m.txt").read_text() == "a = None\nb = 1.5\n"
