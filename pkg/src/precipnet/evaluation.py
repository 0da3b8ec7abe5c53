"""
Detection and estimation skill, probability histograms, and latitude/longitude
gridding of retrievals with zonal means.
"""
import csv
import json
import math
from dataclasses import dataclass

import numpy as np

from .data import RATE_THRESHOLD, PrecipLabel
from .errors import GridError

GRID_PHASES = ("rain", "snow", "mixed")
_PHASE_OF_LABEL = {PrecipLabel.RAIN: "rain", PrecipLabel.SNOW: "snow",
                   PrecipLabel.MIXED: "mixed"}


###############################################################################
# Detection
###############################################################################


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def n(self):
        return self.tp + self.fp + self.tn + self.fn

    @property
    def tpr(self):
        """Probability of detection; ``None`` when no true events exist."""
        d = self.tp + self.fn
        return self.tp / d if d else None

    @property
    def fpr(self):
        """Probability of false alarm; ``None`` when every pixel is an event."""
        d = self.fp + self.tn
        return self.fp / d if d else None


def confusion(pred, truth, phase):
    """One-vs-rest confusion counts for ``phase`` (rain or snow)."""
    pred = np.asarray([int(p) for p in pred], dtype=int)
    truth = np.asarray([int(t) for t in truth], dtype=int)
    if pred.shape != truth.shape:
        raise ValueError(f"length mismatch: {len(pred)} predictions, {len(truth)} truths")
    phase = int(PrecipLabel(phase))
    is_t = truth == phase
    is_p = pred == phase
    tp = int(np.sum(is_t & is_p))
    fn = int(np.sum(is_t & ~is_p))
    fp = int(np.sum(~is_t & is_p))
    tn = int(len(truth) - tp - fn - fp)
    return ConfusionCounts(tp, fp, tn, fn)


###############################################################################
# Estimation
###############################################################################


@dataclass(frozen=True)
class EstimationMetrics:
    bias: float
    ubrmse: float
    ubmae: float
    n: int

    def __iter__(self):
        return iter((self.bias, self.ubrmse, self.ubmae))


def estimation_metrics(pred, truth, trim_percentile=None):
    """Bias and unbiased RMS / mean-absolute errors of ``pred`` against ``truth``.

    With ``trim_percentile`` only pairs whose truth is at or below that
    percentile of the truth sample (linear interpolation) are kept.
    """
    pred = np.asarray(pred, dtype=np.float64).ravel()
    truth = np.asarray(truth, dtype=np.float64).ravel()
    if pred.shape != truth.shape:
        raise ValueError("pred and truth lengths differ")
    if len(truth) == 0:
        raise ValueError("no pairs to evaluate")
    if trim_percentile is not None:
        cut = np.percentile(truth, trim_percentile, method="linear")
        keep = truth <= cut
        pred, truth = pred[keep], truth[keep]
        if len(truth) == 0:
            raise ValueError("no pairs left after trimming")
    err = pred - truth
    bias = float(np.mean(err))
    centered = err - bias
    ubrmse = math.sqrt(float(np.mean(centered * centered)))
    ubmae = float(np.mean(np.abs(centered)))
    return EstimationMetrics(bias, ubrmse, ubmae, len(truth))


###############################################################################
# Histograms
###############################################################################


@dataclass(frozen=True)
class Histogram:
    edges: np.ndarray
    masses: np.ndarray
    n_in: int
    n_below: int
    n_above: int


def histogram(rates, bin_edges):
    """Probability masses over ``bin_edges``; the last bin is closed."""
    edges = np.asarray(bin_edges, dtype=np.float64)
    if edges.ndim != 1 or len(edges) < 2 or np.any(np.diff(edges) <= 0.0):
        raise ValueError("bin edges must be strictly increasing")
    x = np.asarray(rates, dtype=np.float64).ravel()
    below = int(np.sum(x < edges[0]))
    above = int(np.sum(x > edges[-1]))
    counts, _ = np.histogram(x, bins=edges)
    n_in = int(counts.sum())
    masses = counts / n_in if n_in else np.zeros(len(counts))
    return Histogram(edges, masses, n_in, below, above)


###############################################################################
# Gridding
###############################################################################


def _neumaier(hi, lo, value):
    s = hi + value
    if abs(hi) >= abs(value):
        lo += (hi - s) + value
    else:
        lo += (value - s) + hi
    return s, lo


class Grid:
    """Sparse regular lat/lon grid of per-phase retrieval accumulators.

    Cells are half-open ``[edge_i, edge_{i+1})`` except the last row and column,
    which also include the north and east boundary. Every retrieval counts as
    a sample of its cell; its rate goes to the ledger of its phase.
    """

    def __init__(self, resolution, lat_range=(-90.0, 90.0), lon_range=(-180.0, 180.0),
                 occurrence_threshold=RATE_THRESHOLD):
        self.resolution = float(resolution)
        self.lat_range = tuple(float(v) for v in lat_range)
        self.lon_range = tuple(float(v) for v in lon_range)
        self.occurrence_threshold = float(occurrence_threshold)
        if not self.resolution > 0.0:
            raise GridError("resolution must be positive")
        per_180 = 180.0 / self.resolution
        if abs(per_180 - round(per_180)) > 1e-9:
            raise GridError(f"resolution {resolution} does not divide 180")
        self.n_lat = self._count(self.lat_range)
        self.n_lon = self._count(self.lon_range)
        self.samples = {}
        self.ledgers = {p: {} for p in GRID_PHASES}

    def _count(self, rng):
        n = (rng[1] - rng[0]) / self.resolution
        if rng[1] <= rng[0] or abs(n - round(n)) > 1e-9:
            raise GridError(f"extent {rng} is not a whole number of cells")
        return int(round(n))

    def lat_edge(self, i):
        return self.lat_range[0] + i * self.resolution

    def lon_edge(self, j):
        return self.lon_range[0] + j * self.resolution

    def lat_centers(self):
        return self.lat_range[0] + (np.arange(self.n_lat) + 0.5) * self.resolution

    def _index(self, values, rng, n):
        values = np.asarray(values, dtype=np.float64)
        bad = ~((values >= rng[0]) & (values <= rng[1]))
        if bad.any():
            raise GridError(f"coordinate {values[bad][0]} outside {rng}")
        idx = np.floor((values - rng[0]) / self.resolution).astype(np.int64)
        idx = np.clip(idx, 0, n - 1)
        # settle floating-point disagreements against the canonical edges
        lower = rng[0] + idx * self.resolution
        upper = rng[0] + (idx + 1) * self.resolution
        idx = np.where((values < lower) & (idx > 0), idx - 1, idx)
        idx = np.where((values >= upper) & (idx < n - 1), idx + 1, idx)
        return idx

    def cell_of(self, lat, lon):
        i = self._index(lat, self.lat_range, self.n_lat)
        j = self._index(lon, self.lon_range, self.n_lon)
        return i, j

    def add(self, lat, lon, label, rate):
        """Accumulate vectors of retrievals (label as PrecipLabel codes)."""
        lat = np.atleast_1d(np.asarray(lat, dtype=np.float64))
        lon = np.atleast_1d(np.asarray(lon, dtype=np.float64))
        label = np.atleast_1d(np.asarray([int(v) for v in np.atleast_1d(label)], dtype=int))
        rate = np.atleast_1d(np.asarray(rate, dtype=np.float64))
        if not (len(lat) == len(lon) == len(label) == len(rate)):
            raise GridError("retrieval columns differ in length")
        if np.any(rate < 0.0) or not np.all(np.isfinite(rate)):
            raise GridError("rates must be finite and non-negative")
        if len(lat) == 0:
            return self
        i, j = self.cell_of(lat, lon)
        key = i * self.n_lon + j
        order = np.argsort(key, kind="stable")
        key_s = key[order]
        starts = np.flatnonzero(np.r_[True, key_s[1:] != key_s[:-1]])
        ends = np.r_[starts[1:], len(key_s)]
        for a, b in zip(starts, ends):
            members = order[a:b]
            cell = (int(i[members[0]]), int(j[members[0]]))
            self.samples[cell] = self.samples.get(cell, 0) + len(members)
            for code, phase in _PHASE_OF_LABEL.items():
                sel = members[label[members] == code]
                entry = self.ledgers[phase].setdefault(cell, [0, 0.0, 0.0])
                if len(sel):
                    r = rate[sel]
                    entry[0] += int(np.sum(r > self.occurrence_threshold))
                    entry[1], entry[2] = _neumaier(entry[1], entry[2], math.fsum(r))
        return self

    def merge(self, other):
        """Cell-wise sum of two compatible grids (returns a new grid)."""
        if (self.resolution, self.lat_range, self.lon_range) != (
                other.resolution, other.lat_range, other.lon_range):
            raise GridError("cannot merge grids with different geometry")
        out = Grid(self.resolution, self.lat_range, self.lon_range,
                   self.occurrence_threshold)
        for g in (self, other):
            for cell, n in g.samples.items():
                out.samples[cell] = out.samples.get(cell, 0) + n
            for phase in GRID_PHASES:
                for cell, (occ, hi, lo) in g.ledgers[phase].items():
                    entry = out.ledgers[phase].setdefault(cell, [0, 0.0, 0.0])
                    entry[0] += occ
                    entry[1], entry[2] = _neumaier(entry[1], entry[2], hi)
                    entry[2] += lo
        return out

    def cell_sum(self, phase, cell):
        entry = self.ledgers[phase].get(cell)
        return 0.0 if entry is None else entry[1] + entry[2]

    def cell_mean(self, phase, cell):
        return self.cell_sum(phase, cell) / self.samples[cell]

    def total(self, phase=None):
        phases = GRID_PHASES if phase is None else (phase,)
        return math.fsum(e[1] + e[2] for p in phases for e in self.ledgers[p].values())

    def same_geometry(self, other):
        return (self.resolution, self.lat_range, self.lon_range) == (
            other.resolution, other.lat_range, other.lon_range)


def accumulate_grid(lat, lon, label, rate, resolution=0.1,
                    occurrence_threshold=RATE_THRESHOLD, **extent):
    return Grid(resolution, occurrence_threshold=occurrence_threshold, **extent).add(
        lat, lon, label, rate)


def zonal_mean(grid, phase="rain"):
    """Per latitude row, the mean over populated cells of the cell mean rate.

    Returns ``(lat_centers, profile)``; rows without samples are NaN.
    """
    row_terms = {}
    for cell in grid.samples:
        row_terms.setdefault(cell[0], []).append(grid.cell_mean(phase, cell))
    profile = np.full(grid.n_lat, np.nan)
    for i, terms in row_terms.items():
        profile[i] = math.fsum(terms) / len(terms)
    return grid.lat_centers(), profile


def band_means(grid, band_edges, phase="rain"):
    """Mean cell rate over populated cells whose row center lies in each band."""
    edges = np.asarray(band_edges, dtype=np.float64)
    centers = grid.lat_centers()
    terms = [[] for _ in range(len(edges) - 1)]
    for cell in grid.samples:
        c = centers[cell[0]]
        b = int(np.searchsorted(edges, c, side="right") - 1)
        b = min(max(b, 0), len(edges) - 2)
        terms[b].append(grid.cell_mean(phase, cell))
    return np.array([math.fsum(t) / len(t) if t else np.nan for t in terms])


def write_grid_csv(grid, path):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["lat_index", "lon_index", "lat_center", "lon_center", "phase",
                         "occurrence", "sum_rate", "n_samples"])
        half = 0.5 * grid.resolution
        for cell in sorted(grid.samples):
            i, j = cell
            for phase in GRID_PHASES:
                occ, hi, lo = grid.ledgers[phase].get(cell, (0, 0.0, 0.0))
                writer.writerow([i, j, repr(grid.lat_edge(i) + half),
                                 repr(grid.lon_edge(j) + half), phase, occ,
                                 repr(hi + lo), grid.samples[cell]])


def write_metrics(report, json_path=None, text_path=None):
    """Write a flat ``{key: value}`` report as JSON and/or ``key = value`` text."""
    if json_path is not None:
        with open(json_path, "w") as f:
            json.dump(report, f, indent=2, sort_keys=True)
            f.write("\n")
    if text_path is not None:
        with open(text_path, "w") as f:
            for key in sorted(report):
                f.write(f"{key} = {report[key]}\n")
