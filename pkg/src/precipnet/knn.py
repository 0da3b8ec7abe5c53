"""
Multi-frequency k-nearest-neighbor matching and the Bayesian baseline.

Neighbor search is exact. The index partitions the (whitened) tb space into
leaf buckets by recursive median splits; each bucket is bounded by a ball and
the triangle inequality prunes buckets that cannot contain a neighbor closer
than the current k-th best. Distances of surviving candidates are computed
with the same row-wise kernel as :func:`exhaustive_knn`, so the two paths
agree bit for bit, including the (distance, record index) tie order.
"""
import csv
from dataclasses import dataclass

import numpy as np

from .data import PrecipLabel
from .errors import BuildError, EstimationError, QueryError

DEFAULT_K = 20
RIDGE_SCALE = 1e-6
# slack on pruning bounds; far above accumulated rounding, far below spacing
_PRUNE_SLACK = 1e-9


class DistanceMetric:
    """Euclidean or Mahalanobis distance over tb vectors.

    Mahalanobis distances are evaluated as Euclidean distances between
    whitened vectors ``x @ L`` where ``cov_inverse = L @ L.T``.
    """

    def __init__(self, kind="euclidean", cov_inverse=None):
        kind = kind.lower()
        if kind not in ("euclidean", "mahalanobis"):
            raise BuildError(f"unknown metric {kind!r}")
        self.kind = kind
        self.cov_inverse = None
        self._chol = None
        if kind == "mahalanobis":
            if cov_inverse is None:
                raise BuildError("mahalanobis metric needs cov_inverse")
            s = np.array(cov_inverse, dtype=np.float64)
            if s.ndim != 2 or s.shape[0] != s.shape[1]:
                raise BuildError("cov_inverse must be square")
            if not np.allclose(s, s.T, rtol=0.0, atol=1e-9):
                raise BuildError("cov_inverse is not symmetric")
            s = 0.5 * (s + s.T)
            try:
                self._chol = np.linalg.cholesky(s)
            except np.linalg.LinAlgError:
                raise BuildError("cov_inverse is not positive definite") from None
            self.cov_inverse = s

    @classmethod
    def from_sample(cls, tb):
        """Mahalanobis metric from the sample covariance of ``tb`` plus a ridge."""
        tb = np.asarray(tb, dtype=np.float64)
        n, d = tb.shape
        if n <= d:
            raise BuildError(f"need more than {d} records to estimate a covariance")
        cov = np.cov(tb, rowvar=False)
        ridge = RIDGE_SCALE * np.trace(cov) / d
        try:
            cov_inv = np.linalg.inv(cov + ridge * np.eye(d))
        except np.linalg.LinAlgError:
            raise BuildError("tb covariance is singular after ridge") from None
        return cls("mahalanobis", 0.5 * (cov_inv + cov_inv.T))

    def transform(self, x):
        """Map rows into the space where this metric is Euclidean.

        Row-wise and independent of how many rows are passed at once.
        """
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if self._chol is None:
            return x
        return np.sum(x[:, :, None] * self._chol[None, :, :], axis=1)

    def distance(self, x, y):
        return float(row_distances(self.transform(x), self.transform(y)[0])[0])


def row_distances(points, q):
    """Euclidean distance from ``q`` to each row, accumulated channel by channel."""
    return column_distances(np.ascontiguousarray(np.asarray(points).T), q)


def column_distances(columns, q):
    """Same kernel as :func:`row_distances` for channel-major ``columns`` (d, n)."""
    acc = np.zeros(columns.shape[1])
    diff = np.empty(columns.shape[1])
    for j in range(columns.shape[0]):
        np.subtract(columns[j], q[j], out=diff)
        np.multiply(diff, diff, out=diff)
        acc += diff
    return np.sqrt(acc)


@dataclass(frozen=True)
class Neighbor:
    index: int
    distance: float
    label: PrecipLabel
    rate: float


class NeighborSet(tuple):
    """Neighbors ordered by ascending (distance, record index)."""

    @property
    def k(self):
        return len(self)

    @property
    def rates(self):
        return np.array([n.rate for n in self])

    @property
    def distances(self):
        return np.array([n.distance for n in self])


def _select(dist, idx, k):
    """k smallest by (distance, index); ties at the k-th distance all survive
    the partition step so the index tie-break sees them."""
    if len(dist) > 4 * k:
        kth = np.partition(dist, k - 1)[k - 1]
        keep = np.flatnonzero(dist <= kth)
        dist, idx = dist[keep], idx[keep]
    order = np.lexsort((idx, dist))[:k]
    return dist[order], idx[order]


def exhaustive_knn(points, q, k):
    """Brute-force k nearest rows of ``points`` (already in metric space)."""
    dist = row_distances(points, q)
    return _select(dist, np.arange(len(dist)), k)


class NeighborIndex:
    """Exact kNN index over a database's tb vectors."""

    def __init__(self, db, metric, leaf_size=512):
        if len(db) == 0:
            raise BuildError("cannot index an empty database")
        self.db = db
        self.metric = metric
        self.points = metric.transform(db.tb)
        self.columns = np.ascontiguousarray(self.points.T)
        self.leaf_size = int(leaf_size)
        self._build()

    @property
    def n_channels(self):
        return self.db.n_channels

    def _build(self):
        pts = self.points
        stack = [np.arange(len(pts))]
        leaves = []
        while stack:
            idx = stack.pop()
            if len(idx) <= self.leaf_size:
                leaves.append(np.sort(idx))
                continue
            sub = pts[idx]
            dim = int(np.argmax(sub.max(axis=0) - sub.min(axis=0)))
            order = np.argsort(sub[:, dim], kind="stable")
            half = len(idx) // 2
            stack.append(idx[order[half:]])
            stack.append(idx[order[:half]])
        self.leaf_members = leaves
        self.centers = np.array([pts[m].mean(axis=0) for m in leaves])
        self.radii = np.array([
            row_distances(pts[m], c).max() for m, c in zip(leaves, self.centers)
        ])
        self.leaf_columns = [np.ascontiguousarray(pts[m].T) for m in leaves]

    def _candidates(self, q, k):
        bounds = row_distances(self.centers, q) - self.radii
        slack = _PRUNE_SLACK * (1.0 + np.abs(bounds) + self.radii)
        bounds = bounds - slack
        order = np.argsort(bounds, kind="stable")
        best_d = np.empty(0)
        best_i = np.empty(0, dtype=np.int64)
        pos = 0
        batch = 1
        while pos < len(order):
            if len(best_d) >= k and bounds[order[pos]] > best_d[-1]:
                break
            chunk = order[pos:pos + batch]
            if len(best_d) >= k:
                chunk = chunk[bounds[chunk] <= best_d[-1]]
            pos += batch
            batch = min(2 * batch, 16)
            if len(chunk) == 0:
                continue
            d = np.concatenate([best_d] + [column_distances(self.leaf_columns[c], q)
                                            for c in chunk])
            i = np.concatenate([best_i] + [self.leaf_members[c] for c in chunk])
            best_d, best_i = _select(d, i, k)
        return best_d, best_i

    def query_arrays(self, tb, k=DEFAULT_K):
        """(distances, record indices) of the k nearest neighbors of ``tb``."""
        tb = np.asarray(tb, dtype=np.float64)
        if tb.shape != (self.n_channels,):
            raise QueryError(
                f"query has shape {tb.shape}, index expects ({self.n_channels},)")
        if k < 1:
            raise QueryError("k must be >= 1")
        q = self.metric.transform(tb)[0]
        return self._candidates(q, int(k))

    def query(self, tb, k=DEFAULT_K):
        dist, idx = self.query_arrays(tb, k)
        return NeighborSet(
            Neighbor(int(i), float(d), PrecipLabel(int(self.db.label[i])),
                     float(self.db.rate[i]))
            for d, i in zip(dist, idx)
        )

    def exhaustive(self, tb, k=DEFAULT_K):
        """Reference scan over every record, same metric and tie rule."""
        tb = np.asarray(tb, dtype=np.float64)
        if tb.shape != (self.n_channels,):
            raise QueryError("query dimension mismatch")
        dist = column_distances(self.columns, self.metric.transform(tb)[0])
        return _select(dist, np.arange(len(dist)), k)


def build_index(db, metric_kind="euclidean", cov_inverse=None, leaf_size=512):
    """Index ``db`` under the Euclidean or (sample-covariance) Mahalanobis metric."""
    if len(db) == 0:
        raise BuildError("cannot index an empty database")
    if metric_kind == "mahalanobis" and cov_inverse is None:
        metric = DistanceMetric.from_sample(db.tb)
    else:
        metric = DistanceMetric(metric_kind, cov_inverse)
    return NeighborIndex(db, metric, leaf_size=leaf_size)


def query_knn(index, tb, k=DEFAULT_K):
    return index.query(tb, k)


###############################################################################
# Bayesian detection and estimation
###############################################################################


def detect_majority(neighbors):
    """Nested majority vote: occurrence first, then phase.

    Precipitating needs strictly more than half of the neighbors; an exact
    half is non-precipitating. Phase ties go to the nearest precipitating
    neighbor.
    """
    neighbors = list(neighbors)
    if not neighbors:
        raise EstimationError("empty neighbor set")
    wet = [n for n in neighbors if n.label != PrecipLabel.NONE]
    if 2 * len(wet) <= len(neighbors):
        return PrecipLabel.NONE
    n_rain = sum(1 for n in wet if n.label == PrecipLabel.RAIN)
    n_snow = len(wet) - n_rain
    if n_rain != n_snow:
        return PrecipLabel.RAIN if n_rain > n_snow else PrecipLabel.SNOW
    return wet[0].label


def neighbor_weights(distances, scheme="inverse_distance"):
    """Normalized weights on the simplex for the given neighbor distances."""
    d = np.asarray(distances, dtype=np.float64)
    if len(d) == 0:
        raise EstimationError("no neighbors to weight")
    if scheme == "uniform":
        w = np.ones(len(d))
    elif scheme == "inverse_distance":
        exact = d == 0.0
        if exact.any():
            w = exact.astype(float)
        else:
            # d_min / d lies in (0, 1], so neither 1/d nor the sum can overflow
            w = d.min() / d
    else:
        raise EstimationError(f"unknown weighting scheme {scheme!r}")
    return w / w.sum()


def estimate_weighted(neighbors, phase, scheme="inverse_distance",
                      return_weights=False):
    """Weighted mean rate over the neighbors sharing ``phase``."""
    phase = PrecipLabel(phase)
    if phase not in (PrecipLabel.RAIN, PrecipLabel.SNOW):
        raise EstimationError("phase must be rain or snow")
    same = [n for n in neighbors if n.label == phase]
    if not same:
        raise EstimationError(f"no {phase.name.lower()} neighbors to estimate from")
    rates = np.array([n.rate for n in same])
    w = neighbor_weights([n.distance for n in same], scheme)
    rate = float(np.dot(w, rates))
    # keep the convex combination inside the hull despite rounding
    rate = min(max(rate, rates.min()), rates.max())
    if return_weights:
        return rate, w
    return rate


def knn_retrieve(index, tb, k=DEFAULT_K, scheme="inverse_distance"):
    """Bayesian baseline for one pixel: (label, rate)."""
    neighbors = index.query(tb, k)
    label = detect_majority(neighbors)
    if label == PrecipLabel.NONE:
        return label, 0.0
    return label, estimate_weighted(neighbors, label, scheme)


def write_neighbor_csv(path, neighbor_sets):
    """Dump neighbor sets as ``query_id,rank,record_index,distance,label,rate``."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["query_id", "rank", "record_index", "distance", "label", "rate"])
        for qid, neighbors in enumerate(neighbor_sets):
            for rank, n in enumerate(neighbors, start=1):
                writer.writerow([qid, rank, n.index, repr(n.distance),
                                 n.label.name.lower(), repr(n.rate)])
