import numpy as np
import pytest

from precipnet.data import PrecipDatabase, PrecipLabel
from precipnet.errors import BuildError, EstimationError, QueryError
from precipnet.knn import (DistanceMetric, Neighbor, NeighborSet, build_index,
                           detect_majority, estimate_weighted, knn_retrieve,
                           neighbor_weights, query_knn, write_neighbor_csv)
from precipnet.synthetic import SyntheticConfig, generate_synthetic


def line_db(values, labels=None, rates=None):
    """Database whose tb is a single channel holding ``values``."""
    n = len(values)
    labels = np.zeros(n, int) if labels is None else np.asarray(labels)
    rates = np.where(labels == 0, 0.0, 1.0) if rates is None else np.asarray(rates)
    return PrecipDatabase(np.asarray(values, float)[:, None] + 100.0,
                          np.tile([0, 0, 1, 0, 280], (n, 1)), np.zeros(n), labels,
                          rates, np.zeros(n), np.zeros(n), np.zeros(n))


def nset(labels, distances=None, rates=None):
    n = len(labels)
    distances = np.arange(1, n + 1, dtype=float) if distances is None else distances
    rates = np.ones(n) if rates is None else rates
    return NeighborSet(Neighbor(i, float(d), PrecipLabel(lab), float(r))
                       for i, (lab, d, r) in enumerate(zip(labels, distances, rates)))


class TestBuild:
    def test_singleton(self):
        idx = build_index(line_db([3.0]))
        nb = idx.query(np.array([105.5]), k=3)
        assert nb.k == 1
        assert nb[0].index == 0 and nb[0].distance == pytest.approx(2.5)

    def test_empty_rejected(self):
        with pytest.raises(BuildError):
            build_index(line_db([]))

    def test_mahalanobis_needs_enough_records(self):
        rng = np.random.default_rng(0)
        db = PrecipDatabase(rng.uniform(100, 200, (3, 5)), np.tile([0, 0, 1, 0, 280], (3, 1)),
                            [0] * 3, [0] * 3, [0.0] * 3, [0] * 3, [0] * 3, [0] * 3)
        with pytest.raises(BuildError):
            build_index(db, "mahalanobis")

    def test_non_spd_rejected(self):
        with pytest.raises(BuildError):
            DistanceMetric("mahalanobis", [[1.0, 2.0], [2.0, 1.0]])
        with pytest.raises(BuildError):
            DistanceMetric("mahalanobis", [[1.0, 0.5], [0.0, 1.0]])

    def test_mahalanobis_on_whitened_sample(self):
        rng = np.random.default_rng(1)
        z = rng.normal(size=(5000, 4))
        z = (z - z.mean(0)) @ np.linalg.inv(np.linalg.cholesky(np.cov(z, rowvar=False))).T
        db = PrecipDatabase(z + 200, np.tile([0, 0, 1, 0, 280], (5000, 1)),
                            [0] * 5000, [0] * 5000, [0.0] * 5000, [0] * 5000,
                            [0] * 5000, [0] * 5000)
        m = build_index(db, "mahalanobis").metric
        e = DistanceMetric("euclidean")
        for a, b in rng.normal(size=(20, 2, 4)):
            # the ridge rescales distances by 1/sqrt(1 + 1e-6)
            assert m.distance(a, b) == pytest.approx(e.distance(a, b), rel=1e-6)

    def test_identity_inverse_equals_euclidean(self):
        rng = np.random.default_rng(2)
        m = DistanceMetric("mahalanobis", np.eye(6))
        e = DistanceMetric("euclidean")
        for a, b in rng.normal(size=(100, 2, 6)) * 50:
            assert abs(m.distance(a, b) - e.distance(a, b)) <= 1e-9


class TestQuery:
    def test_hand_geometry(self):
        idx = build_index(line_db(np.arange(10.0)))
        nb = query_knn(idx, np.array([104.4]), 3)
        assert [n.index for n in nb] == [4, 5, 3]
        np.testing.assert_allclose(nb.distances, [0.4, 0.6, 1.4], atol=1e-12)

    def test_k_exceeds_size(self):
        idx = build_index(line_db([5.0, 1.0, 3.0]))
        nb = idx.query(np.array([100.0]), 10)
        assert [n.index for n in nb] == [1, 2, 0]

    def test_exact_match_first(self, synthetic_10k):
        idx = build_index(synthetic_10k)
        nb = idx.query(synthetic_10k.tb[123], 5)
        assert nb[0].index == 123 and nb[0].distance == 0.0

    def test_ties_by_index(self):
        idx = build_index(line_db([1.0, 3.0, 3.0, 1.0, 5.0]))
        nb = idx.query(np.array([102.0]), 4)
        assert [n.index for n in nb] == [0, 1, 2, 3]

    def test_dimension_mismatch(self, synthetic_10k):
        idx = build_index(synthetic_10k)
        with pytest.raises(QueryError):
            idx.query(np.zeros(5), 3)
        with pytest.raises(QueryError):
            idx.query(synthetic_10k.tb[0], 0)

    @pytest.mark.parametrize("metric", ["euclidean", "mahalanobis"])
    def test_matches_exhaustive_on_10k(self, synthetic_10k, metric):
        idx = build_index(synthetic_10k, metric, leaf_size=64)
        rng = np.random.default_rng(7)
        queries = synthetic_10k.tb[rng.integers(len(synthetic_10k), size=100)]
        queries = queries + rng.normal(0, 3, queries.shape)
        for q in queries:
            d1, i1 = idx.query_arrays(q, 20)
            d2, i2 = idx.exhaustive(q, 20)
            np.testing.assert_array_equal(i1, i2)
            np.testing.assert_array_equal(d1, d2)

    def test_neighbor_csv(self, tmp_path):
        idx = build_index(line_db(np.arange(5.0), labels=[0, 2, 1, 0, 2],
                                  rates=[0, 1.5, 0.2, 0, 3.0]))
        write_neighbor_csv(tmp_path / "n.csv", [idx.query(np.array([101.0]), 2)])
        lines = (tmp_path / "n.csv").read_text().splitlines()
        assert lines[0] == "query_id,rank,record_index,distance,label,rate"
        assert lines[1] == "0,1,1,0.0,rain,1.5"


class TestDetectMajority:
    def test_below_majority(self):
        assert detect_majority(nset([2] * 9 + [0] * 11)) == PrecipLabel.NONE

    def test_exact_half_is_none(self):
        assert detect_majority(nset([2] * 10 + [0] * 10)) == PrecipLabel.NONE

    def test_rain_majority(self):
        assert detect_majority(nset([2] * 6 + [1] * 5 + [0] * 9)) == PrecipLabel.RAIN

    def test_phase_tie_nearest_wins(self):
        labels = [0, 1] + [2] * 6 + [1] * 5 + [0] * 7
        assert len(labels) == 20
        # brute-force oracle: first precipitating label in distance order
        nearest = next(lab for lab in labels if lab != 0)
        assert detect_majority(nset(labels)) == PrecipLabel(nearest) == PrecipLabel.SNOW


class TestEstimateWeighted:
    def test_inverse_distance(self):
        nb = nset([2, 2], distances=[1.0, 3.0], rates=[2.0, 4.0])
        rate, w = estimate_weighted(nb, PrecipLabel.RAIN, return_weights=True)
        np.testing.assert_allclose(w, [0.75, 0.25])
        assert rate == pytest.approx(2.5)

    def test_equal_distances(self):
        nb = nset([2, 2, 2], distances=[2.0] * 3, rates=[1.0, 2.0, 3.0])
        assert estimate_weighted(nb, 2) == pytest.approx(2.0)

    def test_zero_distance(self):
        nb = nset([1, 1, 1], distances=[0.0, 1.0, 2.0], rates=[1.7, 5.0, 9.0])
        assert estimate_weighted(nb, PrecipLabel.SNOW) == 1.7

    def test_only_same_phase(self):
        nb = nset([2, 1, 2], distances=[1.0, 1.0, 1.0], rates=[1.0, 100.0, 3.0])
        assert estimate_weighted(nb, PrecipLabel.RAIN) == pytest.approx(2.0)

    def test_no_same_phase(self):
        with pytest.raises(EstimationError):
            estimate_weighted(nset([2, 2]), PrecipLabel.SNOW)

    def test_uniform_scheme(self):
        assert list(neighbor_weights([1.0, 9.0], "uniform")) == [0.5, 0.5]

    def test_knn_retrieve(self):
        idx = build_index(line_db(np.arange(6.0), labels=[2, 2, 2, 0, 0, 0],
                                  rates=[1.0, 2.0, 3.0, 0, 0, 0]))
        label, rate = knn_retrieve(idx, np.array([101.0]), k=3)
        assert label == PrecipLabel.RAIN
        assert 1.0 <= rate <= 3.0
        assert knn_retrieve(idx, np.array([105.0]), k=3) == (PrecipLabel.NONE, 0.0)
