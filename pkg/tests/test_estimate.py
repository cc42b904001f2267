import numpy as np
import pytest

from owssl.data import DatasetSpec, generate
from owssl.estimate import (
    EstimatorConfig,
    KmeansResult,
    estimate_class_count,
    kmeans,
    labeled_cluster_score,
)
from owssl.numerics import RngStream


def blobs(k=4, per=30, seed=0, sep=20.0):
    rng = np.random.default_rng(seed)
    means = rng.normal(size=(k, 2)) * sep
    X = np.concatenate([m + rng.normal(size=(per, 2)) for m in means])
    return X, np.repeat(np.arange(k), per)


class TestKmeans:
    def test_k_equals_n_zero_inertia(self):
        X = np.random.default_rng(0).normal(size=(12, 3))
        r = kmeans(X, 12, RngStream(0))
        assert r.inertia == pytest.approx(0.0, abs=1e-20)

    def test_k_one_is_mean(self):
        X = np.random.default_rng(1).normal(size=(50, 3))
        r = kmeans(X, 1, RngStream(0))
        np.testing.assert_allclose(r.centers[0], X.mean(0))
        assert r.inertia == pytest.approx(((X - X.mean(0)) ** 2).sum())

    def test_recovers_separated_blobs(self):
        X, y = blobs()
        r = kmeans(X, 4, RngStream(2))
        for c in range(4):
            assert len(set(r.assignments[y == c].tolist())) == 1

    def test_inertia_non_increasing(self):
        X = np.random.default_rng(3).normal(size=(300, 4))
        h = kmeans(X, 7, RngStream(1)).inertia_history
        assert all(b <= a + 1e-9 for a, b in zip(h, h[1:]))

    def test_reproducible(self):
        X = np.random.default_rng(4).normal(size=(100, 2))
        a, b = kmeans(X, 5, RngStream(9)), kmeans(X, 5, RngStream(9))
        np.testing.assert_array_equal(a.centers, b.centers)

    def test_duplicate_points(self):
        X = np.zeros((10, 2))
        r = kmeans(X, 3, RngStream(0))
        assert np.all(np.isfinite(r.centers))

    @pytest.mark.parametrize("k", [0, 11])
    def test_bad_k(self, k):
        with pytest.raises(ValueError):
            kmeans(np.zeros((10, 2)), k)


class TestLabeledScore:
    X = np.array([[0.0], [1.0], [10.0], [11.0], [5.0]])

    def result(self, assign, centers):
        return KmeansResult(np.array(centers, dtype=float)[:, None], np.array(assign), 0.0)

    def test_perfect(self):
        r = self.result([0, 0, 1, 1, 1], [0.5, 10.5])
        assert labeled_cluster_score(r, self.X, [0, 1, 2, 3], [0, 0, 1, 1]) == 1.0

    def test_reassignment_recovers_stray(self):
        # sample 1 sits in a third cluster; its nearest dominant center is class 0's
        r = self.result([0, 2, 1, 1, 1], [0.0, 10.5, 1.0])
        idx, gt = [0, 1, 2, 3], [0, 0, 1, 1]
        assert labeled_cluster_score(r, self.X, idx, gt, reassign=False) == 0.75
        assert labeled_cluster_score(r, self.X, idx, gt, reassign=True) == 1.0

    def test_too_few_clusters(self):
        r = self.result([0, 0, 0, 0, 0], [5.0])
        with pytest.raises(ValueError):
            labeled_cluster_score(r, self.X, [0, 2], [0, 1])


class TestEstimate:
    def test_reassign_never_worse(self):
        ds = generate(DatasetSpec(num_seen=3, num_novel=3, samples_per_class=60, seed=2))
        X = np.concatenate([ds.X_l, ds.X_u])
        idx = np.arange(len(ds.X_l))
        for k in (4, 6, 9):
            r = kmeans(X, k, RngStream(k))
            assert (labeled_cluster_score(r, X, idx, ds.y_l, True)
                    >= labeled_cluster_score(r, X, idx, ds.y_l, False))

    def test_result_fields_and_table(self, tmp_path):
        X, y = blobs(k=3, per=20)
        idx = np.arange(0, 60, 3)
        cfg = EstimatorConfig(k_min=3, k_max=7, runs_per_k=1, top_values=2)
        res = estimate_class_count(X, idx, y[idx], cfg)
        assert len(res.top_ks) == 2 and res.estimate in range(3, 8)
        res.write_table(tmp_path / "t.csv")
        rows = (tmp_path / "t.csv").read_text().splitlines()
        assert rows[0] == "k,score,in_top" and len(rows) == 6

    def test_config_validation(self):
        with pytest.raises(ValueError):
            EstimatorConfig(k_min=5, k_max=4)
