import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from owssl.sinkhorn import (
    AssignmentMatrix,
    ClassPrior,
    SinkhornConfig,
    estimate_permutation,
    mixed_pseudo_labels,
    sinkhorn_assign,
    transport_objective,
)


def scalar_sinkhorn(Y, row, col, lam, tol=1e-12, max_iter=100_000):
    """Independent pure-Python fixed-point iteration on (Y/N)^lam."""
    N, C = len(Y), len(Y[0])
    K = [[(Y[i][j] / N) ** lam for j in range(C)] for i in range(N)]
    m = [1.0] * N
    n = [1.0] * C
    for _ in range(max_iter):
        m = [row[i] / sum(K[i][j] * n[j] for j in range(C)) for i in range(N)]
        n = [col[j] / sum(K[i][j] * m[i] for i in range(N)) for j in range(C)]
        A = [[m[i] * K[i][j] * n[j] for j in range(C)] for i in range(N)]
        resid = max(abs(sum(A[i]) - row[i]) for i in range(N))
        if resid < tol:
            break
    return A


def random_instance(rng, N, C):
    Y = rng.dirichlet(np.ones(C), size=N)
    seen = int(rng.integers(0, C + 1))
    prior = ClassPrior(rng.dirichlet(np.ones(C)), seen, C - seen)
    return Y, prior


class TestPrior:
    def test_rejects_bad_sum(self):
        with pytest.raises(ValueError):
            ClassPrior(np.array([0.5, 0.6]), 1, 1)

    def test_rejects_length_mismatch(self):
        with pytest.raises(ValueError):
            ClassPrior(np.array([0.5, 0.5]), 1, 2)

    def test_balanced(self):
        p = ClassPrior.balanced(2, 3)
        np.testing.assert_allclose(p.fractions, 0.2)


class TestEstimatePermutation:
    def test_balanced_prior_identity(self):
        rng = np.random.default_rng(0)
        Y = rng.dirichlet(np.ones(6), size=20)
        np.testing.assert_array_equal(estimate_permutation(Y, ClassPrior.balanced(3, 3)),
                                      np.arange(6))

    def test_single_novel_identity(self):
        Y = np.full((3, 3), 1 / 3)
        prior = ClassPrior(np.array([0.2, 0.3, 0.5]), 2, 1)
        np.testing.assert_array_equal(estimate_permutation(Y, prior), [0, 1, 2])

    def test_rank_matching_minimizes_transport_cost(self):
        # novel marginals 0.1 (col 2) and 0.325 (col 3); novel priors 0.25 (idx 2), 0.08 (idx 3)
        Y = np.array([[0.30, 0.30, 0.05, 0.35],
                      [0.30, 0.20, 0.15, 0.35],
                      [0.40, 0.30, 0.10, 0.20],
                      [0.25, 0.25, 0.10, 0.40]])
        prior = ClassPrior(np.array([0.335, 0.335, 0.25, 0.08]), 2, 2)
        perm = estimate_permutation(Y, prior)
        np.testing.assert_array_equal(perm, [0, 1, 3, 2])
        cfg = SinkhornConfig(lam=1.0, iterations=2000)
        costs = {}
        for tail in itertools.permutations([2, 3]):
            p = np.array([0, 1, *tail])
            costs[tuple(p)] = transport_objective(
                sinkhorn_assign(Y, prior, cfg, permutation=p).A, Y)
        assert min(costs, key=costs.get) == tuple(perm)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            estimate_permutation(np.ones((2, 3)) / 3, ClassPrior.balanced(2, 2))

    @settings(max_examples=50)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 12), st.integers(1, 40))
    def test_always_bijective_and_fixes_seen(self, seed, C, N):
        rng = np.random.default_rng(seed)
        Y, prior = random_instance(rng, N, C)
        perm = estimate_permutation(Y, prior)
        assert sorted(perm.tolist()) == list(range(C))
        np.testing.assert_array_equal(perm[:prior.seen_count], np.arange(prior.seen_count))


class TestSinkhornAssign:
    def test_uniform_symmetric_fixed_point(self):
        Y = np.full((2, 2), 0.5)
        a = sinkhorn_assign(Y, ClassPrior.balanced(1, 1), SinkhornConfig(iterations=200))
        np.testing.assert_allclose(a.A, 0.25, atol=1e-15)

    def test_degenerate_marginal(self):
        Y = np.array([[0.3, 0.7], [0.9, 0.1]])
        prior = ClassPrior(np.array([1.0, 0.0]), 1, 1)
        a = sinkhorn_assign(Y, prior, SinkhornConfig(iterations=200))
        np.testing.assert_allclose(a.A, [[0.5, 0.0], [0.5, 0.0]], atol=1e-12)

    def test_two_by_two_against_scalar_oracle(self):
        Y = np.array([[0.9, 0.1], [0.4, 0.6]])
        prior = ClassPrior.balanced(1, 1)
        a = sinkhorn_assign(Y, prior, SinkhornConfig(lam=1.0, iterations=200))
        np.testing.assert_allclose(a.A.sum(axis=0), [0.5, 0.5], atol=1e-6)
        np.testing.assert_allclose(a.A.sum(axis=1), [0.5, 0.5], atol=1e-6)
        assert a.A[0].argmax() == 0 and a.A[1].argmax() == 1
        oracle = scalar_sinkhorn(Y.tolist(), [0.5, 0.5], [0.5, 0.5], 1.0)
        np.testing.assert_allclose(a.A, oracle, atol=1e-9)

    @pytest.mark.parametrize("entropic", [False, True])
    def test_matches_scalar_oracle_random(self, entropic):
        rng = np.random.default_rng(3)
        Y, prior = random_instance(rng, 6, 4)
        cfg = SinkhornConfig(lam=0.5, iterations=3000, entropic=entropic)
        a = sinkhorn_assign(Y, prior, cfg)
        oracle = scalar_sinkhorn(Y.tolist(), [1 / 6] * 6,
                                 prior.fractions[a.permutation].tolist(), cfg.exponent)
        np.testing.assert_allclose(a.A, oracle, atol=1e-9)

    def test_zero_entries_are_clamped(self):
        Y = np.array([[1.0, 0.0], [0.0, 1.0]])
        a = sinkhorn_assign(Y, ClassPrior.balanced(1, 1), SinkhornConfig(lam=1.0, iterations=10))
        assert np.all(np.isfinite(a.A)) and np.all(a.A >= 0)
        np.testing.assert_allclose(a.A.sum(), 1.0)

    def test_three_iteration_plan_is_joint_probability(self):
        rng = np.random.default_rng(4)
        Y, prior = random_instance(rng, 64, 8)
        a = sinkhorn_assign(Y, prior, SinkhornConfig())
        assert np.all(a.A > 0)
        assert abs(a.A.sum() - 1.0) < 1e-6

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 512), st.integers(1, 32),
           st.sampled_from([0.05, 1.0]))
    def test_feasibility_at_convergence(self, seed, N, C, lam):
        rng = np.random.default_rng(seed)
        Y, prior = random_instance(rng, N, C)
        a = sinkhorn_assign(Y, prior, SinkhornConfig(lam=lam, iterations=200))
        assert np.all(np.abs(a.A.sum(axis=0) - a.column_targets(prior)) < 1e-3)
        assert np.all(np.abs(a.A.sum(axis=1) - 1.0 / N) < 1e-3)

    def test_row_order_equivariance(self):
        rng = np.random.default_rng(5)
        Y, prior = random_instance(rng, 50, 6)
        order = rng.permutation(50)
        cfg = SinkhornConfig(iterations=50)
        a = sinkhorn_assign(Y, prior, cfg)
        b = sinkhorn_assign(Y[order], prior, cfg)
        np.testing.assert_allclose(b.A, a.A[order], atol=1e-9)

    def test_uniform_prediction_uniform_prior_exactly_uniform(self):
        Y = np.full((8, 4), 0.25)
        a = sinkhorn_assign(Y, ClassPrior.balanced(2, 2), SinkhornConfig())
        np.testing.assert_allclose(a.A, 1 / 32, rtol=1e-14)

    def test_nan_reports_iteration(self):
        Y = np.array([[1.0, 0.0], [1.0, 0.0]])
        # exponent 1/1e-3 underflows the whole second column
        with pytest.raises(FloatingPointError, match="iteration 0"):
            sinkhorn_assign(Y, ClassPrior.balanced(1, 1),
                            SinkhornConfig(lam=1e-3, entropic=True))


class TestMixedPseudoLabels:
    prior = ClassPrior(np.array([0.3, 0.3, 0.4]), 2, 1)

    def labels_for(self, row):
        a = AssignmentMatrix(A=np.array([row]) / 7.0, permutation=np.arange(3))
        return mixed_pseudo_labels(a, self.prior, SinkhornConfig())

    def test_confident_novel_hardened(self):
        out = self.labels_for([0.1, 0.2, 0.7])
        np.testing.assert_array_equal(out.labels[0], [0, 0, 1])
        assert out.is_hard[0]

    def test_seen_argmax_stays_soft(self):
        out = self.labels_for([0.6, 0.3, 0.1])
        np.testing.assert_allclose(out.labels[0], [0.6, 0.3, 0.1])
        assert not out.is_hard[0]

    def test_below_threshold_stays_soft(self):
        out = self.labels_for([0.3, 0.3, 0.4])
        np.testing.assert_allclose(out.labels[0], [0.3, 0.3, 0.4])
        assert not out.is_hard[0]

    def test_rows_are_conditionals(self):
        rng = np.random.default_rng(6)
        Y, prior = random_instance(rng, 40, 5)
        a = sinkhorn_assign(Y, prior, SinkhornConfig())
        out = mixed_pseudo_labels(a, prior, SinkhornConfig())
        np.testing.assert_allclose(out.labels.sum(axis=1), 1.0, atol=1e-12)
        soft = a.A / a.A.sum(axis=1, keepdims=True)
        np.testing.assert_allclose(out.labels[~out.is_hard], soft[~out.is_hard])
        hard = out.labels[out.is_hard]
        assert np.all((hard == 0) | (hard == 1))
        assert np.all(hard.argmax(axis=1) >= prior.seen_count)
