import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from owssl.numerics import RngStream, entropy
from owssl.uncertainty import (
    UncertaintyConfig,
    UncertaintyStore,
    mc_variance,
    normalize_and_clip,
    population_variance,
    reduce_uncertainty,
    uncertainty_softmax,
)


def scalar_variance(draws):
    T = len(draws)
    mean = sum(draws) / T
    return sum((d - mean) ** 2 for d in draws) / T


class TestVariance:
    def test_matches_scalar_oracle(self):
        rng = np.random.default_rng(0)
        P = rng.dirichlet(np.ones(5), size=(10, 7))
        var = population_variance(P)
        for i in range(7):
            for c in range(5):
                assert abs(var[i, c] - scalar_variance(P[:, i, c].tolist())) < 1e-12

    def test_identical_draws_zero(self):
        P = np.tile([0.2, 0.8], (4, 1))
        np.testing.assert_array_equal(population_variance(P), 0.0)

    def test_two_one_hots(self):
        np.testing.assert_allclose(population_variance([[1.0, 0.0], [0.0, 1.0]]), [0.25, 0.25])

    def test_needs_two_draws(self):
        with pytest.raises(ValueError):
            population_variance([[0.5, 0.5]])

    def test_rejects_non_distributions(self):
        with pytest.raises(ValueError):
            population_variance([[0.5, 0.6], [0.5, 0.5]])

    def test_mc_variance_deterministic_augmenter(self):
        x = np.array([[1.0, 2.0]])
        out = mc_variance(lambda v: np.tile([0.3, 0.7], (len(v), 1)), x,
                          lambda v, r: v, UncertaintyConfig(), RngStream(0))
        np.testing.assert_allclose(out, 0.0, atol=1e-30)

    def test_mc_variance_uses_fresh_streams(self):
        seen = []

        def aug(v, r):
            seen.append(r)
            return v

        mc_variance(lambda v: np.array([[0.5, 0.5]]), np.zeros((1, 1)), aug,
                    UncertaintyConfig(mc_samples=4), RngStream(3))
        assert len(set(seen)) == 4


class TestReduce:
    var = np.array([[0.1, 0.4, 0.1], [0.0, 0.0, 0.3]])

    def test_mean(self):
        np.testing.assert_allclose(reduce_uncertainty(self.var), [0.2, 0.1])

    def test_max(self):
        np.testing.assert_allclose(reduce_uncertainty(self.var, "max"), [0.4, 0.3])

    def test_predicted(self):
        mean_pred = np.array([[0.9, 0.05, 0.05], [0.1, 0.8, 0.1]])
        np.testing.assert_allclose(reduce_uncertainty(self.var, "predicted", mean_pred), [0.1, 0.0])

    def test_unknown(self):
        with pytest.raises(ValueError):
            reduce_uncertainty(self.var, "median")


class TestNormalizeClip:
    def test_bounds(self):
        out = normalize_and_clip(np.array([0.0, 0.01, 0.5, 2.0]))
        np.testing.assert_allclose(out, [0.1, 0.1, 0.25, 1.0])

    def test_all_zero(self):
        np.testing.assert_array_equal(normalize_and_clip(np.zeros(3)), 0.1)

    @given(st.lists(st.floats(0.0, 1e6), min_size=1, max_size=50).filter(lambda v: max(v) > 0))
    def test_max_one_min_floor(self, raw):
        out = normalize_and_clip(np.array(raw))
        assert out.max() == 1.0
        assert out.min() >= 0.1

    def test_rejects_negative(self):
        with pytest.raises(ValueError):
            normalize_and_clip(np.array([-1.0, 1.0]))


class TestTemperatureSoftmax:
    @settings(max_examples=100)
    @given(st.integers(0, 2**32 - 1))
    def test_entropy_monotone_and_argmax_fixed(self, seed):
        z = np.random.default_rng(seed).normal(size=6)
        grid = np.linspace(0.1, 1.0, 10)
        probs = [uncertainty_softmax(z, u) for u in grid]
        ents = [entropy(p) for p in probs]
        assert all(b >= a - 1e-12 for a, b in zip(ents, ents[1:]))
        assert {int(p.argmax()) for p in probs} == {int(z.argmax())}

    def test_rejects_zero(self):
        with pytest.raises(ValueError):
            uncertainty_softmax(np.zeros(3), 0.0)


def test_store_initial():
    s = UncertaintyStore.initial(3, 5, 0.1)
    np.testing.assert_array_equal(s.labeled, 0.1)
    assert s.unlabeled.shape == (5,)


@pytest.mark.parametrize("kw", [dict(mc_samples=1), dict(clip_lo=0.0), dict(clip_lo=1.0),
                                dict(reduction="sum")])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        UncertaintyConfig(**kw)
