import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from protosim.metrics import (bootstrap_jsd_ci, exact_match, jsd,
                              label_distribution, wilson_interval)


def simplex(draw_weights):
    w = np.asarray(draw_weights, dtype=float) + 1e-12
    return w / w.sum()


# independent JSD oracle: direct KL evaluation with explicit 0*log0 handling
def jsd_oracle(p, q):
    p = np.asarray(p, float)
    q = np.asarray(q, float)
    m = (p + q) / 2

    def klterm(a, b):
        total = 0.0
        for ai, bi in zip(a, b):
            if ai > 0:
                total += ai * np.log2(ai / bi)
        return total

    return 0.5 * klterm(p, m) + 0.5 * klterm(q, m)


class TestJsd:
    def test_identity(self):
        p = np.array([0.2, 0.3, 0.5])
        assert jsd(p, p) == 0.0

    def test_maximal_disjoint(self):
        assert jsd((1, 0), (0, 1)) == pytest.approx(1.0, abs=1e-12)

    def test_half_vs_point_mass(self):
        # 0.5*KL((.5,.5)||(.75,.25)) + 0.5*KL((1,0)||(.75,.25)) = 0.311278...
        assert jsd((0.5, 0.5), (1, 0)) == pytest.approx(0.3112781244591328, abs=1e-9)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            jsd((0.5, 0.5), (1.0, 0.0, 0.0))

    @given(st.lists(st.floats(0.0, 1.0), min_size=2, max_size=8),
           st.lists(st.floats(0.0, 1.0), min_size=2, max_size=8))
    @settings(max_examples=200, deadline=None)
    def test_symmetry_and_oracle(self, wa, wb):
        k = min(len(wa), len(wb))
        p, q = simplex(wa[:k]), simplex(wb[:k])
        assert jsd(p, q) == pytest.approx(jsd(q, p), abs=1e-12)
        assert jsd(p, q) == pytest.approx(jsd_oracle(p, q), abs=1e-12)
        assert -1e-12 <= jsd(p, q) <= 1.0 + 1e-12

    def test_l1_to_jsd_sanity(self):
        # pairs with tiny L1 distance must have tiny divergence
        rng = np.random.default_rng(0)
        for _ in range(1000):
            p = simplex(rng.random(5))
            delta = rng.normal(scale=1e-7, size=5)
            delta -= delta.mean()
            q = p + delta
            q = np.clip(q, 0, None)
            q = q / q.sum()
            if np.abs(p - q).sum() < 1e-6:
                assert jsd(p, q) < 1e-5


class TestExactMatch:
    def test_identical(self):
        assert exact_match([1, 2, 3], [1, 2, 3]) == 1.0

    def test_complementary(self):
        assert exact_match([0, 0, 1, 1], [1, 1, 0, 0]) == 0.0

    def test_three_of_four(self):
        assert exact_match([1, 2, 3, 4], [1, 2, 3, 0]) == 0.75

    def test_misaligned(self):
        with pytest.raises(ValueError):
            exact_match([1, 2], [1, 2, 3])


class TestWilson:
    def test_zero_successes_lower_bound(self):
        low, _ = wilson_interval(0, 25)
        assert low == 0.0

    def test_half(self):
        low, high = wilson_interval(50, 100, 0.95)
        assert low == pytest.approx(0.4038, abs=1e-4)
        assert high == pytest.approx(0.5962, abs=1e-4)

    @given(st.integers(0, 200), st.integers(1, 200))
    @settings(max_examples=200, deadline=None)
    def test_contained_in_unit_interval(self, successes, trials):
        successes = min(successes, trials)
        low, high = wilson_interval(successes, trials)
        assert 0.0 <= low <= high <= 1.0

    def test_invalid(self):
        with pytest.raises(ValueError):
            wilson_interval(5, 0)


class TestBootstrap:
    def test_identical_pairs_zero_interval(self):
        labels = np.array([0, 1, 2, 1, 0] * 20)
        low, high = bootstrap_jsd_ci(labels, labels, 3, resamples=200)
        assert (low, high) == (0.0, 0.0)

    def test_deterministic_per_seed(self):
        rng = np.random.default_rng(3)
        a = rng.integers(0, 4, 200)
        b = rng.integers(0, 4, 200)
        first = bootstrap_jsd_ci(a, b, 4, resamples=300, seed=11)
        second = bootstrap_jsd_ci(a, b, 4, resamples=300, seed=11)
        assert first == second

    def test_contains_point_estimate(self):
        rng = np.random.default_rng(4)
        a = rng.integers(0, 3, 500)
        b = np.where(rng.random(500) < 0.8, a, rng.integers(0, 3, 500))
        point = jsd(label_distribution(a, 3), label_distribution(b, 3))
        low, high = bootstrap_jsd_ci(a, b, 3, resamples=1000, seed=5)
        assert low <= point <= high

    def test_minimum_resamples(self):
        with pytest.raises(ValueError):
            bootstrap_jsd_ci([0, 1], [0, 1], 2, resamples=10)
