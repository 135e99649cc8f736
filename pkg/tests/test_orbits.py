import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lorenzlab.maps import CANON
from lorenzlab.orbits import random_orbit


class TestRandomOrbit:
    def test_single_step_example(self, family):
        rec = random_orbit(family, 0.25, [0.0], 1)
        assert rec.points.tolist() == pytest.approx([0.25, 0.675])
        assert rec.d1.tolist() == pytest.approx([1.0, 1.8])

    def test_empty_composition(self, family):
        rec = random_orbit(family, 0.3, [], 0)
        assert rec.points.tolist() == [0.3]
        assert rec.d1.tolist() == [1.0]
        assert rec.asum.tolist() == [0.0]
        assert rec.d2.tolist() == [0.0]

    def test_first_distortion_term(self, family):
        rec = random_orbit(family, 0.25, [0.0], 1)
        assert rec.asum[1] == pytest.approx(4.0)  # 1/d(0.25, 0.5)

    def test_critical_hit_truncates(self, family):
        rec = random_orbit(family, 0.5 + 1e-16, np.zeros(5), 5)
        assert rec.hit_critical
        assert rec.hit_index == 0
        assert len(rec.points) == 1

    def test_noise_prefix_too_short(self, family):
        with pytest.raises(ValueError):
            random_orbit(family, 0.25, [0.0], 3)

    @settings(max_examples=40, deadline=None)
    @given(
        x0=st.floats(min_value=0.05, max_value=0.95),
        seed=st.integers(min_value=0, max_value=10_000),
        n=st.integers(min_value=1, max_value=40),
    )
    def test_asum_monotone_and_first_term_bound(self, family, model, x0, seed, n):
        om = model.stream(seed).prefix(n)
        rec = random_orbit(family, x0, om, n)
        if rec.hit_critical or rec.n < 1:
            return
        assert np.all(np.diff(rec.asum) >= 0.0)
        assert rec.asum[1] >= 1.0 / abs(x0 - CANON.c) - 1e-9

    def test_chain_rule_against_stepwise_products(self, family, model):
        n = 25
        om = model.stream(77).prefix(n)
        rec = random_orbit(family, 0.31, om, n)
        prod = 1.0
        for i in range(rec.n):
            d1, _ = family.derivatives(float(om[i]), rec.points[i])
            prod *= d1
        assert rec.d1[rec.n] == pytest.approx(prod, rel=1e-12)

    def test_cocycle_splitting_bitwise(self, family, model):
        n, m = 17, 23
        stream = model.stream(5)
        full = random_orbit(family, 0.27, stream, n + m)
        head = random_orbit(family, 0.27, stream, n)
        tail = random_orbit(family, head.points[-1], stream.shift(n), m)
        assert full.points[n] == head.points[n]
        assert np.array_equal(full.points[n:], tail.points)
