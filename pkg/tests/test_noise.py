import numpy as np
import pytest
from scipy import stats as sps

from lorenzlab.errors import CriticalHit
from lorenzlab.maps import CANON
from lorenzlab.noise import (
    NoiseModel,
    exact_uniform_kernel_mass,
    kernel_regularity_check,
    sample_omega,
    skew_step,
)


class TestSampling:
    def test_empty_prefix(self, model):
        assert len(sample_omega(model, 0, 0)) == 0

    def test_large_sample_moments_and_range(self):
        m = NoiseModel(eps=0.01, seed=7)
        draws = sample_omega(m, 3, 10**6)
        sigma = 0.01 / np.sqrt(3.0)  # std of U(-eps, eps)
        assert abs(draws.mean()) <= 3.0 * sigma / np.sqrt(len(draws))
        assert draws.min() >= -0.01 and draws.max() <= 0.01

    def test_determinism_per_stream(self, model):
        a = sample_omega(model, 9, 1000)
        b = sample_omega(model, 9, 1000)
        assert np.array_equal(a, b)
        c = sample_omega(model, 10, 1000)
        assert not np.array_equal(a, c)

    def test_prefix_independent_of_request_pattern(self, model):
        s1 = model.stream(4)
        first = s1.prefix(10).copy()
        s2 = model.stream(4)
        long = s2.prefix(10_000)
        assert np.array_equal(first, long[:10])

    def test_shift_reproduces_tail(self, model):
        s = model.stream(6)
        full = s.prefix(50)
        shifted = s.shift(20)
        assert np.array_equal(shifted.prefix(30), full[20:])

    def test_triangular_support(self):
        m = NoiseModel(eps=0.02, kind="triangular", seed=1)
        draws = sample_omega(m, 0, 10**5)
        assert draws.min() >= -0.02 and draws.max() <= 0.02
        # triangular variance = eps^2/6
        assert np.var(draws) == pytest.approx(0.02**2 / 6.0, rel=0.05)

    def test_quadrature_weights_normalised(self):
        for kind in ("uniform", "triangular"):
            m = NoiseModel(eps=0.01, kind=kind, seed=0)
            nodes, weights = m.quadrature(32)
            assert weights.sum() == pytest.approx(1.0, abs=1e-12)
            assert np.all(np.abs(nodes) <= 0.01)


class TestSkewProduct:
    def test_zero_steps_identity(self, family, model):
        y, shifted = skew_step(family, model, 0.3, model.stream(0), 0)
        assert y == 0.3
        assert shifted.value(0) == model.stream(0).value(0)

    def test_single_step_zero_noise_is_base_map(self, family, model):
        y, _ = skew_step(family, model, 0.3, np.zeros(1), 1)
        assert y == pytest.approx(CANON.eval(0.3), abs=1e-15)

    def test_semigroup_property_bitwise(self, family, model):
        stream = model.stream(11)
        y2, s2 = skew_step(family, model, 0.3, stream, 2)
        y1, s1 = skew_step(family, model, 0.3, stream, 1)
        y12, s12 = skew_step(family, model, y1, s1, 1)
        assert y2 == y12
        assert s2.value(0) == s12.value(0)

    def test_critical_hit_propagates(self, family, model):
        with pytest.raises(CriticalHit):
            skew_step(family, model, 0.5 + 1e-16, np.zeros(3), 3)


class TestKernel:
    def test_core_kernel_exact_formula(self, family):
        m = NoiseModel(eps=0.01, seed=3)
        x = 0.3
        fx = CANON.eval(x)
        a, b = fx - 0.004, fx + 0.002
        exact = exact_uniform_kernel_mass(family, m, x, a, b)
        assert exact == pytest.approx(0.006 / 0.02, rel=1e-12)
        draws = m.stream(0).prefix(200_000)
        emp = np.mean((family.eval_vec(draws, np.full(len(draws), x)) > a)
                      & (family.eval_vec(draws, np.full(len(draws), x)) < b))
        assert emp == pytest.approx(exact, abs=5e-3)

    def test_kernel_mass_is_one(self, family):
        m = NoiseModel(eps=0.01, seed=3)
        assert exact_uniform_kernel_mass(family, m, 0.3, 0.0, 1.0) == pytest.approx(1.0)

    def test_wide_sets_trivially_bounded(self):
        # |A| >= 2 eps makes the regularity bound at least 1 >= any probability
        L = 2.0
        for ratio in (1.0, 1.5, 4.0):
            assert L * ratio ** (1.0 / L) >= 1.0

    def test_regularity_report_clean_on_core(self, family):
        m = NoiseModel(eps=0.01, L=2.0, seed=5)
        rep = kernel_regularity_check(family, m, n_pairs=200, n_draws=2000)
        assert rep["confirmed_violations"] == 0
        assert rep["worst_ratio"] < 1.0

    def test_taper_zone_dilates_kernel(self, family):
        # where the taper is below 1 the same noise moves the image less,
        # concentrating mass: the uniform-core density bound can be exceeded
        m = NoiseModel(eps=0.01, seed=3)
        x = 0.02  # taper value well below 1
        w = family.taper(x)
        assert w < 0.5
        draws = m.stream(1).prefix(100_000)
        vals = family.eval_vec(draws, np.full(len(draws), x))
        width = vals.max() - vals.min()
        assert width == pytest.approx(2 * 0.01 * w, rel=0.05)

    def test_empirical_kernel_uniform_on_core(self, family):
        # Kolmogorov-Smirnov against the exact uniform law on [f(x)-eps, f(x)+eps]
        m = NoiseModel(eps=0.01, seed=9)
        x = 0.35
        fx = CANON.eval(x)
        draws = m.stream(2).prefix(100_000)
        vals = family.eval_vec(draws, np.full(len(draws), x))
        res = sps.kstest(vals, sps.uniform(loc=fx - 0.01, scale=0.02).cdf)
        assert res.pvalue > 0.01
