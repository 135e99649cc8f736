import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lorenzlab.errors import CriticalPointEval, NoiseOutOfRange, OutOfBranchRange
from lorenzlab.maps import (
    CANON,
    MapParams,
    critical_values,
    finite_difference_schwarzian,
    schwarzian,
    summability_stats,
)


class TestMapParams:
    def test_eval_fixed_endpoints(self):
        assert CANON.eval(0.0) == 0.0
        assert CANON.eval(1.0) == 1.0

    def test_eval_closed_form_left(self):
        assert CANON.eval(0.25) == pytest.approx(0.675, abs=1e-15)

    def test_eval_closed_form_right(self):
        assert CANON.eval(0.75) == pytest.approx(0.325, abs=1e-15)

    def test_eval_at_critical_raises(self):
        with pytest.raises(CriticalPointEval):
            CANON.eval(0.5)

    def test_derivative_closed_form(self):
        assert CANON.deriv(0.25) == pytest.approx(1.8, rel=1e-14)
        assert CANON.deriv2(0.25) == pytest.approx(-7.2, rel=1e-14)

    def test_derivative_vanishes_at_critical(self):
        for x in (0.5 - 1e-4, 0.5 - 1e-6, 0.5 - 1e-8):
            assert CANON.deriv(x) < CANON.deriv(x - 1e-3)
        assert CANON.deriv(0.5 - 1e-8) < 1e-7

    def test_critical_values_canon(self):
        assert critical_values(CANON) == pytest.approx((0.1, 0.9))

    def test_critical_values_other(self):
        params = MapParams(c=0.4, ell=3.0, u=0.8, v=0.7)
        assert critical_values(params) == pytest.approx((0.3, 0.8))

    def test_trivial_map_rejected(self):
        with pytest.raises(ValueError):
            MapParams(c=0.5, ell=2.0, u=0.5, v=0.9)  # u == c
        with pytest.raises(ValueError):
            MapParams(c=0.5, ell=2.0, u=0.3, v=0.9)

    def test_trivial_map_escape_hatch(self):
        params = MapParams(c=0.5, ell=2.0, u=0.2, v=0.9, allow_trivial=True)
        assert params.c1_minus == 0.2

    def test_parameter_validation(self):
        with pytest.raises(ValueError):
            MapParams(c=0.0, ell=2.0, u=0.9, v=0.9)
        with pytest.raises(ValueError):
            MapParams(c=0.5, ell=1.0, u=0.9, v=0.9)
        with pytest.raises(ValueError):
            MapParams(c=0.5, ell=2.0, u=1.2, v=0.9)


class TestInverseBranch:
    def test_inverts_eval_example(self, family):
        assert family.inverse_branch(0.0, 0.675, "left") == pytest.approx(0.25, abs=1e-13)

    def test_critical_value_pulls_back_to_c(self, family):
        assert family.inverse_branch(0.0, 0.9, "left") == pytest.approx(0.5, abs=1e-13)

    def test_below_right_image_has_no_preimage(self, family):
        assert family.inverse_branch(0.0, 0.05, "right") is None

    def test_outside_unit_interval_raises(self, family):
        with pytest.raises(OutOfBranchRange):
            family.inverse_branch(0.0, 1.5, "left")

    @settings(max_examples=60, deadline=None)
    @given(
        y=st.floats(min_value=1e-6, max_value=1.0 - 1e-6),
        t=st.floats(min_value=-0.05, max_value=0.05),
        side=st.sampled_from(["left", "right"]),
    )
    def test_round_trip(self, family, y, t, side):
        x = family.inverse_branch(t, y, side)
        if x is not None:
            assert family.eval(t, x) == pytest.approx(y, abs=1e-11)

    def test_round_trip_dense(self, family, rng):
        for side in ("left", "right"):
            lo, hi = family.branch_range(0.0, side)
            ys = rng.uniform(lo + 1e-9, hi - 1e-9, 10_000)
            xs = np.array([family.inverse_branch(0.0, float(y), side) for y in ys])
            back = family.eval_vec(0.0, xs)
            assert np.max(np.abs(back - ys)) <= 1e-11

    def test_round_trip_with_noise_in_taper_zone(self, family):
        t = 0.05
        for y in (0.01, 0.05, 0.12):
            x = family.inverse_branch(t, y, "left")
            assert x is not None
            assert family.eval(t, x) == pytest.approx(y, abs=1e-11)


class TestPerturbedFamily:
    def test_eps_max_positive_and_margin(self, family):
        assert 0.0 < family.eps_max < 0.1
        # margin factor keeps the range constraint strict
        assert family.eps_max <= 0.9 * min(1.0 - CANON.u, 1.0 - CANON.v) + 1e-12

    def test_noise_out_of_range(self, family):
        with pytest.raises(NoiseOutOfRange):
            family.eval(family.eps_max * 1.5, 0.25)

    def test_additive_on_core(self, family):
        t = 0.01
        assert family.eval(t, 0.3) == pytest.approx(CANON.eval(0.3) + t, abs=1e-15)

    def test_critical_point_fixed_for_all_t(self, family):
        # taper slope vanishes around c, so branch limits shift rigidly
        for t in (-0.02, 0.0, 0.02):
            cp, cm = family.critical_values(t)
            assert cm == pytest.approx(0.9 + t, abs=1e-15)
            assert cp == pytest.approx(0.1 + t, abs=1e-15)

    def test_c2_lipschitz_in_noise(self, family, rng):
        # |f_t - f_s| <= |t - s| because the taper is bounded by 1
        xs = rng.uniform(1e-6, 1.0 - 1e-6, 2000)
        for t, s in ((0.02, -0.015), (0.05, 0.049), (-0.03, 0.01)):
            diff = np.abs(family.eval_vec(t, xs) - family.eval_vec(s, xs)) / abs(t - s)
            assert diff.max() <= 1.0 + 1e-12

    def test_branch_monotonicity_under_noise(self, family):
        for t in (-family.eps_max, family.eps_max):
            for side in ("left", "right"):
                lo, hi = family.branch_domain(side)
                grid = np.linspace(lo + 1e-12, hi - 1e-12, 10_000)
                assert np.all(np.diff(family.eval_vec(t, grid)) > 0.0)

    def test_endpoint_multipliers_repelling(self, family):
        m0, m1 = family.endpoint_multipliers()
        assert m0 > CANON.ell > 1.0
        assert m1 > CANON.ell > 1.0

    def test_derivatives_include_taper(self, family):
        x, t = 0.02, 0.01  # inside the left taper zone
        d1, d2 = family.derivatives(t, x)
        assert d1 == pytest.approx(CANON.deriv(x) + t * family.taper_d(x), rel=1e-12)
        assert d2 == pytest.approx(CANON.deriv2(x) + t * family.taper_d2(x), rel=1e-12)


class TestSchwarzian:
    def test_closed_form_value(self):
        assert schwarzian(CANON, 0.25) == pytest.approx(-24.0, rel=1e-13)

    def test_negative_everywhere(self, rng):
        xs = rng.uniform(1e-4, 1 - 1e-4, 500)
        xs = xs[np.abs(xs - 0.5) > 1e-4]
        vals = np.array([schwarzian(CANON, float(x)) for x in xs])
        assert np.all(vals < 0.0)

    def test_matches_quadratic_identity(self):
        # for ell = 2 the third derivative vanishes
        for x in (0.1, 0.3, 0.77):
            expected = -1.5 * (CANON.deriv2(x) / CANON.deriv(x)) ** 2
            assert schwarzian(CANON, x) == pytest.approx(expected, rel=1e-12)

    def test_matches_finite_differences_cubic_order(self):
        params = MapParams(c=0.5, ell=3.0, u=0.9, v=0.9)
        for x in (0.2, 0.35, 0.7, 0.85):
            fd = finite_difference_schwarzian(params, x)
            assert schwarzian(params, x) == pytest.approx(fd, rel=1e-6)


class TestSummability:
    def test_first_partial_sum(self):
        stats = summability_stats(CANON, CANON.c1_minus, 1)
        assert stats["S_N"] == pytest.approx(1.0)

    def test_canon_baseline_regression(self):
        stats = summability_stats(CANON, CANON.c1_minus, 1000)
        # frozen regression values from the deterministic orbit computation
        assert stats["S_N"] == pytest.approx(2.4876655113854342, rel=1e-12)
        assert stats["tail_min_dfn"] > 1e30
        assert not stats["ld_flag"]
        assert stats["growing"]

    def test_attracting_fixed_point_flags_failure(self):
        trivial = MapParams(c=0.5, ell=2.0, u=0.2, v=0.9, allow_trivial=True)
        stats = summability_stats(trivial, trivial.c1_minus, 300)
        assert stats["tail_min_dfn"] < 1.0
        assert stats["ld_flag"]
