import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import brentq

from lorenzlab.errors import DeltaOutOfRange, EmptyPullback
from lorenzlab.maps import CANON, MapParams
from lorenzlab.recurrence import (
    backward_contraction_check,
    binding_period,
    critical_neighborhood,
    d_star,
    default_scale_grid,
    depth_trace,
    depth_value,
    good_return_or_expansion_time,
    good_return_time,
    landing_time,
    pullback_component,
)

NONLD = MapParams(c=0.5, ell=2.0, u=0.6, v=0.52)


class TestCriticalNeighborhood:
    def test_closed_form_radii(self):
        nb = critical_neighborhood(CANON, 0.009)
        assert nb.left_radius == pytest.approx(0.05, rel=1e-12)
        assert nb.right_radius == pytest.approx(0.05, rel=1e-12)
        assert nb.length == pytest.approx(0.1, rel=1e-12)
        assert nb.expansion_scale == pytest.approx(0.09, rel=1e-12)

    def test_radii_match_numeric_rootfind(self):
        for delta in (0.009, 0.004, 0.0007):
            nb = critical_neighborhood(CANON, delta)
            left = brentq(lambda x: CANON.eval(x) - (CANON.c1_minus - delta), 1e-9, CANON.c - 1e-12)
            right = brentq(lambda x: CANON.eval(x) - (CANON.c1_plus + delta), CANON.c + 1e-12, 1 - 1e-9)
            assert CANON.c - left == pytest.approx(nb.left_radius, abs=1e-10)
            assert right - CANON.c == pytest.approx(nb.right_radius, abs=1e-10)

    def test_membership_definition(self):
        # x is inside exactly when f(x) lies within delta of its side's value
        nb = critical_neighborhood(CANON, 0.009)
        assert nb.contains(0.46)
        assert CANON.c1_minus - CANON.eval(0.46) < 0.009
        assert not nb.contains(0.44)
        assert CANON.c1_minus - CANON.eval(0.44) > 0.009

    def test_radii_shrink_with_delta(self):
        radii = [critical_neighborhood(CANON, d).length for d in (0.01, 0.005, 0.001, 1e-5)]
        assert all(b < a for a, b in zip(radii, radii[1:]))
        assert radii[-1] < 0.01

    def test_monotone_nesting(self):
        big = critical_neighborhood(CANON, 0.01)
        small = critical_neighborhood(CANON, 0.004)
        assert big.lo < small.lo < small.hi < big.hi

    def test_delta_out_of_range(self):
        with pytest.raises(DeltaOutOfRange):
            critical_neighborhood(CANON, 0.95)
        with pytest.raises(DeltaOutOfRange):
            critical_neighborhood(CANON, 0.0)

    def test_d_star_convention(self):
        # inside the reference neighborhood: image distance to the critical values
        x = 0.49
        assert d_star(CANON, x, 0.05) == pytest.approx(CANON.c1_minus - CANON.eval(x), rel=1e-12)
        # outside: the reference scale itself
        assert d_star(CANON, 0.2, 0.05) == 0.05

    def test_reference_scale_derivative_bound(self):
        # Df(x) dominates the expansion scale of d_*(x, c) on the reference window
        nb = critical_neighborhood(CANON, 0.05)
        for x in np.linspace(nb.lo + 1e-6, nb.hi - 1e-6, 201):
            if abs(x - CANON.c) < 1e-6:
                continue
            ds = d_star(CANON, float(x), 0.05)
            scale = critical_neighborhood(CANON, ds).expansion_scale
            assert CANON.deriv(float(x)) >= scale * (1.0 - 1e-9)


class TestStoppingTimes:
    def test_landing_inside_is_zero(self, family, model):
        assert landing_time(family, model, 0.46, model.stream(3), 0.009, 50) == 0

    def test_landing_matches_naive_scan(self, family, model):
        stream = model.stream(3)
        got = landing_time(family, model, 0.25, stream, 0.009, 500)
        nb = critical_neighborhood(CANON, 0.009)
        y = 0.25
        om = stream.prefix(500)
        naive = None
        for s in range(1, 501):
            y = family.eval(float(om[s - 1]), y)
            if nb.contains(y):
                naive = s
                break
        assert got == naive

    def test_horizon_exceeded_returns_none(self, family, model):
        assert landing_time(family, model, 0.25, model.stream(3), 0.009, 3) is None

    def test_good_return_event_contract(self, family, model):
        ev = good_return_time(family, model, 0.25, model.stream(3), 0.009, 2.0, 500)
        assert ev is not None
        assert ev.inequality_holds()
        nb = critical_neighborhood(CANON, 0.009)
        assert ev.nbhd_length == pytest.approx(nb.length)

    def test_event_witnesses_match_orbit_record(self, family, model):
        from lorenzlab.orbits import random_orbit

        ev = good_return_time(family, model, 0.25, model.stream(3), 0.009, 2.0, 500)
        rec = random_orbit(family, 0.25, model.stream(3), ev.time)
        assert math.log(rec.d1[ev.time]) == pytest.approx(ev.log_df, rel=1e-10)
        assert math.log(rec.asum[ev.time]) == pytest.approx(ev.log_asum, rel=1e-10)
        # the defining inequality re-evaluates from raw orbit data
        assert ev.theta * rec.d1[ev.time] >= rec.asum[ev.time] * ev.nbhd_length

    def test_large_theta_reduces_to_landing(self, family, model):
        for k in range(25):
            stream = model.stream(100 + k)
            x = 0.15 + 0.02 * k
            nb = critical_neighborhood(CANON, 0.009)
            if nb.contains(x):
                continue
            land = landing_time(family, model, x, stream, 0.009, 400)
            ev = good_return_time(family, model, x, stream, 0.009, 1000.0, 400)
            got = None if ev is None else ev.time
            assert got == land

    def test_capped_time_tau_scale_kind(self, family, model):
        # enormous tau makes the expansion clause unreachable; tiny tau trips it
        ev = good_return_or_expansion_time(
            family, model, 0.25, model.stream(3), 0.009, 2.0, 1e-9, 500
        )
        assert ev is not None and ev.kind == "tau_scale"
        assert ev.inequality_holds(theta0=0.01)

    def test_grid_refinement_only_decreases_time(self, family, model):
        coarse = default_scale_grid(CANON, 0.009)[::2]
        fine = default_scale_grid(CANON, 0.009)
        for k in range(20):
            stream = model.stream(300 + k)
            a = good_return_or_expansion_time(
                family, model, 0.25, stream, 0.009, 2.0, 1.0, 400, scale_grid=coarse
            )
            b = good_return_or_expansion_time(
                family, model, 0.25, stream, 0.009, 2.0, 1.0, 400, scale_grid=fine
            )
            ta = math.inf if a is None else a.time
            tb = math.inf if b is None else b.time
            assert tb <= ta


class TestDepthTrace:
    def test_depth_zero_when_derivative_large(self, family, model):
        # far from c the product Df * d exceeds eps
        assert depth_value(family, 0.01, 0.0, 0.25) == 0

    def test_depth_positive_near_critical(self, family):
        q = depth_value(family, 0.01, 0.0, CANON.c + 1e-4)
        assert q > 0
        # minimality of q
        df = CANON.deriv(CANON.c + 1e-4)
        d = 1e-4
        assert df * d >= math.exp(-q) * 0.01
        assert df * d < math.exp(-(q - 1)) * 0.01

    def test_nonflatness_depth_display(self, family, model):
        # Df >= O1 (e^{-q} eps / O2)^(1 - 1/ell) for points inside B(eps)
        O1, O2 = CANON.non_flatness_constants()
        eps = 0.01
        nb = critical_neighborhood(CANON, eps)
        for x in np.linspace(nb.lo + 1e-9, nb.hi - 1e-9, 101):
            if abs(x - CANON.c) < 1e-9:
                continue
            q = depth_value(family, eps, 0.0, float(x))
            lhs = CANON.deriv(float(x))
            rhs = O1 * (math.exp(-q) * eps / O2) ** (1.0 - 1.0 / CANON.ell)
            assert lhs >= rhs * (1.0 - 1e-9)

    def test_visit_counter_matches_recount(self, family, model):
        trace = depth_trace(family, model, 0.31, model.stream(5), 0.01, 300)
        nb = critical_neighborhood(CANON, 0.01)
        recount = sum(1 for x in trace.points if nb.contains(float(x)))
        assert trace.visits(0, trace.n) == recount

    @settings(max_examples=30, deadline=None)
    @given(k=st.integers(min_value=0, max_value=199))
    def test_additivity_of_counters(self, family, model, k):
        trace = depth_trace(family, model, 0.31, model.stream(5), 0.01, 200)
        assert trace.Q(0, 200) == trace.Q(0, k) + trace.Q(k + 1, 200)
        assert trace.visits(0, 200) == trace.visits(0, k) + trace.visits(k + 1, 200)

    def test_bad_membership_flags_approximation(self, family, model):
        trace = depth_trace(family, model, 0.31, model.stream(5), 0.01, 200)
        report = trace.bad_membership(5, 3.0)
        assert report["approximate"] is True
        assert report["horizon"] == 200


class TestBindingPeriod:
    def test_first_term_budget(self):
        # the one-step distortion sum is 1/d(v, c), within budget for small delta
        delta = 1e-12
        assert 1.0 / abs(CANON.c1_minus - CANON.c) <= 0.008 / delta

    def test_witnesses_reverify(self):
        rec = binding_period(CANON, CANON.c1_minus, 3.125e-12, 0.008, 16.0, 0.25, 2000)
        assert rec is not None
        assert rec.verify(CANON)

    def test_none_at_coarse_scales(self):
        assert binding_period(CANON, CANON.c1_minus, 0.002, 0.008, 16.0, 0.25, 2000) is None

    def test_ladder_nondecreasing(self):
        ladder = (3.125e-12, 1.5625e-12, 7.8125e-13, 3.90625e-13)
        for v in (CANON.c1_minus, CANON.c1_plus):
            ms = []
            for delta in ladder:
                rec = binding_period(CANON, v, delta, 0.008, 16.0, 0.25, 2000)
                assert rec is not None
                ms.append(rec.M)
            assert all(b >= a for a, b in zip(ms, ms[1:]))

    def test_parameter_validation(self):
        with pytest.raises(ValueError):
            binding_period(CANON, 0.9, 1e-12, 0.008, 4.0, 0.25, 100)  # L too small
        with pytest.raises(ValueError):
            binding_period(CANON, 0.9, 1e-12, 0.008, 16.0, 0.7, 100)  # zeta >= 1/ell


class TestPullback:
    def test_zero_steps(self):
        chain = pullback_component(CANON, (0.4, 0.6), 0)
        assert chain.intervals == [(0.4, 0.6)]
        assert chain.order == 0

    def test_single_step_closed_form(self):
        chain = pullback_component(CANON, (0.6, 0.7), 1, branch_path="l")
        lo, hi = chain.component
        assert CANON.eval(lo) == pytest.approx(0.6, abs=1e-11)
        assert CANON.eval(hi) == pytest.approx(0.7, abs=1e-11)
        assert chain.order == 0

    def test_order_increments_at_critical_value(self):
        # a target reaching beyond the left critical value clips at c
        chain = pullback_component(CANON, (0.85, 0.95), 1, branch_path="l")
        assert chain.order == 1
        assert chain.component[1] == CANON.c

    def test_empty_pullback(self):
        with pytest.raises(EmptyPullback):
            pullback_component(CANON, (0.02, 0.05), 1, branch_path="r")

    def test_chain_consistency_on_guided_orbit(self, family, model):
        om = model.stream(21).prefix(12)
        orbit = [0.27]
        y = 0.27
        for i in range(12):
            y = family.eval(float(om[i]), y)
            orbit.append(y)
        target = (orbit[12] - 0.01, orbit[12] + 0.01)
        chain = pullback_component(family, target, 12, guide_orbit=orbit[:12], omega=om)
        # f maps each chain interval onto the next, up to endpoint tolerance
        for j in range(12):
            lo, hi = chain.intervals[j]
            nlo, nhi = chain.intervals[j + 1]
            flo = family.eval(float(om[j]), lo + 1e-14)
            fhi = family.eval(float(om[j]), hi - 1e-14)
            assert flo >= nlo - 1e-9
            assert fhi <= nhi + 1e-9
        assert chain.intervals[0][0] <= orbit[0] <= chain.intervals[0][1]


class TestBackwardContraction:
    def test_single_step_components_closed_form(self):
        rep = backward_contraction_check(CANON, 2.0, [0.0025], 1, sample_budget=10, seed=0)
        singles = [r for r in rep["rows"] if r["s"] == 1]
        assert len(singles) >= 1
        nb = critical_neighborhood(CANON, 0.005)
        for row in singles:
            mid = 0.5 * (row["w_lo"] + row["w_hi"])
            assert nb.lo < CANON.eval(mid) < nb.hi

    def test_vacuous_pass_above_ladder(self):
        rep = backward_contraction_check(CANON, 2.0, [0.0025], 2, sample_budget=10, seed=0)
        assert isinstance(rep["violations"], list)

    def test_detector_fires_on_non_ld_map(self):
        assert NONLD.eval(NONLD.c1_minus) == pytest.approx(0.5008, abs=1e-12)
        rep = backward_contraction_check(NONLD, 2.0, [0.01], 10, sample_budget=200, seed=1)
        assert len(rep["violations"]) > 0
        v = rep["violations"][0]
        assert v["dist_cv"] < 0.01 and v["length"] >= 0.01

    def test_clean_at_fine_scale_for_canonical_map(self):
        rep = backward_contraction_check(CANON, 2.0, [0.0025], 30, sample_budget=800, seed=2)
        assert len(rep["violations"]) == 0
        assert rep["components_visited"] > 100
