import math

import numpy as np
import pytest

from storage_withholding import (
    BidCurve,
    InfeasibleError,
    ModelError,
    PriceBounds,
    PriceDistribution,
    Side,
    StorageSpec,
    ValueFunction,
    audit_bids,
    backward_induction,
    bellman_step,
    construct_spike_distribution,
    corollary4_bound,
    discharge_bids,
    extend_spike_schedule,
    mean_of,
    sigma_floor,
    theorem2_bound,
)
from storage_withholding.withholding import drain_periods, schedule_bid_floor, spike_value_at_zero

B = PriceBounds(5.0, 150.0)
SPEC = StorageSpec(10.0, 40.0, 0.9, 25.0)


class TestPerPeriodBound:
    def test_last_period_is_cost(self):
        assert theorem2_bound(3, 3, [26.2] * 3, B, SPEC).bound == 25.0

    def test_single_remaining_period(self):
        bd = theorem2_bound(1, 2, [26.2, 26.2], B, SPEC)
        assert bd.alpha[0] == pytest.approx(21.2 / 145, abs=1e-6)
        assert bd.bound == pytest.approx(43.276, abs=1e-3)

    def test_monotone_in_remaining_horizon(self):
        b = [theorem2_bound(t, 24, [26.2] * 24, B, SPEC).bound for t in range(24, -1, -1)]
        assert np.all(np.diff(b) > 0) and b[-1] < 150.0

    def test_rejects_mean_outside_bounds(self):
        with pytest.raises(ModelError):
            theorem2_bound(0, 2, [26.2, 160.0], B, SPEC)

    def test_end_value_enters_through_survival(self):
        a = theorem2_bound(1, 2, [26.2, 26.2], B, SPEC, v_T0=9.0)
        b = theorem2_bound(1, 2, [26.2, 26.2], B, SPEC)
        assert a.bound - b.bound == pytest.approx(a.survival * 10.0)

    def test_two_point_law_at_the_bounds_attains_it(self):
        # deep, lossy storage: floor-price charging never saturates and clears in one discharge
        spec = StorageSpec(10.0, 100.0, 0.4, 25.0)
        mu = [40.0, 26.2, 90.0]
        fc = [PriceDistribution.two_point(150.0, 5.0, (m - 5) / 145, mu=m) for m in mu]
        bid = backward_induction(ValueFunction.linear(0.0, 100.0, 201), fc, spec).zero_soc_bid(0)
        assert bid == pytest.approx(theorem2_bound(0, 3, mu, B, spec).bound, abs=0.5)

    def test_shallow_storage_stays_below(self):
        mu = [40.0, 26.2, 90.0]
        fc = [PriceDistribution.two_point(150.0, 5.0, (m - 5) / 145, mu=m) for m in mu]
        bid = backward_induction(ValueFunction.linear(0.0, 40.0, 401), fc, SPEC).zero_soc_bid(0)
        assert bid <= theorem2_bound(0, 3, mu, B, SPEC).bound


class TestCappedMeanBound:
    def test_infinite_horizon_is_cap(self):
        assert corollary4_bound(math.inf, 26.2, B, SPEC) == pytest.approx(150.0)

    def test_finite_day(self):
        b = corollary4_bound(24, 26.2, B, SPEC)
        assert theorem2_bound(1, 2, [26.2] * 2, B, SPEC).bound < b < 150.0
        assert b == pytest.approx(146.70, abs=0.01)

    def test_dominates_per_period_bound_under_the_cap(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            T = int(rng.integers(2, 30))
            mu = rng.uniform(5.0, 26.2, T)
            t2 = theorem2_bound(0, T, mu, B, SPEC).bound
            assert t2 <= corollary4_bound(T + 1, 26.2, B, SPEC) + 1e-9

    def test_floor_cap_is_cost(self):
        assert corollary4_bound(24, 5.0, B, SPEC) == 25.0

    def test_discount_shrinks(self):
        assert corollary4_bound(math.inf, 26.2, B, SPEC, rho=0.9) < 150.0


class TestSigmaFloor:
    @pytest.mark.parametrize("v, mu, expected", [(60.0, 26.2, 0.0), (10.0, 26.2, math.sqrt(48)),
                                                 (10.0, 25.0, 0.0), (0.0, 25.0, 0.0)])
    def test_examples(self, v, mu, expected):
        assert sigma_floor(v, 25.0, mu) == pytest.approx(expected, abs=1e-9)

    def test_rejects_negative_value(self):
        with pytest.raises(ModelError):
            sigma_floor(-1.0, 25.0, 26.2)


class TestSpike:
    def test_construction_example(self):
        d = construct_spike_distribution(200.0, 26.2, 0.5, SPEC, 20.0, v_next_0=40.0, pi=450.0)
        hi, lo = d.atoms()[0].max(), d.atoms()[0].min()
        assert hi == pytest.approx(450.0) and lo == pytest.approx(-397.6)
        assert mean_of(d) == pytest.approx(26.2)
        # verified against the Bellman recursion on the kinked next-period value
        g = np.linspace(0, 40, 401)
        nxt = ValueFunction(g, np.where(g < 4.5, 40 * g, 180 + 20 * (g - 4.5)))
        v0 = bellman_step(nxt, d, SPEC).slopes[0]
        assert v0 == pytest.approx(201.25) and v0 >= 200.0

    def test_unbounded_target(self):
        d = construct_spike_distribution(1e4, 26.2, 0.5, SPEC, 20.0)
        assert d.atoms()[0].max() == pytest.approx(22225.0, rel=1e-3)
        assert mean_of(d) == pytest.approx(26.2)
        assert spike_value_at_zero(d, SPEC, 20.0) >= 1e4 - 1e-6

    def test_target_at_floor(self):
        d = construct_spike_distribution(20.0, 26.2, 0.3, SPEC, 20.0)
        assert spike_value_at_zero(d, SPEC, 20.0) >= 20.0 - 1e-9

    def test_infeasible_low_branch(self):
        with pytest.raises(InfeasibleError, match="tau\\*eta\\*v_next"):
            construct_spike_distribution(30.0, 140.0, 0.5, SPEC, 20.0)

    def test_rejects_bad_probability(self):
        with pytest.raises(ModelError):
            construct_spike_distribution(100.0, 26.2, 1.0, SPEC, 20.0)


class TestScheduleExtension:
    def test_single_spike_from_charge_increment(self):
        T = 6
        sched = extend_spike_schedule(300.0, T - 1, SPEC.charge_increment, [26.2] * T, SPEC)
        spikes = [d for d in sched if d.atoms()[0].size == 2]
        assert len(spikes) == 1
        series = backward_induction(ValueFunction.linear(0.0, 40.0, 201), sched, SPEC)
        assert schedule_bid_floor(series[T - 1], SPEC.charge_increment, SPEC) >= 300.0 - 1e-9
        assert all(mean_of(d) == pytest.approx(26.2) for d in sched)

    def test_drain_boundary(self):
        spec = StorageSpec(10.0, 40.0, 1.0, 25.0)
        k = drain_periods(20.0, spec)
        assert k == 2
        sched = extend_spike_schedule(100.0, 1, 20.0, [26.2] * (1 + k), spec)
        series = backward_induction(ValueFunction.linear(0.0, 40.0, 201), sched, spec)
        assert schedule_bid_floor(series[1], 20.0, spec) >= 100.0 - 1e-9
        with pytest.raises(InfeasibleError, match="horizon too short"):
            extend_spike_schedule(100.0, 1, 20.0, [26.2] * k, spec)

    def test_nearly_full_storage_caps_the_target(self):
        spec = StorageSpec(10.0, 20.0, 0.9, 25.0)
        extend_spike_schedule(500.0, 1, 11.0, [26.2] * 6, spec)
        with pytest.raises(InfeasibleError, match="exceeds E"):
            extend_spike_schedule(500.0, 1, 20.0, [26.2] * 6, spec)

    def test_zero_target_is_mean_path(self):
        sched = extend_spike_schedule(0.0, 2, 20.0, [26.2] * 8, SPEC)
        assert all(d.atoms()[0].size == 1 for d in sched)


class TestAudit:
    def curves(self):
        mu = [26.2, 40.0, 80.0, 30.0, 120.0, 60.0]
        fc = [PriceDistribution.gaussian(m, 50.0, B) for m in mu]
        means = [mean_of(d) for d in fc]
        end = ValueFunction.linear(0.0, 40.0, 401)
        sdp = backward_induction(end, fc, SPEC)
        det = backward_induction(end, [PriceDistribution.point_mass(m) for m in means], SPEC)
        return means, sdp, det

    def test_self_comparison_is_clean(self):
        _, sdp, _ = self.curves()
        cv = discharge_bids(sdp[1], 20.0, SPEC, period=1)
        r = audit_bids(cv, cv, 1e9)
        assert not r.withholding and not r.bound_violating and r.margin == 0.0

    def test_uncertainty_withholds_within_bound(self):
        means, sdp, det = self.curves()
        cv = discharge_bids(sdp[1], 0.5, SPEC, period=1)
        base = discharge_bids(det[1], 0.5, SPEC, period=1)
        r = audit_bids(cv, base, theorem2_bound(1, 6, means, B, SPEC))
        assert r.withholding and not r.bound_violating

    def test_price_above_cap_violates(self):
        cv = BidCurve(Side.DISCHARGE, np.ones(3), np.full(3, 151.0))
        r = audit_bids(cv, cv, theorem2_bound(0, 2, [26.2, 26.2], B, SPEC))
        assert r.bound_violating and r.above_bound.all()

    def test_side_mismatch(self):
        cv = BidCurve(Side.DISCHARGE, np.ones(1), np.ones(1))
        with pytest.raises(ModelError):
            audit_bids(cv, BidCurve(Side.CHARGE, np.ones(1), np.ones(1)), 10.0)
