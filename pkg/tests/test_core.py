import json

import numpy as np
import pytest
from scipy import integrate

from storage_withholding import (
    BidCurve,
    ModelError,
    PriceBounds,
    PriceDistribution,
    Side,
    StorageSpec,
    ValueFunction,
    mean_of,
    sample,
    truncate_normalize,
)
from storage_withholding.core import DistKind

B = PriceBounds(5.0, 150.0)


class TestStorageSpec:
    def test_charge_increment_is_tau_p_eta(self):
        s = StorageSpec(10.0, 40.0, 0.9, 25.0, step=0.5)
        assert s.charge_increment == 0.5 * 10.0 * 0.9

    @pytest.mark.parametrize("kw", [dict(power=0), dict(energy=-1), dict(efficiency=0),
                                    dict(efficiency=1.2), dict(step=0), dict(discharge_cost=-1)])
    def test_rejects_invalid(self, kw):
        base = dict(power=10.0, energy=40.0, efficiency=0.9, discharge_cost=25.0, step=1.0)
        base.update(kw)
        with pytest.raises(ModelError):
            StorageSpec(**base)


def test_bounds_must_be_ordered():
    with pytest.raises(ModelError):
        PriceBounds(10.0, 10.0)


class TestMean:
    def test_point_mass(self):
        assert mean_of(PriceDistribution.point_mass(26.2)) == 26.2

    def test_two_point(self):
        d = PriceDistribution.two_point(450.0, -397.6, 0.5)
        assert mean_of(d) == pytest.approx(26.2, abs=1e-12)

    def test_bounded_uniform_symmetric_inside(self):
        d = PriceDistribution.bounded_uniform(26.2, 3.0, B)
        assert mean_of(d) == pytest.approx(26.2, abs=1e-9)

    def test_truncated_gaussian_mean_shifts_up(self):
        d = PriceDistribution.gaussian(26.2, 120.0, B)
        assert mean_of(d) > 26.2 + 10

    def test_empty_empirical(self):
        with pytest.raises(ModelError):
            PriceDistribution.empirical([])

    def test_two_point_declared_mean_mismatch(self):
        with pytest.raises(ModelError):
            PriceDistribution.two_point(450.0, -397.6, 0.5, mu=30.0)

    def test_two_point_order(self):
        with pytest.raises(ModelError):
            PriceDistribution.two_point(10.0, 20.0, 0.5)


class TestTruncate:
    def test_point_mass_inside_unchanged(self):
        d = truncate_normalize(PriceDistribution.point_mass(26.2), B)
        assert d.kind == DistKind.POINT_MASS and mean_of(d) == 26.2

    def test_gaussian_integrates_to_one(self):
        d = truncate_normalize(PriceDistribution.gaussian(26.2, 120.0), B)
        mass, _ = integrate.quad(d.pdf, 5.0, 150.0)
        assert mass == pytest.approx(1.0, abs=1e-9)
        assert d.bounds == B

    def test_point_mass_outside_fails(self):
        with pytest.raises(ModelError):
            truncate_normalize(PriceDistribution.point_mass(200.0), B)

    def test_partial_moments_match_quadrature(self):
        d = PriceDistribution.gaussian(26.2, 40.0, B)
        F, G = d.partial_moments(np.array([60.0]))
        f_ref, _ = integrate.quad(d.pdf, 5.0, 60.0)
        g_ref, _ = integrate.quad(lambda x: x * d.pdf(x), 5.0, 60.0)
        assert F[0] == pytest.approx(f_ref, abs=1e-9)
        assert G[0] == pytest.approx(g_ref, abs=1e-7)


class TestSample:
    def test_point_mass(self):
        assert sample(PriceDistribution.point_mass(26.2), 3, 5).tolist() == [26.2] * 5

    def test_two_point_law_of_large_numbers(self):
        x = sample(PriceDistribution.two_point(450.0, -397.6, 0.5), 7, 10**6)
        assert abs(x.mean() - 26.2) <= 1.5

    def test_deterministic(self):
        d = PriceDistribution.gaussian(26.2, 50.0)
        assert np.array_equal(sample(d, 11, 100), sample(d, 11, 100))

    @pytest.mark.parametrize("make", [
        lambda: PriceDistribution.gaussian(26.2, 120.0, B),
        lambda: PriceDistribution.bounded_uniform(100.0, 80.0, B),
        lambda: PriceDistribution.empirical(np.linspace(5, 150, 7), B),
    ])
    def test_bounded_support(self, make):
        x = sample(make(), 1, 10**6)
        assert x.min() >= 5.0 and x.max() <= 150.0

    def test_mean_within_three_standard_errors(self):
        d = PriceDistribution.gaussian(26.2, 120.0, B)
        x = sample(d, 5, 10**6)
        assert abs(x.mean() - mean_of(d)) <= 3 * x.std() / 1e3

    def test_rejects_nonpositive_n(self):
        with pytest.raises(ModelError):
            sample(PriceDistribution.point_mass(1.0), 0, 0)


@pytest.mark.parametrize("d", [
    PriceDistribution.point_mass(26.2),
    PriceDistribution.gaussian(26.2, 50.0),
    PriceDistribution.gaussian(26.2, 50.0, B),
    PriceDistribution.bounded_uniform(30.0, 10.0, B),
    PriceDistribution.two_point(450.0, -397.6, 0.5),
    PriceDistribution.empirical([1.0, 2.5, 9.0]),
])
def test_config_round_trip(d):
    back = PriceDistribution.from_dict(json.loads(json.dumps(d.to_dict())))
    assert back.kind == d.kind
    assert mean_of(back) == mean_of(d)
    assert back.sigma == d.sigma


class TestValueFunction:
    def test_rejects_convex(self):
        with pytest.raises(ModelError):
            ValueFunction(np.array([0.0, 1.0, 2.0]), np.array([0.0, 1.0, 3.0]))

    def test_breakpoints_start_at_zero(self):
        with pytest.raises(ModelError):
            ValueFunction(np.array([1.0, 2.0]), np.array([0.0, 1.0]))

    def test_from_slopes(self):
        vf = ValueFunction.from_slopes([40.0, 20.0], 20.0)
        assert vf.slopes.tolist() == [40.0, 20.0]
        assert vf(15.0) == pytest.approx(400.0 + 100.0)


class TestBidCurve:
    def test_monotone_sides(self):
        assert BidCurve(Side.DISCHARGE, np.ones(3), np.array([1.0, 2.0, 2.0])).is_monotone()
        assert not BidCurve(Side.CHARGE, np.ones(3), np.array([1.0, 2.0, 2.0])).is_monotone()

    def test_negative_quantity(self):
        with pytest.raises(ModelError):
            BidCurve(Side.CHARGE, np.array([-1.0]), np.array([1.0]))
