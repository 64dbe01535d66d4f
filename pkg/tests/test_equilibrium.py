import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from capsde.equilibrium import (CostFunction, aggregate_abatement,
                                optimal_abatement, optimal_production)

# oracle: c'(x) = 0.7 * 3 x^2 for x > 0 inverts at y = 0.9 to sqrt(y/2.1)
POWER_INV_09 = 0.6546536707079772


def test_quadratic_inversion_closed_form():
    cost = CostFunction.quadratic(0.5)   # c'(x) = x
    assert cost.marginal(2.0) == pytest.approx(2.0)
    assert cost.invert(1.5) == pytest.approx(1.5, abs=1e-12)


def test_power_inversion_frozen_point():
    cost = CostFunction.power(0.7, 2.0)
    assert cost.invert(0.9) == pytest.approx(POWER_INV_09, abs=1e-10)


def test_bisection_round_trip_without_inverse():
    # drop the closed-form inverse to force the root solve
    base = CostFunction.power(0.7, 2.0)
    cost = CostFunction(marginal=base.marginal, bracket=(-100.0, 100.0))
    for y in (-0.9, 0.0, 0.3, 2.4):
        x = cost.invert(y)
        assert base.marginal(x) == pytest.approx(y, abs=1e-10)


def test_invert_outside_bracket_raises():
    cost = CostFunction(marginal=lambda x: x, bracket=(0.0, 1.0))
    with pytest.raises(ValueError):
        cost.invert(5.0)


@given(st.floats(0.05, 5.0), st.floats(-2.0, 2.0))
@settings(max_examples=200, deadline=None)
def test_quadratic_round_trip_property(alpha, y):
    cost = CostFunction.quadratic(alpha)
    x = cost.invert(y)
    assert cost.marginal(x) == pytest.approx(y, abs=1e-9)


def test_optimal_abatement_is_marginal_inverse():
    cost = CostFunction.quadratic(0.5)
    assert optimal_abatement(cost, 0.7) == pytest.approx(0.7)


def test_optimal_production_floors_at_zero():
    cost = CostFunction.quadratic(0.5)
    # marginal revenue P - r y; large allowance price shuts production down
    assert optimal_production(cost, good_price=1.0, emission_rate=1.0,
                              allowance_price=0.2) == pytest.approx(0.8)
    assert optimal_production(cost, good_price=1.0, emission_rate=1.0,
                              allowance_price=3.0) == 0.0


def test_aggregate_abatement_sums_quadratic_firms():
    # two firms with c'(x) = x and c'(x) = 2x abate y and y/2: slope 1.5
    costs = [CostFunction.quadratic(0.5), CostFunction.quadratic(1.0)]
    f = aggregate_abatement(costs, epsilon=1.0, price_ceiling=1.0)
    ys = np.linspace(0.0, 1.0, 9)
    np.testing.assert_allclose(f(ys), 1.5 * ys, atol=1e-9)
    assert f(0.0) == 0.0
    assert f.lipschitz_bound >= 1.5


def test_aggregate_abatement_respects_epsilon():
    costs = [CostFunction.quadratic(0.5)]
    f = aggregate_abatement(costs, epsilon=0.25, price_ceiling=1.0)
    assert f(0.8) == pytest.approx(0.25 * 0.8, abs=1e-9)
