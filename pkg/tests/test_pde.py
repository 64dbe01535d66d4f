import math

import numpy as np
import pytest

from capsde.closed_form import allowance_price_bau
from capsde.model import (AbatementMap, MarketParams, OptionSpec,
                          SchemeConfig, SpaceTimeGrid, StabilityError,
                          TerminalCondition)
from capsde.pde import (solve_allowance_pde, solve_option_pde,
                        stable_time_step, surface_gradient)

P = MarketParams(b=2.5, sigma=0.3, lambda_penalty=1.0, cap=1.25, horizon=1.0)


def ramp_terminal(grid, params=P):
    return TerminalCondition(kind="ramp", threshold=math.log(params.cap),
                             ceiling=params.lambda_penalty,
                             ramp_half_width=grid.dx)


def bau_error(n_time, n_space):
    g = SpaceTimeGrid.regular(0.0, 1.0, n_time, -4.0, 4.0, n_space)
    surf = solve_allowance_pde(P, AbatementMap.zero(), g,
                               terminal=ramp_terminal(g))
    e = np.exp(g.space_nodes())
    exact = allowance_price_bau(0.0, e[1:-1], P)
    return float(np.max(np.abs(surf.values[0, 1:-1] - exact)))


def test_bau_solution_matches_closed_form():
    assert bau_error(2000, 1000) <= 2e-3


def test_bau_error_shrinks_under_refinement():
    coarse = bau_error(500, 250)
    fine = bau_error(2000, 1000)
    assert fine < 0.5 * coarse


def test_surface_is_clipped_and_monotone():
    g = SpaceTimeGrid.regular(0.0, 1.0, 2000, -4.0, 4.0, 500)
    surf = solve_allowance_pde(P, AbatementMap.linear(0.5), g,
                               terminal=ramp_terminal(g))
    assert surf.values.min() >= 0.0
    assert surf.values.max() <= 1.0 + 1e-12   # ceiling up to rounding
    assert np.diff(surf.values, axis=1).min() >= -1e-9
    assert surf.check() == []


def test_abatement_lowers_the_price():
    g = SpaceTimeGrid.regular(0.0, 1.0, 2000, -4.0, 4.0, 500)
    base = solve_allowance_pde(P, AbatementMap.zero(), g,
                               terminal=ramp_terminal(g))
    abated = solve_allowance_pde(P, AbatementMap.linear(1.0), g,
                                 terminal=ramp_terminal(g))
    assert np.all(abated.values <= base.values + 1e-12)
    # probe where the base price is interior, not saturated at the penalty
    e_half = P.cap * math.exp(-P.b + 0.5 * P.sigma ** 2)
    j = int(round((math.log(e_half) - g.x_min) / g.dx))
    assert 0.3 < base.values[0, j] < 0.7
    assert abated.values[0, j] < base.values[0, j] - 0.05


def test_solver_rejects_bad_grids():
    wrong_coord = SpaceTimeGrid.regular(0.0, 1.0, 2000, -4.0, 4.0, 500,
                                        coordinate="emission")
    with pytest.raises(ValueError):
        solve_allowance_pde(P, AbatementMap.zero(), wrong_coord)
    short = SpaceTimeGrid.regular(0.0, 0.5, 1000, -4.0, 4.0, 500)
    with pytest.raises(ValueError):
        solve_allowance_pde(P, AbatementMap.zero(), short)


def test_solver_rejects_mismatched_terminal_ceiling():
    g = SpaceTimeGrid.regular(0.0, 1.0, 2000, -4.0, 4.0, 500)
    term = TerminalCondition(kind="indicator", threshold=math.log(P.cap),
                             ceiling=0.5)
    with pytest.raises(ValueError):
        solve_allowance_pde(P, AbatementMap.zero(), g, terminal=term)


def test_stability_error_carries_metadata():
    # the feedback-free precheck passes, but a violent abatement response
    # pushes the advection speed past the certificate mid-march
    g = SpaceTimeGrid.regular(0.0, 1.0, 2000, -4.0, 4.0, 500)
    f = AbatementMap.linear(1.0, slope=60.0)
    with pytest.raises(StabilityError) as err:
        solve_allowance_pde(P, f, g, terminal=ramp_terminal(g))
    assert err.value.time_index >= 0
    assert 0.0 < err.value.required_dt < g.dt


def test_stable_time_step_is_stable():
    g = SpaceTimeGrid.regular(0.0, 1.0, 2000, -4.0, 4.0, 500)
    dt = stable_time_step(P, g)
    assert 0.0 < dt <= g.dx ** 2 / P.sigma ** 2
    cfg = SchemeConfig(stability_safety=0.5)
    assert stable_time_step(P, g, config=cfg) == pytest.approx(0.5 * dt)


def test_option_terminal_row_is_payoff():
    g = SpaceTimeGrid.regular(0.0, 1.0, 2000, -4.0, 4.0, 500)
    u = solve_allowance_pde(P, AbatementMap.zero(), g,
                            terminal=ramp_terminal(g))
    opt = OptionSpec(maturity=0.25, strike=0.86)
    big = solve_option_pde(u, P, AbatementMap.zero(), opt)
    k_tau = g.time_index(0.25)
    np.testing.assert_allclose(
        big.values[-1], np.maximum(u.values[k_tau] - 0.86, 0.0), atol=1e-14)
    assert big.grid.t_end == pytest.approx(0.25)
    assert big.values.shape == (k_tau + 1, g.n_space + 1)


def test_option_strike_above_penalty_is_worthless():
    g = SpaceTimeGrid.regular(0.0, 1.0, 2000, -4.0, 4.0, 500)
    u = solve_allowance_pde(P, AbatementMap.zero(), g,
                            terminal=ramp_terminal(g))
    big = solve_option_pde(u, P, AbatementMap.zero(),
                           OptionSpec(maturity=0.25, strike=1.0))
    assert np.all(big.values == 0.0)


def test_option_requires_maturity_on_lattice():
    g = SpaceTimeGrid.regular(0.0, 1.0, 2000, -4.0, 4.0, 500)
    u = solve_allowance_pde(P, AbatementMap.zero(), g,
                            terminal=ramp_terminal(g))
    with pytest.raises(ValueError):
        solve_option_pde(u, P, AbatementMap.zero(),
                         OptionSpec(maturity=0.25 + 1e-7, strike=0.5))
    with pytest.raises(ValueError):
        solve_option_pde(u, P, AbatementMap.zero(),
                         OptionSpec(maturity=0.0, strike=0.5))


def test_option_bounded_by_penalty_minus_strike():
    g = SpaceTimeGrid.regular(0.0, 1.0, 2000, -4.0, 4.0, 500)
    f = AbatementMap.linear(0.3)
    u = solve_allowance_pde(P, f, g, terminal=ramp_terminal(g))
    big = solve_option_pde(u, P, f, OptionSpec(maturity=0.25, strike=0.86))
    assert big.values.max() <= 1.0 - 0.86 + 1e-12
    assert big.values.min() >= 0.0


def test_surface_gradient_exact_on_linear_data():
    g = SpaceTimeGrid.regular(0.0, 1.0, 4, 0.0, 2.0, 8)
    vals = np.tile(3.0 * g.space_nodes(), (5, 1))
    from capsde.model import ValueSurface
    s = ValueSurface(grid=g, values=vals, value_ceiling=10.0)
    grad = surface_gradient(s)
    np.testing.assert_allclose(grad, 3.0, atol=1e-12)
