import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from capsde.model import (AbatementMap, ExperimentConfig, MarketParams,
                          SpaceTimeGrid, TerminalCondition, ValueSurface,
                          validate)


def base_params(**kw):
    args = dict(b=2.5, sigma=0.3, lambda_penalty=1.0, cap=1.25, horizon=1.0)
    args.update(kw)
    return MarketParams(**args)


def test_market_params_frozen():
    p = base_params()
    with pytest.raises(Exception):
        p.sigma = 0.5


def test_grid_regular_tiles_exactly():
    g = SpaceTimeGrid.regular(0.0, 1.0, 2000, -4.0, 4.0, 1000)
    assert g.n_time == 2000 and g.n_space == 1000
    t = g.times()
    x = g.space_nodes()
    assert t.shape == (2001,) and x.shape == (1001,)
    assert t[0] == 0.0 and t[-1] == pytest.approx(1.0, abs=1e-15)
    assert x[0] == -4.0 and x[-1] == pytest.approx(4.0, abs=1e-12)
    assert g.dt == pytest.approx(5e-4)
    assert g.dx == pytest.approx(8e-3)


def test_grid_time_index_round_trip():
    g = SpaceTimeGrid.regular(0.0, 1.0, 400, -1.0, 1.0, 10)
    for k in (0, 1, 137, 400):
        assert g.time_index(g.t0 + k * g.dt) == k
    assert g.time_index(0.5 * g.dt) is None
    assert g.time_index(-g.dt) is None


def test_terminal_indicator_and_ramp():
    term = TerminalCondition(kind="indicator", threshold=0.0, ceiling=2.0)
    x = np.array([-1.0, -1e-12, 0.0, 1e-12, 3.0])
    np.testing.assert_allclose(term(x), [0.0, 0.0, 2.0, 2.0, 2.0])
    ramp = TerminalCondition(kind="ramp", threshold=0.0, ceiling=2.0,
                             ramp_half_width=0.5)
    np.testing.assert_allclose(ramp(np.array([-0.5, 0.0, 0.25, 0.5])),
                               [0.0, 1.0, 1.5, 2.0])
    # zero half-width degenerates to the indicator
    degen = TerminalCondition(kind="ramp", threshold=0.0, ceiling=2.0,
                              ramp_half_width=0.0)
    np.testing.assert_allclose(degen(x), term(x))


@given(st.floats(-5.0, 5.0))
@settings(max_examples=200, deadline=None)
def test_terminal_values_bounded_and_monotone(x):
    term = TerminalCondition(kind="ramp", threshold=0.7, ceiling=1.0,
                             ramp_half_width=0.3)
    v = term(x)
    assert 0.0 <= v <= 1.0
    assert term(x + 0.01) >= v


def test_abatement_linear_table_and_call():
    f = AbatementMap.linear(0.4)
    assert f(0.0) == 0.0
    assert f(1.0) == pytest.approx(0.4)
    assert f.lipschitz_bound == pytest.approx(0.4)
    fy = f.table(2.0, n_nodes=11)
    np.testing.assert_allclose(fy, 0.4 * np.linspace(0.0, 2.0, 11))
    z = AbatementMap.zero()
    assert z(1.0) == 0.0 and z.epsilon == 0.0


@given(st.floats(0.0, 1.0), st.floats(0.0, 2.0))
@settings(max_examples=200, deadline=None)
def test_abatement_scaling_is_epsilon_times_base(eps, y):
    f = AbatementMap.linear(eps)
    assert f(y) == pytest.approx(eps * y, abs=1e-12)


def test_abatement_vectorized_matches_scalar():
    f = AbatementMap(base=lambda y: math.sqrt(y), epsilon=0.5,
                     lipschitz_bound=10.0)
    ys = np.linspace(0.0, 1.0, 7)
    np.testing.assert_allclose(f(ys), [f(float(y)) for y in ys])


def test_value_surface_lookup_bilinear():
    g = SpaceTimeGrid.regular(0.0, 1.0, 4, 0.0, 1.0, 4)
    vals = np.add.outer(g.times(), g.space_nodes())
    s = ValueSurface(grid=g, values=vals, value_ceiling=2.0)
    assert s.value_at(0.125, 0.375) == pytest.approx(0.5)
    # one-sided in the last time interval: holds the second-to-last row
    assert s.value_at(0.9, 0.25) == pytest.approx(vals[3, 1])
    assert s.row(0.5) is not vals[2]
    np.testing.assert_allclose(s.row(0.5), vals[2])


def test_value_surface_check_flags_problems():
    g = SpaceTimeGrid.regular(0.0, 1.0, 2, 0.0, 1.0, 2)
    good = ValueSurface(grid=g, values=np.zeros((3, 3)), value_ceiling=1.0)
    assert good.check() == []
    bad = ValueSurface(grid=g, values=np.full((3, 3), 2.0), value_ceiling=1.0)
    assert any("ceiling" in p for p in bad.check())
    nonmono = ValueSurface(grid=g,
                           values=np.array([[0.0, 0.5, 0.2]] * 3),
                           value_ceiling=1.0)
    assert any("decrease" in p for p in nonmono.check())
    shp = ValueSurface(grid=g, values=np.zeros((2, 3)), value_ceiling=1.0)
    assert any("shape" in p for p in shp.check())


def test_validate_accepts_base_setup():
    p = base_params()
    g = SpaceTimeGrid.regular(0.0, 1.0, 2000, -4.0, 4.0, 1000)
    assert validate(p, grid=g, f=AbatementMap.linear(0.5)) == []


def test_validate_rejects_bad_inputs():
    assert validate(base_params(sigma=-1.0))
    assert validate(base_params(cap=0.0))
    p = base_params()
    # time step too large for the diffusion number
    coarse = SpaceTimeGrid.regular(0.0, 1.0, 10, -4.0, 4.0, 1000)
    assert any("exceeds the monotone explicit bound" in m
               for m in validate(p, grid=coarse))


def test_validate_rejects_nonmonotone_base():
    p = base_params()
    f = AbatementMap(base=lambda y: -y, epsilon=0.5, lipschitz_bound=1.0)
    msgs = validate(p, f=f)
    assert any("increasing" in m for m in msgs)


def test_experiment_config_derives_drift():
    cfg = ExperimentConfig(experiment="bau_oracle")
    p = cfg.market()
    assert p.b == pytest.approx(2.0 * p.cap / p.horizon)
    cfg2 = ExperimentConfig(experiment="bau_oracle", b=1.0)
    assert cfg2.market().b == 1.0
