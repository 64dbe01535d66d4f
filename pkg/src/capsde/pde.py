"""Explicit monotone finite-difference solvers in log-emission coordinates.

Substituting x = ln e turns the allowance pricing equation into

    d_t u + (b - sigma^2/2 - f(u) e^{-x}) d_x u + (sigma^2/2) d_xx u = 0,

with terminal data lambda * 1[x >= ln cap].  The march is explicit Euler in
time; space derivatives are centered wherever the cell Peclet condition
admits it and upwinded elsewhere, and the diffusion coefficient carries the
a^2 dt / 2 correction that cancels the first-order anti-diffusion of the
Euler step.  Every step certifies that the update is a convex combination
of old values, which is what forces the solution to stay inside [0,
ceiling] and monotone in space.

The option solver reuses the same operator with the feedback argument
frozen to the allowance surface, so both prices diffuse under the same
emission dynamics.
"""

from __future__ import annotations

import math

import numpy as np

from . import _kernels
from .model import (SchemeConfig, SpaceTimeGrid, StabilityError,
                    TerminalCondition, ValueSurface, validate)

F_TABLE_NODES = 4097


def stable_time_step(params, grid, drift_bound=None, config=None):
    """Largest monotone explicit step for the log-coordinate march.

    ``drift_bound`` defaults to the feedback-free advection speed; pass a
    larger value to budget for the feedback term.
    """
    if config is None:
        config = SchemeConfig()
    a = abs(params.b - 0.5 * params.sigma ** 2) if drift_bound is None \
        else drift_bound
    return config.stability_safety * grid.dx ** 2 / (params.sigma ** 2 + grid.dx * a)


def _require_valid(params, grid, f):
    problems = validate(params, grid, f)
    if problems:
        raise ValueError("invalid configuration: " + "; ".join(problems))


def _march(params, f, grid, terminal, left_val, right_val, config,
           drift_field=None):
    if config.boundary_policy != "dirichlet_limits":
        raise ValueError(f"unknown boundary policy {config.boundary_policy!r}")
    x = grid.space_nodes()
    einv = np.exp(-x)
    drift0 = params.b - 0.5 * params.sigma ** 2
    if f is not None and f.epsilon != 0.0:
        f_tab = np.ascontiguousarray(f.table(params.lambda_penalty,
                                             F_TABLE_NODES))
        f_umax = params.lambda_penalty
    else:
        f_tab = None
        f_umax = 0.0
    surf, min_w, bad_step, req_dt = _kernels.march_log_lattice(
        np.ascontiguousarray(terminal, dtype=float), einv, drift0,
        params.sigma ** 2, grid.dt, grid.dx, grid.n_time, f_tab, f_umax,
        left_val, right_val, config.advection_time_correction, drift_field)
    if bad_step >= 0:
        t_bad = grid.t0 + bad_step * grid.dt
        raise StabilityError(
            f"monotonicity certificate failed at time index {bad_step} "
            f"(t={t_bad:.6g}): dt={grid.dt:.6g} exceeds the admissible "
            f"{req_dt:.6g} there", time_index=bad_step, required_dt=req_dt)
    return surf, min_w


def solve_allowance_pde(params, f, grid, terminal=None, config=None):
    """Allowance price surface on the given log-emission grid.

    ``terminal`` defaults to the penalty indicator at the cap.  The grid
    must span the horizon exactly; boundary rows are clamped to the exact
    spatial limits 0 and ceiling.
    """
    if config is None:
        config = SchemeConfig()
    _require_valid(params, grid, f)
    if grid.coordinate != "log_emission":
        raise ValueError("allowance solver needs a log_emission grid")
    if abs(grid.t_end - params.horizon) > 1e-9 * max(1.0, params.horizon):
        raise ValueError(
            f"grid must end at the horizon (t_end={grid.t_end}, "
            f"horizon={params.horizon})")
    if terminal is None:
        terminal = TerminalCondition(kind="indicator",
                                     threshold=math.log(params.cap),
                                     ceiling=params.lambda_penalty)
    if abs(terminal.ceiling - params.lambda_penalty) > 1e-12 * params.lambda_penalty:
        raise ValueError("terminal ceiling must equal the penalty")
    data = terminal(grid.space_nodes())
    surf, _ = _march(params, f, grid, data, 0.0, params.lambda_penalty, config)
    out = ValueSurface(grid=grid, values=surf,
                       value_ceiling=params.lambda_penalty)
    problems = out.check()
    if problems:
        raise RuntimeError("solver produced an invalid surface: "
                           + "; ".join(problems))
    return out


def solve_option_pde(allowance, params, f, option, config=None):
    """European call on the allowance price, priced on the allowance grid.

    The payoff (u(tau, .) - K)+ is propagated with the same operator as the
    allowance price but with the feedback argument frozen to the allowance
    surface.  The option maturity must sit on the allowance time lattice.
    A strike at or above the penalty makes the payoff identically zero and
    short-circuits to a zero surface.
    """
    if config is None:
        config = SchemeConfig()
    grid = allowance.grid
    if grid.coordinate != "log_emission":
        raise ValueError("option solver needs a log_emission allowance surface")
    k_tau = grid.time_index(option.maturity)
    if k_tau is None or k_tau == 0:
        raise ValueError(
            f"option maturity {option.maturity} is not on the time lattice "
            f"(t0={grid.t0}, dt={grid.dt})")
    sub = SpaceTimeGrid(t0=grid.t0, t_end=option.maturity, dt=grid.dt,
                        x_min=grid.x_min, x_max=grid.x_max, dx=grid.dx,
                        n_time=k_tau, n_space=grid.n_space,
                        coordinate=grid.coordinate)
    ceiling = max(params.lambda_penalty - option.strike, 0.0)
    if ceiling == 0.0:
        values = np.zeros((k_tau + 1, grid.n_space + 1))
        return ValueSurface(grid=sub, values=values, value_ceiling=0.0)
    _require_valid(params, sub, f)
    payoff = np.maximum(allowance.values[k_tau] - option.strike, 0.0)
    drift_field = None
    if f is not None and f.epsilon != 0.0:
        drift_field = np.ascontiguousarray(allowance.values[:k_tau + 1])
    surf, _ = _march(params, f, sub, payoff, 0.0, ceiling, config,
                     drift_field=drift_field)
    out = ValueSurface(grid=sub, values=surf, value_ceiling=ceiling)
    problems = out.check()
    if problems:
        raise RuntimeError("solver produced an invalid surface: "
                           + "; ".join(problems))
    return out


def surface_gradient(surface):
    """Spatial derivative of a surface, centered inside, one-sided at edges.

    Returned in the grid's own coordinate (d/dx for log grids, d/de for
    emission grids), same shape as the values.
    """
    v = surface.values
    dx = surface.grid.dx
    g = np.empty_like(v)
    g[:, 1:-1] = (v[:, 2:] - v[:, :-2]) / (2.0 * dx)
    g[:, 0] = (v[:, 1] - v[:, 0]) / dx
    g[:, -1] = (v[:, -1] - v[:, -2]) / dx
    return g
