"""Degenerate toy model: a viscous Burgers equation with vanishing viscosity.

The value function v(t, e) of the toy market solves

    d_t v + ((T-t)^2 / 2) d_ee v - v d_e v = 0,   v(T, e) = 1[e >= cap],

on the raw emission axis.  In forward time s = T - t this is the viscous
conservation law d_s w + d_e(w^2/2) = (s^2/2) d_ee w, which the march
discretizes in conservation (Godunov) form: since w >= 0 the wave always
moves right and the upwind flux is F(w_{j-1}).  The conservation form is
what makes the integral identities of the model hold at the discrete level
up to boundary terms.

The checks in this module are the toy model's quantitative signatures: the
gradient bound (T-t) d_e v <= 1, Gaussian pinning envelopes around the cap,
the inviscid-profile squeeze, and exact-mass comparisons between solves.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from . import _kernels
from .model import (SchemeConfig, SpaceTimeGrid, StabilityError,
                    TerminalCondition, ValueSurface)
from .pde import surface_gradient


def toy_diffusion_averages(grid):
    """Per-step diffusion coefficients, exactly averaged over each step.

    The coefficient (T-t)^2 / 2 varies within a step; using its exact
    average (s_hi^3 - s_lo^3)/(6 dt) keeps the march second-order accurate
    in the coefficient without shrinking dt.
    """
    s = grid.t_end - grid.times()
    s3 = s ** 3
    return (s3[:-1] - s3[1:]) / (6.0 * grid.dt)


def solve_toy_pde(grid, term, config=None, store_every=1,
                  constant_diffusion=None):
    """Solve the toy equation backward from ``term``.

    ``store_every`` keeps one row out of that many time steps (the grid of
    the returned surface is coarsened accordingly); the march itself always
    runs at ``grid.dt``.  ``constant_diffusion`` replaces (T-t)^2 by a fixed
    sigma0^2, which removes the degeneracy at maturity (and with it the
    mass concentration at the cap).
    """
    if config is None:
        config = SchemeConfig()
    if config.boundary_policy != "dirichlet_limits":
        raise ValueError(f"unknown boundary policy {config.boundary_policy!r}")
    if grid.coordinate != "emission":
        raise ValueError("toy solver needs a raw-emission grid")
    if abs(term.ceiling - 1.0) > 1e-12:
        raise ValueError(f"toy terminal data must have ceiling 1 "
                         f"(got {term.ceiling})")
    if constant_diffusion is not None:
        dbar = np.full(grid.n_time, 0.5 * constant_diffusion)
    else:
        dbar = toy_diffusion_averages(grid)
    nodes = grid.space_nodes()
    data = np.ascontiguousarray(term(nodes), dtype=float)
    left = float(term(grid.x_min))
    right = float(term(grid.x_max))
    surf, min_w, bad_step, req_dt = _kernels.march_toy_lattice(
        data, np.ascontiguousarray(dbar), grid.dt, grid.dx, left, right,
        store_every)
    if bad_step >= 0:
        t_bad = grid.t0 + bad_step * grid.dt
        raise StabilityError(
            f"monotonicity certificate failed at time index {bad_step} "
            f"(t={t_bad:.6g}): dt={grid.dt:.6g} exceeds the admissible "
            f"{req_dt:.6g} there", time_index=bad_step, required_dt=req_dt)
    out_grid = grid if store_every == 1 else SpaceTimeGrid.regular(
        grid.t0, grid.t_end, grid.n_time // store_every,
        grid.x_min, grid.x_max, grid.n_space, coordinate="emission")
    out = ValueSurface(grid=out_grid, values=surf, value_ceiling=1.0)
    problems = out.check()
    if problems:
        raise RuntimeError("solver produced an invalid surface: "
                           + "; ".join(problems))
    return out


def inviscid_profile(t, e, cap, horizon):
    """Rarefaction-fan solution 1 ^ ((e-cap)/(T-t))+ of the inviscid limit."""
    if t >= horizon:
        raise ValueError(f"t={t} must be strictly before the horizon {horizon}")
    arr = np.asarray(e, dtype=float)
    out = np.clip((arr - cap) / (horizon - t), 0.0, 1.0)
    return float(out) if np.isscalar(e) or np.ndim(e) == 0 else out


@dataclass(frozen=True)
class EnvelopeEntry:
    t: float
    time_to_go: float
    delta: float
    value_low: float     # v(t, cap - delta), should be near 0
    value_high: float    # v(t, cap + (T-t) + delta), should be near 1
    c_low: float         # largest c the lower envelope admits here
    c_high: float        # largest c the upper envelope admits here


@dataclass(frozen=True)
class EnvelopeReport:
    c_probe: float
    fitted_c: float
    squeeze_constant: float
    passes: bool
    entries: List[EnvelopeEntry]


def check_boundary_envelopes(v, cap, c_probe, offsets=(0.5, 0.25, 0.1),
                             deltas=(0.05, 0.1, 0.2)):
    """Test the Gaussian pinning envelopes on a (time-to-go, delta) lattice.

    For each sampled s = T - t and delta the surface must satisfy

        v(t, cap - delta)          <= exp(-c delta^2 / s^3)
        v(t, cap + s + delta)      >= 1 - exp(-c delta^2 / s^3)

    for a common constant c.  The report carries the largest c each sample
    admits; ``fitted_c`` is their minimum and ``passes`` says whether it
    reaches ``c_probe``.  ``squeeze_constant`` is the fitted constant C in
    max_e |v - psi| <= C s^{1/4} over the sampled rows, with psi the
    inviscid profile.
    """
    grid = v.grid
    horizon = grid.t_end
    tiny = 1e-300
    entries = []
    squeeze = 0.0
    nodes = grid.space_nodes()
    for s in offsets:
        t = horizon - s
        row = v.row(t)
        psi = inviscid_profile(t, nodes, cap, horizon)
        squeeze = max(squeeze, float(np.max(np.abs(row - psi))) / s ** 0.25)
        for delta in deltas:
            lo = v.value_at(t, cap - delta)
            hi = v.value_at(t, cap + s + delta)
            scale = s ** 3 / delta ** 2
            c_lo = -math.log(max(lo, tiny)) * scale
            c_hi = -math.log(max(1.0 - hi, tiny)) * scale
            entries.append(EnvelopeEntry(t=t, time_to_go=s, delta=delta,
                                         value_low=lo, value_high=hi,
                                         c_low=c_lo, c_high=c_hi))
    fitted = min(min(en.c_low, en.c_high) for en in entries)
    return EnvelopeReport(c_probe=c_probe, fitted_c=fitted,
                          squeeze_constant=squeeze,
                          passes=bool(fitted >= c_probe > 0.0),
                          entries=entries)


def _grids_match(a, b):
    near = lambda x, y: abs(x - y) <= 1e-12 * max(1.0, abs(x), abs(y))
    return (a.coordinate == b.coordinate and a.n_time == b.n_time
            and a.n_space == b.n_space and near(a.t0, b.t0)
            and near(a.t_end, b.t_end) and near(a.dt, b.dt)
            and near(a.x_min, b.x_min) and near(a.x_max, b.x_max))


def conservation_defect(vA, vB):
    """Max over rows of |integral of (vA - vB) minus its terminal value|.

    The continuum equation loses spatial mass only through boundary fluxes,
    which are identical for two solves sharing boundary clamps, so the
    integral of the difference is a conserved quantity; the defect measures
    how well the discrete march preserves it.
    """
    if not _grids_match(vA.grid, vB.grid):
        raise ValueError("conservation defect needs surfaces on one grid")
    diff = vA.values - vB.values
    integrals = np.trapezoid(diff, dx=vA.grid.dx, axis=1)
    return float(np.max(np.abs(integrals - integrals[-1])))


def strict_gradient_margin(v, t_max=None):
    """Minimum over interior nodes of 1 - (T-t) * centered slope.

    Positive margin is the strict gradient bound; it degrades to ~0 only
    along the focusing cone into (T, cap).  ``t_max`` restricts the rows
    (the bound is strict only away from maturity).
    """
    grid = v.grid
    slopes = (v.values[:, 2:] - v.values[:, :-2]) / (2.0 * grid.dx)
    s = grid.t_end - grid.times()
    rows = np.ones(grid.n_time + 1, dtype=bool)
    if t_max is not None:
        rows = grid.times() <= t_max + 1e-12
    margins = 1.0 - s[rows, None] * slopes[rows]
    return float(margins.min())
