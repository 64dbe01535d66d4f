"""Pure-numpy reference implementation of the hot loops.

The compiled backend in ``_compiled.pyx`` mirrors these routines statement
for statement; any change here must be ported there.  Both backends are
deterministic for a fixed seed and agree with each other to rounding level
(exact bit equality across backends is not guaranteed because libm and
numpy transcendentals may differ in the last ulp).

Conventions shared by the marches:

* surfaces are stored row-major, ``surf[k, j] ~ u(t0 + k*dt_out, x_j)``;
* marches run backward from the terminal row and certify monotonicity at
  every step: each new value must be a convex combination of old ones, so
  the diagonal weight ``w0`` must stay non-negative.  On failure the march
  aborts and reports the offending step and an admissible time step.
"""

from __future__ import annotations

import math

import numpy as np


def _lut_eval(u, f_tab, f_umax):
    """Piecewise-linear table lookup of f on [0, f_umax], clipped."""
    m1 = f_tab.shape[0] - 1
    if f_umax <= 0.0:
        return np.full_like(u, f_tab[0])
    inv_du = m1 / f_umax
    pos = np.clip(u, 0.0, f_umax) * inv_du
    idx = np.minimum(pos.astype(np.int64), m1 - 1)
    frac = pos - idx
    return f_tab[idx] + frac * (f_tab[idx + 1] - f_tab[idx])


def march_log_lattice(terminal, einv, drift0, sigma_sq, dt, dx, n_steps,
                      f_tab, f_umax, left_val, right_val, lw_comp,
                      drift_field=None):
    """Backward march of the allowance/option operator in log coordinates.

    Space derivative terms use centered differences wherever the cell
    Peclet condition |a| dx <= 2 D holds and monotone upwinding elsewhere.
    With ``lw_comp`` the diffusion coefficient is D = sigma^2/2 + a^2 dt/2,
    cancelling the anti-diffusion of the explicit Euler step.

    ``drift_field`` freezes the feedback argument to an externally supplied
    surface (row k+1 feeds the step that produces row k); when omitted and
    ``f_tab`` is given, the march feeds back on its own current row.

    Returns (surface, min_weight, bad_step, required_dt); ``bad_step`` is -1
    on success, otherwise the time index at which monotonicity failed, with
    ``required_dt`` an admissible step size there.
    """
    n = terminal.shape[0]
    surf = np.empty((n_steps + 1, n))
    surf[n_steps] = terminal
    inv_dx2 = 1.0 / (dx * dx)
    inv_2dx = 1.0 / (2.0 * dx)
    inv_dx = 1.0 / dx
    half_sig = 0.5 * sigma_sq
    hdt = 0.5 * dt
    min_w = math.inf
    bad_step = -1
    required_dt = dt
    for k in range(n_steps - 1, -1, -1):
        row = surf[k + 1]
        if f_tab is not None:
            u_src = drift_field[k + 1] if drift_field is not None else row
            fu = _lut_eval(u_src, f_tab, f_umax)
            a = drift0 - fu * einv
        else:
            a = np.full(n, drift0)
        if lw_comp:
            d_tot = half_sig + hdt * a * a
        else:
            d_tot = np.full(n, half_sig)
        centered = np.abs(a) * dx <= 2.0 * d_tot
        ap = np.maximum(a, 0.0)
        am = ap - a
        wp = np.where(centered, dt * (d_tot * inv_dx2 + a * inv_2dx),
                      dt * (d_tot * inv_dx2 + ap * inv_dx))
        wm = np.where(centered, dt * (d_tot * inv_dx2 - a * inv_2dx),
                      dt * (d_tot * inv_dx2 + am * inv_dx))
        w0 = 1.0 - wp - wm
        step_min = float(w0[1:-1].min())
        if step_min < min_w:
            min_w = step_min
        if step_min < 0.0:
            bad_step = k
            amax = float(np.abs(a[1:-1]).max())
            required_dt = dx * dx / (sigma_sq + dx * amax)
            break
        new = surf[k]
        new[1:-1] = (w0[1:-1] * row[1:-1] + wp[1:-1] * row[2:]
                     + wm[1:-1] * row[:-2])
        new[0] = left_val
        new[-1] = right_val
    return surf, min_w, bad_step, required_dt


def march_toy_lattice(terminal, dbar, dt, dx, left_val, right_val,
                      store_every=1):
    """Backward march of the toy conservation-law model.

    In forward time s = T - t the equation is a viscous conservation law
    d_s v + d_e(v^2/2) = dbar(s) d_ee v; the convective flux is discretized
    in Godunov (upwind-from-the-left) form, exact for v >= 0, so the
    spatial integral of the solution changes only through the boundary
    fluxes, which cancel when two solves share boundary clamps.

    ``dbar[k]`` is the diffusion coefficient averaged over the step that
    produces row k.  Rows are retained every ``store_every`` steps
    (n_steps must divide evenly); intermediate rows live only in the two
    working buffers.
    """
    n = terminal.shape[0]
    n_steps = dbar.shape[0]
    if n_steps % store_every != 0:
        raise ValueError("store_every must divide the number of steps")
    n_out = n_steps // store_every
    surf = np.empty((n_out + 1, n))
    surf[n_out] = terminal
    inv_dx2 = 1.0 / (dx * dx)
    inv_dx = 1.0 / dx
    min_w = math.inf
    bad_step = -1
    required_dt = dt
    row = terminal.copy()
    for k in range(n_steps - 1, -1, -1):
        dk = dbar[k]
        vmax = float(row.max())
        step_min = 1.0 - dt * (2.0 * dk * inv_dx2 + vmax * inv_dx)
        if step_min < min_w:
            min_w = step_min
        if step_min < 0.0:
            bad_step = k
            required_dt = 1.0 / (2.0 * dk * inv_dx2 + vmax * inv_dx)
            break
        flux = 0.5 * row * row
        lap = row[2:] - 2.0 * row[1:-1] + row[:-2]
        new = np.empty(n)
        new[1:-1] = row[1:-1] + dt * (dk * lap * inv_dx2
                                      - (flux[1:-1] - flux[:-2]) * inv_dx)
        new[0] = left_val
        new[-1] = right_val
        row = new
        if k % store_every == 0:
            surf[k // store_every] = row
    return surf, min_w, bad_step, required_dt


def _interp_rows(values, t, x, t0g, dtg, n_time, x0g, dxg, n_space):
    """Bilinear surface lookup for a vector of space points at one time.

    One-sided in the final time interval: the terminal row may carry a
    jump, so queries past the second-to-last row hold that row instead of
    blending into the discontinuity.  Space queries outside the grid clamp
    to the edge node and are flagged.
    """
    it = (t - t0g) / dtg
    i = int(math.floor(it))
    if i >= n_time - 1:
        i, wt = n_time - 1, 0.0
    elif i < 0:
        i, wt = 0, 0.0
    else:
        wt = it - i
    jx = (x - x0g) / dxg
    j = np.floor(jx).astype(np.int64)
    out = (jx < 0.0) | (jx > float(n_space))
    j = np.clip(j, 0, n_space - 1)
    wx = np.clip(jx - j, 0.0, 1.0)
    rlo = values[i]
    rhi = values[i + 1]
    lo = (1.0 - wx) * rlo[j] + wx * rlo[j + 1]
    hi = (1.0 - wx) * rhi[j] + wx * rhi[j + 1]
    return (1.0 - wt) * lo + wt * hi, out


def feedback_euler_block(values, t0g, dtg, x0g, dxg, mode, b, sigma,
                         f_tab, f_umax, horizon, e0, t0, dt, last_dt, noise):
    """Euler-Maruyama forward paths driven by a solved value surface.

    mode 0 (toy): dE = -v(t, E) dt + (T - t) dW on the raw emission axis.
    mode 1 (allowance): dE = (b E - f(v(t, ln E))) dt + sigma E dW; the
    state is kept inside the surface's emission range so the log lookup
    stays defined, and every clamped path is counted once.

    Returns (terminal states, number of paths that ever left the grid).
    """
    n_steps, width = noise.shape
    n_time = values.shape[0] - 1
    n_space = values.shape[1] - 1
    state = np.full(width, float(e0))
    clamped = np.zeros(width, dtype=bool)
    e_lo = math.exp(x0g)
    e_hi = math.exp(x0g + n_space * dxg)
    t = t0
    for k in range(n_steps):
        dtk = dt if k < n_steps - 1 else last_dt
        coord = np.log(state) if mode == 1 else state
        val, out = _interp_rows(values, t, coord, t0g, dtg, n_time,
                                x0g, dxg, n_space)
        clamped |= out
        sq = math.sqrt(dtk)
        z = noise[k]
        if mode == 0:
            state = state + (-val) * dtk + ((horizon - t) * sq) * z
        else:
            fu = _lut_eval(val, f_tab, f_umax)
            state = state + (b * state - fu) * dtk + (sigma * sq) * state * z
            bad = (state < e_lo) | (state > e_hi)
            if bad.any():
                clamped |= bad
                state = np.clip(state, e_lo, e_hi)
        t += dtk
    return state, int(np.count_nonzero(clamped))


def malliavin_block(values, grad, t0g, dtg, x0g, dxg, horizon, e0, t0, dt,
                    noise):
    """Per-path weights for the pathwise gradient representation.

    Simulates the toy forward dynamics from (t0, e0) up to the cutoff time
    t0 + n_steps * dt, accumulating the first-variation process J_s
    (through its log) and the stochastic integral of J against the driving
    noise.  The returned weight is v(cutoff, state) * integral; its scaled
    block mean estimates d_e v(t0, e0).
    """
    n_steps, width = noise.shape
    n_time = values.shape[0] - 1
    n_space = values.shape[1] - 1
    state = np.full(width, float(e0))
    logj = np.zeros(width)
    wint = np.zeros(width)
    clamped = np.zeros(width, dtype=bool)
    sq = math.sqrt(dt)
    t = t0
    for k in range(n_steps):
        v, out_v = _interp_rows(values, t, state, t0g, dtg, n_time,
                                x0g, dxg, n_space)
        g, out_g = _interp_rows(grad, t, state, t0g, dtg, n_time,
                                x0g, dxg, n_space)
        clamped |= out_v | out_g
        z = noise[k]
        wint = wint + np.exp(logj) * (sq * z)
        state = state + (-v) * dt + ((horizon - t) * sq) * z
        logj = logj - g * dt
        t += dt
    vcut, out = _interp_rows(values, t, state, t0g, dtg, n_time,
                             x0g, dxg, n_space)
    clamped |= out
    return vcut * wint, int(np.count_nonzero(clamped))
