# cython: language_level=3
"""Compiled twin of the numpy reference kernels.

Statement-for-statement port of ``_fallback``; see that module for the
semantics, argument conventions, and the monotonicity-certificate
contract.  Keep the two in sync.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport INFINITY, exp, fabs, floor, log, sqrt

cnp.import_array()


cdef inline double _lut1(const double[::1] tab, long m1, double f_umax,
                         double u) nogil:
    cdef double inv_du
    cdef double pos, frac
    cdef long idx
    if f_umax <= 0.0:
        return tab[0]
    inv_du = m1 / f_umax
    if u < 0.0:
        u = 0.0
    elif u > f_umax:
        u = f_umax
    pos = u * inv_du
    idx = <long>pos
    if idx > m1 - 1:
        idx = m1 - 1
    frac = pos - idx
    return tab[idx] + frac * (tab[idx + 1] - tab[idx])


def march_log_lattice(terminal, einv, double drift0, double sigma_sq,
                      double dt, double dx, long n_steps, f_tab,
                      double f_umax, double left_val, double right_val,
                      bint lw_comp, drift_field=None):
    cdef double[::1] term = np.ascontiguousarray(terminal, dtype=np.float64)
    cdef double[::1] ein = np.ascontiguousarray(einv, dtype=np.float64)
    cdef long n = term.shape[0]
    surf_arr = np.empty((n_steps + 1, n))
    cdef double[:, ::1] S = surf_arr
    cdef bint feedback = f_tab is not None
    cdef double[::1] tab = np.empty(0) if f_tab is None else \
        np.ascontiguousarray(f_tab, dtype=np.float64)
    cdef long m1 = tab.shape[0] - 1
    cdef bint frozen = drift_field is not None
    cdef double[:, ::1] dfield = np.empty((0, 0)) if drift_field is None else \
        np.ascontiguousarray(drift_field, dtype=np.float64)
    cdef double inv_dx2 = 1.0 / (dx * dx)
    cdef double inv_2dx = 1.0 / (2.0 * dx)
    cdef double inv_dx = 1.0 / dx
    cdef double half_sig = 0.5 * sigma_sq
    cdef double hdt = 0.5 * dt
    cdef double min_w = INFINITY
    cdef long bad_step = -1
    cdef double required_dt = dt
    cdef long k, j
    cdef double a, d_tot, ap, am, wp, wm, w0, u_src, fu, step_min, amax, aa

    for j in range(n):
        S[n_steps, j] = term[j]
    with nogil:
        for k in range(n_steps - 1, -1, -1):
            step_min = INFINITY
            amax = 0.0
            for j in range(1, n - 1):
                if feedback:
                    if frozen:
                        u_src = dfield[k + 1, j]
                    else:
                        u_src = S[k + 1, j]
                    fu = _lut1(tab, m1, f_umax, u_src)
                    a = drift0 - fu * ein[j]
                else:
                    a = drift0
                if lw_comp:
                    d_tot = half_sig + hdt * a * a
                else:
                    d_tot = half_sig
                if fabs(a) * dx <= 2.0 * d_tot:
                    wp = dt * (d_tot * inv_dx2 + a * inv_2dx)
                    wm = dt * (d_tot * inv_dx2 - a * inv_2dx)
                else:
                    ap = a if a > 0.0 else 0.0
                    am = ap - a
                    wp = dt * (d_tot * inv_dx2 + ap * inv_dx)
                    wm = dt * (d_tot * inv_dx2 + am * inv_dx)
                w0 = 1.0 - wp - wm
                if w0 < step_min:
                    step_min = w0
                aa = fabs(a)
                if aa > amax:
                    amax = aa
                S[k, j] = w0 * S[k + 1, j] + wp * S[k + 1, j + 1] \
                    + wm * S[k + 1, j - 1]
            S[k, 0] = left_val
            S[k, n - 1] = right_val
            if step_min < min_w:
                min_w = step_min
            if step_min < 0.0:
                bad_step = k
                required_dt = dx * dx / (sigma_sq + dx * amax)
                break
    return surf_arr, float(min_w), int(bad_step), float(required_dt)


def march_toy_lattice(terminal, dbar, double dt, double dx, double left_val,
                      double right_val, long store_every=1):
    cdef double[::1] term = np.ascontiguousarray(terminal, dtype=np.float64)
    cdef double[::1] db = np.ascontiguousarray(dbar, dtype=np.float64)
    cdef long n = term.shape[0]
    cdef long n_steps = db.shape[0]
    if n_steps % store_every != 0:
        raise ValueError("store_every must divide the number of steps")
    cdef long n_out = n_steps // store_every
    surf_arr = np.empty((n_out + 1, n))
    cdef double[:, ::1] S = surf_arr
    cdef double[::1] row = term.copy()
    cdef double[::1] new = np.empty(n)
    cdef double inv_dx2 = 1.0 / (dx * dx)
    cdef double inv_dx = 1.0 / dx
    cdef double min_w = INFINITY
    cdef long bad_step = -1
    cdef double required_dt = dt
    cdef long k, j
    cdef double dk, vmax, step_min, lap, fl_prev, fl_j

    for j in range(n):
        S[n_out, j] = term[j]
    with nogil:
        for k in range(n_steps - 1, -1, -1):
            dk = db[k]
            vmax = row[0]
            for j in range(1, n):
                if row[j] > vmax:
                    vmax = row[j]
            step_min = 1.0 - dt * (2.0 * dk * inv_dx2 + vmax * inv_dx)
            if step_min < min_w:
                min_w = step_min
            if step_min < 0.0:
                bad_step = k
                required_dt = 1.0 / (2.0 * dk * inv_dx2 + vmax * inv_dx)
                break
            fl_prev = 0.5 * row[0] * row[0]
            for j in range(1, n - 1):
                fl_j = 0.5 * row[j] * row[j]
                lap = row[j + 1] - 2.0 * row[j] + row[j - 1]
                new[j] = row[j] + dt * (dk * lap * inv_dx2
                                        - (fl_j - fl_prev) * inv_dx)
                fl_prev = fl_j
            new[0] = left_val
            new[n - 1] = right_val
            for j in range(n):
                row[j] = new[j]
            if k % store_every == 0:
                for j in range(n):
                    S[k // store_every, j] = row[j]
    return surf_arr, float(min_w), int(bad_step), float(required_dt)


cdef inline double _bilin(const double[:, ::1] V, long i, double wt,
                          double jx, long n_space,
                          cnp.int8_t* flagged) nogil:
    cdef long j
    cdef double wx, lo, hi
    if jx < 0.0 or jx > <double>n_space:
        flagged[0] = 1
    j = <long>floor(jx)
    if j < 0:
        j = 0
    elif j > n_space - 1:
        j = n_space - 1
    wx = jx - j
    if wx < 0.0:
        wx = 0.0
    elif wx > 1.0:
        wx = 1.0
    lo = (1.0 - wx) * V[i, j] + wx * V[i, j + 1]
    hi = (1.0 - wx) * V[i + 1, j] + wx * V[i + 1, j + 1]
    return (1.0 - wt) * lo + wt * hi


cdef inline long _time_cell(double t, double t0g, double dtg, long n_time,
                            double* wt) nogil:
    cdef double it = (t - t0g) / dtg
    cdef long i = <long>floor(it)
    if i >= n_time - 1:
        i = n_time - 1
        wt[0] = 0.0
    elif i < 0:
        i = 0
        wt[0] = 0.0
    else:
        wt[0] = it - i
    return i


def feedback_euler_block(values, double t0g, double dtg, double x0g,
                         double dxg, long mode, double b, double sigma,
                         f_tab, double f_umax, double horizon, double e0,
                         double t0, double dt, double last_dt, noise):
    cdef double[:, ::1] V = np.ascontiguousarray(values, dtype=np.float64)
    cdef double[:, ::1] Z = np.ascontiguousarray(noise, dtype=np.float64)
    cdef long n_time = V.shape[0] - 1
    cdef long n_space = V.shape[1] - 1
    cdef long n_steps = Z.shape[0]
    cdef long width = Z.shape[1]
    cdef double[::1] tab = np.empty(0) if f_tab is None else \
        np.ascontiguousarray(f_tab, dtype=np.float64)
    cdef long m1 = tab.shape[0] - 1
    state_arr = np.full(width, e0, dtype=np.float64)
    cdef double[::1] state = state_arr
    flags_arr = np.zeros(width, dtype=np.int8)
    cdef cnp.int8_t[::1] flags = flags_arr
    cdef double e_lo = exp(x0g)
    cdef double e_hi = exp(x0g + n_space * dxg)
    cdef double t = t0
    cdef long k, p, i
    cdef double dtk, sq, wt, coord, v, fu, st, z
    cdef long clamped = 0

    with nogil:
        for k in range(n_steps):
            dtk = dt if k < n_steps - 1 else last_dt
            sq = sqrt(dtk)
            i = _time_cell(t, t0g, dtg, n_time, &wt)
            for p in range(width):
                if mode == 1:
                    coord = log(state[p])
                else:
                    coord = state[p]
                v = _bilin(V, i, wt, (coord - x0g) / dxg, n_space, &flags[p])
                z = Z[k, p]
                if mode == 0:
                    state[p] = state[p] + (-v) * dtk + ((horizon - t) * sq) * z
                else:
                    fu = _lut1(tab, m1, f_umax, v)
                    st = state[p] + (b * state[p] - fu) * dtk \
                        + (sigma * sq) * state[p] * z
                    if st < e_lo:
                        st = e_lo
                        flags[p] = 1
                    elif st > e_hi:
                        st = e_hi
                        flags[p] = 1
                    state[p] = st
            t += dtk
        for p in range(width):
            if flags[p]:
                clamped += 1
    return state_arr, int(clamped)


def malliavin_block(values, grad, double t0g, double dtg, double x0g,
                    double dxg, double horizon, double e0, double t0,
                    double dt, noise):
    cdef double[:, ::1] V = np.ascontiguousarray(values, dtype=np.float64)
    cdef double[:, ::1] G = np.ascontiguousarray(grad, dtype=np.float64)
    cdef double[:, ::1] Z = np.ascontiguousarray(noise, dtype=np.float64)
    cdef long n_time = V.shape[0] - 1
    cdef long n_space = V.shape[1] - 1
    cdef long n_steps = Z.shape[0]
    cdef long width = Z.shape[1]
    state_arr = np.full(width, e0, dtype=np.float64)
    w_arr = np.empty(width)
    cdef double[::1] state = state_arr
    cdef double[::1] w = w_arr
    logj_arr = np.zeros(width)
    wint_arr = np.zeros(width)
    cdef double[::1] logj = logj_arr
    cdef double[::1] wint = wint_arr
    flags_arr = np.zeros(width, dtype=np.int8)
    cdef cnp.int8_t[::1] flags = flags_arr
    cdef double sq = sqrt(dt)
    cdef double t = t0
    cdef long k, p, i
    cdef double wt, v, g, z, vcut
    cdef long clamped = 0

    with nogil:
        for k in range(n_steps):
            i = _time_cell(t, t0g, dtg, n_time, &wt)
            for p in range(width):
                v = _bilin(V, i, wt, (state[p] - x0g) / dxg, n_space,
                           &flags[p])
                g = _bilin(G, i, wt, (state[p] - x0g) / dxg, n_space,
                           &flags[p])
                z = Z[k, p]
                wint[p] = wint[p] + exp(logj[p]) * (sq * z)
                state[p] = state[p] + (-v) * dt + ((horizon - t) * sq) * z
                logj[p] = logj[p] - g * dt
            t += dt
        i = _time_cell(t, t0g, dtg, n_time, &wt)
        for p in range(width):
            vcut = _bilin(V, i, wt, (state[p] - x0g) / dxg, n_space,
                          &flags[p])
            w[p] = vcut * wint[p]
        for p in range(width):
            if flags[p]:
                clamped += 1
    return w_arr, int(clamped)
