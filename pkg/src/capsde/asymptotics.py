"""First-order small-abatement expansion of option and allowance prices.

For abatement f = epsilon * f0 the option price admits

    U^eps(t, e) = U^0(t, e) - eps * correction + o(eps),

with the correction an expectation over zero-abatement (GBM) paths of a
time integral built from the closed-form price u0 and its delta:

    E[ 1{u0(tau, E_tau) >= K} *
       int_t^T f0(u0(s, E_s)) * d_e u0(s v tau, E_{s v tau})
             * (E_{s v tau} / E_s) ds ].

For s < tau the delta factor is frozen at tau, which splits the integral
into (path integral up to tau) * (delta at tau) * E_tau + (tail integral
after tau); both pieces accumulate in a single pass over the path.

The integrand's delta factor blows up like (T-s)^{-1/2} near maturity; the
quadrature stops at T - dt and reports the analytic bound on the dropped
tail separately rather than folding it into the estimate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _rng
from .closed_form import (SQRT_2PI, allowance_delta_bau, allowance_price_bau)
from .model import AbatementMap


@dataclass(frozen=True)
class ExpansionReport:
    u0_price: float
    correction: float          # the epsilon-coefficient, >= 0 for f0 >= 0
    mc_standard_error: float   # SE of the correction estimate
    n_paths: int
    u0_standard_error: float = 0.0
    tail_bound: float = 0.0    # analytic bound on the dropped [T-dt, T] piece

    def corrected_price(self, epsilon):
        return self.u0_price - epsilon * self.correction


def _base_callable(f0):
    if isinstance(f0, AbatementMap):
        return lambda arr: f0._eval_base(np.asarray(arr, dtype=float))
    return f0


def _lattice_steps(span, dt, what):
    m = span / dt
    m_round = int(round(m))
    if m_round < 1 or abs(m - m_round) > 1e-9 * max(1.0, m):
        raise ValueError(f"dt={dt} does not tile the {what} span {span}")
    return m_round


def _tail_bound(params, f0, dt):
    """Bound f0(u0) * d_e u0 * E over one step below maturity.

    The delta peaks at lambda e^{b s'} / (cap sigma sqrt(2 pi s')) over
    levels at time-to-go s'; integrating s'^{-1/2} over [0, dt] gives the
    2 sqrt(dt) factor.
    """
    f_peak = float(np.max(_base_callable(f0)(
        np.array([params.lambda_penalty]))))
    c_loc = params.lambda_penalty * math.exp(max(params.b, 0.0) * dt) \
        / (params.cap * params.sigma * SQRT_2PI)
    return f_peak * c_loc * 2.0 * math.sqrt(dt)


def first_order_correction(t, e, params, f0, option, n, dt, seed):
    """Monte Carlo estimate of the epsilon-coefficient for the option price.

    Simulates exact GBM increments on the dt-lattice of [t, T], evaluating
    the time integral by the trapezoidal rule ([t, tau] and [tau, T - dt]
    pieces).  ``f0`` may be a bare callable or an AbatementMap, whose
    unscaled base response is then used.  Also reports the zero-abatement
    option price estimated on the same paths (u0_price), so corrected
    prices share one noise realization.
    """
    if n <= 0:
        raise ValueError(f"n must be positive (got {n})")
    if e <= 0.0:
        raise ValueError(f"start level must be positive (got {e})")
    tau, strike = option.maturity, option.strike
    horizon = params.horizon
    if not t < tau < horizon:
        raise ValueError(f"need t < maturity < horizon "
                         f"(got {t}, {tau}, {horizon})")
    base = _base_callable(f0)
    m_tau = _lattice_steps(tau - t, dt, "maturity")
    m_tot = _lattice_steps(horizon - t, dt, "horizon")
    mu = (params.b - 0.5 * params.sigma ** 2) * dt
    vol = params.sigma * math.sqrt(dt)

    sum_c = sum_c2 = 0.0
    sum_u = sum_u2 = 0.0
    for width, z in _rng.iter_blocks(seed, n, m_tot):
        state = np.full(width, float(e))
        i1 = np.zeros(width)
        i2 = np.zeros(width)
        e_tau = delta_tau = u0_tau = None
        for k in range(m_tot):
            s_k = t + k * dt
            u0_k = allowance_price_bau(s_k, state, params)
            fk = base(u0_k)
            if k <= m_tau:
                w = 0.5 if k in (0, m_tau) else 1.0
                i1 += (w * dt) * fk / state
            if k == m_tau:
                e_tau = state.copy()
                u0_tau = u0_k
                delta_tau = allowance_delta_bau(tau, state, params)
            if m_tau <= k <= m_tot - 1:
                w = 0.5 if k in (m_tau, m_tot - 1) else 1.0
                i2 += (w * dt) * fk * allowance_delta_bau(s_k, state, params)
            if k < m_tot - 1:
                state = state * np.exp(mu + vol * z[k])
        indicator = (u0_tau >= strike).astype(float)
        sample = indicator * (delta_tau * e_tau * i1 + i2)
        payoff = np.maximum(u0_tau - strike, 0.0)
        sum_c += float(sample.sum())
        sum_c2 += float((sample * sample).sum())
        sum_u += float(payoff.sum())
        sum_u2 += float((payoff * payoff).sum())

    def _mean_se(total, total_sq):
        mean = total / n
        var = max(total_sq / n - mean * mean, 0.0)
        if n > 1:
            var *= n / (n - 1)
        return mean, math.sqrt(var / n)

    corr, corr_se = _mean_se(sum_c, sum_c2)
    u0, u0_se = _mean_se(sum_u, sum_u2)
    return ExpansionReport(u0_price=u0, correction=corr,
                           mc_standard_error=corr_se, n_paths=n,
                           u0_standard_error=u0_se,
                           tail_bound=_tail_bound(params, f0, dt))


def allowance_first_order_gap(t, e, params, f0, n, dt, seed):
    """Leading-order estimate of (u0 - u^eps)/eps for the allowance price.

    Monte Carlo mean of int_t^{T-dt} f0(u0(s, E_s)) d_e u0(s, E_s) ds over
    exact GBM paths; u0_price carries the closed-form value at (t, e).
    """
    if n <= 0:
        raise ValueError(f"n must be positive (got {n})")
    if e <= 0.0:
        raise ValueError(f"start level must be positive (got {e})")
    horizon = params.horizon
    if t >= horizon:
        raise ValueError(f"need t < horizon (got {t} >= {horizon})")
    base = _base_callable(f0)
    m_tot = _lattice_steps(horizon - t, dt, "horizon")
    mu = (params.b - 0.5 * params.sigma ** 2) * dt
    vol = params.sigma * math.sqrt(dt)
    sum_c = sum_c2 = 0.0
    for width, z in _rng.iter_blocks(seed, n, m_tot):
        state = np.full(width, float(e))
        acc = np.zeros(width)
        for k in range(m_tot):
            s_k = t + k * dt
            w = 0.5 if k in (0, m_tot - 1) else 1.0
            u0_k = allowance_price_bau(s_k, state, params)
            acc += (w * dt) * base(u0_k) \
                * allowance_delta_bau(s_k, state, params)
            if k < m_tot - 1:
                state = state * np.exp(mu + vol * z[k])
        sum_c += float(acc.sum())
        sum_c2 += float((acc * acc).sum())
    mean = sum_c / n
    var = max(sum_c2 / n - mean * mean, 0.0)
    if n > 1:
        var *= n / (n - 1)
    return ExpansionReport(
        u0_price=allowance_price_bau(t, e, params), correction=mean,
        mc_standard_error=math.sqrt(var / n), n_paths=n,
        tail_bound=_tail_bound(params, f0, dt))
