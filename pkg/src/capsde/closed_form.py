"""Closed forms for the business-as-usual market (no abatement feedback).

With f identically zero the emission process is a geometric Brownian motion
and the allowance price is the discounted penalty probability

    u0(t, e) = lambda * P[E_T >= cap | E_t = e],

which evaluates to a normal CDF of a log-moneyness ratio.  These formulas
are the oracle every finite-difference run is measured against, and the
backbone of the small-abatement expansion.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from . import _rng

SQRT_2PI = math.sqrt(2.0 * math.pi)


def std_normal_cdf(x):
    """Standard normal CDF, vectorized; scalar in, scalar out."""
    out = ndtr(x)
    return float(out) if np.isscalar(x) or np.ndim(x) == 0 else out


def _check_before(t, horizon, label="horizon"):
    if t >= horizon:
        raise ValueError(f"t={t} must be strictly before the {label} {horizon}")


def allowance_price_bau(t, e, params):
    """Allowance price under zero abatement.

    Accepts scalar or array ``e``; non-positive emission levels price at 0
    (the process stays at 0 once there).
    """
    _check_before(t, params.horizon)
    tau = params.horizon - t
    arr = np.asarray(e, dtype=float)
    safe = np.where(arr > 0.0, arr, 1.0)
    s = params.sigma * math.sqrt(tau)
    d = (np.log(safe / params.cap) + params.b * tau) / s - 0.5 * s
    out = params.lambda_penalty * ndtr(d)
    out = np.where(arr > 0.0, out, 0.0)
    return float(out) if np.isscalar(e) or np.ndim(e) == 0 else out


def allowance_delta_bau(t, e, params):
    """Spatial derivative of the zero-abatement allowance price."""
    _check_before(t, params.horizon)
    tau = params.horizon - t
    arr = np.asarray(e, dtype=float)
    safe = np.where(arr > 0.0, arr, 1.0)
    s = params.sigma * math.sqrt(tau)
    d = (np.log(safe / params.cap) + params.b * tau) / s - 0.5 * s
    out = params.lambda_penalty * np.exp(-0.5 * d * d) / (SQRT_2PI * s * safe)
    out = np.where(arr > 0.0, out, 0.0)
    return float(out) if np.isscalar(e) or np.ndim(e) == 0 else out


def delta_bound_constant(params):
    """Max over (t, e) of the zero-abatement delta at unit time-to-go scale.

    The delta peaks in e at lambda / (cap * sigma * sqrt(2 pi (T - t)))
    * exp(b (T - t)); maximizing the drift factor over t in [0, T] gives a
    single constant valid at every time with sqrt(T - t) factored out:

        sup_e  d_e u0(t, e) <= C / sqrt(T - t),   C = this constant.
    """
    growth = math.exp(max(params.b, 0.0) * params.horizon)
    return params.lambda_penalty * growth / (params.cap * params.sigma * SQRT_2PI)


@dataclass(frozen=True)
class PriceEstimate:
    value: float
    std_error: float
    n_paths: int


def option_price_bau(t, e, params, option, n_paths, seed):
    """European call on the zero-abatement allowance price, by Monte Carlo.

    Draws E_tau exactly (one lognormal step from t to the option maturity)
    and averages the payoff (u0(tau, E_tau) - K)+.  Exact sampling means the
    only error is statistical, reported as one standard error.
    """
    if n_paths <= 0:
        raise ValueError(f"n_paths must be positive (got {n_paths})")
    _check_before(t, option.maturity, "option maturity")
    _check_before(option.maturity, params.horizon)
    if e <= 0.0:
        return PriceEstimate(value=0.0, std_error=0.0, n_paths=n_paths)
    dt = option.maturity - t
    mu = (params.b - 0.5 * params.sigma ** 2) * dt
    vol = params.sigma * math.sqrt(dt)
    total = 0.0
    total_sq = 0.0
    for width, z in _rng.iter_blocks(seed, n_paths, 1):
        e_tau = e * np.exp(mu + vol * z[0])
        payoff = np.maximum(
            allowance_price_bau(option.maturity, e_tau, params) - option.strike, 0.0)
        total += float(payoff.sum())
        total_sq += float((payoff * payoff).sum())
    mean = total / n_paths
    var = max(total_sq / n_paths - mean * mean, 0.0)
    if n_paths > 1:
        var *= n_paths / (n_paths - 1)
    return PriceEstimate(value=mean, std_error=math.sqrt(var / n_paths),
                         n_paths=n_paths)
