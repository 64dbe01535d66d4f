"""Path simulation: GBM, surface-driven forward SDEs, and path statistics.

All estimators draw their noise through the block streams in ``_rng``, so a
fixed seed pins every path exactly, independent of batch size, thread
count, or kernel backend scheduling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels, _rng
from .pde import surface_gradient

WILSON_Z = 1.959963984540054  # two-sided 95%


@dataclass
class PathBatch:
    n_paths: int
    dt: float
    t0: float
    t_end: float
    terminal_values: np.ndarray
    seed: int
    scheme: str            # "exact_lognormal" or "euler"
    n_clamped: int = 0     # paths that ever left the surface grid


def _steps_for(t0, t_end, dt):
    """Number of Euler steps and the (possibly partial) final step size."""
    span = t_end - t0
    n_full = int(math.floor(span / dt * (1.0 + 1e-12)))
    rem = span - n_full * dt
    if rem > 1e-12 * dt:
        return n_full + 1, rem
    return n_full, dt


def simulate_gbm(params, t, e, t_end, n, seed, dt=None,
                 scheme="exact_lognormal"):
    """Terminal values of dE = b E dt + sigma E dW started at (t, e).

    ``exact_lognormal`` draws E_{t_end} in one exact step; ``euler`` runs
    Euler-Maruyama with step ``dt`` (weak order one, used as the comparison
    ladder for the exact sampler).
    """
    if e <= 0.0:
        raise ValueError(f"start level must be positive (got {e})")
    if t >= t_end:
        raise ValueError(f"need t < t_end (got {t} >= {t_end})")
    if n <= 0:
        raise ValueError(f"n must be positive (got {n})")
    span = t_end - t
    chunks = []
    if scheme == "exact_lognormal":
        mu = (params.b - 0.5 * params.sigma ** 2) * span
        vol = params.sigma * math.sqrt(span)
        for _, z in _rng.iter_blocks(seed, n, 1):
            chunks.append(e * np.exp(mu + vol * z[0]))
        out_dt = span
    elif scheme == "euler":
        if dt is None or dt <= 0.0:
            raise ValueError("euler scheme needs a positive dt")
        n_steps, last_dt = _steps_for(t, t_end, dt)
        for _, z in _rng.iter_blocks(seed, n, n_steps):
            state = np.full(z.shape[1], float(e))
            for k in range(n_steps):
                dtk = dt if k < n_steps - 1 else last_dt
                state = state + params.b * state * dtk \
                    + (params.sigma * math.sqrt(dtk)) * state * z[k]
            chunks.append(state)
        out_dt = dt
    else:
        raise ValueError(f"unknown scheme {scheme!r}")
    return PathBatch(n_paths=n, dt=out_dt, t0=t, t_end=t_end,
                     terminal_values=np.concatenate(chunks)[:n], seed=seed,
                     scheme=scheme)


def _zero_table():
    return np.zeros(2)


def simulate_feedback_forward(v, t0, e, n, dt, seed, market=None,
                              abatement=None):
    """Euler-Maruyama paths whose drift reads the solved surface ``v``.

    On a raw-emission (toy) surface the dynamics are
    dE = -v(t, E) dt + (T - t) dW.  On a log-emission (allowance) surface
    they are dE = (b E - f(v(t, ln E))) dt + sigma E dW, which needs
    ``market`` and optionally ``abatement``.  Surface values are bilinearly
    interpolated (one-sided in the final time interval); paths that leave
    the grid read the clamped boundary value and are counted in
    ``n_clamped``.
    """
    grid = v.grid
    if n <= 0:
        raise ValueError(f"n must be positive (got {n})")
    if dt <= 0.0:
        raise ValueError(f"dt must be positive (got {dt})")
    if t0 < grid.t0 - 1e-12:
        raise ValueError(f"start time {t0} precedes the surface ({grid.t0})")
    t_end = grid.t_end
    n_steps, last_dt = _steps_for(t0, t_end, dt)
    if n_steps == 0:
        raise ValueError(f"need t0 < surface end {t_end} (got {t0})")
    if grid.coordinate == "emission":
        mode, b, sigma = 0, 0.0, 0.0
        f_tab, f_umax = _zero_table(), 1.0
    elif grid.coordinate == "log_emission":
        if market is None:
            raise ValueError("allowance-surface simulation needs market params")
        if e <= 0.0:
            raise ValueError(f"start level must be positive (got {e})")
        mode, b, sigma = 1, market.b, market.sigma
        if abatement is not None and abatement.epsilon != 0.0:
            f_umax = v.value_ceiling
            f_tab = np.ascontiguousarray(abatement.table(f_umax))
        else:
            f_tab, f_umax = _zero_table(), max(v.value_ceiling, 1.0)
    else:
        raise ValueError(f"unknown grid coordinate {grid.coordinate!r}")
    values = np.ascontiguousarray(v.values)
    chunks = []
    clamped = 0
    for _, z in _rng.iter_blocks(seed, n, n_steps):
        states, n_bad = _kernels.feedback_euler_block(
            values, grid.t0, grid.dt, grid.x_min, grid.dx, mode, b, sigma,
            f_tab, f_umax, t_end, e, t0, dt, last_dt,
            np.ascontiguousarray(z))
        chunks.append(states)
        clamped += n_bad
    return PathBatch(n_paths=n, dt=dt, t0=t0, t_end=t_end,
                     terminal_values=np.concatenate(chunks)[:n], seed=seed,
                     scheme="euler", n_clamped=clamped)


@dataclass(frozen=True)
class MassEstimate:
    estimate: float
    lower: float       # Wilson 95% interval
    upper: float
    n_hits: int
    n_paths: int
    window: float


def wilson_interval(hits, n, z=WILSON_Z):
    """95% score interval for a binomial proportion."""
    if n <= 0:
        raise ValueError("need at least one trial")
    p = hits / n
    denom = 1.0 + z * z / n
    center = (p + z * z / (2.0 * n)) / denom
    half = z * math.sqrt(p * (1.0 - p) / n + z * z / (4.0 * n * n)) / denom
    return max(center - half, 0.0), min(center + half, 1.0)


def terminal_mass_estimate(batch, cap, window):
    """Fraction of terminal values in [cap - window, cap + window]."""
    if window <= 0.0:
        raise ValueError(f"window must be positive (got {window})")
    hits = int(np.count_nonzero(
        np.abs(batch.terminal_values - cap) <= window))
    lo, hi = wilson_interval(hits, batch.n_paths)
    return MassEstimate(estimate=hits / batch.n_paths, lower=lo, upper=hi,
                        n_hits=hits, n_paths=batch.n_paths, window=window)


@dataclass(frozen=True)
class GradientEstimate:
    estimate: float
    std_error: float
    n_paths: int
    cutoff: float      # time left between the evaluation point and maturity
    n_clamped: int = 0


def malliavin_gradient_estimate(v, t0, e, n, dt, seed, cutoff=None):
    """Pathwise estimate of d_e v(t0, e) on a toy surface.

    Uses the representation of the space derivative as a scaled expectation
    of v near maturity times the Wiener integral of the first variation
    J_s = exp(-int d_e v du):

        d_e v(t0, e) = 2 E[ v(t_c, E_{t_c}) * int_{t0}^{t_c} J dW ]
                         / ((T - t0)^2 - (T - t_c)^2),

    exact for any cutoff time t_c < T.  The default cutoff stops where the
    stored surface still resolves the terminal layer: the remaining noise
    has standard deviation (T - t_c)^(3/2)/sqrt(3), and requiring at least
    four cells of it gives t_c = T - (48 dx^2)^(1/3).  The normalization
    uses the cutoff actually applied, so stopping early introduces no
    O(cutoff) bias; only under-resolution of the surface near maturity
    would, which the default avoids.
    """
    grid = v.grid
    if grid.coordinate != "emission":
        raise ValueError("gradient estimator expects a toy (raw-emission) surface")
    if n <= 0:
        raise ValueError(f"n must be positive (got {n})")
    horizon = grid.t_end
    if cutoff is None:
        cutoff = max(dt, (48.0 * grid.dx ** 2) ** (1.0 / 3.0))
    n_steps = int(round((horizon - t0 - cutoff) / dt))
    if n_steps < 1:
        raise ValueError(
            f"cutoff {cutoff} leaves no room to integrate from t0={t0}")
    delta = horizon - (t0 + n_steps * dt)
    if delta <= 0.0:
        raise ValueError(f"cutoff {cutoff} must leave time before the horizon")
    values = np.ascontiguousarray(v.values)
    grad = np.ascontiguousarray(surface_gradient(v))
    chunks = []
    clamped = 0
    for _, z in _rng.iter_blocks(seed, n, n_steps):
        w, n_bad = _kernels.malliavin_block(
            values, grad, grid.t0, grid.dt, grid.x_min, grid.dx, horizon,
            e, t0, dt, np.ascontiguousarray(z))
        chunks.append(w)
        clamped += n_bad
    w = np.concatenate(chunks)[:n]
    scale = 2.0 / ((horizon - t0) ** 2 - delta ** 2)
    std = float(w.std(ddof=1)) if n > 1 else 0.0
    return GradientEstimate(estimate=scale * float(w.mean()),
                            std_error=scale * std / math.sqrt(n),
                            n_paths=n, cutoff=delta, n_clamped=clamped)
