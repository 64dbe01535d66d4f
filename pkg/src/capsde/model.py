"""Shared domain types for the allowance-pricing solvers.

The market model: a cumulative-emission process E with multiplicative noise,

    dE_t = (b E_t - f(Y_t)) dt + sigma E_t dW_t,

where Y_t is the allowance price, capped at ``lambda_penalty`` and paid when
terminal emissions exceed ``cap``.  The abatement response f is the
(epsilon-scaled) aggregate reduction firms apply at a given price.

Constructors here do not raise on bad numbers; ``validate`` collects every
violation into a report so a caller (or the CLI) can show them all at once.
Solvers refuse to run when the report is non-empty.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np


class StabilityError(RuntimeError):
    """Raised when an explicit march loses its monotonicity certificate.

    Attributes carry the offending time index and the time-step size that
    would have satisfied the per-node weight bound at that step.
    """

    def __init__(self, message, time_index, required_dt):
        super().__init__(message)
        self.time_index = time_index
        self.required_dt = required_dt


@dataclass(frozen=True)
class MarketParams:
    b: float                # relative emission drift
    sigma: float            # relative emission volatility
    lambda_penalty: float   # terminal penalty per unit (price ceiling)
    cap: float              # emission cap triggering the penalty
    horizon: float          # compliance horizon T


@dataclass(frozen=True)
class AbatementMap:
    """Price-to-abatement response f(y) = epsilon * base(y).

    ``base`` is the unscaled aggregate response; ``epsilon`` the smallness
    parameter of the expansion; ``lipschitz_bound`` a constant L with
    |f(y) - f(y')| <= L |y - y'| on [0, ceiling], used for stability
    estimates.
    """

    base: Callable[[float], float]
    epsilon: float
    lipschitz_bound: float

    def __call__(self, y):
        arr = np.asarray(y, dtype=float)
        if self.epsilon == 0.0:
            out = np.zeros_like(arr)
        else:
            out = self.epsilon * self._eval_base(arr)
        return float(out) if np.isscalar(y) else out

    def _eval_base(self, arr):
        try:
            return np.asarray(self.base(arr), dtype=float)
        except (TypeError, ValueError):
            flat = np.array([self.base(v) for v in arr.ravel()], dtype=float)
            return flat.reshape(arr.shape)

    def table(self, y_max, n_nodes=4097):
        """Evaluate f on a regular grid over [0, y_max] (lookup-table form)."""
        return self(np.linspace(0.0, y_max, n_nodes))

    @classmethod
    def zero(cls):
        return cls(base=lambda y: 0.0 * y, epsilon=0.0, lipschitz_bound=0.0)

    @classmethod
    def linear(cls, epsilon, slope=1.0):
        return cls(base=lambda y: slope * y, epsilon=epsilon,
                   lipschitz_bound=abs(slope) * abs(epsilon))


@dataclass(frozen=True)
class SpaceTimeGrid:
    """Regular rectangular lattice for the explicit marches.

    ``coordinate`` says what the space axis means: ``"log_emission"`` for the
    allowance/option solver (x = ln e) and ``"emission"`` for the toy model
    (raw e).  ``n_time`` and ``n_space`` count intervals, so there are
    ``n_time + 1`` rows and ``n_space + 1`` nodes.
    """

    t0: float
    t_end: float
    dt: float
    x_min: float
    x_max: float
    dx: float
    n_time: int
    n_space: int
    coordinate: str = "log_emission"

    @classmethod
    def regular(cls, t0, t_end, n_time, x_min, x_max, n_space,
                coordinate="log_emission"):
        return cls(
            t0=t0, t_end=t_end, dt=(t_end - t0) / n_time,
            x_min=x_min, x_max=x_max, dx=(x_max - x_min) / n_space,
            n_time=n_time, n_space=n_space, coordinate=coordinate,
        )

    def times(self):
        return self.t0 + self.dt * np.arange(self.n_time + 1)

    def space_nodes(self):
        return self.x_min + self.dx * np.arange(self.n_space + 1)

    def time_index(self, t, tol=1e-9):
        """Index of a lattice time, or None if t is not on the lattice."""
        k = (t - self.t0) / self.dt
        k_round = int(round(k))
        if abs(k - k_round) > tol * max(1.0, abs(k)) or not 0 <= k_round <= self.n_time:
            return None
        return k_round


@dataclass(frozen=True)
class TerminalCondition:
    """Terminal data for the backward marches.

    ``indicator``: ceiling * 1[x >= threshold].
    ``ramp``: continuous piecewise-linear version rising from 0 at
    threshold - ramp_half_width to ceiling at threshold + ramp_half_width.
    A ramp of zero half-width degenerates to the indicator.
    """

    kind: str
    threshold: float
    ceiling: float
    ramp_half_width: float = 0.0

    def __call__(self, x):
        arr = np.asarray(x, dtype=float)
        if self.kind == "indicator" or self.ramp_half_width == 0.0:
            out = self.ceiling * (arr >= self.threshold).astype(float)
        elif self.kind == "ramp":
            h = self.ramp_half_width
            out = self.ceiling * np.clip((arr - (self.threshold - h)) / (2.0 * h), 0.0, 1.0)
        else:
            raise ValueError(f"unknown terminal kind {self.kind!r}")
        return float(out) if np.isscalar(x) else out


@dataclass(frozen=True)
class OptionSpec:
    maturity: float
    strike: float


@dataclass
class ValueSurface:
    """Backward-solve output: values[k, j] ~ u(t_k, x_j) on the grid.

    ``value_ceiling`` is the hard upper bound the solution must respect
    (the penalty for allowance surfaces, (penalty - strike)+ for options,
    1 for the toy model).
    """

    grid: SpaceTimeGrid
    values: np.ndarray
    value_ceiling: float

    def row(self, t, tol=1e-9):
        k = self.grid.time_index(t, tol)
        if k is None:
            raise ValueError(f"t={t} is not on the time lattice (dt={self.grid.dt})")
        return self.values[k]

    def value_at(self, t, x):
        """Bilinear interpolation; one-sided in the final time interval.

        The terminal row may be discontinuous data, so queries with
        t in (t_end - dt, t_end] read the last computed interior row
        instead of blending into the jump.
        """
        g = self.grid
        it = (t - g.t0) / g.dt
        i = int(math.floor(it))
        if i >= g.n_time - 1:
            i, wt = g.n_time - 1, 0.0
        elif i < 0:
            i, wt = 0, 0.0
        else:
            wt = it - i
        jx = (x - g.x_min) / g.dx
        j = int(math.floor(jx))
        if j < 0:
            j, wx = 0, 0.0
        elif j > g.n_space - 1:
            j, wx = g.n_space - 1, 1.0
        else:
            wx = jx - j
        v = self.values
        lo = (1.0 - wx) * v[i, j] + wx * v[i, j + 1]
        hi = (1.0 - wx) * v[i + 1, j] + wx * v[i + 1, j + 1]
        return (1.0 - wt) * lo + wt * hi

    def check(self, monotone_tol=None):
        """Range and shape violations, as strings; empty when clean.

        Monotonicity in space is asserted up to a tolerance scaled by the
        ceiling: the scheme is monotone but finite arithmetic can produce
        decreases at rounding level.
        """
        if monotone_tol is None:
            monotone_tol = 1e-9 * max(self.value_ceiling, 1.0)
        out = []
        v = self.values
        if v.shape != (self.grid.n_time + 1, self.grid.n_space + 1):
            out.append(
                f"values shape {v.shape} does not match grid "
                f"({self.grid.n_time + 1}, {self.grid.n_space + 1})")
            return out
        if not np.all(np.isfinite(v)):
            out.append("values contain non-finite entries")
            return out
        lo = v.min()
        hi = v.max()
        if lo < -monotone_tol:
            out.append(f"values fall below 0 (min {lo:.3e})")
        if hi > self.value_ceiling + monotone_tol:
            out.append(f"values exceed ceiling {self.value_ceiling} (max {hi:.17g})")
        drops = np.diff(v, axis=1)
        worst = drops.min()
        if worst < -monotone_tol:
            k, j = np.unravel_index(np.argmin(drops), drops.shape)
            out.append(
                f"values decrease in space by {-worst:.3e} at row {k}, node {j}")
        return out


@dataclass(frozen=True)
class SchemeConfig:
    """Knobs for the explicit marches.

    ``stability_safety`` multiplies the largest admissible time step when a
    solver derives one itself.  ``boundary_policy`` currently supports only
    ``"dirichlet_limits"``: clamp both ends of every row to the exact
    spatial limits of the solution.  ``advection_time_correction`` adds the
    a^2 dt / 2 term to the diffusion coefficient so the centered-in-space
    march is second-order accurate in time for the transport part; switching
    it off gives the plain centered/upwind hybrid.
    """

    stability_safety: float = 1.0
    boundary_policy: str = "dirichlet_limits"
    advection_time_correction: bool = True


@dataclass(frozen=True)
class ExperimentConfig:
    """Parsed CLI configuration; see capsde.cli for file format."""

    experiment: str
    seed: int = 7
    threads: int = 1
    output_dir: str = "."
    b: Optional[float] = None
    sigma: float = 0.3
    lambda_penalty: float = 1.0
    cap: float = 1.25
    horizon: float = 1.0
    tau: float = 0.25
    strike: float = 0.86
    x_min: float = -4.0
    x_max: float = 4.0
    n_space: int = 1000
    dt: Optional[float] = None
    n_paths: Optional[int] = None
    epsilon: float = 0.1

    def market(self):
        b = self.b if self.b is not None else 2.0 * self.cap / self.horizon
        return MarketParams(b=b, sigma=self.sigma,
                            lambda_penalty=self.lambda_penalty,
                            cap=self.cap, horizon=self.horizon)


def _sample_response(f, ceiling, n_samples):
    y = np.linspace(0.0, ceiling, n_samples)
    vals = f(y)
    return y, np.asarray(vals, dtype=float)


def validate(params, grid=None, f=None, n_samples=257):
    """Collect invariant violations for a model/grid/response triple.

    Returns a list of human-readable strings.  Empty list means valid.
    Grid and response are optional so partial configurations can be checked.
    """
    out = []
    if params.sigma <= 0.0:
        out.append(f"sigma must be positive (got {params.sigma})")
    if params.lambda_penalty <= 0.0:
        out.append(f"lambda_penalty must be positive (got {params.lambda_penalty})")
    if params.cap <= 0.0:
        out.append(f"cap must be positive (got {params.cap})")
    if params.horizon <= 0.0:
        out.append(f"horizon must be positive (got {params.horizon})")
    if not all(map(math.isfinite, (params.b, params.sigma, params.lambda_penalty,
                                   params.cap, params.horizon))):
        out.append("market parameters must be finite")

    if grid is not None:
        if grid.dt <= 0.0 or grid.dx <= 0.0:
            out.append(f"grid steps must be positive (dt={grid.dt}, dx={grid.dx})")
        if grid.t_end <= grid.t0:
            out.append(f"grid needs t_end > t0 (got [{grid.t0}, {grid.t_end}])")
        if grid.x_max <= grid.x_min:
            out.append(f"grid needs x_max > x_min (got [{grid.x_min}, {grid.x_max}])")
        if grid.coordinate not in ("log_emission", "emission"):
            out.append(f"unknown grid coordinate {grid.coordinate!r}")
        if grid.dt > 0.0 and grid.dx > 0.0:
            kt = (grid.t_end - grid.t0) / grid.dt
            if abs(kt - round(kt)) > 1e-9 * max(1.0, kt) or round(kt) != grid.n_time:
                out.append(
                    f"dt={grid.dt} does not tile [{grid.t0}, {grid.t_end}] "
                    f"into n_time={grid.n_time} steps")
            kx = (grid.x_max - grid.x_min) / grid.dx
            if abs(kx - round(kx)) > 1e-9 * max(1.0, kx) or round(kx) != grid.n_space:
                out.append(
                    f"dx={grid.dx} does not tile [{grid.x_min}, {grid.x_max}] "
                    f"into n_space={grid.n_space} intervals")

    if f is not None:
        try:
            f0 = float(f(0.0))
        except Exception as exc:  # response must at least evaluate
            out.append(f"abatement map failed to evaluate at 0: {exc}")
            f0 = None
        if f0 is not None and abs(f0) > 1e-12:
            out.append(f"abatement map must vanish at 0 (f(0)={f0:.3e})")
        if f0 is not None:
            y, vals = _sample_response(f, params.lambda_penalty, n_samples)
            d = np.diff(vals)
            if f.epsilon != 0.0 and np.any(d <= 0.0):
                j = int(np.argmin(d))
                out.append(
                    f"abatement map is not strictly increasing on [0, "
                    f"{params.lambda_penalty}] (flat or decreasing near y={y[j]:.4g})")
            slopes = np.abs(d) / (y[1] - y[0])
            worst = slopes.max() if len(slopes) else 0.0
            if worst > f.lipschitz_bound * (1.0 + 1e-9) + 1e-15:
                out.append(
                    f"abatement map violates its Lipschitz bound "
                    f"{f.lipschitz_bound} (sampled slope {worst:.6g})")

    # Explicit-march stability precheck for the declared grid, using the
    # feedback-free drift; the state-dependent part is certified per step
    # during the march itself.  Reported as a ratio so a failing
    # configuration says how far off it is.
    if grid is not None and params.sigma > 0.0 and grid.dt > 0.0 and grid.dx > 0.0:
        if grid.coordinate == "log_emission":
            drift = abs(params.b - 0.5 * params.sigma ** 2)
            bound = grid.dx ** 2 / (params.sigma ** 2 + grid.dx * drift)
        else:
            span = grid.t_end - grid.t0
            bound = grid.dx ** 2 / (span ** 2 + grid.dx)
        if grid.dt > bound * (1.0 + 1e-12):
            out.append(
                f"time step {grid.dt:.6g} exceeds the monotone explicit bound "
                f"{bound:.6g} (ratio {grid.dt / bound:.3g})")
    return out
