"""Firm-level optimization behind the aggregate abatement map.

A firm with convex abatement cost c reduces emissions until marginal cost
meets the allowance price: a*(y) = (c')^{-1}(y).  A producer selling at
price P with emission intensity r produces until marginal profit vanishes:
q*(y) = (c')^{-1}(P - r y).  Summing a*(y) across firms yields the
aggregate response f0 fed to the pricing PDE.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import brentq

from .model import AbatementMap


@dataclass(frozen=True)
class CostFunction:
    """Marginal abatement cost with an invertible slope.

    ``inverse_marginal`` may be omitted; inversion then falls back to a
    bracketed root solve of marginal(x) = y on ``bracket``, accurate to
    1e-12 in x.  The marginal must be continuous and strictly increasing
    on the bracket.
    """

    marginal: Callable[[float], float]
    inverse_marginal: Optional[Callable[[float], float]] = None
    bracket: Tuple[float, float] = (-1e6, 1e6)

    def invert(self, y):
        if self.inverse_marginal is not None:
            return float(self.inverse_marginal(y))
        lo, hi = self.bracket
        flo = self.marginal(lo) - y
        fhi = self.marginal(hi) - y
        if flo > 0.0 or fhi < 0.0:
            raise ValueError(
                f"marginal cost never reaches {y} on bracket [{lo}, {hi}]")
        if flo == 0.0:
            return float(lo)
        if fhi == 0.0:
            return float(hi)
        return float(brentq(lambda x: self.marginal(x) - y, lo, hi, xtol=1e-12))

    @classmethod
    def quadratic(cls, alpha):
        """c(x) = alpha x^2, so marginal 2 alpha x."""
        if alpha <= 0.0:
            raise ValueError("quadratic cost needs alpha > 0")
        return cls(marginal=lambda x: 2.0 * alpha * x,
                   inverse_marginal=lambda y: y / (2.0 * alpha))

    @classmethod
    def power(cls, alpha, beta):
        """c(x) = alpha |x|^(1+beta) with odd symmetry, beta > 0."""
        if alpha <= 0.0 or beta <= 0.0:
            raise ValueError("power cost needs alpha > 0 and beta > 0")

        def marg(x):
            return alpha * (1.0 + beta) * np.sign(x) * np.abs(x) ** beta

        def inv(y):
            return np.sign(y) * (np.abs(y) / (alpha * (1.0 + beta))) ** (1.0 / beta)

        return cls(marginal=marg, inverse_marginal=inv)


def optimal_abatement(cost, allowance_price):
    """Abatement level equating marginal cost to the allowance price."""
    return cost.invert(allowance_price)


def optimal_production(cost, good_price, emission_rate, allowance_price):
    """Output level equating marginal production cost to the emission-adjusted
    sale price; zero when the adjusted price makes production unprofitable at
    any positive level."""
    margin = good_price - emission_rate * allowance_price
    q = cost.invert(margin)
    return max(q, 0.0)


def aggregate_abatement(costs: Sequence[CostFunction], epsilon=1.0,
                        price_ceiling=1.0, n_samples=65):
    """Sum the firms' optimal abatements into a single AbatementMap.

    The Lipschitz bound is measured on a sample of [0, price_ceiling] and
    padded by a factor 1.000001, which is safe for responses whose slope
    varies smoothly at the sampling resolution.
    """
    if not costs:
        raise ValueError("need at least one cost function")

    def base(y):
        arr = np.asarray(y, dtype=float)
        flat = np.array(
            [sum(c.invert(v) for c in costs) for v in np.atleast_1d(arr)])
        return flat[0] if arr.ndim == 0 else flat.reshape(arr.shape)

    y = np.linspace(0.0, price_ceiling, n_samples)
    vals = np.array([base(v) for v in y])
    slopes = np.abs(np.diff(vals)) / (y[1] - y[0])
    bound = abs(epsilon) * float(slopes.max()) * 1.000001
    return AbatementMap(base=base, epsilon=epsilon, lipschitz_bound=bound)
