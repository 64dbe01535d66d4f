"""Solvers for emission-allowance pricing under a penalty cap.

The package prices allowance certificates and European options on them
with monotone explicit finite-difference schemes, demonstrates the
terminal concentration of the degenerate toy dynamics by simulation,
and checks a first-order expansion of option prices in the abatement
strength by Monte Carlo.
"""

from ._kernels import BACKEND as kernel_backend
from .asymptotics import (ExpansionReport, allowance_first_order_gap,
                          first_order_correction)
from .burgers import (EnvelopeReport, check_boundary_envelopes,
                      conservation_defect, inviscid_profile, solve_toy_pde,
                      strict_gradient_margin, toy_diffusion_averages)
from .closed_form import (PriceEstimate, allowance_delta_bau,
                          allowance_price_bau, delta_bound_constant,
                          option_price_bau)
from .equilibrium import (CostFunction, aggregate_abatement,
                          optimal_abatement, optimal_production)
from .model import (AbatementMap, ExperimentConfig, MarketParams, OptionSpec,
                    SchemeConfig, SpaceTimeGrid, StabilityError,
                    TerminalCondition, ValueSurface, validate)
from .pde import (solve_allowance_pde, solve_option_pde, stable_time_step,
                  surface_gradient)
from .sde import (GradientEstimate, MassEstimate, PathBatch,
                  malliavin_gradient_estimate, simulate_feedback_forward,
                  simulate_gbm, terminal_mass_estimate, wilson_interval)

__version__ = "0.1.0"

__all__ = [
    "AbatementMap", "CostFunction", "EnvelopeReport", "ExpansionReport",
    "ExperimentConfig", "GradientEstimate", "MarketParams", "MassEstimate",
    "OptionSpec", "PathBatch", "PriceEstimate", "SchemeConfig",
    "SpaceTimeGrid", "StabilityError", "TerminalCondition", "ValueSurface",
    "aggregate_abatement", "allowance_delta_bau", "allowance_first_order_gap",
    "allowance_price_bau", "check_boundary_envelopes", "conservation_defect",
    "delta_bound_constant", "first_order_correction", "inviscid_profile",
    "kernel_backend", "malliavin_gradient_estimate", "optimal_abatement",
    "optimal_production", "option_price_bau", "simulate_feedback_forward",
    "simulate_gbm", "solve_allowance_pde", "solve_option_pde",
    "solve_toy_pde", "stable_time_step", "strict_gradient_margin",
    "surface_gradient", "terminal_mass_estimate", "toy_diffusion_averages",
    "validate", "wilson_interval",
]
