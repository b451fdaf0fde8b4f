"""Stochastic H2 optimization of parametrized linear dynamical systems.

The gradient of ``c(mu) = ||G(mu)||_H2^2 / 2`` is a frequency integral; it is
estimated from a handful of sampled frequencies per iteration and fed to a
stochastic gradient descent loop. Exact Gramian and quadrature oracles are
included for checking at small scale.
"""

__version__ = "0.1.0"

from .estimator import GradientEstimate, estimate_gradient, integrand
from .optimizer import (ConstantStep, ExplicitStep, HalvingStep, PiecewiseStep, PowerLawStep, RunRecord,
                        observer_schedule, sgd_run, stability_budget, validate_policy)
from .oracle import exact_cost, exact_gradient, h2_inner, h2_norm, h2_norm_quadrature
from .sampling import Cauchy, LogUniform, TabulatedInverseCDF, Uniform
from .systems import DescriptorStateSpace, ParameterBox, ParametricStateSpace, ParametrizedSystem

__all__ = [
    "Cauchy", "ConstantStep", "DescriptorStateSpace", "ExplicitStep", "GradientEstimate", "HalvingStep",
    "LogUniform", "ParameterBox", "ParametricStateSpace", "ParametrizedSystem", "PiecewiseStep",
    "PowerLawStep", "RunRecord", "TabulatedInverseCDF", "Uniform", "estimate_gradient", "exact_cost",
    "exact_gradient", "h2_inner", "h2_norm", "h2_norm_quadrature", "integrand", "observer_schedule",
    "sgd_run", "stability_budget", "validate_policy",
]
