"""Chance constraints evaluated through characteristic-function inversion."""

from .chance import AffineChanceConstraint, evaluate, gradient, probability
from .distributions import Cauchy, Distribution, Exponential, Gamma, Laplace, Mixture, Normal, Uniform, sample
from .errors import (
    CFCCError,
    ConfigError,
    DistributionSpecError,
    InvalidInputError,
    NonDifferentiableCFError,
    NonFiniteIntegrandError,
    ToleranceNotMetError,
    UndefinedMeanError,
    VanishingCFError,
)
from .grammar import format_distribution, parse_distribution
from .inversion import Tolerances, cdf, invert, pdf

__version__ = "0.1.0"

__all__ = [
    "AffineChanceConstraint",
    "evaluate",
    "gradient",
    "probability",
    "Distribution",
    "Normal",
    "Exponential",
    "Uniform",
    "Gamma",
    "Laplace",
    "Cauchy",
    "Mixture",
    "sample",
    "parse_distribution",
    "format_distribution",
    "Tolerances",
    "cdf",
    "pdf",
    "invert",
    "CFCCError",
    "ConfigError",
    "DistributionSpecError",
    "InvalidInputError",
    "NonDifferentiableCFError",
    "NonFiniteIntegrandError",
    "ToleranceNotMetError",
    "UndefinedMeanError",
    "VanishingCFError",
]
