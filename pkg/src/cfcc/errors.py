"""Exception hierarchy shared across the package."""

from __future__ import annotations


class CFCCError(Exception):
    """Base class for every error raised by cfcc."""


class InvalidInputError(CFCCError, ValueError):
    """An argument is outside the documented domain (non-finite node, bad parameter)."""


class DistributionSpecError(InvalidInputError):
    """A distribution specification string could not be parsed."""


class NonDifferentiableCFError(CFCCError):
    """The characteristic function has no derivative at the requested frequency."""


class UndefinedMeanError(CFCCError):
    """The distribution has no finite first moment."""


class NonFiniteIntegrandError(CFCCError):
    """An integrand returned inf/nan at a quadrature node."""

    def __init__(self, node, message: str | None = None):
        self.node = node
        super().__init__(message or f"non-finite integrand value at node {node!r}")


class ToleranceNotMetError(CFCCError):
    """Adaptive quadrature exhausted its subdivision budget above tolerance.

    The best available estimate is attached so callers can decide whether
    to use it anyway.
    """

    def __init__(self, value, error_estimate, result=None):
        self.value = value
        self.error_estimate = error_estimate
        self.result = result
        super().__init__(
            f"tolerance not met: error estimate {error_estimate:.3e} "
            f"(best value {value!r})"
        )


class VanishingCFError(CFCCError):
    """A disturbance CF is numerically zero at a quadrature node."""

    def __init__(self, component: int, node):
        self.component = component
        self.node = node
        super().__init__(f"characteristic function of component {component} vanishes at t={node!r}")


class ConfigError(CFCCError):
    """A case configuration is malformed or violates an invariant."""
