"""CDF and PDF of a scalar random variable from its characteristic function.

Both quantities are integrals of the form ``int_0^inf Im[A(t)] dt`` with ``A``
analytic away from the origin:

* CDF:  ``F(x) = 1/2 - (1/pi) int Im[exp(-itx) phi(t)] / t dt``
* PDF:  ``p(x) = (1/pi) int Re[exp(-itx) phi(t)] dt``

:func:`integrate_spectral` evaluates such integrals in two pieces.  The stretch
``t in [0, T0]`` is integrated on the real axis, split so that no initial piece
spans more than one oscillation period.  When the provider can split its CF
into phases and non-oscillating envelopes (``cf_terms``), the remaining
``[T0, inf)`` is moved onto rays ``T0 + s*exp(+-i*theta)``: each phase group is
sent into the half plane where its oscillation decays, so the slowly decaying,
endlessly oscillating tail becomes an exponentially decaying one.  Providers
without ``cf_terms`` are integrated on the real axis all the way.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .errors import InvalidInputError, ToleranceNotMetError
from .quadrature import (
    DEFAULT_MAX_SUBDIV,
    DEFAULT_TOL_ABS,
    DEFAULT_TOL_REL,
    QuadratureResult,
    integrate_semi_infinite,
    periodic_aware_partition,
)

__all__ = ["Tolerances", "InversionResult", "SpectralIntegral", "integrate_spectral", "cdf", "pdf", "invert"]


@dataclass(frozen=True)
class Tolerances:
    """Quadrature controls shared by every inversion.

    ``contour_start`` is the end of the real-axis stretch measured in units of
    the provider's inverse spread; ``contour_angle`` is the ray inclination.
    """

    tol_abs: float = DEFAULT_TOL_ABS
    tol_rel: float = DEFAULT_TOL_REL
    max_subdiv: int = DEFAULT_MAX_SUBDIV
    contour: bool = True
    contour_start: float = 1.0
    contour_angle: float = math.pi / 6

    def __post_init__(self):
        if not (self.tol_abs > 0 and self.tol_rel > 0):
            raise InvalidInputError("tolerances must be positive")
        if int(self.max_subdiv) < 1:
            raise InvalidInputError("max_subdiv must be >= 1")
        if not 0 < self.contour_angle < math.pi / 4:
            # Gaussian envelopes stop decaying at pi/4
            raise InvalidInputError("contour_angle must lie in (0, pi/4)")
        if not self.contour_start > 0:
            raise InvalidInputError("contour_start must be positive")


DEFAULT_TOLERANCES = Tolerances()


@dataclass
class SpectralIntegral:
    """Summed outcome of the real-axis piece and the rotated tail pieces."""

    value: np.ndarray
    error_estimate: float
    batch_calls: int
    subdivisions: int
    pieces: list[QuadratureResult] = field(default_factory=list)


@dataclass
class InversionResult:
    value: float
    raw: float
    error_estimate: float
    batch_calls: int
    subdivisions: int


class _Provider:
    """Uniform view on a CF provider (Distribution, lambda-CF or bare callable)."""

    def __init__(self, obj):
        if hasattr(obj, "cf") and callable(obj.cf):
            self.cf = obj.cf
        elif callable(obj):
            self.cf = obj
        else:
            raise InvalidInputError(f"{obj!r} is not a characteristic-function provider")
        self.cf_terms = getattr(obj, "cf_terms", None)
        self.spread = float(getattr(obj, "spread", 1.0))
        self.location = float(getattr(obj, "location", 0.0)) if math.isfinite(getattr(obj, "location", 0.0)) else 0.0
        if not (self.spread > 0 and math.isfinite(self.spread)):
            raise InvalidInputError(f"provider spread must be positive and finite, got {self.spread}")


def integrate_spectral(
    real: Callable[[np.ndarray], np.ndarray],
    tail: Callable[[np.ndarray, int], np.ndarray] | None,
    signs: tuple[int, ...] | None,
    tscale: float,
    omega: float,
    tol: Tolerances = DEFAULT_TOLERANCES,
) -> SpectralIntegral:
    """Integrate ``Im[A(t)]`` over ``[0, inf)`` for a batch kernel ``A``.

    Parameters
    ----------
    real : callable
        ``real(t) -> (15, k)`` complex values of ``A`` at real nodes.
    tail : callable or None
        ``tail(t, sign) -> (15, k)`` part of ``A`` whose phases have the given
        sign, at complex nodes.  ``None`` disables the contour split.
    signs : tuple of int or None
        Phase signs present in the tail (``+1`` and/or ``-1``).
    tscale : float
        Natural frequency unit (inverse spread) of the integrand.
    omega : float
        Oscillation frequency estimate used for the initial partition.
    """

    def real_im(t):
        return np.imag(real(t))

    omega_u = abs(omega) / tscale
    use_contour = tol.contour and tail is not None and signs is not None
    pieces = []
    if use_contour:
        c = tol.contour_start
        bps = periodic_aware_partition(omega_u, c / (1.0 + c))
    else:
        bps = periodic_aware_partition(omega_u, 1.0)
    first = integrate_semi_infinite(
        real_im,
        tol.tol_abs,
        tol.tol_rel,
        tol.max_subdiv,
        breakpoints=bps,
        direction=float(tscale),
        raise_on_failure=False,
    )
    pieces.append(first)
    value = np.asarray(first.value, dtype=float).copy()
    if use_contour:
        t0 = tol.contour_start * tscale
        for sgn in signs:
            res = integrate_semi_infinite(
                lambda t, s=sgn: tail(t, s),
                tol.tol_abs,
                tol.tol_rel,
                tol.max_subdiv,
                origin=complex(t0),
                direction=tscale * complex(math.cos(tol.contour_angle), sgn * math.sin(tol.contour_angle)),
                raise_on_failure=False,
            )
            pieces.append(res)
            value = value + np.imag(res.value)
    out = SpectralIntegral(
        value=value,
        error_estimate=math.fsum(p.error_estimate for p in pieces),
        batch_calls=sum(p.batch_calls for p in pieces),
        subdivisions=sum(p.subdivisions for p in pieces),
        pieces=pieces,
    )
    if not all(p.converged for p in pieces):
        raise ToleranceNotMetError(out.value, out.error_estimate, out)
    return out


def _phase_signs(phases: np.ndarray) -> np.ndarray:
    return np.where(phases >= 0, 1, -1)


def _point_integral(provider, x: float, kind: str, tol: Tolerances) -> SpectralIntegral:
    x = float(x)
    if not math.isfinite(x):
        raise InvalidInputError(f"evaluation point must be finite, got {x!r}")
    p = _Provider(provider)
    tscale = 1.0 / p.spread

    if kind == "cdf":

        def real(t):
            return (np.exp(-1j * t * x) * p.cf(t) / t)[:, None]

    else:

        def real(t):
            return (1j * np.exp(-1j * t * x) * p.cf(t))[:, None]

    tail = signs = None
    if p.cf_terms is not None:
        probe = np.array([1.0 + 0.5j])
        phases0 = np.asarray(p.cf_terms(probe)[0], dtype=float)
        signs = tuple(sorted(set(_phase_signs(phases0 - x).tolist()), reverse=True))

        def tail(t, sgn):
            phases, env = p.cf_terms(t)[:2]
            shifted = np.asarray(phases, dtype=float) - x
            keep = _phase_signs(shifted) == sgn
            osc = np.exp(1j * np.outer(shifted[keep], t))
            acc = np.sum(osc * env[keep], axis=0)
            if kind == "cdf":
                return (acc / t)[:, None]
            return (1j * acc)[:, None]

    omega = abs(x - p.location) if p.cf_terms is not None else abs(x)
    return integrate_spectral(real, tail, signs, tscale, omega, tol)


def _finish(kind: str, integral: SpectralIntegral) -> InversionResult:
    i = float(integral.value[0])
    if kind == "cdf":
        raw = 0.5 - i / math.pi
        val = min(1.0, max(0.0, raw))
    else:
        raw = i / math.pi
        val = max(0.0, raw)
    return InversionResult(
        value=val,
        raw=raw,
        error_estimate=integral.error_estimate / math.pi,
        batch_calls=integral.batch_calls,
        subdivisions=integral.subdivisions,
    )


def _run(kind, cf, x, tol, full_output):
    tol = DEFAULT_TOLERANCES if tol is None else tol
    try:
        integral = _point_integral(cf, x, kind, tol)
    except ToleranceNotMetError as exc:
        partial = _finish(kind, exc.result) if isinstance(exc.result, SpectralIntegral) else None
        raise ToleranceNotMetError(partial.value if partial else exc.value, exc.error_estimate, partial) from exc
    res = _finish(kind, integral)
    return res if full_output else res.value


def cdf(cf, x: float, tol: Tolerances | None = None, full_output: bool = False):
    """Distribution function at ``x`` by Gil-Pelaez inversion of ``cf``.

    Parameters
    ----------
    cf : Distribution, provider or callable
        Anything exposing ``cf(t)`` (optionally ``cf_terms``, ``spread``,
        ``location``) or a bare vectorized callable ``t -> phi(t)``.
    x : float
        Evaluation point.
    tol : Tolerances, optional
    full_output : bool
        Return an :class:`InversionResult` with the unclamped value, error
        estimate and batch-call count instead of the bare probability.
    """
    return _run("cdf", cf, x, tol, full_output)


def pdf(cf, x: float, tol: Tolerances | None = None, full_output: bool = False):
    """Density at ``x`` by Fourier inversion of ``cf`` (clamped to be nonnegative)."""
    return _run("pdf", cf, x, tol, full_output)


def invert(cf, x: float, tol: Tolerances | None = None) -> tuple[InversionResult, InversionResult]:
    """Both CDF and PDF results at ``x``."""
    return cdf(cf, x, tol, full_output=True), pdf(cf, x, tol, full_output=True)


def with_tolerance(tol: Tolerances, **changes) -> Tolerances:
    return replace(tol, **changes)
