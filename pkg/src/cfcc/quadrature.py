"""Adaptive Gauss-Kronrod 7-15 integration for batch integrands on half-lines.

A batch integrand receives all 15 abscissae of one subinterval as a vector and
returns the 15 integrand values (or a ``(15, k)`` matrix when several integrals
share the same evaluation).  The Gauss-7 estimate reuses the odd-indexed
Kronrod values, so every subinterval costs exactly one integrand call.

The half-line ``t = origin + direction * u / (1 - u)``, ``u in [0, 1)`` is
integrated in ``u``.  ``direction`` may be complex, which turns the half-line
into a ray in the complex plane; the integrand then receives complex nodes and
the returned integral is ``int f(t) dt`` along that ray.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import InvalidInputError, NonFiniteIntegrandError, ToleranceNotMetError

__all__ = [
    "GK15Rule",
    "GK15",
    "QuadratureResult",
    "gk15_apply",
    "integrate_semi_infinite",
    "periodic_aware_partition",
    "DEFAULT_TOL_ABS",
    "DEFAULT_TOL_REL",
    "DEFAULT_MAX_SUBDIV",
]

DEFAULT_TOL_ABS = 1e-10
DEFAULT_TOL_REL = 1e-8
DEFAULT_MAX_SUBDIV = 50
PARTITION_CAP = 64

BatchIntegrand = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class GK15Rule:
    nodes: np.ndarray
    kronrod_weights: np.ndarray
    gauss_weights: np.ndarray
    gauss_index: np.ndarray


def _build_gk15() -> GK15Rule:
    # QUADPACK qk15 tables, positive half (largest abscissa first)
    xgk = [
        0.991455371120812639206854697526329,
        0.949107912342758524526189684047851,
        0.864864423359769072789712788640926,
        0.741531185599394439863864773280788,
        0.586087235467691130294144845693013,
        0.405845151377397166906606412076961,
        0.207784955007898467600689403773245,
        0.000000000000000000000000000000000,
    ]
    wgk = [
        0.022935322010529224963732008058970,
        0.063092092629978553290700663189204,
        0.104790010322250183839876322541518,
        0.140653259715525918745189590510238,
        0.169004726639267902826583426598550,
        0.190350578064785409913256402421014,
        0.204432940075298892414161999234649,
        0.209482141084727828012999174891714,
    ]
    wg = [
        0.129484966168869693270611432679082,
        0.279705391489276667901467771423780,
        0.381830050505118944950369775488975,
        0.417959183673469387755102040816327,
    ]
    nodes = np.array([-x for x in xgk[:-1]] + xgk[::-1])
    kw = np.array(wgk[:-1] + wgk[::-1])
    gw = np.array(wg[:-1] + wg[::-1])
    return GK15Rule(nodes=nodes, kronrod_weights=kw, gauss_weights=gw, gauss_index=np.arange(1, 15, 2))


GK15 = _build_gk15()


@dataclass
class QuadratureResult:
    """Outcome of one adaptive integration.

    ``value`` is a scalar or a vector (one entry per integrand column).
    ``batch_calls`` counts integrand invocations, one per processed subinterval;
    ``subdivisions`` counts bisections.
    """

    value: float | complex | np.ndarray
    error_estimate: float
    subdivisions: int
    batch_calls: int
    intervals: int = 0
    converged: bool = True


def _error_model(diff: float) -> float:
    return min((200.0 * diff) ** 1.5, diff)


def _raise_non_finite(x: np.ndarray, y: np.ndarray):
    bad = ~np.isfinite(y)
    if bad.ndim > 1:
        bad = bad.any(axis=tuple(range(1, bad.ndim)))
    raise NonFiniteIntegrandError(x[np.argmax(bad)])


def gk15_apply(f: BatchIntegrand, a: float, b: float):
    """Apply the Kronrod-15 and embedded Gauss-7 rules to ``f`` on ``[a, b]``.

    Returns
    -------
    kronrod_value, gauss_value, error_estimate
        The two rule values share one call of ``f``; the error estimate is
        ``min((200*|K-G|)**1.5, |K-G|)`` (max over columns for vector integrands).
    """
    if not (math.isfinite(a) and math.isfinite(b)) or not a < b:
        raise InvalidInputError(f"gk15_apply needs finite a < b, got [{a}, {b}]")
    half = 0.5 * (b - a)
    x = 0.5 * (a + b) + half * GK15.nodes
    y = np.asarray(f(x))
    return _combine(x, y, half)


def _combine(x, y, half):
    if y.shape[0] != 15:
        raise InvalidInputError(f"batch integrand returned {y.shape[0]} values for 15 nodes")
    if not np.all(np.isfinite(y)):
        _raise_non_finite(x, y)
    k = half * np.tensordot(GK15.kronrod_weights, y, axes=1)
    g = half * np.tensordot(GK15.gauss_weights, y[GK15.gauss_index], axes=1)
    diff = float(np.max(np.abs(k - g)))
    return k, g, _error_model(diff)


def periodic_aware_partition(omega: float, u_max: float = 1.0, cap: int = PARTITION_CAP) -> list[float]:
    """Initial breakpoints in ``u`` so no piece spans more than one period ``2*pi/omega`` in ``t``.

    ``t = u / (1 - u)``.  Breakpoints are laid at ``t = 0, P, 2P, ...`` until
    ``u_max`` is reached or ``cap`` intervals exist; the final breakpoint is
    always ``u_max``.
    """
    omega = abs(float(omega))
    if not 0.0 < u_max <= 1.0:
        raise InvalidInputError(f"u_max must lie in (0, 1], got {u_max}")
    if omega == 0.0 or not math.isfinite(omega):
        return [0.0, float(u_max)]
    period = 2.0 * math.pi / omega
    t_max = math.inf if u_max >= 1.0 else u_max / (1.0 - u_max)
    pts = [0.0]
    k = 1
    while k < cap and k * period < t_max:
        t = k * period
        pts.append(t / (1.0 + t))
        k += 1
    if pts[-1] < u_max:
        pts.append(float(u_max))
    return pts


def integrate_semi_infinite(
    f: BatchIntegrand,
    tol_abs: float = DEFAULT_TOL_ABS,
    tol_rel: float = DEFAULT_TOL_REL,
    max_subdiv: int = DEFAULT_MAX_SUBDIV,
    *,
    breakpoints=None,
    origin: complex = 0.0,
    direction: complex = 1.0,
    raise_on_failure: bool = True,
) -> QuadratureResult:
    """Adaptively integrate ``f`` over ``t = origin + direction * u/(1-u)``, ``u in [0, 1)``.

    Parameters
    ----------
    f : callable
        Batch integrand ``f(t_nodes) -> values`` with ``values.shape[0] == len(t_nodes)``.
    tol_abs, tol_rel : float
        Stop once the summed error estimate is below ``max(tol_abs, tol_rel*|value|)``.
    max_subdiv : int
        Maximum number of bisections.
    breakpoints : sequence of float, optional
        Initial partition of ``[0, u_end]`` in ``u``; defaults to ``[0, 1]``.
        A last breakpoint below 1 integrates only the finite stretch up to
        ``t(u_end)``.
    origin, direction : complex
        Start and (scaled) direction of the half-line.

    Returns
    -------
    QuadratureResult
    """
    if not (tol_abs > 0 and tol_rel > 0):
        raise InvalidInputError("tolerances must be positive")
    if int(max_subdiv) < 1:
        raise InvalidInputError("max_subdiv must be >= 1")
    bps = [0.0, 1.0] if breakpoints is None else [float(b) for b in breakpoints]
    if len(bps) < 2 or any(b1 <= b0 for b0, b1 in zip(bps, bps[1:])) or bps[0] < 0 or bps[-1] > 1:
        raise InvalidInputError(f"breakpoints must increase within [0, 1], got {bps}")

    real_map = isinstance(direction, (int, float)) and isinstance(origin, (int, float))
    calls = 0

    def evaluate(a: float, b: float):
        nonlocal calls
        half = 0.5 * (b - a)
        u = 0.5 * (a + b) + half * GK15.nodes
        w = 1.0 - u
        t = origin + direction * (u / w)
        jac = direction / (w * w)
        calls += 1
        y = np.asarray(f(t))
        if y.shape[0] != 15:
            raise InvalidInputError(f"batch integrand returned {y.shape[0]} values for 15 nodes")
        if not np.all(np.isfinite(y)):
            _raise_non_finite(t, y)
        y = y * (jac if y.ndim == 1 else jac.reshape((15,) + (1,) * (y.ndim - 1)))
        return _combine(u, y, half)

    heap = []
    seq = 0
    for a, b in zip(bps, bps[1:]):
        k, _, err = evaluate(a, b)
        heap.append((-err, seq, a, b, k))
        seq += 1
    heapq.heapify(heap)

    def totals():
        val = sum(item[4] for item in heap)
        err = math.fsum(-item[0] for item in heap)
        return val, err

    value, error = totals()
    bisections = 0
    converged = True
    while error > max(tol_abs, tol_rel * float(np.max(np.abs(value)))):
        if bisections >= max_subdiv:
            converged = False
            break
        neg_err, _, a, b, k = heapq.heappop(heap)
        m = 0.5 * (a + b)
        if not a < m < b:
            heapq.heappush(heap, (neg_err, seq, a, b, k))
            converged = False
            break
        for lo, hi in ((a, m), (m, b)):
            k2, _, e2 = evaluate(lo, hi)
            heapq.heappush(heap, (-e2, seq, lo, hi, k2))
            seq += 1
        bisections += 1
        value, error = totals()

    if real_map and np.iscomplexobj(value) and not np.any(np.imag(value)):
        value = np.real(value)
    if isinstance(value, np.ndarray) and value.ndim == 0:
        value = value.item()
    result = QuadratureResult(
        value=value,
        error_estimate=float(error),
        subdivisions=bisections,
        batch_calls=calls,
        intervals=len(heap),
        converged=converged,
    )
    if not converged and raise_on_failure:
        raise ToleranceNotMetError(value, float(error), result)
    return result
