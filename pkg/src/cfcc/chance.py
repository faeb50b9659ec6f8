"""Probability and gradient of affine chance constraints ``P(q(z) + g(z)^T w <= 0)``.

With ``lambda = g(z)^T w`` and independent ``w_j`` the CF of ``lambda`` is the
product ``prod_j phi_j(g_j(z) t)``, so

    beta(z)      = 1/2 - (1/pi) int Im[exp(itq) phi_lambda(t)] / t dt
    grad beta(z) = -grad q * p_lambda(-q) - (1/pi) int Im[exp(itq) phi_lambda(t) xi(z,t)] / t dt

where ``xi(z,t) = sum_j alpha_j(z,t) grad g_j(z)`` and for a mixture component
``alpha_j = t * sum_r mu_r phi'_{j,r}(g_j t) / phi_j(g_j t)``.  One batch call
per quadrature subinterval produces the integrands of beta, of the density and
of the gradient from the same ``exp(itq)`` and ``phi_lambda`` values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .distributions import Distribution, Mixture
from .errors import InvalidInputError, NonDifferentiableCFError, UndefinedMeanError, VanishingCFError
from .inversion import DEFAULT_TOLERANCES, SpectralIntegral, Tolerances, integrate_spectral

__all__ = [
    "AffineChanceConstraint",
    "EvalCounters",
    "EvalSharedState",
    "ChanceEvaluation",
    "LambdaCF",
    "lambda_cf",
    "lambda_distribution",
    "xi",
    "shared_state",
    "evaluate",
    "probability",
    "gradient",
    "constraint_residual",
    "lambda_moments",
]

VANISHING_CF = 1e-300
# beyond this many phase combinations the tail is integrated on the real axis
MAX_PHASE_COMBOS = 4096


@dataclass
class AffineChanceConstraint:
    """``P(q(z) + g(z)^T w <= 0) >= gamma`` with callbacks and their derivatives.

    ``g_jac(z)`` returns the ``(m, n)`` Jacobian whose rows are ``grad g_j``.
    """

    disturbances: Sequence[Distribution]
    q: Callable[[np.ndarray], float]
    q_grad: Callable[[np.ndarray], np.ndarray]
    g: Callable[[np.ndarray], np.ndarray]
    g_jac: Callable[[np.ndarray], np.ndarray]
    gamma: float
    n: int
    name: str = ""
    # (q0, q_lin, g0, g_lin) when built by ``affine``; enables batched moment screening
    affine_data: tuple | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.disturbances = tuple(self.disturbances)
        if not self.disturbances:
            raise InvalidInputError("a chance constraint needs at least one disturbance component")
        if not (0.0 <= float(self.gamma) <= 1.0):
            raise InvalidInputError(f"gamma must lie in [0, 1], got {self.gamma}")
        self.gamma = float(self.gamma)

    @property
    def m(self) -> int:
        return len(self.disturbances)

    @classmethod
    def affine(cls, disturbances, q0, q_lin, g0, g_lin, gamma, name: str = "") -> "AffineChanceConstraint":
        """Constraint with ``q(z) = q0 + q_lin @ z`` and ``g(z) = g0 + g_lin @ z``."""
        q_lin = np.asarray(q_lin, dtype=float)
        g0 = np.asarray(g0, dtype=float)
        g_lin = np.asarray(g_lin, dtype=float).reshape(len(g0), -1)
        q0 = float(q0)
        return cls(
            disturbances=disturbances,
            q=lambda z: q0 + float(q_lin @ z),
            q_grad=lambda z: q_lin,
            g=lambda z: g0 + g_lin @ z,
            g_jac=lambda z: g_lin,
            gamma=gamma,
            n=len(q_lin),
            name=name,
            affine_data=(q0, q_lin, g0, g_lin),
        )


@dataclass
class EvalCounters:
    """Instrumentation of one evaluation; ``prime_calls_per_batch`` has one entry per real-axis batch."""

    batch_calls: int = 0
    tail_batch_calls: int = 0
    cf_calls: int = 0
    cf_prime_calls: int = 0
    prime_calls_per_batch: list[int] = field(default_factory=list)


@dataclass
class EvalSharedState:
    """Intermediates of one real-axis batch, reused by every integrand column."""

    t: np.ndarray
    exp_q: np.ndarray
    phi: np.ndarray
    phi_lambda: np.ndarray
    alpha: np.ndarray | None = None

    def consistent(self, rtol: float = 1e-12) -> bool:
        prod = np.prod(self.phi, axis=0) if len(self.phi) else np.ones_like(self.t, dtype=complex)
        return bool(np.allclose(prod, self.phi_lambda, rtol=rtol, atol=0.0))


@dataclass
class ChanceEvaluation:
    beta: float
    beta_raw: float
    gradient: np.ndarray | None
    density: float | None
    error_estimate: float
    batch_calls: int
    counters: EvalCounters
    degenerate: bool = False


class _Setup:
    """Everything that depends on (constraint, z) but not on t."""

    def __init__(self, c: AffineChanceConstraint, z, need_gradient: bool):
        z = np.asarray(z, dtype=float)
        if z.shape != (c.n,) or not np.all(np.isfinite(z)):
            raise InvalidInputError(f"z must be a finite vector of length {c.n}")
        self.c = c
        self.q = float(c.q(z))
        g = np.asarray(c.g(z), dtype=float).reshape(-1)
        if g.shape != (c.m,) or not (np.all(np.isfinite(g)) and math.isfinite(self.q)):
            raise InvalidInputError("q(z) and g(z) must be finite with len(g) == m")
        self.g = g
        self.active = np.flatnonzero(g != 0.0)
        self.dists = [c.disturbances[j] for j in self.active]
        self.ga = g[self.active]
        groups: dict = {}
        for pos, d in enumerate(self.dists):
            groups.setdefault(d, []).append(pos)
        self.groups = [(d, np.array(p)) for d, p in groups.items()]
        self.need_gradient = need_gradient
        if need_gradient:
            self.dq = np.asarray(c.q_grad(z), dtype=float).reshape(c.n)
            dg = np.asarray(c.g_jac(z), dtype=float).reshape(c.m, c.n)
            self.dga = dg[self.active]
            # components with g_j = 0 still move lambda through grad g_j: d/dz phi_j(g_j t) = i t E[w_j] grad g_j
            kappa = np.zeros(c.n, dtype=complex)
            for j in np.flatnonzero(g == 0.0):
                if np.any(dg[j] != 0.0):
                    try:
                        kappa += 1j * c.disturbances[j].mean() * dg[j]
                    except UndefinedMeanError as exc:
                        raise NonDifferentiableCFError(
                            f"component {j} has g_j(z)=0 and a CF not differentiable at 0"
                        ) from exc
            self.kappa = kappa
        if len(self.active):
            self.scale = math.sqrt(math.fsum((gj * d.spread) ** 2 for gj, d in zip(self.ga, self.dists)))
            self.omega = abs(self.q) + math.fsum(abs(gj * d.location) for gj, d in zip(self.ga, self.dists))
        else:
            self.scale = 0.0
            self.omega = abs(self.q)


def _component_values(setup: _Setup, t: np.ndarray, counters: EvalCounters | None, need_alpha: bool):
    m = len(setup.active)
    phi = np.empty((m, t.size), dtype=complex)
    alpha = np.empty((m, t.size), dtype=complex) if need_alpha else None
    primes = 0
    # components sharing a law are evaluated in one vectorized call; counters
    # still tally one evaluation per (component, mixture member)
    for d, pos in setup.groups:
        s = setup.ga[pos, None] * t[None, :]
        phi[pos] = d.cf(s)
        if counters is not None:
            counters.cf_calls += len(pos) * d.n_components
        if need_alpha:
            bad = np.abs(phi[pos]) < VANISHING_CF
            if np.any(bad):
                row, col = np.unravel_index(np.argmax(bad), bad.shape)
                raise VanishingCFError(int(setup.active[pos[row]]), t[col])
            alpha[pos] = t[None, :] * d.cf_prime(s) / phi[pos]
            primes += len(pos) * d.n_components
    if counters is not None and need_alpha:
        counters.cf_prime_calls += primes
        counters.prime_calls_per_batch.append(primes)
    return phi, alpha


def shared_state(c: AffineChanceConstraint, z, ts, counters: EvalCounters | None = None) -> EvalSharedState:
    """Build the per-batch cache for real nodes ``ts`` (exposed for inspection and tests)."""
    setup = _Setup(c, z, need_gradient=True)
    t = np.asarray(ts, dtype=float)
    return _shared(setup, t, counters, need_alpha=True)


def _shared(setup: _Setup, t, counters, need_alpha) -> EvalSharedState:
    phi, alpha = _component_values(setup, t, counters, need_alpha)
    phi_l = np.prod(phi, axis=0) if len(phi) else np.ones(t.shape, dtype=complex)
    return EvalSharedState(t=t, exp_q=np.exp(1j * t * setup.q), phi=phi, phi_lambda=phi_l, alpha=alpha)


def _xi_from(setup: _Setup, st: EvalSharedState) -> np.ndarray:
    out = st.t[:, None] * setup.kappa[None, :]
    if len(setup.active):
        out = out + st.alpha.T @ setup.dga
    return out


def lambda_cf(c: AffineChanceConstraint, z, ts) -> np.ndarray:
    """``phi_lambda(t; z) = prod_j phi_j(g_j(z) t)`` at real nodes ``ts``."""
    ts = np.atleast_1d(np.asarray(ts, dtype=float))
    if not np.all(np.isfinite(ts)):
        raise InvalidInputError("frequency nodes must be finite")
    setup = _Setup(c, z, need_gradient=False)
    return _shared(setup, ts, None, need_alpha=False).phi_lambda


def xi(c: AffineChanceConstraint, z, ts) -> np.ndarray:
    """``xi(z, t)`` at real nodes ``ts``: array of shape ``(len(ts), n)``."""
    ts = np.atleast_1d(np.asarray(ts, dtype=float))
    setup = _Setup(c, z, need_gradient=True)
    return _xi_from(setup, _shared(setup, ts, None, need_alpha=True))


class LambdaCF:
    """CF provider for ``lambda = g(z)^T w`` at a fixed ``z``.

    Satisfies the provider protocol of :mod:`cfcc.inversion` (``cf``,
    ``cf_terms``, ``spread``, ``location``).
    """

    def __init__(self, setup: _Setup):
        self._setup = setup
        self.spread = setup.scale
        self.location = math.fsum(gj * d.location for gj, d in zip(setup.ga, setup.dists))
        if not self.spread > 0:
            raise InvalidInputError("lambda is a point mass (g(z) = 0); it has no density")
        self._phases = _combo_phases(setup, include_q=False)

    def cf(self, t):
        return _shared(self._setup, np.asarray(t), None, need_alpha=False).phi_lambda

    def cf_terms(self, t):
        if self._phases is None:
            raise InvalidInputError("too many phase combinations for a term split")
        t = np.asarray(t)
        P, _ = _tail_products(self._setup, t, None, need_gradient=False)
        return self._phases, P, None


def lambda_distribution(c: AffineChanceConstraint, z) -> LambdaCF:
    """Provider of the CF of ``g(z)^T w`` usable with :func:`cfcc.inversion.cdf`."""
    return LambdaCF(_Setup(c, z, need_gradient=False))


def lambda_moments(c: AffineChanceConstraint, z) -> tuple[float, float]:
    """Mean and variance of ``g(z)^T w`` (variance may be ``inf``)."""
    g = np.asarray(c.g(np.asarray(z, dtype=float)), dtype=float).reshape(-1)
    mu = 0.0
    var = 0.0
    for gj, d in zip(g, c.disturbances):
        if gj != 0.0:
            mu += gj * d.mean()
            var += gj * gj * d.variance()
    return mu, var


def _combo_phases(setup: _Setup, include_q: bool = True) -> np.ndarray | None:
    probe = np.array([1.0 + 0.5j])
    phases = np.array([setup.q if include_q else 0.0])
    for gj, d in zip(setup.ga, setup.dists):
        pj = np.asarray(d.cf_terms(gj * probe)[0], dtype=float)
        if phases.size * pj.size > MAX_PHASE_COMBOS:
            return None
        phases = (phases[:, None] + gj * pj[None, :]).reshape(-1)
    return phases


def _tail_products(setup: _Setup, t: np.ndarray, counters: EvalCounters | None, need_gradient: bool):
    """Envelope products of every phase combination (and their z-derivatives) at complex ``t``."""
    P = np.ones((1, t.size), dtype=complex)
    G = np.zeros((1, t.size, setup.c.n), dtype=complex) if need_gradient else None
    for idx, (gj, d) in enumerate(zip(setup.ga, setup.dists)):
        ph, env, denv = d.cf_terms(gj * t)
        if counters is not None:
            counters.cf_calls += d.n_components
            if need_gradient:
                counters.cf_prime_calls += d.n_components
        k = len(ph)
        newP = (P[:, None, :] * env[None, :, :]).reshape(-1, t.size)
        if need_gradient:
            dfac = 1j * ph[:, None] * env + denv
            dgj = setup.dga[idx]
            G = (
                G[:, None, :, :] * env[None, :, :, None]
                + P[:, None, :, None] * dfac[None, :, :, None] * dgj[None, None, None, :]
            ).reshape(-1, t.size, setup.c.n)
        P = newP
    return P, G


def _integrate(setup: _Setup, tol: Tolerances, need_gradient: bool, share: bool, counters: EvalCounters) -> SpectralIntegral:
    q = setup.q

    def real(t):
        counters.batch_calls += 1
        st = _shared(setup, t, counters, need_alpha=need_gradient)
        h = st.exp_q * st.phi_lambda
        if not need_gradient:
            return (h / t)[:, None]
        if share:
            h_d = h_g = h
        else:
            # debug path: every integrand recomputes exp(itq) and phi_lambda on its own
            h_d = np.exp(1j * t * q) * _shared(setup, t, counters, need_alpha=False).phi_lambda
            h_g = np.exp(1j * t * q) * _shared(setup, t, counters, need_alpha=False).phi_lambda
        xi_t = _xi_from(setup, st)
        return np.column_stack([h / t, 1j * h_d, h_g[:, None] * xi_t / t[:, None]])

    phases = _combo_phases(setup)
    tail = signs = None
    if phases is not None:
        psign = np.where(phases >= 0, 1, -1)
        signs = tuple(sorted(set(psign.tolist()), reverse=True))

        def tail(t, sgn):
            counters.tail_batch_calls += 1
            P, G = _tail_products(setup, t, counters, need_gradient)
            keep = psign == sgn
            osc = np.exp(1j * np.outer(phases[keep], t))
            wP = osc * P[keep]
            h = wP.sum(axis=0)
            if not need_gradient:
                return (h / t)[:, None]
            grad = np.einsum("ct,ctn->tn", osc, G[keep]) + h[:, None] * setup.kappa[None, :]
            return np.column_stack([h / t, 1j * h, grad])

    return integrate_spectral(real, tail, signs, 1.0 / setup.scale, setup.omega, tol)


def evaluate(
    c: AffineChanceConstraint,
    z,
    tol: Tolerances | None = None,
    need_gradient: bool = True,
    share: bool = True,
) -> ChanceEvaluation:
    """Probability, density and gradient from one shared quadrature pass.

    Parameters
    ----------
    c : AffineChanceConstraint
    z : array_like
        Decision vector of length ``c.n``.
    tol : Tolerances, optional
    need_gradient : bool
        Skip the density and gradient integrands when False.
    share : bool
        Debug switch; False recomputes the common intermediates per integrand.
    """
    tol = DEFAULT_TOLERANCES if tol is None else tol
    setup = _Setup(c, z, need_gradient)
    counters = EvalCounters()
    if len(setup.active) == 0:
        # lambda is a point mass at 0; Gil-Pelaez does not apply
        beta = 1.0 if setup.q <= 0.0 else 0.0
        grad = np.zeros(c.n) if need_gradient else None
        return ChanceEvaluation(beta, beta, grad, 0.0 if need_gradient else None, 0.0, 0, counters, degenerate=True)
    integral = _integrate(setup, tol, need_gradient, share, counters)
    vals = integral.value
    beta_raw = 0.5 - vals[0] / math.pi
    beta = min(1.0, max(0.0, beta_raw))
    grad = density = None
    if need_gradient:
        dens_raw = vals[1] / math.pi
        grad = -setup.dq * dens_raw - vals[2:] / math.pi
        density = max(0.0, dens_raw)
    return ChanceEvaluation(
        beta=beta,
        beta_raw=beta_raw,
        gradient=grad,
        density=density,
        error_estimate=integral.error_estimate / math.pi,
        batch_calls=integral.batch_calls,
        counters=counters,
    )


def probability(c: AffineChanceConstraint, z, tol: Tolerances | None = None) -> float:
    """``beta(z) = P(q(z) + g(z)^T w <= 0)``."""
    return evaluate(c, z, tol, need_gradient=False).beta


def gradient(c: AffineChanceConstraint, z, tol: Tolerances | None = None) -> np.ndarray:
    """``grad_z beta(z)``."""
    return evaluate(c, z, tol, need_gradient=True).gradient


def constraint_residual(c: AffineChanceConstraint, z, tol: Tolerances | None = None):
    """Solver-facing form ``(gamma - beta(z), -grad beta(z))``; feasible when the residual is <= 0."""
    ev = evaluate(c, z, tol, need_gradient=True)
    return c.gamma - ev.beta, -ev.gradient
