"""Augmented-Lagrangian solver for smooth costs under chance and linear constraints.

Problem::

    min_z  J(z)
    s.t.   gamma_i - beta_i(z) <= 0      (chance constraints)
           A z + b <= 0                   (hard linear rows)
           lo <= z <= hi                  (box)

Inequalities enter the merit function in the usual shifted-penalty form
``(1/2rho) * (max(0, mu + rho*c)^2 - mu^2)``; the box is left to the inner
L-BFGS-B iterations.  Chance constraints whose one-sided Chebyshev (Cantelli)
lower bound on ``beta`` already puts them in the flat part of that penalty are
skipped without running the inversion.

The penalty gradient of a violated chance constraint is proportional to the
density of ``lambda`` at the threshold.  A step that lands deep in the tail,
where ``beta`` is flat, can therefore stall the iteration; scale the
variables (``ConstrainedProblem.scale``) so that unit steps stay moderate.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import minimize

from .chance import AffineChanceConstraint, evaluate
from .errors import InvalidInputError, UndefinedMeanError
from .inversion import DEFAULT_TOLERANCES, Tolerances

__all__ = ["SolverOptions", "SolverDiagnostics", "ConstrainedProblem", "solve_constrained", "SolverWarning"]

log = logging.getLogger(__name__)


class SolverWarning(UserWarning):
    pass


@dataclass
class SolverOptions:
    """Controls of :func:`solve_constrained`.

    ``max_iter`` bounds the inner iterations summed over all outer rounds.
    """

    max_iter: int = 200
    max_outer: int = 25
    kkt_tol: float = 1e-5
    feas_tol: float = 1e-7
    rho0: float = 10.0
    rho_growth: float = 10.0
    rho_max: float = 1e10
    screening: bool = True
    tolerances: Tolerances = DEFAULT_TOLERANCES

    def __post_init__(self):
        if self.max_iter < 1 or self.max_outer < 1:
            raise InvalidInputError("iteration budgets must be positive")
        if not (self.kkt_tol > 0 and self.feas_tol > 0 and self.rho0 > 0 and self.rho_growth > 1):
            raise InvalidInputError("tolerances and penalty parameters must be positive (growth > 1)")


@dataclass
class SolverDiagnostics:
    status: str
    converged: bool
    iterations: int
    outer_iterations: int
    cost: float
    max_violation: float
    kkt_residual: float
    chance_evaluations: int = 0
    cf_batch_calls: int = 0
    screened: int = 0
    multipliers: np.ndarray | None = None
    merit_history: list[list[float]] = field(default_factory=list)
    message: str = ""


@dataclass
class ConstrainedProblem:
    """Inputs of :func:`solve_constrained`; ``cost(z) -> (J, grad J)``."""

    n: int
    cost: Callable[[np.ndarray], tuple[float, np.ndarray]]
    chance: Sequence[AffineChanceConstraint] = ()
    lin_A: np.ndarray | None = None
    lin_b: np.ndarray | None = None
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    scale: np.ndarray | None = None

    def __post_init__(self):
        n = self.n
        self.chance = list(self.chance)
        for c in self.chance:
            if c.n != n:
                raise InvalidInputError(f"chance constraint {c.name!r} has n={c.n}, problem has n={n}")
        if self.lin_A is None:
            self.lin_A = np.zeros((0, n))
            self.lin_b = np.zeros(0)
        self.lin_A = np.asarray(self.lin_A, dtype=float).reshape(-1, n)
        self.lin_b = np.asarray(self.lin_b, dtype=float).reshape(-1)
        self.lower = np.full(n, -np.inf) if self.lower is None else np.asarray(self.lower, dtype=float)
        self.upper = np.full(n, np.inf) if self.upper is None else np.asarray(self.upper, dtype=float)
        if np.any(self.lower > self.upper):
            raise InvalidInputError("box bounds must satisfy lower <= upper")
        self.scale = np.ones(n) if self.scale is None else np.asarray(self.scale, dtype=float)
        if np.any(self.scale <= 0):
            raise InvalidInputError("variable scales must be positive")


class _Screen:
    """Batched Cantelli lower bounds on beta for constraints built with ``affine``."""

    def __init__(self, cons: Sequence[AffineChanceConstraint]):
        self.idx = []
        rows = []
        for i, c in enumerate(cons):
            if c.affine_data is None:
                continue
            try:
                mw = np.array([d.mean() for d in c.disturbances])
                vw = np.array([d.variance() for d in c.disturbances])
            except UndefinedMeanError:
                continue
            if not np.all(np.isfinite(vw)):
                continue
            self.idx.append(i)
            rows.append((c.affine_data, mw, vw, c.gamma))
        self.idx = np.array(self.idx, dtype=int)
        if len(rows) == 0:
            return
        # constraints may differ in m; group by shape for stacking
        self.groups = {}
        for k, ((q0, ql, g0, gl), mw, vw, gam) in zip(self.idx, rows):
            self.groups.setdefault(len(g0), []).append((k, q0, ql, g0, gl, mw, vw, gam))
        self.stacks = []
        for items in self.groups.values():
            self.stacks.append(
                (
                    np.array([it[0] for it in items]),
                    np.array([it[1] for it in items]),
                    np.array([it[2] for it in items]),
                    np.array([it[3] for it in items]),
                    np.array([it[4] for it in items]),
                    np.array([it[5] for it in items]),
                    np.array([it[6] for it in items]),
                )
            )

    def beta_lower(self, z: np.ndarray, total: int) -> np.ndarray:
        out = np.zeros(total)
        if len(self.idx) == 0:
            return out
        for k, q0, ql, g0, gl, mw, vw in self.stacks:
            g = g0 + gl @ z
            q = q0 + ql @ z
            mu = np.sum(g * mw, axis=1)
            var = np.sum(g * g * vw, axis=1)
            d = -q - mu
            with np.errstate(divide="ignore", invalid="ignore"):
                lb = np.where(d > 0, d * d / (var + d * d), 0.0)
            lb = np.where((d > 0) & (var == 0), 1.0, lb)
            out[k] = lb
        return out


class _Merit:
    def __init__(self, prob: ConstrainedProblem, opts: SolverOptions):
        self.p = prob
        self.o = opts
        self.screen = _Screen(prob.chance) if opts.screening else None
        self.n_chance = len(prob.chance)
        self.evals = 0
        self.calls = 0
        self.screened = 0

    def chance_values(self, z, mu, rho, need_all: bool):
        """Residuals ``gamma - beta`` and gradients; screened rows get an upper bound and no gradient."""
        k = self.n_chance
        res = np.zeros(k)
        grads = {}
        lb = self.screen.beta_lower(z, k) if self.screen is not None else np.zeros(k)
        for i, c in enumerate(self.p.chance):
            ub_res = c.gamma - lb[i]
            if self.screen is not None and mu[i] + rho * ub_res <= 0.0 and not (need_all and ub_res > 0):
                res[i] = ub_res
                self.screened += 1
                continue
            ev = evaluate(c, z, self.o.tolerances, need_gradient=True)
            self.evals += 1
            self.calls += ev.batch_calls
            res[i] = c.gamma - ev.beta
            grads[i] = -ev.gradient
        return res, grads

    def value(self, y, mu, rho, lam):
        p = self.p
        z = p.scale * y
        J, dJ = p.cost(z)
        f = float(J)
        gz = np.array(dJ, dtype=float)
        res, grads = self.chance_values(z, mu, rho, need_all=False)
        for i in range(self.n_chance):
            s = mu[i] + rho * res[i]
            f += (max(0.0, s) ** 2 - mu[i] ** 2) / (2 * rho)
            if s > 0:
                gz += s * grads[i]
        if len(p.lin_b):
            lr = p.lin_A @ z + p.lin_b
            s = np.maximum(0.0, lam + rho * lr)
            f += float(np.sum(s**2 - lam**2)) / (2 * rho)
            gz += p.lin_A.T @ s
        return f, p.scale * gz

    def state(self, y, mu, rho, lam):
        """Cost, residuals and Lagrangian gradient at ``y`` for given multipliers."""
        p = self.p
        z = p.scale * y
        J, dJ = p.cost(z)
        res, grads = self.chance_values(z, mu, rho, need_all=True)
        lr = p.lin_A @ z + p.lin_b if len(p.lin_b) else np.zeros(0)
        return float(J), np.asarray(dJ, dtype=float), res, grads, lr


def _proj_grad(y, g, lo, hi):
    return y - np.clip(y - g, lo, hi)


def solve_constrained(
    prob: ConstrainedProblem, z_init, options: SolverOptions | None = None
) -> tuple[np.ndarray, SolverDiagnostics]:
    """Minimize ``prob.cost`` subject to its chance, linear and box constraints.

    Parameters
    ----------
    prob : ConstrainedProblem
    z_init : array_like
        Starting point; it need not be feasible (it is clipped into the box).
    options : SolverOptions, optional

    Returns
    -------
    z : ndarray
        Final iterate, or the best iterate seen when the budget ran out.
    diagnostics : SolverDiagnostics
    """
    opts = SolverOptions() if options is None else options
    z0 = np.asarray(z_init, dtype=float).reshape(-1)
    if z0.shape != (prob.n,) or not np.all(np.isfinite(z0)):
        raise InvalidInputError(f"z_init must be a finite vector of length {prob.n}")
    merit = _Merit(prob, opts)
    lo = prob.lower / prob.scale
    hi = prob.upper / prob.scale
    y = np.clip(z0 / prob.scale, lo, hi)
    bounds = list(zip(np.where(np.isfinite(lo), lo, None), np.where(np.isfinite(hi), hi, None)))
    mu = np.zeros(len(prob.chance))
    lam = np.zeros(len(prob.lin_b))
    rho = opts.rho0
    used = 0
    history: list[list[float]] = []
    best = None
    prev_viol = math.inf
    status = "max_iter"
    kkt = viol = math.inf
    J = math.nan
    outer = 0

    for outer in range(1, opts.max_outer + 1):
        remaining = opts.max_iter - used
        if remaining <= 0:
            break
        trace: list[float] = []

        def fun(yy, mu=mu, rho=rho, lam=lam):
            return merit.value(yy, mu, rho, lam)

        def record(intermediate_result):
            trace.append(float(intermediate_result.fun))

        res = minimize(
            fun,
            y,
            jac=True,
            method="L-BFGS-B",
            bounds=bounds,
            callback=record,
            options={"maxiter": remaining, "gtol": 0.1 * opts.kkt_tol, "ftol": 1e-15, "maxcor": 20},
        )
        used += max(int(res.nit), 1)
        y = res.x
        history.append(trace)

        J, dJ, cres, cgrads, lres = merit.state(y, mu, rho, lam)
        mu_new = np.maximum(0.0, mu + rho * cres)
        lam_new = np.maximum(0.0, lam + rho * lres) if len(lam) else lam
        viol = max(float(np.max(cres, initial=0.0)), float(np.max(lres, initial=0.0)), 0.0)
        gz = dJ.copy()
        for i, g in cgrads.items():
            gz += mu_new[i] * g
        if len(lam):
            gz += prob.lin_A.T @ lam_new
        stat = float(np.max(np.abs(_proj_grad(y, prob.scale * gz, lo, hi)), initial=0.0))
        comp = max(
            float(np.max(np.abs(mu_new * np.minimum(cres, 0.0)), initial=0.0)),
            float(np.max(np.abs(lam_new * np.minimum(lres, 0.0)), initial=0.0)),
        )
        kkt = max(stat, comp)
        key = (max(viol, opts.feas_tol), J)
        if best is None or key < best[0]:
            best = (key, y.copy(), J, viol, kkt)
        log.debug("outer %d: J=%.6g viol=%.3g kkt=%.3g rho=%.3g", outer, J, viol, kkt, rho)
        if viol <= opts.feas_tol and kkt <= opts.kkt_tol:
            status = "converged"
            break
        mu, lam = mu_new, lam_new
        if viol > 0.25 * prev_viol:
            rho = min(rho * opts.rho_growth, opts.rho_max)
        prev_viol = viol

    converged = status == "converged"
    if not converged:
        _, y, J, viol, kkt = best
        warnings.warn(
            f"augmented Lagrangian stopped after {used} inner iterations (violation {viol:.3g}, KKT {kkt:.3g});"
            " returning the best iterate",
            SolverWarning,
            stacklevel=2,
        )
    diag = SolverDiagnostics(
        status=status,
        converged=converged,
        iterations=used,
        outer_iterations=outer,
        cost=float(J),
        max_violation=float(viol),
        kkt_residual=float(kkt),
        chance_evaluations=merit.evals,
        cf_batch_calls=merit.calls,
        screened=merit.screened,
        multipliers=mu,
        merit_history=history,
    )
    return prob.scale * y, diag
