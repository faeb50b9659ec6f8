"""Stochastic MPC with affine disturbance feedback for LTI systems.

Inputs over the horizon are ``u_l = v_l + sum_{i<l} L_{l,i} w_i``.  Every
predicted output and input is then ``a(z) + b(z)^T w_stack`` with ``a`` and
``b`` affine in the decision vector ``z``, which is exactly the form the
chance-constraint evaluator expects.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .chance import AffineChanceConstraint, probability
from .distributions import Distribution
from .errors import CFCCError, InvalidInputError
from .inversion import DEFAULT_TOLERANCES, Tolerances
from .solver import ConstrainedProblem, SolverDiagnostics, SolverOptions, SolverWarning, solve_constrained

__all__ = [
    "LinearSystem",
    "FeedbackPolicy",
    "AffineRow",
    "PredictionModel",
    "SmpcProblem",
    "CompiledConstraints",
    "SimulationTrace",
    "build_prediction",
    "compile_chance_constraints",
    "expected_cost",
    "solve",
    "closed_loop_simulate",
]

log = logging.getLogger(__name__)


@dataclass
class LinearSystem:
    """``x+ = A x + B u + G w + c_k``, ``y = C x`` with independent disturbance components.

    ``c`` is a vector or a ``(K, n_x)`` array of per-step offsets (the last row
    is reused beyond ``K``).
    """

    A: np.ndarray
    B: np.ndarray
    G: np.ndarray
    c: np.ndarray
    C: np.ndarray
    disturbance: Sequence[Distribution]

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        nx = self.A.shape[0]
        self.B = np.asarray(self.B, dtype=float).reshape(nx, -1)
        self.G = np.asarray(self.G, dtype=float).reshape(nx, -1)
        self.C = np.asarray(self.C, dtype=float).reshape(-1, nx)
        self.c = np.atleast_1d(np.asarray(self.c, dtype=float))
        self.disturbance = tuple(self.disturbance)
        if self.A.shape != (nx, nx):
            raise InvalidInputError(f"A must be square, got {self.A.shape}")
        if self.c.shape[-1] != nx or self.c.ndim > 2:
            raise InvalidInputError(f"c must have {nx} entries per step, got shape {self.c.shape}")
        if len(self.disturbance) != self.G.shape[1]:
            raise InvalidInputError(f"G has {self.G.shape[1]} columns but {len(self.disturbance)} disturbances given")

    @property
    def n_x(self) -> int:
        return self.A.shape[0]

    @property
    def n_u(self) -> int:
        return self.B.shape[1]

    @property
    def n_w(self) -> int:
        return self.G.shape[1]

    @property
    def n_y(self) -> int:
        return self.C.shape[0]

    def c_at(self, k: int) -> np.ndarray:
        if self.c.ndim == 1:
            return self.c
        return self.c[min(k, len(self.c) - 1)]

    def step(self, x, u, w, k: int = 0) -> np.ndarray:
        return self.A @ x + self.B @ u + self.G @ w + self.c_at(k)


@dataclass(frozen=True)
class FeedbackPolicy:
    """Layout of ``z = [v_0 .. v_{N-1}, L_{1,0}, L_{2,0}, L_{2,1}, ...]`` (each ``L`` row-major)."""

    N: int
    n_u: int
    n_w: int
    affine: bool = True

    def __post_init__(self):
        if self.N < 1 or self.n_u < 1 or self.n_w < 0:
            raise InvalidInputError("horizon and dimensions must be positive")

    @property
    def pairs(self) -> list[tuple[int, int]]:
        if not self.affine:
            return []
        return [(l, i) for l in range(1, self.N) for i in range(l)]

    @property
    def n_v(self) -> int:
        return self.N * self.n_u

    @property
    def size(self) -> int:
        return self.n_v + len(self.pairs) * self.n_u * self.n_w

    def gain_offset(self, l: int, i: int) -> int:
        if not (0 <= i < l < self.N) or not self.affine:
            raise InvalidInputError(f"no gain L[{l},{i}] in this policy")
        k = l * (l - 1) // 2 + i
        return self.n_v + k * self.n_u * self.n_w

    def split(self, z) -> tuple[np.ndarray, np.ndarray]:
        """``v`` as ``(N, n_u)`` and the full gain array ``(N, N, n_u, n_w)`` (zeros where unused)."""
        z = np.asarray(z, dtype=float)
        if z.shape != (self.size,):
            raise InvalidInputError(f"z must have length {self.size}")
        v = z[: self.n_v].reshape(self.N, self.n_u)
        L = np.zeros((self.N, self.N, self.n_u, self.n_w))
        block = self.n_u * self.n_w
        for l, i in self.pairs:
            o = self.gain_offset(l, i)
            L[l, i] = z[o : o + block].reshape(self.n_u, self.n_w)
        return v, L

    def pack(self, v, L=None) -> np.ndarray:
        z = np.zeros(self.size)
        z[: self.n_v] = np.asarray(v, dtype=float).reshape(-1)
        if L is not None:
            block = self.n_u * self.n_w
            for l, i in self.pairs:
                o = self.gain_offset(l, i)
                z[o : o + block] = np.asarray(L[l][i]).reshape(-1)
        return z

    def shift(self, z) -> np.ndarray:
        """Receding-horizon warm start: drop the first move, repeat the last move, zero new gains."""
        v, L = self.split(z)
        v2 = np.empty_like(v)
        v2[:-1] = v[1:]
        v2[-1] = v[-1]
        L2 = np.zeros_like(L)
        L2[:-1, :-1] = L[1:, 1:]
        return self.pack(v2, L2)


@dataclass
class AffineRow:
    """``value(z, w) = c0 + cz @ z + (g0 + gz @ z) @ w``."""

    c0: float
    cz: np.ndarray
    g0: np.ndarray
    gz: np.ndarray

    def value(self, z, w) -> float:
        return float(self.c0 + self.cz @ z + (self.g0 + self.gz @ z) @ w)

    @property
    def stochastic(self) -> bool:
        return bool(np.any(self.g0) or np.any(self.gz))


@dataclass
class PredictionModel:
    """Affine maps of predicted outputs ``y_l`` (l=1..N) and inputs ``u_l`` (l=0..N-1).

    Arrays are indexed ``[l, row]`` (outputs use ``l-1``) followed by the
    ``z`` and/or ``w_stack`` axes.
    """

    policy: FeedbackPolicy
    disturbances: tuple
    y_const: np.ndarray
    y_z: np.ndarray
    y_w: np.ndarray
    y_wz: np.ndarray
    u_const: np.ndarray
    u_z: np.ndarray
    u_w: np.ndarray
    u_wz: np.ndarray

    @property
    def N(self) -> int:
        return self.policy.N

    def output(self, l: int, j: int) -> AffineRow:
        if not 1 <= l <= self.N:
            raise InvalidInputError(f"output step must lie in 1..{self.N}")
        k = l - 1
        return AffineRow(float(self.y_const[k, j]), self.y_z[k, j], self.y_w[k, j], self.y_wz[k, j])

    def input(self, l: int, j: int) -> AffineRow:
        if not 0 <= l < self.N:
            raise InvalidInputError(f"input step must lie in 0..{self.N - 1}")
        return AffineRow(float(self.u_const[l, j]), self.u_z[l, j], self.u_w[l, j], self.u_wz[l, j])

    def evaluate(self, z, w_stack) -> tuple[np.ndarray, np.ndarray]:
        """Predicted ``(y (N, n_y), u (N, n_u))`` for a decision vector and disturbance stack."""
        z = np.asarray(z, dtype=float)
        w = np.asarray(w_stack, dtype=float)
        y = self.y_const + self.y_z @ z + self.y_w @ w + (self.y_wz @ z) @ w
        u = self.u_const + self.u_z @ z + self.u_w @ w + (self.u_wz @ z) @ w
        return y, u

    def mean_map(self) -> tuple[np.ndarray, np.ndarray]:
        """``E[y_stack] = a + M z`` with ``y_stack`` the row-major ``(N, n_y)`` outputs."""
        mw = np.array([d.mean() for d in self.disturbances])
        a = self.y_const + self.y_w @ mw
        M = self.y_z + np.einsum("lymn,m->lyn", self.y_wz, mw)
        return a.reshape(-1), M.reshape(-1, self.policy.size)


def build_prediction(sys: LinearSystem, x0, N: int, affine: bool = True, k0: int = 0) -> PredictionModel:
    """Roll the dynamics forward symbolically over ``N`` steps from ``x0``."""
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    if x0.shape != (sys.n_x,) or not np.all(np.isfinite(x0)):
        raise InvalidInputError(f"x0 must be a finite vector of length {sys.n_x}")
    if N < 1:
        raise InvalidInputError("horizon N must be >= 1")
    pol = FeedbackPolicy(N, sys.n_u, sys.n_w, affine)
    nx, nu, nw, n = sys.n_x, sys.n_u, sys.n_w, pol.size
    m = N * nw

    # input maps: v_l selects z entries, L_{l,i} w_i is bilinear in (z, w)
    u_const = np.zeros((N, nu))
    u_z = np.zeros((N, nu, n))
    u_w = np.zeros((N, nu, m))
    u_wz = np.zeros((N, nu, m, n))
    for l in range(N):
        for a in range(nu):
            u_z[l, a, l * nu + a] = 1.0
    for l, i in pol.pairs:
        o = pol.gain_offset(l, i)
        for a in range(nu):
            for b in range(nw):
                u_wz[l, a, i * nw + b, o + a * nw + b] = 1.0

    xc = x0.copy()
    xz = np.zeros((nx, n))
    xw = np.zeros((nx, m))
    xwz = np.zeros((nx, m, n))
    y_const = np.zeros((N, sys.n_y))
    y_z = np.zeros((N, sys.n_y, n))
    y_w = np.zeros((N, sys.n_y, m))
    y_wz = np.zeros((N, sys.n_y, m, n))
    for l in range(N):
        xc = sys.A @ xc + sys.B @ u_const[l] + sys.c_at(k0 + l)
        xz = sys.A @ xz + sys.B @ u_z[l]
        xw = sys.A @ xw + sys.B @ u_w[l]
        xw[:, l * nw : (l + 1) * nw] += sys.G
        xwz = np.einsum("ij,jmn->imn", sys.A, xwz) + np.einsum("ij,jmn->imn", sys.B, u_wz[l])
        y_const[l] = sys.C @ xc
        y_z[l] = sys.C @ xz
        y_w[l] = sys.C @ xw
        y_wz[l] = np.einsum("ij,jmn->imn", sys.C, xwz)
    return PredictionModel(
        policy=pol,
        disturbances=tuple(sys.disturbance) * N,
        y_const=y_const,
        y_z=y_z,
        y_w=y_w,
        y_wz=y_wz,
        u_const=u_const,
        u_z=u_z,
        u_w=u_w,
        u_wz=u_wz,
    )


@dataclass
class SmpcProblem:
    """Reference tracking under flood (``y <= y_max``), drought (``y >= y_min``) and release (``0 <= u <= u_max``) limits."""

    system: LinearSystem
    N: int
    y_ref: np.ndarray
    y_max: np.ndarray
    y_min: np.ndarray
    u_max: np.ndarray
    gamma: tuple[float, float, float] = (0.95, 0.95, 0.95)
    feedback: str = "affine"
    u_min: np.ndarray | None = None
    variable_scale: float = 0.01
    tolerances: Tolerances = DEFAULT_TOLERANCES
    solver: SolverOptions = field(default_factory=SolverOptions)

    def __post_init__(self):
        ny, nu = self.system.n_y, self.system.n_u

        def vec(x, k, name):
            a = np.broadcast_to(np.asarray(x, dtype=float), (k,)).copy()
            if np.any(np.isnan(a)):
                raise InvalidInputError(f"{name} contains NaN")
            return a

        self.y_ref = vec(self.y_ref, ny, "y_ref")
        self.y_max = vec(self.y_max, ny, "y_max")
        self.y_min = vec(self.y_min, ny, "y_min")
        self.u_max = vec(self.u_max, nu, "u_max")
        self.u_min = vec(0.0 if self.u_min is None else self.u_min, nu, "u_min")
        if np.any(self.y_min > self.y_max):
            raise InvalidInputError("y_min must not exceed y_max")
        if not (np.all(self.y_min < self.y_ref) and np.all(self.y_ref < self.y_max)):
            raise InvalidInputError("bounds must satisfy y_min < y_ref < y_max elementwise")
        if np.any(self.u_min > self.u_max):
            raise InvalidInputError("u_min must not exceed u_max")
        self.gamma = tuple(float(g) for g in self.gamma)
        if len(self.gamma) != 3 or not all(0.0 <= g <= 1.0 for g in self.gamma):
            raise InvalidInputError("gamma must hold three probability levels in [0, 1]")
        if self.feedback not in ("affine", "none"):
            raise InvalidInputError(f"feedback must be 'affine' or 'none', got {self.feedback!r}")
        if self.N < 1:
            raise InvalidInputError("horizon N must be >= 1")
        if self.solver.tolerances is DEFAULT_TOLERANCES and self.tolerances is not DEFAULT_TOLERANCES:
            self.solver = SolverOptions(**{**self.solver.__dict__, "tolerances": self.tolerances})

    @property
    def policy(self) -> FeedbackPolicy:
        s = self.system
        return FeedbackPolicy(self.N, s.n_u, s.n_w, self.feedback == "affine")


@dataclass
class CompiledConstraints:
    """Chance constraints plus the deterministic rows that carry no disturbance."""

    chance: list[AffineChanceConstraint]
    lower: np.ndarray
    upper: np.ndarray
    lin_A: np.ndarray
    lin_b: np.ndarray
    lin_names: list[str]

    @property
    def n_hard(self) -> int:
        return int(np.sum(np.isfinite(self.lower)) + np.sum(np.isfinite(self.upper))) + len(self.lin_b)


def compile_chance_constraints(pred: PredictionModel, prob: SmpcProblem) -> CompiledConstraints:
    """Turn every bound into ``P(q(z) + g(z)^T w <= 0) >= gamma`` or a hard row.

    Rows whose disturbance coefficient is structurally zero become hard
    constraints: single-variable rows go to the box, the rest to ``lin_A``.
    """
    if pred.N != prob.N:
        raise InvalidInputError(f"prediction horizon {pred.N} differs from problem horizon {prob.N}")
    n = pred.policy.size
    dists = pred.disturbances
    g1, g2, g3 = prob.gamma
    chance: list[AffineChanceConstraint] = []
    lower = np.full(n, -np.inf)
    upper = np.full(n, np.inf)
    lin_rows, lin_b, lin_names = [], [], []

    def add(row: AffineRow, sign: float, bound: float, gamma: float, name: str):
        # constraint: sign * (value - bound) <= 0
        q0 = sign * (row.c0 - bound)
        ql = sign * row.cz
        if row.stochastic:
            chance.append(AffineChanceConstraint.affine(dists, q0, ql, sign * row.g0, sign * row.gz, gamma, name))
            return
        if not np.isfinite(q0):
            return
        nz = np.flatnonzero(ql)
        if len(nz) == 0:
            if q0 > 0:
                raise InvalidInputError(f"deterministic constraint {name} is violated for every z")
            return
        if len(nz) == 1:
            k = nz[0]
            lim = -q0 / ql[k]
            if ql[k] > 0:
                upper[k] = min(upper[k], lim)
            else:
                lower[k] = max(lower[k], lim)
            return
        lin_rows.append(ql)
        lin_b.append(q0)
        lin_names.append(name)

    ny, nu = prob.system.n_y, prob.system.n_u
    for l in range(1, prob.N + 1):
        for j in range(ny):
            row = pred.output(l, j)
            add(row, 1.0, prob.y_max[j], g1, f"flood[{l},{j}]")
            add(row, -1.0, prob.y_min[j], g2, f"drought[{l},{j}]")
    for l in range(prob.N):
        for j in range(nu):
            row = pred.input(l, j)
            add(row, 1.0, prob.u_max[j], g3, f"release_max[{l},{j}]")
            add(row, -1.0, prob.u_min[j], g3, f"release_min[{l},{j}]")
    if np.any(lower > upper):
        raise InvalidInputError("hard input bounds are inconsistent")
    A = np.array(lin_rows).reshape(-1, n)
    return CompiledConstraints(chance, lower, upper, A, np.array(lin_b, dtype=float), lin_names)


def expected_cost(pred: PredictionModel, prob: SmpcProblem, z) -> tuple[float, np.ndarray]:
    """``J = sum_l ||E[y_l] - y_ref||^2`` over ``l = 1..N`` and its gradient."""
    a, M = pred.mean_map()
    r = a + M @ np.asarray(z, dtype=float) - np.tile(prob.y_ref, prob.N)
    return float(r @ r), 2.0 * (M.T @ r)


def _quadratic_cost(pred: PredictionModel, prob: SmpcProblem):
    a, M = pred.mean_map()
    a = a - np.tile(prob.y_ref, prob.N)

    def cost(z):
        r = a + M @ z
        return float(r @ r), 2.0 * (M.T @ r)

    return cost, a, M


def _scales(prob: SmpcProblem, pol: FeedbackPolicy) -> np.ndarray:
    # a unit step in scaled coordinates moves an input by 1% of its range, which
    # keeps the first quasi-Newton trial point close enough for moment screening
    span = np.where(np.isfinite(prob.u_max - prob.u_min), prob.u_max - prob.u_min, 1.0)
    span = prob.variable_scale * np.where(span > 0, span, 1.0)
    s = np.ones(pol.size)
    s[: pol.n_v] = np.tile(span, pol.N)
    if pol.n_w:
        block = np.repeat(span, pol.n_w)
        for l, i in pol.pairs:
            o = pol.gain_offset(l, i)
            s[o : o + len(block)] = block
    return s


def nominal_start(pred: PredictionModel, prob: SmpcProblem, lower, upper) -> np.ndarray:
    """Least-squares open-loop moves (no feedback) clipped into the box."""
    _, a, M = _quadratic_cost(pred, prob)
    nv = pred.policy.n_v
    v, *_ = np.linalg.lstsq(M[:, :nv], -a, rcond=None)
    z = np.zeros(pred.policy.size)
    z[:nv] = v
    return np.clip(z, lower, upper)


def solve(prob: SmpcProblem, x0, z_init=None, k: int = 0) -> tuple[np.ndarray, SolverDiagnostics]:
    """Solve the finite-horizon problem from state ``x0``.

    Parameters
    ----------
    prob : SmpcProblem
    x0 : array_like
        Current state.
    z_init : array_like, optional
        Warm start; defaults to the clipped least-squares open-loop moves.
    k : int
        Absolute time index, used for time-varying offsets.
    """
    pred = build_prediction(prob.system, x0, prob.N, prob.feedback == "affine", k0=k)
    cc = compile_chance_constraints(pred, prob)
    cost, _, _ = _quadratic_cost(pred, prob)
    if z_init is None:
        z_init = nominal_start(pred, prob, cc.lower, cc.upper)
    nlp = ConstrainedProblem(
        n=pred.policy.size,
        cost=cost,
        chance=cc.chance,
        lin_A=cc.lin_A,
        lin_b=cc.lin_b,
        lower=cc.lower,
        upper=cc.upper,
        scale=_scales(prob, pred.policy),
    )
    return solve_constrained(nlp, z_init, prob.solver)


@dataclass
class SimulationTrace:
    """Closed-loop record; row ``k`` holds ``u_k``, ``w_k`` and the state reached after the step."""

    dt: float
    x0: np.ndarray
    states: np.ndarray
    inputs: np.ndarray
    disturbances: np.ndarray
    costs: np.ndarray
    beta: np.ndarray
    beta_names: list[str]
    statuses: list[str]
    diagnostics: list[dict]
    seed: int | None = None

    @property
    def steps(self) -> int:
        return len(self.states)

    @property
    def outputs_time(self) -> np.ndarray:
        return self.dt * np.arange(1, self.steps + 1)

    @property
    def inputs_time(self) -> np.ndarray:
        return self.dt * np.arange(self.steps)


def _draw_streams(dists: Sequence[Distribution], seed: int):
    children = np.random.SeedSequence(seed).spawn(len(dists))
    rngs = [np.random.default_rng(s) for s in children]

    def draw():
        return np.array([d.draw(r, 1)[0] for d, r in zip(dists, rngs)])

    return draw


def closed_loop_simulate(
    prob: SmpcProblem,
    x0,
    T: int,
    seed: int = 0,
    w=None,
    z_init=None,
    record_beta: bool = True,
    dt: float = 1.0,
) -> SimulationTrace:
    """Receding-horizon simulation over ``T`` steps.

    Parameters
    ----------
    prob : SmpcProblem
    x0 : array_like
        Initial state.
    T : int
        Number of steps.
    seed : int
        Seeds one independent stream per disturbance component.
    w : array_like, optional
        ``(T, n_w)`` realization that replaces the random draws.
    z_init : array_like, optional
        Warm start for the first solve.
    record_beta : bool
        Store one-step-ahead flood and drought probabilities at every solution.
    dt : float
        Step length used only for the trace time axes.
    """
    if int(T) < 1:
        raise InvalidInputError("T must be >= 1")
    T = int(T)
    sys = prob.system
    x = np.asarray(x0, dtype=float).reshape(sys.n_x).copy()
    if w is not None:
        w = np.asarray(w, dtype=float).reshape(T, sys.n_w)
    draw = _draw_streams(sys.disturbance, seed)
    pol = prob.policy
    states = np.zeros((T, sys.n_x))
    inputs = np.zeros((T, sys.n_u))
    dist = np.zeros((T, sys.n_w))
    costs = np.zeros(T)
    betas = []
    names: list[str] = []
    statuses, diags = [], []
    z_prev = None if z_init is None else np.asarray(z_init, dtype=float)
    for k in range(T):
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", SolverWarning)
                z, d = solve(prob, x, z_prev, k=k)
            status = d.status
            diag = {
                "status": d.status,
                "iterations": d.iterations,
                "outer_iterations": d.outer_iterations,
                "cost": d.cost,
                "max_violation": d.max_violation,
                "kkt_residual": d.kkt_residual,
                "chance_evaluations": d.chance_evaluations,
                "cf_batch_calls": d.cf_batch_calls,
            }
            cost = d.cost
        except CFCCError as exc:
            # keep the loop alive on numerical trouble: reuse the shifted plan
            log.warning("step %d: solver failed (%s); applying warm-start plan", k, exc)
            z = z_prev if z_prev is not None else np.zeros(pol.size)
            status = f"error: {type(exc).__name__}"
            diag = {"status": status, "message": str(exc)}
            cost = math.nan
        v, _ = pol.split(z)
        u = np.clip(v[0], prob.u_min, prob.u_max)
        if record_beta:
            pred1 = build_prediction(sys, x, 1, False, k0=k)
            row_b, row_n = [], []
            for j in range(sys.n_y):
                r = pred1.output(1, j)
                for sign, bound, tag in ((1.0, prob.y_max[j], "flood"), (-1.0, prob.y_min[j], "drought")):
                    c = AffineChanceConstraint.affine(
                        pred1.disturbances, sign * (r.c0 - bound), sign * r.cz, sign * r.g0, sign * r.gz, 0.0
                    )
                    row_b.append(probability(c, u, prob.tolerances))
                    row_n.append(f"{tag}[{j}]")
            betas.append(row_b)
            names = row_n
        wk = w[k] if w is not None else draw()
        if w is not None:
            draw()  # keep the random streams aligned with an unforced run
        x = sys.step(x, u, wk, k)
        if not np.all(np.isfinite(x)):
            raise InvalidInputError(f"state became non-finite at step {k}")
        states[k], inputs[k], dist[k], costs[k] = x, u, wk, cost
        statuses.append(status)
        diags.append(diag)
        z_prev = pol.shift(z)
    return SimulationTrace(
        dt=float(dt),
        x0=np.asarray(x0, dtype=float).copy(),
        states=states,
        inputs=inputs,
        disturbances=dist,
        costs=costs,
        beta=np.array(betas) if record_beta else np.zeros((T, 0)),
        beta_names=names,
        statuses=statuses,
        diagnostics=diags,
        seed=seed,
    )
