import warnings

import numpy as np
import pytest
from scipy import stats

from cfcc.chance import AffineChanceConstraint
from cfcc.distributions import Exponential, Normal
from cfcc.errors import InvalidInputError
from cfcc.solver import ConstrainedProblem, SolverOptions, SolverWarning, solve_constrained


def _quadratic(H, f):
    H = np.asarray(H, dtype=float)
    f = np.asarray(f, dtype=float)
    return lambda z: (float(0.5 * z @ H @ z + f @ z), H @ z + f)


def test_unconstrained_least_squares_matches_normal_equations(rng):
    M = rng.normal(size=(8, 4))
    b = rng.normal(size=8)
    prob = ConstrainedProblem(4, lambda z: (float(np.sum((M @ z - b) ** 2)), 2 * M.T @ (M @ z - b)))
    z, diag = solve_constrained(prob, np.zeros(4))
    assert diag.converged
    assert np.allclose(z, np.linalg.solve(M.T @ M, M.T @ b), atol=1e-6)


def test_scalar_chance_benchmark():
    c = AffineChanceConstraint.affine([Normal(0, 1)], 0.0, [1.0], [1.0], [[0.0]], 0.95)
    z, diag = solve_constrained(ConstrainedProblem(1, lambda z: (float(z[0] ** 2), 2 * z), [c]), [0.0])
    assert diag.status == "converged"
    assert z[0] == pytest.approx(stats.norm.ppf(0.05), abs=1e-5)
    assert diag.max_violation <= 1e-7
    # the multiplier balances the cost gradient against the density
    assert diag.multipliers[0] == pytest.approx(-2 * z[0] / stats.norm.pdf(z[0]), rel=1e-3)


def test_merit_history_is_monotone_within_each_round():
    # P(z0 + z1 - 1 + w1 + w2 <= 0) >= 0.9 with w1 + w2 exponentially modified Gaussian
    c = AffineChanceConstraint.affine([Exponential(1.0), Normal(0, 0.5)], -1.0, [1.0, 1.0], [1.0, 1.0], np.zeros((2, 2)), 0.9)
    prob = ConstrainedProblem(2, _quadratic(np.eye(2), [-1.0, -1.0]), [c])
    z, diag = solve_constrained(prob, [0.0, 0.0])
    assert diag.converged
    total = 1.0 - stats.exponnorm.ppf(0.9, 2.0, scale=0.5)
    assert np.allclose(z, [total / 2, total / 2], atol=1e-5)
    for trace in diag.merit_history:
        assert all(b <= a + 1e-12 for a, b in zip(trace, trace[1:]))


def test_linear_and_box_constraints():
    # min (z0-2)^2 + (z1-2)^2  s.t.  z0 + z1 <= 1,  z1 >= 0.8
    prob = ConstrainedProblem(
        2,
        lambda z: (float(np.sum((z - 2) ** 2)), 2 * (z - 2)),
        lin_A=[[1.0, 1.0]],
        lin_b=[-1.0],
        lower=[-np.inf, 0.8],
    )
    z, diag = solve_constrained(prob, [0.0, 1.0])
    assert diag.converged
    assert np.allclose(z, [0.2, 0.8], atol=1e-6)


def test_budget_exhaustion_warns_and_returns_best_iterate():
    c = AffineChanceConstraint.affine([Normal(0, 1)], 0.0, [1.0], [1.0], [[0.0]], 0.95)
    prob = ConstrainedProblem(1, lambda z: (float(z[0] ** 2), 2 * z), [c])
    with pytest.warns(SolverWarning):
        z, diag = solve_constrained(prob, [0.0], SolverOptions(max_iter=2))
    assert not diag.converged and diag.status == "max_iter"
    assert np.all(np.isfinite(z))


def test_screening_does_not_change_the_answer():
    c1 = AffineChanceConstraint.affine([Normal(0, 1)], 0.0, [1.0], [1.0], [[0.0]], 0.95)
    # far from binding: Cantelli already certifies it
    c2 = AffineChanceConstraint.affine([Normal(0, 1)], -50.0, [1.0], [1.0], [[0.0]], 0.95)
    prob = ConstrainedProblem(1, lambda z: (float(z[0] ** 2), 2 * z), [c1, c2])
    za, da = solve_constrained(prob, [0.0])
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        zb, db = solve_constrained(prob, [0.0], SolverOptions(screening=False))
    assert za[0] == pytest.approx(zb[0], abs=1e-7)
    assert da.screened > 0 and db.screened == 0
    assert da.chance_evaluations < db.chance_evaluations


def test_invalid_inputs():
    c = AffineChanceConstraint.affine([Normal(0, 1)], 0.0, [1.0, 0.0], [1.0], [[0.0, 0.0]], 0.95)
    with pytest.raises(InvalidInputError):
        ConstrainedProblem(1, lambda z: (0.0, z), [c])
    with pytest.raises(InvalidInputError):
        ConstrainedProblem(1, lambda z: (0.0, z), lower=[1.0], upper=[0.0])
    with pytest.raises(InvalidInputError):
        solve_constrained(ConstrainedProblem(1, lambda z: (0.0, z)), [np.nan])
    with pytest.raises(InvalidInputError):
        SolverOptions(max_iter=0)
