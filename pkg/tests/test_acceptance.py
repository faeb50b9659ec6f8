"""Acceptance criteria, one test per criterion, each at its stated tolerance.

The terminal summary prints one PASS/FAIL line per criterion (see conftest).
"""

import filecmp
import math
import time
from math import comb, factorial

import numpy as np
import pytest
from scipy import stats

from cfcc import chance, reservoir, smpc
from cfcc.chance import AffineChanceConstraint
from cfcc.distributions import Cauchy, Exponential, Gamma, Laplace, Mixture, Normal, Uniform
from cfcc.inversion import Tolerances, cdf
from cfcc.solver import ConstrainedProblem, solve_constrained


def test_criterion_1_inversion_accuracy(report_detail):
    probs = np.linspace(0.01, 0.99, 50)
    cases = [
        (Normal(0.5, 2.0), stats.norm(0.5, 2.0)),
        (Exponential(1.5), stats.expon(scale=1 / 1.5)),
        (Uniform(-1.0, 3.0), stats.uniform(-1.0, 4.0)),
        (Laplace(0.2, 0.7), stats.laplace(0.2, 0.7)),
        (Cauchy(1.0, 0.5), stats.cauchy(1.0, 0.5)),
    ]
    jobs = [(d, ref.ppf(probs), ref.cdf) for d, ref in cases]
    mix = Mixture.of([(0.3, Normal(-1.0, 0.5)), (0.7, Normal(2.0, 1.0))])
    xs = np.linspace(-2.5, 4.5, 50)
    jobs.append((mix, xs, lambda x: 0.3 * stats.norm.cdf(x, -1, 0.5) + 0.7 * stats.norm.cdf(x, 2, 1)))

    worst = 0.0
    elapsed = 0.0
    for dist, points, ref_cdf in jobs:
        t0 = time.perf_counter()
        got = np.array([cdf(dist, x) for x in points])
        elapsed += time.perf_counter() - t0
        worst = max(worst, float(np.max(np.abs(got - ref_cdf(points)))))
    report_detail(f"max error {worst:.2e} (limit 1e-8), {elapsed:.3f} s for 300 CDFs (limit 1 s)")
    assert worst <= 1e-8
    assert elapsed < 1.0


def _sum_constraint(dists, g, q):
    # P(q + g^T w <= 0) = F_{g^T w}(-q); z is a dummy one-dimensional decision
    m = len(dists)
    return AffineChanceConstraint.affine(dists, q, [0.0], g, np.zeros((m, 1)), 0.5)


def _hypoexp_cdf(rates, x):
    rates = np.asarray(rates, dtype=float)
    out = 1.0
    for i, ri in enumerate(rates):
        coef = np.prod([rj / (rj - ri) for j, rj in enumerate(rates) if j != i])
        out -= coef * math.exp(-ri * x)
    return out


def _irwin_hall_cdf(n, x):
    return sum((-1) ** k * comb(n, k) * (x - k) ** n for k in range(int(math.floor(x)) + 1)) / factorial(n)


def test_criterion_2_sum_law_accuracy(report_detail):
    # g_j w_j with w_j ~ Exp(r_j) is Exp(r_j / g_j)
    rates = [1.0, 0.5, 2.0]
    g = [0.5, 2.0, 1.5]
    eff = [r / gj for r, gj in zip(rates, g)]
    xs = np.linspace(0.25, 15.0, 20)
    err_h = max(
        abs(chance.probability(_sum_constraint([Exponential(r) for r in rates], g, -x), [0.0]) - _hypoexp_cdf(eff, x))
        for x in xs
    )
    n = 4
    xs_u = np.linspace(0.1, 3.9, 20)
    err_u = max(
        abs(chance.probability(_sum_constraint([Uniform(0, 1)] * n, [1.0] * n, -x), [0.0]) - _irwin_hall_cdf(n, x))
        for x in xs_u
    )
    report_detail(f"hypoexponential {err_h:.2e}, Irwin-Hall {err_u:.2e} (limit 1e-7)")
    assert err_h <= 1e-7
    assert err_u <= 1e-7


def _random_constraint(rng, n=4):
    makers = [
        lambda: Normal(rng.normal(), rng.uniform(0.3, 2)),
        lambda: Exponential(rng.uniform(0.5, 3)),
        lambda: Uniform(-rng.uniform(0, 2), rng.uniform(0.1, 2)),
        lambda: Laplace(rng.normal(), rng.uniform(0.3, 2)),
        lambda: Gamma(rng.uniform(0.8, 4), rng.uniform(0.3, 1.5)),
        lambda: Cauchy(rng.normal(), rng.uniform(0.2, 1)),
        lambda: Mixture.of([(0.4, Normal(-1, 0.7)), (0.6, Laplace(1, 0.5))]),
    ]
    m = int(rng.integers(1, 4))
    dists = [makers[int(rng.integers(len(makers)))]() for _ in range(m)]
    g0 = rng.normal(size=m)
    gl = 0.3 * rng.normal(size=(m, n))
    ql = rng.normal(size=n)
    z = 0.5 * rng.normal(size=n)
    mu = sum(gi * d.location for gi, d in zip(g0 + gl @ z, dists))
    sd = math.sqrt(sum((gi * d.spread) ** 2 for gi, d in zip(g0 + gl @ z, dists)))
    # keep beta away from 0/1 so the gradient is informative
    q0 = -(ql @ z) - mu + rng.uniform(-1, 1) * sd
    return AffineChanceConstraint.affine(dists, q0, ql, g0, gl, 0.9), z


def test_criterion_3_gradient_correctness(report_detail):
    rng = np.random.default_rng(2024)
    tight = Tolerances(tol_abs=1e-13, tol_rel=1e-12, max_subdiv=200)
    h = 1e-5
    worst_ratio = 0.0
    for _ in range(20):
        c, z = _random_constraint(rng)
        grad = chance.gradient(c, z, tight)
        fd = np.array(
            [
                (chance.probability(c, z + h * e, tight) - chance.probability(c, z - h * e, tight)) / (2 * h)
                for e in np.eye(c.n)
            ]
        )
        allowed = np.maximum(1e-5, 1e-4 * np.abs(fd))
        worst_ratio = max(worst_ratio, float(np.max(np.abs(grad - fd) / allowed)))
    report_detail(f"worst |grad - FD| / max(1e-5, 1e-4|FD|) = {worst_ratio:.3f} over 20 constraints")
    assert worst_ratio <= 1.0


def test_criterion_4_mixture_cost_scaling(report_detail):
    rng = np.random.default_rng(7)
    dists = []
    for j in range(3):
        w = rng.dirichlet(np.ones(4))
        w = w / w.sum()
        w[-1] = 1.0 - w[:-1].sum()
        dists.append(Mixture(tuple(w), tuple(Normal(rng.normal(), rng.uniform(0.5, 1.5)) for _ in range(4))))
    c = AffineChanceConstraint.affine(dists, 0.3, [1.0, -0.5], [1.0, 0.7, -1.2], rng.normal(size=(3, 2)), 0.9)
    ev = chance.evaluate(c, np.array([0.2, -0.1]))
    per_batch = set(ev.counters.prime_calls_per_batch)
    report_detail(f"component-derivative evaluations per subinterval {sorted(per_batch)} (sum R_j = 12, prod R_j = 64)")
    assert per_batch == {12}


def test_criterion_5_quadrature_reuse(report_detail):
    dists = [Exponential(1.0), Mixture.of([(0.5, Normal(0, 1)), (0.5, Laplace(1, 0.5))]), Uniform(-1, 1)]
    c = AffineChanceConstraint.affine(dists, -0.5, [1.0, 0.0], [1.0, 0.5, 0.8], np.array([[0.1, 0], [0, 0.2], [0.3, 0.1]]), 0.9)
    ev = chance.evaluate(c, np.array([0.1, 0.2]), need_gradient=True)
    k = ev.counters
    sum_r = sum(d.n_components for d in dists)
    report_detail(
        f"{ev.batch_calls} subintervals, {k.batch_calls + k.tail_batch_calls} integrand calls, "
        f"{k.cf_calls} component CF evaluations = calls x {sum_r}"
    )
    # one integrand call per processed subinterval
    assert k.batch_calls + k.tail_batch_calls == ev.batch_calls
    # the beta, density and gradient columns do not trigger extra CF work
    assert k.cf_calls == (k.batch_calls + k.tail_batch_calls) * sum_r
    assert len(k.prime_calls_per_batch) == k.batch_calls


def test_criterion_6_gaussian_cross_check(report_detail):
    rng = np.random.default_rng(99)
    sigmas = [0.8, 1.5, 0.6]
    means = [1.0, 2.0, 0.5]
    worst = 0.0
    count = 0
    for trial in range(10):
        sysm = _normal_lakes(means, sigmas, kappa=0.05 * (1 + trial % 3))
        prob = smpc.SmpcProblem(sysm, 3, [4.5, 4.8, 4.2], [5.3, 5.5, 5.0], [4.0, 4.2, 3.5], 400.0)
        x0 = np.array([4.6, 5.0, 4.5, 187.0, 177.0]) + rng.normal(scale=0.05, size=5)
        pred = smpc.build_prediction(sysm, x0, 3)
        cons = smpc.compile_chance_constraints(pred, prob).chance
        for c in rng.choice(len(cons), size=5, replace=False):
            c = cons[int(c)]
            z = np.concatenate([rng.uniform(150, 250, size=9), rng.normal(scale=5, size=pred.policy.size - 9)])
            g = c.g(z)
            q = c.q(z)
            mu = float(g @ np.array([d.mu for d in c.disturbances]))
            sd = math.sqrt(float(np.sum((g * np.array([d.sigma for d in c.disturbances])) ** 2)))
            ref = stats.norm.cdf((-q - mu) / sd)
            worst = max(worst, abs(chance.probability(c, z) - ref))
            count += 1
    report_detail(f"max |beta - Phi(...)| = {worst:.2e} over {count} pairs (limit 1e-7)")
    assert count == 50
    assert worst <= 1e-7


def _normal_lakes(means, sigmas, kappa):
    cfg = reservoir.default_config()
    cfg.kappa = kappa
    sysm = reservoir.build_system(cfg)
    return smpc.LinearSystem(sysm.A, sysm.B, sysm.G, sysm.c, sysm.C, [Normal(m, s) for m, s in zip(means, sigmas)])


@pytest.mark.slow
def test_criterion_7_case_study_statistics(report_detail):
    cfg = reservoir.default_config()
    assert (cfg.horizon, cfg.gamma_flood, cfg.dt_hours, cfg.duration_hours) == (10, 0.95, 1.0, 24.0)
    t0 = time.perf_counter()
    rep = reservoir.validate_monte_carlo(cfg, runs=100)
    elapsed = time.perf_counter() - t0
    flood = [r.frequency for r in rep.flood]
    report_detail(
        f"flood violation per lake {flood} (limit 0.08), in-band {rep.in_band_fraction:.4f} (limit 0.92), "
        f"{elapsed:.0f} s (limit 600 s)"
    )
    assert max(flood) <= 0.08
    assert rep.in_band_fraction >= 0.92
    assert elapsed < 600


def test_criterion_8_solver_sanity(report_detail):
    c = AffineChanceConstraint.affine([Normal(0, 1)], 0.0, [1.0], [1.0], [[0.0]], 0.95)
    prob = ConstrainedProblem(1, lambda z: (float(z[0] ** 2), 2 * z), [c])
    z, diag = solve_constrained(prob, [0.0])
    target = stats.norm.ppf(0.05)
    report_detail(f"z* = {z[0]:.8f}, target {target:.8f}, |error| {abs(z[0] - target):.1e} (limit 1e-4), {diag.status}")
    assert abs(z[0] - (-1.6448536)) <= 1e-4


def test_criterion_9_determinism(tmp_path, report_detail):
    cfg = reservoir.default_config()
    a, b = tmp_path / "a", tmp_path / "b"
    _, pa = reservoir.run_case(cfg, a, seed=3)
    _, pb = reservoir.run_case(cfg, b, seed=3)
    same = [filecmp.cmp(pa[k], pb[k], shallow=False) for k in ("data", "summary")]
    report_detail(f"lakes.dat identical: {same[0]}, summary.json identical: {same[1]}")
    assert all(same)
