import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from cfcc.distributions import Cauchy, Exponential, Gamma, Laplace, Mixture, Normal, Uniform
from cfcc.errors import InvalidInputError, ToleranceNotMetError
from cfcc.inversion import Tolerances, cdf, invert, pdf


def test_gamma_cdf_and_pdf():
    d, ref = Gamma(2.5, 0.8), stats.gamma(2.5, scale=0.8)
    for x in ref.ppf([0.05, 0.3, 0.6, 0.95]):
        assert cdf(d, x) == pytest.approx(ref.cdf(x), abs=1e-9)
        assert pdf(d, x) == pytest.approx(ref.pdf(x), abs=1e-8)


@pytest.mark.parametrize(
    "dist,ref",
    [
        (Normal(1, 2), stats.norm(1, 2)),
        (Laplace(0, 1.5), stats.laplace(0, 1.5)),
        (Cauchy(-1, 0.5), stats.cauchy(-1, 0.5)),
        (Exponential(2.0), stats.expon(scale=0.5)),
        (Uniform(0, 1), stats.uniform(0, 1)),
    ],
)
def test_pdf_matches_closed_form(dist, ref):
    for x in ref.ppf([0.1, 0.35, 0.5, 0.8]):
        assert pdf(dist, x) == pytest.approx(ref.pdf(x), abs=1e-8)


def test_bare_callable_uses_real_axis_only():
    res = cdf(lambda t: np.exp(-0.5 * t * t), 0.7, full_output=True)
    assert res.value == pytest.approx(stats.norm.cdf(0.7), abs=1e-9)


def test_symmetric_mixture_at_centre():
    mix = Mixture.of([(0.5, Normal(-2, 1)), (0.5, Normal(2, 1))])
    assert cdf(mix, 0.0) == pytest.approx(0.5, abs=1e-12)


def test_full_output_fields():
    F, p = invert(Exponential(1.0), 1.0)
    assert F.value == pytest.approx(1 - math.exp(-1), abs=1e-9)
    assert p.value == pytest.approx(math.exp(-1), abs=1e-8)
    assert F.batch_calls > 0 and F.error_estimate < 1e-8
    assert 0.0 <= F.value <= 1.0


def test_values_are_clamped_in_tails():
    assert 0.0 <= cdf(Normal(0, 1), -40.0) <= 1e-12
    assert 1 - 1e-12 <= cdf(Normal(0, 1), 40.0) <= 1.0
    assert pdf(Uniform(0, 1), 3.0) >= 0.0


def test_contour_off_still_accurate_for_smooth_cf():
    tol = Tolerances(contour=False)
    assert cdf(Normal(0.3, 1.2), 1.0, tol) == pytest.approx(stats.norm.cdf(1.0, 0.3, 1.2), abs=1e-9)


def test_tolerance_failure_reports_partial_result():
    tol = Tolerances(tol_abs=1e-15, tol_rel=1e-15, max_subdiv=1, contour=False)
    with pytest.raises(ToleranceNotMetError) as info:
        cdf(Exponential(1.0), 1.0, tol)
    assert info.value.result is not None


def test_rejects_bad_point_and_provider():
    with pytest.raises(InvalidInputError):
        cdf(Normal(0, 1), float("nan"))
    with pytest.raises(InvalidInputError):
        cdf(42, 0.0)
    with pytest.raises(InvalidInputError):
        Tolerances(contour_angle=1.0)


@settings(max_examples=40, deadline=None)
@given(
    mu=st.floats(-3, 3),
    b=st.floats(0.2, 3),
    xs=st.lists(st.floats(-10, 10), min_size=2, max_size=5, unique=True),
)
def test_cdf_monotone_and_bounded(mu, b, xs):
    xs = sorted(xs)
    vals = [cdf(Laplace(mu, b), x) for x in xs]
    assert all(0.0 <= v <= 1.0 for v in vals)
    assert all(v2 >= v1 - 1e-10 for v1, v2 in zip(vals, vals[1:]))


@settings(max_examples=30, deadline=None)
@given(mu=st.floats(-3, 3), s=st.floats(0.3, 3), x=st.floats(-5, 5))
def test_cdf_symmetry_normal(mu, s, x):
    d = Normal(mu, s)
    assert cdf(d, mu + x) + cdf(d, mu - x) == pytest.approx(1.0, abs=1e-9)
