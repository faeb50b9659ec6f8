import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cfcc.distributions import Cauchy, Exponential, Gamma, Laplace, Mixture, Normal, Uniform
from cfcc.errors import DistributionSpecError
from cfcc.grammar import format_distribution, parse_distribution


@pytest.mark.parametrize(
    "text,expected",
    [
        ("normal(0,1)", Normal(0.0, 1.0)),
        ("  Exponential( 2.5 ) ", Exponential(2.5)),
        ("uniform(-1, 2e-1)", Uniform(-1.0, 0.2)),
        ("gamma(2, .5)", Gamma(2.0, 0.5)),
        ("LAPLACE(-0.5, 1)", Laplace(-0.5, 1.0)),
        ("cauchy(+1, 3)", Cauchy(1.0, 3.0)),
        ("mix(0.5*normal(-2,1)+0.5*normal(2,1))", Mixture((0.5, 0.5), (Normal(-2.0, 1.0), Normal(2.0, 1.0)))),
    ],
)
def test_parse_examples(text, expected):
    assert parse_distribution(text) == expected


@pytest.mark.parametrize(
    "text",
    [
        "",
        "normal(0)",
        "normal(0,1,2)",
        "weibull(1,2)",
        "normal(0,1) extra",
        "normal(0,-1)",
        "mix(0.5*normal(0,1)+0.4*normal(1,1))",
        "mix(1*mix(1*normal(0,1)))",
        "normal(0;1)",
        "mix(0.5 normal(0,1))",
    ],
)
def test_rejects_bad_specs(text):
    with pytest.raises(DistributionSpecError):
        parse_distribution(text)


_finite = st.floats(-1e3, 1e3, allow_nan=False)
_pos = st.floats(1e-3, 1e3)
_single = st.one_of(
    st.builds(Normal, _finite, _pos),
    st.builds(Exponential, _pos),
    st.builds(lambda a, w: Uniform(a, a + w), _finite, st.floats(1e-2, 1e2)),
    st.builds(Gamma, _pos, _pos),
    st.builds(Laplace, _finite, _pos),
    st.builds(Cauchy, _finite, _pos),
)


@st.composite
def _mixtures(draw):
    k = draw(st.integers(2, 4))
    members = [draw(_single) for _ in range(k)]
    w = [1.0 / k] * (k - 1)
    w.append(1.0 - sum(w))
    return Mixture(tuple(w), tuple(members))


@settings(max_examples=150, deadline=None)
@given(st.one_of(_single, _mixtures()))
def test_format_parse_round_trip(dist):
    assert parse_distribution(format_distribution(dist)) == dist
