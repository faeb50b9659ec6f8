"""Parser for textual distribution specifications.

Accepted forms (case-insensitive, whitespace ignored)::

    normal(mu, sigma)      exponential(rate)     uniform(a, b)
    gamma(k, theta)        laplace(mu, b)        cauchy(x0, gamma)
    mix(w1*spec1 + w2*spec2 + ...)

Mixture components must be single-component specs.
"""

from __future__ import annotations

import re

from .distributions import Cauchy, Distribution, Exponential, Gamma, Laplace, Mixture, Normal, Uniform
from .errors import DistributionSpecError, InvalidInputError

__all__ = ["parse_distribution", "format_distribution"]

_FAMILIES = {
    "normal": (Normal, 2),
    "exponential": (Exponential, 1),
    "uniform": (Uniform, 2),
    "gamma": (Gamma, 2),
    "laplace": (Laplace, 2),
    "cauchy": (Cauchy, 2),
}

_TOKEN = re.compile(r"(?P<num>(?:\d+\.?\d*|\.\d+)(?:e[+-]?\d+)?)|(?P<name>[a-z_]+)|(?P<op>[(),*+-])")


def _tokenize(text: str) -> list[tuple[str, str]]:
    src = "".join(text.split()).lower()
    tokens, pos = [], 0
    while pos < len(src):
        m = _TOKEN.match(src, pos)
        if m is None:
            raise DistributionSpecError(f"unexpected character {src[pos]!r} at offset {pos} in {text!r}")
        kind = m.lastgroup
        tokens.append((kind, m.group(kind)))
        pos = m.end()
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.tokens[self.i] if self.i < len(self.tokens) else (None, None)

    def expect(self, value: str):
        kind, tok = self.peek()
        if tok != value:
            raise DistributionSpecError(f"expected {value!r} but found {tok!r} in {self.text!r}")
        self.i += 1

    def number(self) -> float:
        sign = 1.0
        while self.peek()[1] in ("-", "+"):
            if self.peek()[1] == "-":
                sign = -sign
            self.i += 1
        kind, tok = self.peek()
        if kind != "num":
            raise DistributionSpecError(f"expected a number but found {tok!r} in {self.text!r}")
        self.i += 1
        return sign * float(tok)

    def spec(self, allow_mix: bool = True) -> Distribution:
        kind, name = self.peek()
        if kind != "name":
            raise DistributionSpecError(f"expected a distribution name but found {name!r} in {self.text!r}")
        self.i += 1
        if name == "mix":
            if not allow_mix:
                raise DistributionSpecError("mixtures may not be nested")
            return self.mixture()
        if name not in _FAMILIES:
            raise DistributionSpecError(f"unknown distribution family {name!r}")
        cls, arity = _FAMILIES[name]
        self.expect("(")
        args = [self.number()]
        while self.peek()[1] == ",":
            self.i += 1
            args.append(self.number())
        self.expect(")")
        if len(args) != arity:
            raise DistributionSpecError(f"{name} takes {arity} parameter(s), got {len(args)}")
        try:
            return cls(*args)
        except InvalidInputError as exc:
            raise DistributionSpecError(f"invalid parameters for {name}: {exc}") from exc

    def mixture(self) -> Mixture:
        self.expect("(")
        pairs = []
        while True:
            w = self.number()
            self.expect("*")
            pairs.append((w, self.spec(allow_mix=False)))
            if self.peek()[1] == "+":
                self.i += 1
                continue
            break
        self.expect(")")
        try:
            return Mixture.of(pairs)
        except InvalidInputError as exc:
            raise DistributionSpecError(f"invalid mixture: {exc}") from exc


def parse_distribution(text: str) -> Distribution:
    """Build a :class:`Distribution` from its textual specification."""
    if not isinstance(text, str) or not text.strip():
        raise DistributionSpecError("empty distribution specification")
    p = _Parser(text)
    dist = p.spec()
    if p.i != len(p.tokens):
        raise DistributionSpecError(f"trailing input {p.tokens[p.i][1]!r} in {text!r}")
    return dist


def format_distribution(dist: Distribution) -> str:
    """Inverse of :func:`parse_distribution` (round-trips through ``repr`` floats)."""
    if isinstance(dist, Mixture):
        inner = " + ".join(f"{w!r}*{format_distribution(d)}" for w, d in dist.components())
        return f"mix({inner})"
    params = {
        "normal": ("mu", "sigma"),
        "exponential": ("rate",),
        "uniform": ("a", "b"),
        "gamma": ("k", "theta"),
        "laplace": ("mu", "b"),
        "cauchy": ("x0", "gamma"),
    }[dist.family]
    return f"{dist.family}({', '.join(repr(getattr(dist, p)) for p in params)})"
