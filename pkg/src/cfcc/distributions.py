"""Univariate disturbance distributions described by their characteristic functions.

Every family exposes

* ``cf(s)`` / ``cf_prime(s)`` -- the characteristic function and its derivative,
  vectorized over an array of frequencies.  Complex frequencies are accepted:
  the closed forms are continued analytically off the real axis, which is what
  the contour part of the inversion engine relies on.
* ``cf_terms(s)`` -- a split ``cf(s) = sum_k exp(1j * phase_k * s) * env_k(s)``
  into purely oscillating factors and non-oscillating envelopes.  The inversion
  engine uses the phases to decide in which half plane each tail piece decays.
* ``mean()``, ``variance()``, ``spread`` and ``location`` moments/scales.
* ``draw(rng, n)`` -- i.i.d. sampling from an explicit generator.

The module level functions :func:`cf_batch`, :func:`cf_prime_batch`,
:func:`mean` and :func:`sample` are the validated public entry points.
"""

from __future__ import annotations

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import ClassVar, Sequence

import numpy as np

from .errors import InvalidInputError, NonDifferentiableCFError, UndefinedMeanError

__all__ = [
    "Distribution",
    "Normal",
    "Exponential",
    "Uniform",
    "Gamma",
    "Laplace",
    "Cauchy",
    "Mixture",
    "cf_batch",
    "cf_prime_batch",
    "mean",
    "sample",
]

# below this |t| the uniform CF is evaluated from its moment series
_UNIFORM_TAYLOR_CF = 1e-8
_UNIFORM_TAYLOR_PRIME = 1e-5


def _positive(name: str, value: float) -> float:
    value = float(value)
    if not math.isfinite(value) or value <= 0.0:
        raise InvalidInputError(f"{name} must be finite and > 0, got {value!r}")
    return value


def _finite(name: str, value: float) -> float:
    value = float(value)
    if not math.isfinite(value):
        raise InvalidInputError(f"{name} must be finite, got {value!r}")
    return value


def _open_uniform(rng: np.random.Generator, n: int) -> np.ndarray:
    """Uniform draws on the open interval (0, 1)."""
    k = rng.integers(0, 2**53, size=n, dtype=np.int64)
    return (k.astype(float) + 0.5) / 2.0**53


class Distribution(ABC):
    """Abstract univariate distribution known through its characteristic function."""

    family: ClassVar[str] = ""

    @abstractmethod
    def cf(self, s: np.ndarray) -> np.ndarray:
        """Characteristic function at (possibly complex) frequencies ``s``."""

    @abstractmethod
    def cf_prime(self, s: np.ndarray) -> np.ndarray:
        """Derivative of the characteristic function with respect to ``s``."""

    @abstractmethod
    def cf_terms(self, s: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Phase split of the CF.

        Returns ``(phases, env, denv)`` with shapes ``(K,)``, ``(K, len(s))`` and
        ``(K, len(s))`` such that ``cf(s) == sum_k exp(1j*phases[k]*s) * env[k]``
        and ``denv`` is the derivative of ``env`` with respect to ``s``.
        The envelopes may be singular at ``s = 0``; only evaluate them on
        frequencies bounded away from the imaginary axis.
        """

    @abstractmethod
    def mean(self) -> float: ...

    @abstractmethod
    def variance(self) -> float: ...

    @property
    @abstractmethod
    def spread(self) -> float:
        """Positive scale of the law (standard deviation when it exists)."""

    @property
    @abstractmethod
    def location(self) -> float:
        """Central location (mean, or median for Cauchy)."""

    @abstractmethod
    def draw(self, rng: np.random.Generator, n: int) -> np.ndarray: ...

    def components(self) -> list[tuple[float, "Distribution"]]:
        """Weighted components; a single-component law is its own only component."""
        return [(1.0, self)]

    @property
    def n_components(self) -> int:
        return 1

    def __call__(self, s):
        return self.cf(np.asarray(s))


@dataclass(frozen=True)
class Normal(Distribution):
    mu: float = 0.0
    sigma: float = 1.0
    family: ClassVar[str] = "normal"

    def __post_init__(self):
        object.__setattr__(self, "mu", _finite("mu", self.mu))
        object.__setattr__(self, "sigma", _positive("sigma", self.sigma))

    def cf(self, s):
        s = np.asarray(s)
        return np.exp(1j * self.mu * s - 0.5 * self.sigma**2 * s * s)

    def cf_prime(self, s):
        s = np.asarray(s)
        return (1j * self.mu - self.sigma**2 * s) * self.cf(s)

    def cf_terms(self, s):
        s = np.asarray(s)
        env = np.exp(-0.5 * self.sigma**2 * s * s).astype(complex)
        return np.array([self.mu]), env[None, :], (-self.sigma**2 * s * env)[None, :]

    def mean(self):
        return self.mu

    def variance(self):
        return self.sigma**2

    @property
    def spread(self):
        return self.sigma

    @property
    def location(self):
        return self.mu

    def draw(self, rng, n):
        # Box-Muller, both halves of each pair are used
        m = (n + 1) // 2
        u1 = _open_uniform(rng, m)
        u2 = _open_uniform(rng, m)
        r = np.sqrt(-2.0 * np.log(u1))
        z = np.concatenate([r * np.cos(2 * np.pi * u2), r * np.sin(2 * np.pi * u2)])
        return self.mu + self.sigma * z[:n]


@dataclass(frozen=True)
class Exponential(Distribution):
    rate: float = 1.0
    family: ClassVar[str] = "exponential"

    def __post_init__(self):
        object.__setattr__(self, "rate", _positive("rate", self.rate))

    def cf(self, s):
        s = np.asarray(s)
        return self.rate / (self.rate - 1j * s)

    def cf_prime(self, s):
        s = np.asarray(s)
        return 1j * self.rate / (self.rate - 1j * s) ** 2

    def cf_terms(self, s):
        s = np.asarray(s)
        return np.array([0.0]), self.cf(s)[None, :], self.cf_prime(s)[None, :]

    def mean(self):
        return 1.0 / self.rate

    def variance(self):
        return 1.0 / self.rate**2

    @property
    def spread(self):
        return 1.0 / self.rate

    @property
    def location(self):
        return 1.0 / self.rate

    def draw(self, rng, n):
        return -np.log(_open_uniform(rng, n)) / self.rate


@dataclass(frozen=True)
class Uniform(Distribution):
    a: float = 0.0
    b: float = 1.0
    family: ClassVar[str] = "uniform"

    def __post_init__(self):
        a = _finite("a", self.a)
        b = _finite("b", self.b)
        if not a < b:
            raise InvalidInputError(f"uniform requires a < b, got a={a}, b={b}")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    def _moment(self, k: int) -> float:
        a, b = self.a, self.b
        return (b ** (k + 1) - a ** (k + 1)) / ((k + 1) * (b - a))

    def cf(self, s):
        s = np.asarray(s)
        a, b = self.a, self.b
        out = np.empty(s.shape, dtype=complex)
        small = np.abs(s) < _UNIFORM_TAYLOR_CF
        big = ~small
        sb = s[big]
        out[big] = (np.exp(1j * b * sb) - np.exp(1j * a * sb)) / (1j * sb * (b - a))
        ss = s[small]
        out[small] = 1.0 + 1j * ss * self._moment(1) - 0.5 * ss * ss * self._moment(2)
        return out

    def cf_prime(self, s):
        s = np.asarray(s)
        a, b = self.a, self.b
        out = np.empty(s.shape, dtype=complex)
        small = np.abs(s) < _UNIFORM_TAYLOR_PRIME
        big = ~small
        sb = s[big]
        phi = (np.exp(1j * b * sb) - np.exp(1j * a * sb)) / (1j * sb * (b - a))
        out[big] = (b * np.exp(1j * b * sb) - a * np.exp(1j * a * sb)) / ((b - a) * sb) - phi / sb
        ss = s[small]
        m1, m2, m3, m4 = (self._moment(k) for k in (1, 2, 3, 4))
        out[small] = 1j * m1 - ss * m2 - 0.5j * ss**2 * m3 + ss**3 * m4 / 6.0
        return out

    def cf_terms(self, s):
        s = np.asarray(s)
        env = 1.0 / (1j * s * (self.b - self.a))
        env = np.stack([env, -env])
        return np.array([self.b, self.a]), env, -env / s

    def mean(self):
        return 0.5 * (self.a + self.b)

    def variance(self):
        return (self.b - self.a) ** 2 / 12.0

    @property
    def spread(self):
        return (self.b - self.a) / math.sqrt(12.0)

    @property
    def location(self):
        return 0.5 * (self.a + self.b)

    def draw(self, rng, n):
        return self.a + (self.b - self.a) * rng.random(n)


@dataclass(frozen=True)
class Gamma(Distribution):
    k: float = 1.0
    theta: float = 1.0
    family: ClassVar[str] = "gamma"

    def __post_init__(self):
        object.__setattr__(self, "k", _positive("k", self.k))
        object.__setattr__(self, "theta", _positive("theta", self.theta))

    def cf(self, s):
        s = np.asarray(s)
        # principal branch of log keeps this continuous for non-integer k
        return np.exp(-self.k * np.log(1.0 - 1j * self.theta * s))

    def cf_prime(self, s):
        s = np.asarray(s)
        return 1j * self.k * self.theta * np.exp(-(self.k + 1.0) * np.log(1.0 - 1j * self.theta * s))

    def cf_terms(self, s):
        s = np.asarray(s)
        return np.array([0.0]), self.cf(s)[None, :], self.cf_prime(s)[None, :]

    def mean(self):
        return self.k * self.theta

    def variance(self):
        return self.k * self.theta**2

    @property
    def spread(self):
        return math.sqrt(self.k) * self.theta

    @property
    def location(self):
        return self.k * self.theta

    def draw(self, rng, n):
        return self.theta * rng.standard_gamma(self.k, size=n)


@dataclass(frozen=True)
class Laplace(Distribution):
    mu: float = 0.0
    b: float = 1.0
    family: ClassVar[str] = "laplace"

    def __post_init__(self):
        object.__setattr__(self, "mu", _finite("mu", self.mu))
        object.__setattr__(self, "b", _positive("b", self.b))

    def cf(self, s):
        s = np.asarray(s)
        return np.exp(1j * self.mu * s) / (1.0 + self.b**2 * s * s)

    def cf_prime(self, s):
        s = np.asarray(s)
        d = 1.0 + self.b**2 * s * s
        return self.cf(s) * (1j * self.mu - 2.0 * self.b**2 * s / d)

    def cf_terms(self, s):
        s = np.asarray(s)
        d = 1.0 + self.b**2 * s * s
        env = (1.0 / d).astype(complex)
        return np.array([self.mu]), env[None, :], (-2.0 * self.b**2 * s / d**2)[None, :]

    def mean(self):
        return self.mu

    def variance(self):
        return 2.0 * self.b**2

    @property
    def spread(self):
        return math.sqrt(2.0) * self.b

    @property
    def location(self):
        return self.mu

    def draw(self, rng, n):
        v = _open_uniform(rng, n) - 0.5
        return self.mu - self.b * np.sign(v) * np.log1p(-2.0 * np.abs(v))


def _csign(s: np.ndarray) -> np.ndarray:
    """sign(Re s): continues |s| = s*sign(s) analytically into each half plane."""
    return np.sign(np.real(s))


@dataclass(frozen=True)
class Cauchy(Distribution):
    x0: float = 0.0
    gamma: float = 1.0
    family: ClassVar[str] = "cauchy"

    def __post_init__(self):
        object.__setattr__(self, "x0", _finite("x0", self.x0))
        object.__setattr__(self, "gamma", _positive("gamma", self.gamma))

    def cf(self, s):
        s = np.asarray(s)
        return np.exp(1j * self.x0 * s - self.gamma * s * _csign(s))

    def cf_prime(self, s):
        s = np.asarray(s)
        if np.any(s == 0):
            raise NonDifferentiableCFError("Cauchy CF exp(-gamma|t|) is not differentiable at t=0")
        return (1j * self.x0 - self.gamma * _csign(s)) * self.cf(s)

    def cf_terms(self, s):
        s = np.asarray(s)
        sg = _csign(s)
        env = np.exp(-self.gamma * s * sg).astype(complex)
        return np.array([self.x0]), env[None, :], (-self.gamma * sg * env)[None, :]

    def mean(self):
        raise UndefinedMeanError("the Cauchy distribution has no mean")

    def variance(self):
        return math.inf

    @property
    def spread(self):
        return self.gamma

    @property
    def location(self):
        return self.x0

    def draw(self, rng, n):
        return self.x0 + self.gamma * np.tan(np.pi * (_open_uniform(rng, n) - 0.5))


@dataclass(frozen=True)
class Mixture(Distribution):
    """Finite mixture ``sum_r weights[r] * components[r]`` (one level deep)."""

    weights: tuple[float, ...]
    members: tuple[Distribution, ...] = field(default=())
    family: ClassVar[str] = "mixture"

    def __post_init__(self):
        w = tuple(float(x) for x in self.weights)
        members = tuple(self.members)
        if not members or len(w) != len(members):
            raise InvalidInputError("mixture needs one weight per component and at least one component")
        if any((not math.isfinite(x)) or x < 0 for x in w):
            raise InvalidInputError(f"mixture weights must be finite and nonnegative, got {w}")
        if abs(math.fsum(w) - 1.0) > 1e-12:
            raise InvalidInputError(f"mixture weights must sum to 1, got {math.fsum(w)!r}")
        for m in members:
            if not isinstance(m, Distribution):
                raise InvalidInputError(f"mixture component {m!r} is not a Distribution")
            if isinstance(m, Mixture):
                raise InvalidInputError("mixtures may not be nested")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "members", members)

    @classmethod
    def of(cls, pairs: Sequence[tuple[float, Distribution]]) -> "Mixture":
        return cls(tuple(w for w, _ in pairs), tuple(d for _, d in pairs))

    def components(self):
        return list(zip(self.weights, self.members))

    @property
    def n_components(self):
        return len(self.members)

    def cf(self, s):
        s = np.asarray(s)
        out = np.zeros(s.shape, dtype=complex)
        for w, d in zip(self.weights, self.members):
            out += w * d.cf(s)
        return out

    def cf_prime(self, s):
        s = np.asarray(s)
        out = np.zeros(s.shape, dtype=complex)
        for w, d in zip(self.weights, self.members):
            out += w * d.cf_prime(s)
        return out

    def cf_terms(self, s):
        s = np.asarray(s)
        phases, env, denv = [], [], []
        for w, d in zip(self.weights, self.members):
            p, e, de = d.cf_terms(s)
            phases.append(p)
            env.append(w * e)
            denv.append(w * de)
        phases = np.concatenate(phases)
        env = np.concatenate(env)
        denv = np.concatenate(denv)
        # components sharing a phase collapse into one term
        uniq, inv = np.unique(phases, return_inverse=True)
        if len(uniq) == len(phases):
            return phases, env, denv
        e = np.zeros((len(uniq), s.size), dtype=complex)
        de = np.zeros_like(e)
        np.add.at(e, inv, env)
        np.add.at(de, inv, denv)
        return uniq, e, de

    def mean(self):
        return math.fsum(w * d.mean() for w, d in zip(self.weights, self.members))

    def variance(self):
        if any(math.isinf(d.variance()) for d in self.members):
            return math.inf
        m = self.mean()
        return math.fsum(w * (d.variance() + (d.mean() - m) ** 2) for w, d in zip(self.weights, self.members))

    @property
    def location(self):
        return math.fsum(w * d.location for w, d in zip(self.weights, self.members))

    @property
    def spread(self):
        loc = self.location
        return math.sqrt(
            math.fsum(w * (d.spread**2 + (d.location - loc) ** 2) for w, d in zip(self.weights, self.members))
        )

    def draw(self, rng, n):
        cum = np.cumsum(self.weights)
        cum[-1] = 1.0
        idx = np.searchsorted(cum, rng.random(n), side="right")
        out = np.empty(n)
        for r, d in enumerate(self.members):
            mask = idx == r
            cnt = int(mask.sum())
            if cnt:
                out[mask] = d.draw(rng, cnt)
        return out


def _check_nodes(ts) -> np.ndarray:
    ts = np.atleast_1d(np.asarray(ts, dtype=float))
    if ts.size == 0:
        raise InvalidInputError("frequency batch must contain at least one node")
    if not np.all(np.isfinite(ts)):
        bad = ts[~np.isfinite(ts)][0]
        raise InvalidInputError(f"non-finite frequency node {bad!r}")
    return ts


def cf_batch(dist: Distribution, ts) -> np.ndarray:
    """Characteristic function of ``dist`` at every real node of ``ts`` in one call.

    Parameters
    ----------
    dist : Distribution
        Disturbance law.
    ts : array_like
        Finite real frequencies, any sign.

    Returns
    -------
    numpy.ndarray
        Complex array of ``phi(ts[i])``, same length as ``ts``.
    """
    return np.asarray(dist.cf(_check_nodes(ts)), dtype=complex)


def cf_prime_batch(dist: Distribution, ts) -> np.ndarray:
    """Derivative ``d phi / dt`` at every real node of ``ts``."""
    return np.asarray(dist.cf_prime(_check_nodes(ts)), dtype=complex)


def mean(dist: Distribution) -> float:
    """Exact mean; raises :class:`UndefinedMeanError` for Cauchy components."""
    return float(dist.mean())


def sample(dist: Distribution, seed: int, n: int) -> np.ndarray:
    """``n`` i.i.d. draws, reproducible for a fixed integer ``seed``."""
    if int(n) < 1:
        raise InvalidInputError(f"sample size must be >= 1, got {n}")
    rng = np.random.default_rng(int(seed))
    return dist.draw(rng, int(n))
