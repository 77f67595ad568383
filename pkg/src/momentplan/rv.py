"""Univariate distributions and their polynomial / trigonometric moments.

Trigonometric and mixed moments are assembled from the characteristic
function ``phi(t) = E[exp(i t X)]`` and its derivatives by expanding
``cos`` and ``sin`` into complex exponentials.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import NamedTuple

import numpy as np
from scipy import special

RESIDUE_TOL = 1e-9


class ResidueError(ArithmeticError):
    """A moment assembled from the characteristic function is not real."""


class TrigMomentKey(NamedTuple):
    poly_pow: int = 0
    cos_pow: int = 0
    sin_pow: int = 0

    @property
    def order(self) -> int:
        return self.poly_pow + self.cos_pow + self.sin_pow


class ScalarDistribution:
    """Base class; concrete kinds are frozen dataclasses (hashable, cacheable)."""

    def raw_moment(self, order: int) -> float:
        raise NotImplementedError

    def phi_derivative(self, k: int, t: float) -> complex:
        """k-th derivative of the characteristic function at ``t``."""
        raise NotImplementedError

    def affine(self, scale: float, shift: float = 0.0) -> "ScalarDistribution":
        """Distribution of ``scale * X + shift``."""
        raise NotImplementedError

    def ppf(self, q):
        """Inverse CDF, vectorized over ``q``."""
        raise NotImplementedError

    @property
    def support(self) -> tuple[float, float]:
        raise NotImplementedError

    @property
    def mean(self) -> float:
        return self.raw_moment(1)

    @property
    def variance(self) -> float:
        return self.raw_moment(2) - self.raw_moment(1) ** 2


def _unit_uniform_exp_moment(j: int, s: float) -> complex:
    """E[Y^j exp(i s Y)] for Y ~ Uniform[-1, 1]."""
    if abs(s) < j + 2:
        # power series; the recursion below is unstable for small |s|
        total = 0j
        term = 1.0 + 0j
        n = 0
        while True:
            m = j + n
            if m % 2 == 0:
                total += term / (m + 1)
            n += 1
            term *= 1j * s / n
            if n > 8 and abs(term) < 1e-18 * max(abs(total), 1e-300) or n > 400:
                break
        return total
    e_pos = complex(math.cos(s), math.sin(s))
    e_neg = e_pos.conjugate()
    val = complex(math.sin(s) / s, 0.0)
    for k in range(1, j + 1):
        val = (e_pos - (-1) ** k * e_neg) / (2j * s) - (k / (1j * s)) * val
    return val


@dataclass(frozen=True)
class Uniform(ScalarDistribution):
    low: float
    high: float

    def __post_init__(self):
        if not self.low < self.high:
            raise ValueError(f"Uniform requires low < high, got [{self.low}, {self.high}]")

    @property
    def support(self):
        return (self.low, self.high)

    def raw_moment(self, order):
        # (u^{k+1} - l^{k+1}) / ((u - l)(k + 1)), summed without the subtraction
        l, u = self.low, self.high
        return math.fsum(u ** i * l ** (order - i) for i in range(order + 1)) / (order + 1)

    def phi_derivative(self, k, t):
        c = 0.5 * (self.low + self.high)
        h = 0.5 * (self.high - self.low)
        acc = 0j
        for j in range(k + 1):
            acc += math.comb(k, j) * c ** (k - j) * h ** j * _unit_uniform_exp_moment(j, t * h)
        return (1j ** k) * complex(math.cos(t * c), math.sin(t * c)) * acc

    def affine(self, scale, shift=0.0):
        if scale == 0:
            return PointMass(shift)
        a, b = sorted((scale * self.low + shift, scale * self.high + shift))
        return Uniform(a, b)

    def ppf(self, q):
        return self.low + (self.high - self.low) * np.asarray(q)


def _gaussian_moment(mean, var: float, order: int):
    """E[(mean + sigma Z)^order]; ``mean`` may be complex."""
    acc = 0
    for j in range(0, order + 1, 2):
        acc += math.comb(order, j) * mean ** (order - j) * var ** (j // 2) * _double_factorial(j - 1)
    return acc


def _double_factorial(n: int) -> int:
    return math.prod(range(n, 0, -2)) if n > 0 else 1


@dataclass(frozen=True)
class Gaussian(ScalarDistribution):
    mu: float
    var: float

    def __post_init__(self):
        if self.var < 0:
            raise ValueError("Gaussian variance must be nonnegative")

    @property
    def support(self):
        return (-math.inf, math.inf)

    def raw_moment(self, order):
        return float(_gaussian_moment(self.mu, self.var, order))

    def phi_derivative(self, k, t):
        # E[X^k e^{itX}] = phi(t) * E[(mu + i var t + sigma Z)^k]
        phi = complex(math.cos(self.mu * t), math.sin(self.mu * t)) * math.exp(-0.5 * self.var * t * t)
        return (1j ** k) * phi * _gaussian_moment(complex(self.mu, self.var * t), self.var, k)

    def affine(self, scale, shift=0.0):
        if scale == 0:
            return PointMass(shift)
        return Gaussian(scale * self.mu + shift, scale * scale * self.var)

    def ppf(self, q):
        return self.mu + math.sqrt(self.var) * special.ndtri(np.asarray(q))


@lru_cache(maxsize=64)
def _jacobi_rule(a: float, b: float, n: int):
    # weight (1-x)^(b-1) (1+x)^(a-1) on [-1, 1] matches Beta(a, b) after y = (1+x)/2
    x, w = special.roots_jacobi(n, b - 1.0, a - 1.0)
    return 0.5 * (1.0 + x), w / w.sum()


@dataclass(frozen=True)
class Beta(ScalarDistribution):
    a: float
    b: float
    lo: float = 0.0
    hi: float = 1.0
    nodes: int = 128

    def __post_init__(self):
        if self.a <= 0 or self.b <= 0:
            raise ValueError("Beta shape parameters must be positive")
        if not self.lo < self.hi:
            raise ValueError("Beta support requires lo < hi")

    @property
    def support(self):
        return (self.lo, self.hi)

    def _unit_moment(self, j):
        # rising-factorial ratio (a)_j / (a+b)_j
        return math.prod((self.a + r) / (self.a + self.b + r) for r in range(j))

    def raw_moment(self, order):
        w = self.hi - self.lo
        return math.fsum(
            math.comb(order, j) * self.lo ** (order - j) * w ** j * self._unit_moment(j) for j in range(order + 1)
        )

    def phi_derivative(self, k, t):
        y, w = _jacobi_rule(self.a, self.b, self.nodes)
        x = self.lo + (self.hi - self.lo) * y
        return (1j ** k) * complex(np.sum(w * x ** k * np.exp(1j * t * x)))

    def affine(self, scale, shift=0.0):
        if scale == 0:
            return PointMass(shift)
        if scale > 0:
            return Beta(self.a, self.b, scale * self.lo + shift, scale * self.hi + shift, self.nodes)
        return Beta(self.b, self.a, scale * self.hi + shift, scale * self.lo + shift, self.nodes)

    def ppf(self, q):
        return self.lo + (self.hi - self.lo) * special.betaincinv(self.a, self.b, np.asarray(q))


@dataclass(frozen=True)
class PointMass(ScalarDistribution):
    value: float

    @property
    def support(self):
        return (self.value, self.value)

    def raw_moment(self, order):
        return self.value ** order

    def phi_derivative(self, k, t):
        v = self.value
        return (1j * v) ** k * complex(math.cos(t * v), math.sin(t * v))

    def affine(self, scale, shift=0.0):
        return PointMass(scale * self.value + shift)

    def ppf(self, q):
        return np.full(np.shape(q), float(self.value))


# ---------------------------------------------------------------------------
# cached moment queries

@lru_cache(maxsize=None)
def raw_moment(dist: ScalarDistribution, order: int) -> float:
    if order < 0:
        raise ValueError("moment order must be nonnegative")
    if order == 0:
        return 1.0
    return float(dist.raw_moment(order))


def char_fn(dist: ScalarDistribution, t: float) -> complex:
    return char_fn_derivative(dist, 0, t)


@lru_cache(maxsize=None)
def char_fn_derivative(dist: ScalarDistribution, deriv_order: int, t: float) -> complex:
    if deriv_order < 0:
        raise ValueError("derivative order must be nonnegative")
    if t == 0 and deriv_order == 0:
        return 1 + 0j
    return complex(dist.phi_derivative(deriv_order, t))


def _real(z: complex) -> float:
    if abs(z.imag) > RESIDUE_TOL:
        raise ResidueError(f"imaginary residue {z.imag:.3e} exceeds {RESIDUE_TOL:g}")
    return z.real


def trig_moment(dist: ScalarDistribution, cos_pow: int, sin_pow: int) -> float:
    """E[cos^c(X) sin^s(X)] from the characteristic function."""
    if cos_pow < 0 or sin_pow < 0 or cos_pow + sin_pow < 1:
        raise ValueError("trig_moment needs nonnegative powers with cos_pow + sin_pow >= 1")
    return _trig_moment(dist, cos_pow, sin_pow)


@lru_cache(maxsize=None)
def _trig_moment(dist, a1, a2):
    acc = 0j
    for k1 in range(a1 + 1):
        for k2 in range(a2 + 1):
            acc += (
                math.comb(a1, k1) * math.comb(a2, k2) * (-1) ** (a2 - k2)
                * char_fn(dist, 2 * (k1 + k2) - a1 - a2)
            )
    return _real(acc * (-1j) ** a2 / 2 ** (a1 + a2))


def mixed_trig_moment(dist: ScalarDistribution, key) -> float:
    """E[X^p cos^c(X) sin^s(X)] for ``key = (p, c, s)``."""
    key = TrigMomentKey(*key)
    if min(key) < 0:
        raise ValueError("moment exponents must be nonnegative")
    return _mixed_trig_moment(dist, key)


@lru_cache(maxsize=None)
def _mixed_trig_moment(dist, key):
    a1, a2, a3 = key
    if a1 + a2 + a3 == 0:
        return 1.0
    acc = 0j
    for k1 in range(a2 + 1):
        for k2 in range(a3 + 1):
            acc += (
                math.comb(a2, k1) * math.comb(a3, k2) * (-1) ** (a3 - k2)
                * char_fn_derivative(dist, a1, 2 * (k1 + k2) - a2 - a3)
            )
    return _real(acc / (1j ** (a1 + a3) * 2 ** (a2 + a3)))


def sample(dist: ScalarDistribution, rng: np.random.Generator, size) -> np.ndarray:
    """Inverse-CDF draws from ``dist`` using uniforms from ``rng``."""
    if isinstance(dist, PointMass):
        return np.full(size, float(dist.value))
    return np.asarray(dist.ppf(rng.random(size)), dtype=float)
