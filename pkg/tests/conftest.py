import math

import numpy as np
import pytest
from scipy import integrate, special

from momentplan import rv


def quad_moment(dist, p=0, c=0, s=0):
    """E[X^p cos^c X sin^s X] by adaptive quadrature, independent of the char-fn path."""
    def f(x):
        return x ** p * math.cos(x) ** c * math.sin(x) ** s

    opts = dict(epsabs=1e-14, epsrel=1e-13, limit=400)
    if isinstance(dist, rv.Uniform):
        val, _ = integrate.quad(f, dist.low, dist.high, **opts)
        return val / (dist.high - dist.low)
    if isinstance(dist, rv.Gaussian):
        sd = math.sqrt(dist.var)
        g = lambda x: f(x) * math.exp(-0.5 * ((x - dist.mu) / sd) ** 2) / (sd * math.sqrt(2 * math.pi))
        lo, hi = dist.mu - 12 * sd, dist.mu + 12 * sd
        val, _ = integrate.quad(g, lo, hi, points=[dist.mu], **opts)
        return val
    if isinstance(dist, rv.Beta):
        w = dist.hi - dist.lo
        # weight (y)^(a-1) (1-y)^(b-1) handled exactly by QUADPACK's algebraic rule
        g = lambda y: f(dist.lo + w * y)
        val, _ = integrate.quad(g, 0.0, 1.0, weight="alg", wvar=(dist.a - 1, dist.b - 1), **opts)
        return val / special.beta(dist.a, dist.b)
    if isinstance(dist, rv.PointMass):
        return f(dist.value)
    raise TypeError(dist)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


@pytest.fixture
def report():
    """Record one summary line per acceptance criterion."""
    def add(number, ok, detail):
        ACCEPTANCE_LINES.append(f"criterion {number}: {'PASS' if ok else 'FAIL'} - {detail}")
    return add


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
