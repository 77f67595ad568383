import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from momentplan import rv

from conftest import quad_moment

DISTS = [
    rv.Uniform(-0.5, 1.2),
    rv.Uniform(0.1, 0.3),
    rv.Gaussian(0.3, 0.4),
    rv.Gaussian(-1.0, 0.01),
    rv.Beta(9.0, 0.5),
    rv.Beta(2.0, 3.0, -1.0, 2.0),
]
KEYS = [(p, c, s) for p in range(9) for c in range(9) for s in range(9) if 0 < p + c + s <= 8]


@pytest.mark.parametrize("dist", DISTS, ids=str)
def test_mixed_moments_match_quadrature(dist):
    tol = 1e-6 if isinstance(dist, rv.Beta) else 1e-8
    worst = max(abs(rv.mixed_trig_moment(dist, k) - quad_moment(dist, *k)) for k in KEYS)
    assert worst <= tol


def test_uniform_closed_forms():
    d = rv.Uniform(0.0, 1.0)
    assert rv.raw_moment(d, 3) == pytest.approx(0.25, abs=1e-15)
    assert rv.trig_moment(d, 1, 0) == pytest.approx(math.sin(1.0), abs=1e-14)
    assert rv.trig_moment(d, 0, 1) == pytest.approx(1 - math.cos(1.0), abs=1e-14)


def test_gaussian_char_fn():
    d = rv.Gaussian(0.5, 2.0)
    t = 0.7
    assert rv.char_fn(d, t) == pytest.approx(np.exp(1j * 0.5 * t - t * t), abs=1e-14)
    assert rv.raw_moment(d, 4) == pytest.approx(0.5 ** 4 + 6 * 0.25 * 2 + 3 * 4, abs=1e-12)


def test_small_width_uniform_is_stable():
    # the closed-form difference quotient cancels badly here; the series path must not
    d = rv.Uniform(1.0, 1.0 + 1e-7)
    assert rv.mixed_trig_moment(d, (3, 2, 1)) == pytest.approx(math.cos(1.0) ** 2 * math.sin(1.0), rel=1e-6)


def test_point_mass():
    d = rv.PointMass(0.4)
    assert rv.mixed_trig_moment(d, (2, 1, 1)) == pytest.approx(0.16 * math.cos(0.4) * math.sin(0.4), abs=1e-15)


def test_affine_distribution():
    d = rv.Beta(2.0, 5.0)
    e = d.affine(-0.5, 3.0)
    assert e.mean == pytest.approx(3.0 - 0.5 * d.mean, abs=1e-14)
    assert e.variance == pytest.approx(0.25 * d.variance, abs=1e-14)


@pytest.mark.parametrize("bad", [lambda: rv.Uniform(1, 1), lambda: rv.Gaussian(0, -1), lambda: rv.Beta(0, 1)])
def test_invalid_parameters(bad):
    with pytest.raises(ValueError):
        bad()


def test_negative_exponent_rejected():
    with pytest.raises(ValueError):
        rv.mixed_trig_moment(rv.Gaussian(0, 1), (-1, 0, 0))


@pytest.mark.parametrize("dist", DISTS[:5], ids=str)
def test_sampler_matches_moments(dist):
    x = rv.sample(dist, np.random.default_rng(7), 200000)
    assert x.shape == (200000,)
    se = math.sqrt(dist.variance / x.size)
    assert abs(x.mean() - dist.mean) < 5 * se
    lo, hi = dist.support
    assert x.min() >= lo and x.max() <= hi


@settings(max_examples=60, deadline=None)
@given(lo=st.floats(-3, 3), w=st.floats(0.01, 4), c=st.integers(0, 4), s=st.integers(0, 4))
def test_pythagorean_identity_uniform(lo, w, c, s):
    d = rv.Uniform(lo, lo + w)
    # E[cos^c sin^s (cos^2 + sin^2)] = E[cos^c sin^s]
    lhs = rv.mixed_trig_moment(d, (0, c + 2, s)) + rv.mixed_trig_moment(d, (0, c, s + 2))
    rhs = 1.0 if c + s == 0 else rv.mixed_trig_moment(d, (0, c, s))
    assert lhs == pytest.approx(rhs, abs=1e-9)


@settings(max_examples=60, deadline=None)
@given(mu=st.floats(-2, 2), var=st.floats(0.0, 3.0), p=st.integers(0, 3), c=st.integers(0, 3), s=st.integers(0, 3))
def test_trig_moments_bounded(mu, var, p, c, s):
    d = rv.Gaussian(mu, var)
    if p + c + s == 0:
        return
    v = rv.mixed_trig_moment(d, (0, c, s)) if c + s else 1.0
    assert abs(v) <= 1 + 1e-12
