import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from momentplan import rv
from momentplan.expr import (
    MtpExpression, NonMtpError, ParseError, UnknownSymbol, angle_sum_expand, control, expect_noise,
    grevlex_monomials, monomial_layout, noise, parse, parse_number, state,
)

x, y, th = state("x"), state("y"), state("th")
u, w = control("u"), noise("w")
TABLE = [x, y, th, u, w]


def test_parse_and_evaluate():
    e = parse("2*x^2 - 3*x*y + cos(th)*u - 1.5", TABLE)
    env = {"x": 0.3, "y": -1.2, "th": 0.7, "u": 2.0}
    assert e.evaluate(env) == pytest.approx(2 * 0.09 + 3 * 0.36 + math.cos(0.7) * 2 - 1.5, abs=1e-14)


def test_parse_errors_have_positions():
    with pytest.raises(UnknownSymbol):
        parse("x + q", TABLE)
    with pytest.raises(ParseError) as exc:
        parse("x + * y", TABLE)
    assert exc.value.position is not None


def test_nonlinear_trig_argument_rejected():
    with pytest.raises(NonMtpError):
        parse("cos(x^2)", TABLE)
    with pytest.raises(NonMtpError):
        parse("cos(2*th)", TABLE)


def test_angle_sum_expansion():
    e = angle_sum_expand("sin", parse("th + u + w", TABLE))
    env = {"th": 0.4, "u": -1.1, "w": 0.25}
    assert e.evaluate(env) == pytest.approx(math.sin(0.4 - 1.1 + 0.25), abs=1e-14)
    # each factor is cos/sin of a single symbol
    for _, factors in e.terms:
        assert all(p == 0 for _, p, _, _ in factors)


def test_scaled_noise_inside_trig():
    e = parse("cos(0.1*w)", TABLE)
    d = rv.Uniform(-1.0, 1.0)
    got = expect_noise(e, {w: d}).constant_value()
    assert got == pytest.approx(math.sin(0.1) / 0.1, abs=1e-14)


def test_expect_noise_independent_factors():
    v = noise("v")
    e = parse("x*w^2*cos(v) + w", TABLE + [v])
    out = expect_noise(e, {"w": rv.Gaussian(1.0, 0.5), "v": rv.Gaussian(0.0, 2.0)})
    assert out == MtpExpression.symbol(x) * (1.5 * math.exp(-1.0)) + 1.0


def test_grevlex_layout():
    assert grevlex_monomials(2, 3) == [(3, 0), (2, 1), (1, 2), (0, 3)]
    assert grevlex_monomials(3, 2) == [(2, 0, 0), (1, 1, 0), (1, 0, 1), (0, 2, 0), (0, 1, 1), (0, 0, 2)]
    assert len(monomial_layout(6, 4)) == math.comb(10, 4) - 1


def test_parse_number():
    assert parse_number("pi/3 - 0.1") == pytest.approx(math.pi / 3 - 0.1)
    assert parse_number(2) == 2.0


def test_pow_and_division():
    e = parse("(x + 1)^3 / 2", TABLE)
    assert e.evaluate({"x": 2.0}) == pytest.approx(13.5)
    with pytest.raises(NonMtpError):
        parse("x / y", TABLE)


coef = st.floats(-3, 3, allow_nan=False).filter(lambda c: abs(c) > 1e-3)


@st.composite
def poly(draw):
    e = MtpExpression.constant(draw(coef))
    for _ in range(draw(st.integers(0, 4))):
        t = MtpExpression.constant(draw(coef))
        for s in (x, y, th):
            t = t * MtpExpression.symbol(s, draw(st.integers(0, 2)), draw(st.integers(0, 1)), draw(st.integers(0, 1)))
        e = e + t
    return e


vals = st.floats(-1.5, 1.5, allow_nan=False)


@settings(max_examples=80, deadline=None)
@given(a=poly(), b=poly(), xv=vals, yv=vals, tv=vals)
def test_arithmetic_homomorphism(a, b, xv, yv, tv):
    env = {"x": xv, "y": yv, "th": tv}
    A, B = a.evaluate(env), b.evaluate(env)
    assert (a * b).evaluate(env) == pytest.approx(A * B, rel=1e-9, abs=1e-9)
    assert (a - b).evaluate(env) == pytest.approx(A - B, rel=1e-9, abs=1e-9)
    assert (a * b) == (b * a)


@settings(max_examples=80, deadline=None)
@given(a=poly())
def test_print_parse_roundtrip(a):
    back = parse(str(a), TABLE)
    env = {"x": 0.37, "y": -0.81, "th": 1.13}
    assert back.evaluate(env) == pytest.approx(a.evaluate(env), rel=1e-9, abs=1e-9)


@settings(max_examples=60, deadline=None)
@given(c=st.floats(-2, 2), k=st.sampled_from([-1.0, 1.0, 0.5, 0.25]), tv=vals, uv=vals)
def test_angle_sum_matches_numeric(c, k, tv, uv):
    arg = MtpExpression.symbol(th) + MtpExpression.symbol(u) * k + c
    for f, ref in (("cos", math.cos), ("sin", math.sin)):
        got = angle_sum_expand(f, arg).evaluate({"th": tv, "u": uv})
        assert got == pytest.approx(ref(tv + k * uv + c), abs=1e-12)


def test_vectorized_evaluate():
    e = parse("x*cos(th) + y^2", TABLE)
    X = np.linspace(-1, 1, 5)
    out = e.evaluate({"x": X, "y": X, "th": X})
    assert out.shape == (5,)
    assert np.allclose(out, X * np.cos(X) + X ** 2)
