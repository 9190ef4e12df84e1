import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ergodens import expr as ex
from ergodens.errors import DomainError

x1, x2 = ex.var(1), ex.var(2)


def test_evaluate_examples():
    assert ex.evaluate(x1 * x2, (2.0, 3.0)) == 6.0
    e = x1 ** 0.5 * ex.exp(-x1)
    assert ex.evaluate(e, (1.0,)) == pytest.approx(math.exp(-1), rel=1e-15)
    phi = (1 + 0.5 * x2 + x1 ** 2) ** 0.5
    assert ex.evaluate(phi, (1.0, 2.0)) == pytest.approx(math.sqrt(3), rel=1e-15)


def test_evaluate_vectorised_and_broadcast():
    pts = np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])
    assert np.allclose(ex.evaluate(x1 * x2, pts), [4, 10, 18])
    out = ex.evaluate(ex.const(2.5), pts)
    assert out.shape == (3,) and np.all(out == 2.5)


def test_domain_errors_name_the_node():
    with pytest.raises(DomainError) as info:
        ex.evaluate(ex.Add(ex.ONE, ex.Div(x1, x2 - 2.0)), (1.0, 2.0))
    assert "div" in info.value.path
    with pytest.raises(DomainError):
        ex.evaluate(x1 ** -1.0, (0.0,))
    with pytest.raises(DomainError):
        ex.evaluate((x1 - 2.0) ** 0.5, (1.0,))


def test_integer_power_of_negative_base_is_allowed():
    assert ex.evaluate((x1 - 2.0) ** 3.0, (1.0,)) == -1.0


def test_differentiate_examples():
    beta = gamma = 0.5
    e = x1 ** beta * ex.exp(-gamma * x1)
    assert abs(ex.evaluate(ex.differentiate(e, 1), (1.0,))) < 1e-15
    assert ex.evaluate(ex.differentiate(x1 * x2, 2), (4.0, 7.0)) == 4.0
    f = ex.exp(x1 * x2)
    d12 = ex.differentiate(ex.differentiate(f, 1), 2)
    d21 = ex.differentiate(ex.differentiate(f, 2), 1)
    a, b = ex.evaluate(d12, (0.3, 0.7)), ex.evaluate(d21, (0.3, 0.7))
    assert a == pytest.approx(b, rel=1e-12)
    assert a == pytest.approx((1 + 0.21) * math.exp(0.21), rel=1e-12)


def test_simplify_examples():
    assert ex.simplify(ex.Add(ex.Mul(ex.ZERO, x1), x2)) == x2
    assert ex.simplify(ex.Pow(x1, 1.0)) == x1
    assert ex.simplify(ex.Mul(ex.Add(ex.const(2), ex.const(3)), x1)) == ex.Mul(ex.const(5.0), x1)


def test_text_round_trip():
    e = ex.simplify(x1 ** 0.5 * ex.exp(-0.5 * x1))
    text = ex.to_text(e)
    assert text == "(mul (pow (var 1) 0.5) (exp (mul -0.5 (var 1))))"
    assert ex.parse(text) == e
    assert ex.to_text(ex.parse(text)) == text


def test_parse_rejects_garbage():
    with pytest.raises(ValueError):
        ex.parse("(mul (var 1)")
    with pytest.raises(ValueError):
        ex.parse("(frobnicate 1)")


def test_lambdify_matches_evaluate(rng):
    e = ex.simplify((1 + 0.5 * x2 + x1 ** 2) ** 0.5 * ex.exp(-x1 / x2))
    pts = rng.uniform(0.1, 5, size=(2, 50))
    assert np.allclose(ex.lambdify(e)(pts), ex.evaluate(e, pts), rtol=1e-14)


# random expression trees over x1, x2 with positive-safe leaves

def _leaf():
    return st.one_of(
        st.sampled_from([x1, x2]),
        st.floats(0.1, 3.0).map(ex.const),
    )


def _extend(children):
    return st.one_of(
        st.tuples(children, children).map(lambda t: ex.Add(*t)),
        st.tuples(children, children).map(lambda t: ex.Mul(*t)),
        st.tuples(children, children).map(lambda t: ex.Div(t[0], ex.Add(ex.const(1.0), ex.Mul(t[1], t[1])))),
        st.tuples(children, st.sampled_from([0.5, 2.0, 3.0, -1.0, 1.5])).map(
            lambda t: ex.Pow(ex.Add(ex.const(0.5), ex.Mul(t[0], t[0])), t[1])),
        children.map(lambda c: ex.exp(ex.Mul(ex.const(-0.3), c))),
    )


expressions = st.recursive(_leaf(), _extend, max_leaves=8)
points = st.tuples(st.floats(0.2, 3.0), st.floats(0.2, 3.0))


@settings(max_examples=50, deadline=None)
@given(expressions, points, st.sampled_from([1, 2]))
def test_derivative_matches_central_difference(e, p, i):
    h = 1e-5
    d = ex.evaluate(ex.differentiate(e, i), p)
    up, dn = list(p), list(p)
    up[i - 1] += h
    dn[i - 1] -= h
    fd = (ex.evaluate(e, up) - ex.evaluate(e, dn)) / (2 * h)
    assert abs(d - fd) / (1 + abs(d)) <= 1e-6


@settings(max_examples=50, deadline=None)
@given(expressions, points)
def test_simplify_preserves_values(e, p):
    a, b = ex.evaluate(e, p), ex.evaluate(ex.simplify(e), p)
    assert b == pytest.approx(a, rel=1e-12, abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(expressions, points)
def test_mixed_partials_commute(e, p):
    a = ex.evaluate(ex.differentiate(ex.differentiate(e, 1), 2), p)
    b = ex.evaluate(ex.differentiate(ex.differentiate(e, 2), 1), p)
    assert a == pytest.approx(b, rel=1e-10, abs=1e-10)


@settings(max_examples=50, deadline=None)
@given(expressions)
def test_text_round_trip_property(e):
    assert ex.parse(ex.to_text(e)) == e
