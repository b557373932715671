import numpy as np
import pytest
from fractions import Fraction
from hypothesis import given, strategies as st

from hybrid_conley.poly import Poly, PolyMap


def test_constant_and_variable_evaluation():
    c = Poly.constant(2, 3.5)
    x0 = Poly.variable(2, 0)
    x1 = Poly.variable(2, 1)
    assert c((1.0, 2.0)) == 3.5
    assert x0((1.5, -2.0)) == 1.5
    assert x1((1.5, -2.0)) == -2.0


def test_algebra_matches_pointwise():
    x = Poly.variable(2, 0)
    y = Poly.variable(2, 1)
    p = x * x + y.scale(-3) + Poly.constant(2, 1)
    pts = np.array([[0.0, 0.0], [1.0, 2.0], [-1.5, 0.25]])
    expected = pts[:, 0] ** 2 - 3 * pts[:, 1] + 1
    assert np.allclose(p.eval_batch(pts), expected)
    for row, e in zip(pts, expected):
        assert p(row) == pytest.approx(e)


def test_partial_derivative():
    x = Poly.variable(2, 0)
    y = Poly.variable(2, 1)
    p = x * x * y + y.scale(2)  # x^2 y + 2y
    px = p.partial(0)  # 2xy
    py = p.partial(1)  # x^2 + 2
    assert px((3.0, 4.0)) == pytest.approx(24.0)
    assert py((3.0, 4.0)) == pytest.approx(11.0)


def test_lie_along_field():
    # psi = x along field (y, -g): first derivative y, second -g
    x = Poly.variable(2, 0)
    y = Poly.variable(2, 1)
    field = [y, Poly.constant(2, -2.5)]
    l1 = x.lie_along(field)
    l2 = l1.lie_along(field)
    assert l1 == y
    assert l2 == Poly.constant(2, -2.5)


def test_exact_rational_coefficients():
    p = Poly(1, {(1,): Fraction(1, 3)})
    q = p + p + p
    assert q == Poly.variable(1, 0)


def test_json_round_trip():
    x = Poly.variable(3, 0)
    z = Poly.variable(3, 2)
    p = x * z + Poly.constant(3, -0.75)
    back = Poly.from_json(p.to_json(), 3)
    assert back == p


def test_polymap_round_trip_and_batch():
    x = Poly.variable(2, 0)
    y = Poly.variable(2, 1)
    m = PolyMap([y, x.scale(-1)])
    rows = m.to_json()
    back = PolyMap.from_json(rows, 2, 2)
    pts = np.array([[1.0, 2.0], [0.5, -0.5]])
    assert np.allclose(back.eval_batch(pts), m.eval_batch(pts))
    assert np.allclose(m((1.0, 2.0)), [2.0, -1.0])


coeffs = st.integers(min_value=-5, max_value=5)


@st.composite
def polys(draw, nvars=2, max_terms=4, max_deg=3):
    n = draw(st.integers(min_value=0, max_value=max_terms))
    terms = {}
    for _ in range(n):
        e = tuple(draw(st.integers(min_value=0, max_value=max_deg)) for _ in range(nvars))
        terms[e] = Fraction(draw(coeffs))
    return Poly(nvars, terms)


@given(polys(), polys(), st.integers(min_value=-3, max_value=3))
def test_evaluation_is_ring_homomorphism(p, q, scale):
    pt = (0.5, -1.25)
    assert (p + q)(pt) == pytest.approx(p(pt) + q(pt), abs=1e-9)
    assert (p * q)(pt) == pytest.approx(p(pt) * q(pt), abs=1e-9)
    assert p.scale(scale)(pt) == pytest.approx(scale * p(pt), abs=1e-9)


@given(polys())
def test_partial_matches_finite_difference(p):
    pt = np.array([0.3, -0.7])
    h = 1e-6
    for i in range(2):
        e = np.zeros(2)
        e[i] = h
        fd = (p(pt + e) - p(pt - e)) / (2 * h)
        assert p.partial(i)(pt) == pytest.approx(fd, abs=1e-4, rel=1e-4)
