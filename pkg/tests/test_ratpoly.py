"""Exact-rational polynomial arithmetic tests."""

from fractions import Fraction

from rtplab.ratpoly import FracPoly


def test_basic_arithmetic():
    a = FracPoly([1, 2])        # 1 + 2x
    b = FracPoly([0, 1, 1])     # x + x^2
    assert (a + b).coeffs == (Fraction(1), Fraction(3), Fraction(1))
    assert (a - b).coeffs == (Fraction(1), Fraction(1), Fraction(-1))
    assert (a * b).coeffs == (Fraction(0), Fraction(1), Fraction(3), Fraction(2))
    assert (-a).coeffs == (Fraction(-1), Fraction(-2))


def test_trailing_zeros_stripped_and_degree():
    p = FracPoly([1, 0, 0])
    assert p.degree == 0
    q = FracPoly([0, 0, 5, 0])
    assert q.degree == 2
    assert FracPoly([0]).is_zero()
    assert not q.is_zero()


def test_evaluation_is_exact():
    p = FracPoly([Fraction(1, 3), Fraction(-2, 7), 1])
    x = Fraction(5, 11)
    expected = Fraction(1, 3) - Fraction(2, 7) * x + x * x
    assert p(x) == expected


def test_content_normalization_preserves_signs():
    p = FracPoly([Fraction(6, 4), Fraction(-9, 2), 3])
    n = p.normalized()
    # same roots / sign pattern, coprime integer coefficients
    assert n.coeffs == (Fraction(1), Fraction(-3), Fraction(2))
    for x in (Fraction(-1), Fraction(1, 2), Fraction(3)):
        lhs, rhs = p(x), n(x)
        assert (lhs > 0) == (rhs > 0) and (lhs == 0) == (rhs == 0)


def test_zero_polynomial_normalization():
    z = FracPoly([0])
    assert z.normalized().is_zero()
