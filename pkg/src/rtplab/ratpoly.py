"""Exact univariate polynomials over rationals.

Used by the stability-limit reduction, where floating point would lose
roots near 0 or 1: coefficients are Fractions, so signs of evaluations
at rational points are exact.
"""

from __future__ import annotations

from fractions import Fraction
from math import gcd


class FracPoly:
    """Polynomial with Fraction coefficients, stored ascending by power."""

    __slots__ = ("coeffs",)

    def __init__(self, coeffs):
        cs = [Fraction(c) for c in coeffs]
        while len(cs) > 1 and cs[-1] == 0:
            cs.pop()
        self.coeffs = tuple(cs)

    @property
    def degree(self) -> int:
        return len(self.coeffs) - 1

    def is_zero(self) -> bool:
        return self.coeffs == (Fraction(0),)

    def __eq__(self, other) -> bool:
        return isinstance(other, FracPoly) and self.coeffs == other.coeffs

    def __hash__(self):
        return hash(self.coeffs)

    def __add__(self, other: "FracPoly") -> "FracPoly":
        a, b = self.coeffs, other.coeffs
        if len(a) < len(b):
            a, b = b, a
        out = list(a)
        for i, c in enumerate(b):
            out[i] += c
        return FracPoly(out)

    def __neg__(self) -> "FracPoly":
        return FracPoly([-c for c in self.coeffs])

    def __sub__(self, other: "FracPoly") -> "FracPoly":
        return self + (-other)

    def __mul__(self, other: "FracPoly") -> "FracPoly":
        a, b = self.coeffs, other.coeffs
        out = [Fraction(0)] * (len(a) + len(b) - 1)
        for i, ca in enumerate(a):
            if ca == 0:
                continue
            for j, cb in enumerate(b):
                out[i + j] += ca * cb
        return FracPoly(out)

    def normalized(self) -> "FracPoly":
        """Divide out the integer content; the sign pattern is unchanged."""
        if self.is_zero():
            return self
        dens = 1
        for c in self.coeffs:
            dens = dens * c.denominator // gcd(dens, c.denominator)
        ints = [int(c * dens) for c in self.coeffs]
        g = 0
        for v in ints:
            g = gcd(g, abs(v))
        if g == 0:
            return self
        return FracPoly([Fraction(v, g) for v in ints])

    def __call__(self, x) -> Fraction:
        x = Fraction(x)
        acc = Fraction(0)
        for c in reversed(self.coeffs):
            acc = acc * x + c
        return acc

    def __repr__(self) -> str:
        return f"FracPoly({list(self.coeffs)})"
