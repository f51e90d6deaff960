"""Exact univariate polynomials and rational functions over Q, plus
certified complex root isolation.

Polynomials carry Fraction coefficients (ascending order).  Heavy exact
operations (factorisation, resultants) are delegated to sympy; numerics go
through :mod:`periodscan.balls`.
"""

from __future__ import annotations

import math
from fractions import Fraction
from functools import reduce

import mpmath
import sympy
from mpmath import mp, mpc

from .balls import Ball, NotCertified, RaisePrecision, ball

__all__ = [
    "Poly",
    "RationalFunction",
    "certified_roots",
    "height_of_vector",
    "recognize_rational_ball",
]

_x = sympy.Symbol("x")


def _frac(c) -> Fraction:
    if isinstance(c, Fraction):
        return c
    if isinstance(c, int):
        return Fraction(c)
    if isinstance(c, sympy.Rational):
        return Fraction(int(c.p), int(c.q))
    raise TypeError("expected exact rational, got %r" % (c,))


class Poly:
    """Univariate polynomial with exact rational coefficients, ascending."""

    __slots__ = ("coeffs",)

    def __init__(self, coeffs):
        cs = [_frac(c) for c in coeffs]
        while cs and cs[-1] == 0:
            cs.pop()
        self.coeffs = tuple(cs)

    @staticmethod
    def const(c):
        return Poly([c])

    @staticmethod
    def x():
        return Poly([0, 1])

    @property
    def degree(self):
        return len(self.coeffs) - 1 if self.coeffs else -1

    def is_zero(self):
        return not self.coeffs

    def __eq__(self, other):
        return isinstance(other, Poly) and self.coeffs == other.coeffs

    def __hash__(self):
        return hash(self.coeffs)

    def __repr__(self):
        return "Poly(%s)" % (list(self.coeffs),)

    def __add__(self, other):
        if not isinstance(other, Poly):
            other = Poly.const(other)
        n = max(len(self.coeffs), len(other.coeffs))
        a = list(self.coeffs) + [Fraction(0)] * (n - len(self.coeffs))
        b = list(other.coeffs) + [Fraction(0)] * (n - len(other.coeffs))
        return Poly([a[i] + b[i] for i in range(n)])

    def __neg__(self):
        return Poly([-c for c in self.coeffs])

    def __sub__(self, other):
        if not isinstance(other, Poly):
            other = Poly.const(other)
        return self + (-other)

    def __mul__(self, other):
        if not isinstance(other, Poly):
            other = Poly.const(other)
        if self.is_zero() or other.is_zero():
            return Poly([])
        out = [Fraction(0)] * (len(self.coeffs) + len(other.coeffs) - 1)
        for i, a in enumerate(self.coeffs):
            if a:
                for j, b in enumerate(other.coeffs):
                    out[i + j] += a * b
        return Poly(out)

    __rmul__ = __mul__

    def __divmod__(self, other):
        if other.is_zero():
            raise ZeroDivisionError("polynomial division by zero")
        q = [Fraction(0)] * max(0, self.degree - other.degree + 1)
        r = list(self.coeffs)
        d = other.degree
        lead = other.coeffs[-1]
        while len(r) - 1 >= d and any(r):
            while r and r[-1] == 0:
                r.pop()
            if len(r) - 1 < d:
                break
            f = r[-1] / lead
            q[len(r) - 1 - d] = f
            for j in range(d + 1):
                r[len(r) - 1 - d + j] -= f * other.coeffs[j]
            r.pop()
        return Poly(q), Poly(r)

    def gcd(self, other):
        a, b = self, other
        while not b.is_zero():
            a, b = b, divmod(a, b)[1]
        if a.is_zero():
            return a
        return a * (Fraction(1) / a.coeffs[-1])  # monic

    def derivative(self):
        return Poly([i * c for i, c in enumerate(self.coeffs)][1:])

    def shift(self, a):
        """p(x + a) for exact rational a (Taylor re-centering)."""
        a = _frac(a)
        out = Poly([])
        for c in reversed(self.coeffs):
            out = out * Poly([a, 1]) + Poly.const(c)
        return out

    def reverse(self, n=None):
        """x^n * p(1/x) with n >= degree (default: degree)."""
        n = self.degree if n is None else n
        cs = [Fraction(0)] * (n + 1)
        for i, c in enumerate(self.coeffs):
            cs[n - i] = c
        return Poly(cs)

    # -- evaluation ----------------------------------------------------------

    def __call__(self, z):
        if isinstance(z, Fraction) or isinstance(z, int):
            acc = Fraction(0)
            for c in reversed(self.coeffs):
                acc = acc * z + c
            return acc
        zb = ball(z) if not isinstance(z, Ball) else z
        acc = Ball(0)
        for c in reversed(self.coeffs):
            acc = acc * zb + Ball.from_exact(c)
        return acc

    def eval_mid(self, z):
        """Midpoint-only evaluation (no radius tracking), for heuristics."""
        acc = mpc(0)
        for c in reversed(self.coeffs):
            acc = acc * z + mpc(c.numerator) / c.denominator
        return acc

    # -- exact helpers via sympy ---------------------------------------------

    def to_sympy(self, sym=_x):
        return sympy.Poly([sympy.Rational(c.numerator, c.denominator)
                           for c in reversed(self.coeffs)], sym)

    @staticmethod
    def from_sympy(sp):
        return Poly([_frac(c) for c in reversed(sp.all_coeffs())])

    def squarefree_part(self):
        g = self.gcd(self.derivative())
        if g.degree <= 0:
            return self
        return divmod(self, g)[0]

    def factor_list(self):
        """Irreducible factors over Q: list of (Poly, multiplicity)."""
        _, factors = self.to_sympy().factor_list()
        return [(Poly.from_sympy(f), int(m)) for f, m in factors]

    def is_irreducible(self):
        fl = self.factor_list()
        return len(fl) == 1 and fl[0][1] == 1

    def resultant(self, other):
        r = sympy.resultant(self.to_sympy().as_expr(),
                            other.to_sympy().as_expr(), _x)
        return _frac(sympy.Rational(r))

    def content_and_primitive(self):
        """(c, q) with self = c*q, q integer-primitive, positive leading."""
        if self.is_zero():
            return Fraction(0), Poly([])
        den = reduce(lambda a, b: a * b // math.gcd(a, b),
                     (c.denominator for c in self.coeffs), 1)
        ints = [int(c * den) for c in self.coeffs]
        g = reduce(math.gcd, (abs(v) for v in ints))
        sign = -1 if ints[-1] < 0 else 1
        g *= sign
        return Fraction(g, den), Poly([Fraction(v // g) for v in ints])


def height_of_vector(fracs) -> int:
    """Projective height of a rational vector: clear denominators to a
    primitive integer vector, return max |entry|.  Height of the zero vector
    is 1 by convention."""
    fracs = [_frac(c) for c in fracs]
    if all(c == 0 for c in fracs):
        return 1
    den = reduce(lambda a, b: a * b // math.gcd(a, b),
                 (c.denominator for c in fracs), 1)
    ints = [int(c * den) for c in fracs]
    g = reduce(math.gcd, (abs(v) for v in ints))
    return max(abs(v) // g for v in ints)


class RationalFunction:
    """Reduced quotient of two rational-coefficient polynomials."""

    __slots__ = ("num", "den")

    def __init__(self, num, den=None):
        if not isinstance(num, Poly):
            num = Poly.const(num) if not isinstance(num, (list, tuple)) else Poly(num)
        if den is None:
            den = Poly([1])
        elif not isinstance(den, Poly):
            den = Poly.const(den) if not isinstance(den, (list, tuple)) else Poly(den)
        if den.is_zero():
            raise ZeroDivisionError("rational function with zero denominator")
        if num.is_zero():
            num, den = Poly([]), Poly([1])
        else:
            g = num.gcd(den)
            if g.degree > 0:
                num = divmod(num, g)[0]
                den = divmod(den, g)[0]
            # normalize: denominator integer-primitive, positive leading
            c, den = den.content_and_primitive()
            num = num * (Fraction(1) / c)
        self.num = num
        self.den = den

    @staticmethod
    def zero():
        return RationalFunction(Poly([]))

    def is_zero(self):
        return self.num.is_zero()

    def __eq__(self, other):
        return (isinstance(other, RationalFunction)
                and self.num == other.num and self.den == other.den)

    def __repr__(self):
        return "RationalFunction(%r, %r)" % (list(self.num.coeffs),
                                             list(self.den.coeffs))

    def __add__(self, other):
        other = self._coerce(other)
        return RationalFunction(self.num * other.den + other.num * self.den,
                                self.den * other.den)

    def __neg__(self):
        return RationalFunction(-self.num, self.den)

    def __sub__(self, other):
        return self + (-self._coerce(other))

    def __mul__(self, other):
        other = self._coerce(other)
        return RationalFunction(self.num * other.num, self.den * other.den)

    def __truediv__(self, other):
        other = self._coerce(other)
        return RationalFunction(self.num * other.den, self.den * other.num)

    @staticmethod
    def _coerce(other):
        if isinstance(other, RationalFunction):
            return other
        return RationalFunction(Poly.const(other))

    def derivative(self):
        return RationalFunction(
            self.num.derivative() * self.den - self.num * self.den.derivative(),
            self.den * self.den)

    @property
    def degree(self):
        return max(self.num.degree, self.den.degree, 0)

    @property
    def height(self):
        return height_of_vector(list(self.num.coeffs) + list(self.den.coeffs))

    def __call__(self, z):
        if isinstance(z, (Fraction, int)):
            d = self.den(z)
            if d == 0:
                raise ZeroDivisionError("pole at %s" % z)
            return self.num(z) / d
        return self.num(z) / self.den(z)

    def pole_order_at_factor(self, q: Poly) -> int:
        """Multiplicity of the irreducible factor q in the denominator."""
        k, d = 0, self.den
        while True:
            quo, rem = divmod(d, q)
            if not rem.is_zero():
                return k
            k, d = k + 1, quo

    def substitute_reciprocal(self):
        """g(w) = f(1/w) as a rational function of w."""
        n = max(self.num.degree, self.den.degree)
        return RationalFunction(self.num.reverse(n), self.den.reverse(n))


# ---------------------------------------------------------------------------
# Certified root isolation
# ---------------------------------------------------------------------------

def _henrici_radius(pb, dpb, n) -> float:
    """Radius of a disc certified to contain >= 1 root: n*|p(c)|/|p'(c)|,
    as an upper bound from ball data."""
    lo = dpb.abs_down()
    if lo == 0.0:
        raise RaisePrecision("derivative not certifiably nonzero at root "
                             "approximation")
    return n * pb.abs_up() / lo * (1 + 1e-12)


def certified_roots(p: Poly, extraprec: int = 40):
    """All complex roots of an exact polynomial as disjoint certified balls.

    Returns a list of (Ball, multiplicity) covering deg(p) roots total.
    Raises RaisePrecision when isolation fails at the working precision.
    """
    if p.degree < 1:
        return []
    sqf = [(q, m) for q, m in p.factor_list() if q.degree >= 1]
    out = []
    for q, mult in sqf:
        n = q.degree
        with mpmath.extraprec(extraprec + 10 * n):
            coeffs = [mpmath.mpf(c.numerator) / c.denominator
                      for c in reversed(q.coeffs)]
            approx = mpmath.polyroots(coeffs, maxsteps=200, extraprec=extraprec)
        dq = q.derivative()
        for r in approx:
            c = mpc(r)
            rad = _henrici_radius(q(Ball(c)), dq(Ball(c)), n)
            out.append((Ball(c, rad), mult))
    # pairwise disjointness certifies one root per ball (counts add to deg)
    for i in range(len(out)):
        for j in range(i + 1, len(out)):
            if out[i][0].overlaps(out[j][0]):
                raise RaisePrecision("root clusters overlap; raise precision")
    return out


def ball_poly_roots(coeff_balls, guard: float = 1.05):
    """Roots of a polynomial whose coefficients are balls.

    Returns disjoint balls, one per root of every member polynomial, or
    raises RaisePrecision.  The leading coefficient must exclude zero.
    """
    cs = [b if isinstance(b, Ball) else ball(b) for b in coeff_balls]
    while cs and cs[-1].is_zero_within(0.0):
        cs.pop()
    n = len(cs) - 1
    if n < 1:
        return []
    if cs[-1].contains_zero():
        raise RaisePrecision("leading coefficient ball contains zero")

    def ev(z, der=False):
        acc = Ball(0)
        seq = cs[1:] if der else cs
        for i in range(len(seq) - 1, -1, -1):
            c = seq[i] * (i + 1) if der else seq[i]
            acc = acc * z + c
        return acc

    with mpmath.extraprec(40):
        approx = mpmath.polyroots([c.mid for c in reversed(cs)],
                                  maxsteps=200, extraprec=40)
    out = []
    for r in approx:
        c = mpc(r)
        rad = _henrici_radius(ev(Ball(c)), ev(Ball(c), der=True), n) * guard
        out.append(Ball(c, rad))
    for i in range(len(out)):
        for j in range(i + 1, len(out)):
            if out[i].overlaps(out[j]):
                raise RaisePrecision("ball-poly roots overlap; raise precision")
    return out


def recognize_rational_ball(b: Ball, max_den: int):
    """The unique rational p/q (q <= max_den) inside a real ball, or None.

    Uniqueness needs 2*rad*max_den^2 < 1; otherwise RaisePrecision."""
    if not b.imag_ball().contains_zero():
        return None
    if 2.0 * b.rad * max_den * max_den >= 1.0:
        raise RaisePrecision("ball too wide to pin a rational with bounded "
                             "denominator")
    fr = Fraction(str(mpmath.nstr(b.mid.real, mp.dps))).limit_denominator(max_den)
    val = b.mid.real - mpmath.mpf(fr.numerator) / fr.denominator
    if abs(val) <= b.rad:
        return fr
    return None
