"""Radius-tracked complex ball arithmetic on top of mpmath.

A :class:`Ball` is a disc {z : |z - mid| <= rad} in the complex plane.  Every
arithmetic operation returns a ball guaranteed to contain the image of the
input discs; "certified" throughout this package means containment in this
sense.  Midpoints are mpmath complex numbers at the ambient working precision
(``mpmath.mp.prec``); radii are double floats, handled conservatively (always
rounded up, clamped away from underflow).

Callers set the working precision with ``mpmath.workdps(...)`` / ``workprec``.
"""

from __future__ import annotations

import math

import mpmath
from mpmath import mp, mpc, mpf
from mpmath.libmp import fzero, to_float

__all__ = [
    "Ball",
    "NotCertified",
    "RaisePrecision",
    "ball",
    "exact",
    "mat_add",
    "mat_det",
    "mat_eye",
    "mat_inv",
    "mat_mul",
    "mat_norm_inf",
    "mat_scale",
    "mat_sub",
    "mat_vec",
    "certified_winding",
]

# Smallest positive double; radii are clamped here so products of tiny radii
# never round down to zero.
_TINY = 5e-324
_UPFAC = 1.0 + 2.0 ** -48


class NotCertified(Exception):
    """A ball-arithmetic certification failed (e.g. division by a ball
    containing zero)."""


class RaisePrecision(NotCertified):
    """The requested operation cannot be certified at the current working
    precision; retry with more digits."""


def _up(x) -> float:
    """Upper bound for a nonnegative quantity as a double."""
    f = float(x)
    if f <= 0.0:
        return _TINY
    f *= _UPFAC
    if f == 0.0 or f < _TINY:
        return _TINY
    return f


def _eps() -> float:
    # Relative rounding slack for one mpmath operation at working precision,
    # with a generous safety margin.
    return 2.0 ** (4 - mp.prec)


def _mag_up(m) -> float:
    """Fast upper bound for |m| (m an mpc/mpf), conservative under double
    under/overflow."""
    try:
        re, im = m._mpc_
    except AttributeError:
        re, im = m._mpf_, fzero
    try:
        fr = abs(to_float(re))
        fi = abs(to_float(im))
    except (OverflowError, ValueError):
        return _up(abs(m))
    if math.isinf(fr) or math.isinf(fi):
        return _up(abs(m))
    if fr == 0.0 and fi == 0.0:
        if re == fzero and im == fzero:
            return 0.0
        return _up(abs(m))  # underflowed double, fall back to mpf
    if fr < 1e-280 or fi < 1e-280:
        # possible underflow of a nonzero part; widen conservatively
        if (fr == 0.0 and re != fzero) or (fi == 0.0 and im != fzero):
            return _up(abs(m))
    return math.hypot(fr, fi) * (1.0 + 1e-13) + _TINY


class Ball:
    """Complex ball: midpoint ``mid`` (mpc) and radius ``rad`` (float >= 0)."""

    __slots__ = ("mid", "rad")

    def __init__(self, mid, rad=0.0):
        self.mid = mid if type(mid) is mpc else mpc(mid)
        self.rad = rad if type(rad) is float else float(rad)
        if self.rad < 0 or math.isnan(self.rad):
            raise ValueError("invalid ball radius %r" % rad)

    # -- constructors -------------------------------------------------------

    @staticmethod
    def from_exact(q):
        """Ball around an exact rational/integer, with the rounding error of
        the conversion absorbed into the radius."""
        try:
            num = int(q.numerator)
            den = int(q.denominator)
        except AttributeError:
            num, den = int(q), 1
        m = mpf(num) / den
        r = _up(abs(m)) * _eps() if den != 1 else 0.0
        return Ball(m, r)

    def copy(self):
        return Ball(self.mid, self.rad)

    # -- queries ------------------------------------------------------------

    def abs_up(self) -> float:
        return _mag_up(self.mid) + self.rad

    def abs_down(self) -> float:
        lo = float(abs(self.mid)) / _UPFAC - self.rad
        return max(lo, 0.0)

    def contains_zero(self) -> bool:
        return self.abs_down() == 0.0

    def contains(self, other: "Ball") -> bool:
        """Whole disc ``other`` inside ``self``."""
        d = _up(abs(self.mid - other.mid))
        return d + other.rad <= self.rad

    def overlaps(self, other: "Ball") -> bool:
        d = float(abs(self.mid - other.mid)) / _UPFAC
        return d <= self.rad + other.rad

    def is_zero_within(self, tol: float) -> bool:
        return self.abs_up() <= tol

    def __repr__(self):
        return "Ball(%s, rad=%.3g)" % (mpmath.nstr(self.mid, 12), self.rad)

    # -- arithmetic ---------------------------------------------------------

    def __add__(self, other):
        other = ball(other)
        m = self.mid + other.mid
        r = self.rad + other.rad + _mag_up(m) * _eps()
        return Ball(m, r)

    __radd__ = __add__

    def __neg__(self):
        return Ball(-self.mid, self.rad)

    def __sub__(self, other):
        return self + (-ball(other))

    def __rsub__(self, other):
        return ball(other) + (-self)

    def __mul__(self, other):
        other = ball(other)
        m = self.mid * other.mid
        if self.rad == 0.0 and other.rad == 0.0:
            return Ball(m, _mag_up(m) * _eps())
        a = _mag_up(self.mid)
        b = _mag_up(other.mid)
        r = _up(a * other.rad + b * self.rad + self.rad * other.rad) \
            + _mag_up(m) * _eps()
        return Ball(m, r)

    __rmul__ = __mul__

    def inverse(self):
        am = float(abs(self.mid)) / _UPFAC
        if am <= self.rad:
            raise NotCertified("inverse of a ball containing zero")
        m = 1 / self.mid
        r = _up(self.rad / (am * (am - self.rad))) + _up(abs(m)) * _eps()
        return Ball(m, r)

    def __truediv__(self, other):
        return self * ball(other).inverse()

    def __rtruediv__(self, other):
        return ball(other) * self.inverse()

    def __pow__(self, k: int):
        if not isinstance(k, int):
            raise TypeError("ball powers must be integral")
        if k < 0:
            return (self ** (-k)).inverse()
        out = Ball(1)
        base = self
        while k:
            if k & 1:
                out = out * base
            base = base * base
            k >>= 1
        return out

    # -- elementary functions ------------------------------------------------

    def sqrt(self, near=None):
        """Analytic square root on this disc (which must exclude 0).

        Returns the branch whose value at the midpoint is the principal
        square root, or the one closer to ``near`` if given.
        """
        am = float(abs(self.mid)) / _UPFAC
        if am <= self.rad:
            raise NotCertified("sqrt of a ball containing zero")
        m = mpmath.sqrt(self.mid)
        if near is not None and abs(m - near) > abs(-m - near):
            m = -m
        # |sqrt(w) - sqrt(m)| <= rad / (2 sqrt(|m| - rad)) on the disc
        r = _up(self.rad / (2.0 * math.sqrt(am - self.rad))) \
            + _up(abs(m)) * _eps()
        return Ball(m, r)

    def exp(self):
        m = mpmath.exp(self.mid)
        r = _up(abs(m)) * (_up(math.expm1(self.rad)) + _eps())
        return Ball(m, r)

    def log(self):
        """Principal log; the disc must exclude 0 and not cross the cut."""
        am = float(abs(self.mid)) / _UPFAC
        if am <= self.rad:
            raise NotCertified("log of a ball containing zero")
        if self.mid.real < 0 and abs(self.mid.imag) <= self.rad:
            raise NotCertified("log ball crosses the branch cut")
        m = mpmath.log(self.mid)
        r = _up(self.rad / (am - self.rad)) + (_up(abs(m)) + 1.0) * _eps()
        return Ball(m, r)

    def real_ball(self):
        return Ball(self.mid.real, self.rad)

    def imag_ball(self):
        return Ball(self.mid.imag, self.rad)

    def conj(self):
        return Ball(mpmath.conj(self.mid), self.rad)


def ball(x) -> Ball:
    if isinstance(x, Ball):
        return x
    if isinstance(x, (int, mpf, mpc, float, complex)):
        return Ball(x)
    # Fraction and sympy Rational both expose numerator/denominator.
    if hasattr(x, "numerator") and hasattr(x, "denominator"):
        return Ball.from_exact(x)
    raise TypeError("cannot coerce %r to Ball" % (x,))


def exact(q) -> Ball:
    return Ball.from_exact(q)


# ---------------------------------------------------------------------------
# Small dense matrices of balls (lists of lists).  Dimensions here are tiny
# (<= 8), so explicit loops are fine.
# ---------------------------------------------------------------------------

def mat_eye(n):
    return [[Ball(1 if i == j else 0) for j in range(n)] for i in range(n)]


def mat_add(A, B):
    return [[A[i][j] + B[i][j] for j in range(len(A[0]))] for i in range(len(A))]


def mat_sub(A, B):
    return [[A[i][j] - B[i][j] for j in range(len(A[0]))] for i in range(len(A))]


def mat_scale(A, c):
    return [[A[i][j] * c for j in range(len(A[0]))] for i in range(len(A))]


def mat_mul(A, B):
    n, k, m = len(A), len(B), len(B[0])
    out = []
    for i in range(n):
        row = []
        for j in range(m):
            s = A[i][0] * B[0][j]
            for l in range(1, k):
                s = s + A[i][l] * B[l][j]
            row.append(s)
        out.append(row)
    return out


def mat_vec(A, v):
    out = []
    for i in range(len(A)):
        s = A[i][0] * v[0]
        for j in range(1, len(v)):
            s = s + A[i][j] * v[j]
        out.append(s)
    return out


def mat_norm_inf(A) -> float:
    return max(_up(sum(x.abs_up() for x in row)) for row in A)


def _lu_solve(A, B):
    """Solve A X = B in ball arithmetic, Gaussian elimination with partial
    pivoting on midpoint magnitude.  Raises NotCertified on a pivot ball
    containing zero."""
    n = len(A)
    M = [row[:] for row in A]
    X = [row[:] for row in B]
    for col in range(n):
        piv = max(range(col, n), key=lambda r: abs(M[r][col].mid))
        if M[piv][col].contains_zero():
            raise NotCertified("singular (or uncertifiable) ball matrix")
        if piv != col:
            M[col], M[piv] = M[piv], M[col]
            X[col], X[piv] = X[piv], X[col]
        inv = M[col][col].inverse()
        for r in range(col + 1, n):
            f = M[r][col] * inv
            for c in range(col, n):
                M[r][c] = M[r][c] - f * M[col][c]
            for c in range(len(X[0])):
                X[r][c] = X[r][c] - f * X[col][c]
    for col in range(n - 1, -1, -1):
        inv = M[col][col].inverse()
        for c in range(len(X[0])):
            s = X[col][c]
            for r in range(col + 1, n):
                s = s - M[col][r] * X[r][c]
            X[col][c] = s * inv
    return X


def mat_inv(A):
    return _lu_solve(A, mat_eye(len(A)))


def mat_solve(A, B):
    return _lu_solve(A, B)


def mat_det(A) -> Ball:
    n = len(A)
    M = [row[:] for row in A]
    det = Ball(1)
    for col in range(n):
        piv = max(range(col, n), key=lambda r: abs(M[r][col].mid))
        if piv != col:
            M[col], M[piv] = M[piv], M[col]
            det = -det
        p = M[col][col]
        if p.contains_zero():
            # Pivot ball straddles zero: fall back to a Hadamard bound on the
            # remaining block.  The result is a valid (crude) enclosure of the
            # determinant around zero.
            bound = det.abs_up()
            for r in range(col, n):
                bound *= _up(sum(M[r][c].abs_up() ** 2
                                 for c in range(col, n))) ** 0.5
            return Ball(0, _up(bound))
        det = det * p
        inv = p.inverse()
        for r in range(col + 1, n):
            f = M[r][col] * inv
            for c in range(col, n):
                M[r][c] = M[r][c] - f * M[col][c]
    return det


# ---------------------------------------------------------------------------
# Certified winding numbers (argument principle support)
# ---------------------------------------------------------------------------

def _cone_halfangle(b: Ball) -> float:
    am = float(abs(b.mid)) / _UPFAC
    if am <= b.rad:
        raise NotCertified("winding: value ball contains zero")
    return math.asin(min(b.rad / am * _UPFAC, 1.0))


def certified_winding(fun, contour, max_refine=12):
    """Certified winding number of ``fun`` along a closed polyline.

    ``fun`` maps a Ball to a Ball and must be analytic on a neighbourhood of
    the contour; ``contour`` is a list of complex vertices (closed: last
    connects back to first).  Each edge is enclosed in a disc; the argument
    increment over the edge is bounded using the cone angle of the image
    ball.  Edges are bisected adaptively until the total ambiguity certifies
    a unique integer.

    Raises NotCertified if some image ball contains zero even after maximal
    refinement (a zero lies on or too close to the contour).
    """
    pts = [mpc(p) for p in contour]
    edges = [(pts[i], pts[(i + 1) % len(pts)]) for i in range(len(pts))]
    total = 0.0
    slack = 0.0
    vals = {}

    def endpoint_val(p):
        key = (str(p.real), str(p.imag))
        if key not in vals:
            vals[key] = fun(Ball(p))
        return vals[key]

    stack = list(reversed(edges))
    while stack:
        a, b = stack.pop()
        mid = (a + b) / 2
        enc = Ball(mid, _up(abs(b - a)) / 2 * 1.001)
        try:
            img = fun(enc)
            alpha = _cone_halfangle(img)
            ok = alpha < math.pi / 8
        except NotCertified:
            ok = False
        if not ok:
            if _up(abs(b - a)) < 2.0 ** (-max_refine) * (1 + _up(abs(a))):
                raise NotCertified("winding: cannot certify edge near a zero")
            stack.append((mid, b))
            stack.append((a, mid))
            continue
        fa, fb = endpoint_val(a), endpoint_val(b)
        dtheta = float(mpmath.arg(fb.mid / fa.mid))
        # the true increment differs from dtheta by at most the endpoint
        # cone angles; both endpoint values lie in the edge-image cone, so
        # the increment is also < pi in absolute value.
        ea = _cone_halfangle(fa)
        eb = _cone_halfangle(fb)
        total += dtheta
        slack += ea + eb + 4.0 * _eps()
    w = total / (2 * math.pi)
    k = round(w)
    if abs(w - k) + slack / (2 * math.pi) >= 0.5:
        raise NotCertified("winding: ambiguity too large, refine contour")
    return k
