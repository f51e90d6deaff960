"""Regular-singular linear ODE systems dX = Omega·X over the z-plane.

Exact representation of the coefficient matrix (rational functions over Q),
certified power-series solution germs, rigorous analytic continuation along
polylines, monodromy with quasi-unipotency certification, and Frobenius
expansions at rational singular points.

Numerics are radius-tracked balls (:mod:`periodscan.balls`); "certified"
always means containment.  Structural preprocessing — the Fuchs criterion
via a cyclic vector, pole-order reduction, residue spectral data — is done
in exact rational arithmetic.
"""

from __future__ import annotations

import json
import math
from fractions import Fraction

import mpmath
from mpmath import mp, mpc

from .balls import (Ball, NotCertified, RaisePrecision, mat_det, mat_eye,
                    mat_mul, mat_norm_inf, mat_solve)
from .ratfunc import Poly, RationalFunction, certified_roots

__all__ = [
    "ConnectionSystem",
    "SolutionGerm",
    "MonodromyMatrix",
    "LocalExpansion",
    "PathTooClose",
    "IrregularSingularity",
    "legendre_system",
    "singular_locus",
    "local_solve",
    "continue_along",
    "monodromy",
    "local_expansion",
    "complexity",
    "loop_around",
]

_WORKGUARD = 15  # extra decimal digits beyond the requested precision


class PathTooClose(NotCertified):
    """A continuation path passes too close to the singular locus."""


class IrregularSingularity(NotCertified):
    """The system failed the regular-singularity verification."""


# ---------------------------------------------------------------------------
# Connection systems
# ---------------------------------------------------------------------------

class ConnectionSystem:
    """n x n system dX = Omega·X dz with exact rational-function entries.

    Regular-singularity of all finite singular points and of infinity is
    verified at construction (Fuchs criterion applied to a cyclic-vector
    scalar reduction, in exact arithmetic); failures raise
    IrregularSingularity.
    """

    def __init__(self, omega, verify=True):
        self.n = len(omega)
        self.omega = [[e if isinstance(e, RationalFunction)
                       else RationalFunction(e) for e in row] for row in omega]
        for row in self.omega:
            if len(row) != self.n:
                raise ValueError("omega must be square")
        self._sigma_cache = {}
        self._den_factors = self._denominator_factors()
        self.infinity_singular = any(
            e.num.degree > e.den.degree - 2
            for row in self.omega for e in row if not e.is_zero())
        if verify:
            self.verify_regular_singular()

    def _denominator_factors(self):
        seen = {}
        for row in self.omega:
            for e in row:
                if e.is_zero():
                    continue
                for q, _m in e.den.factor_list():
                    if q.degree >= 1:
                        qm = q * (Fraction(1) / q.coeffs[-1])
                        seen[qm.coeffs] = qm
        return list(seen.values())

    def singular_locus(self, prec=30):
        """Certified balls around the finite singular points.  Whether
        infinity is singular is the ``infinity_singular`` attribute."""
        if prec in self._sigma_cache:
            return self._sigma_cache[prec]
        pts = []
        with mp.workdps(prec + _WORKGUARD):
            for q in self._den_factors:
                for rb, _m in certified_roots(q):
                    pts.append(rb)
            out = []
            for p in pts:
                if not any(p.overlaps(o) for o in out):
                    out.append(p)
        self._sigma_cache[prec] = out
        return out

    def entry_series(self, i, j, z0, K):
        """Ball Taylor coefficients of omega[i][j] at ordinary z0, orders
        0..K."""
        return _ratfun_series(self.omega[i][j], z0, K)

    def at_infinity(self):
        """The system in w = 1/z: Omega_w = -(1/w^2)·Omega(1/w)."""
        out = []
        for row in self.omega:
            new_row = []
            for e in row:
                if e.is_zero():
                    new_row.append(RationalFunction(0))
                    continue
                g = e.substitute_reciprocal()
                new_row.append(RationalFunction(-g.num, g.den * Poly([0, 0, 1])))
            out.append(new_row)
        return ConnectionSystem(out, verify=False)

    # -- regular-singularity verification ------------------------------------

    def verify_regular_singular(self):
        cs = self._cyclic_scalar_coeffs()
        if cs is None:
            raise IrregularSingularity(
                "no cyclic vector found; cannot verify regular singularity")
        for q in self._den_factors:
            self._fuchs_check(cs, q)
        if self.infinity_singular:
            inf_sys = self.at_infinity()
            csw = inf_sys._cyclic_scalar_coeffs()
            if csw is None:
                raise IrregularSingularity(
                    "no cyclic vector at infinity")
            inf_sys._fuchs_check(csw, Poly([0, 1]))

    def _cyclic_scalar_coeffs(self):
        """c_0..c_{n-1} with y^(n) = sum_k c_k y^(k) for y = v·x, over Q(z);
        None if no tried vector is cyclic."""
        n = self.n
        A = self.omega
        candidates = [[RationalFunction(1 if k == i else 0) for k in range(n)]
                      for i in range(n)]
        candidates.append([RationalFunction(1) for _ in range(n)])
        candidates.append([RationalFunction(Poly([i + 1, 1])) for i in range(n)])
        for v in candidates:
            rows = [v]
            for _ in range(n):
                r = rows[-1]
                nxt = []
                for j in range(n):
                    acc = r[j].derivative()
                    for k in range(n):
                        acc = acc + r[k] * A[k][j]
                    nxt.append(acc)
                rows.append(nxt)
            W = [rows[k] for k in range(n)]
            if _rf_det(W).is_zero():
                continue
            sol = _rf_solve(W, rows[n])
            if sol is not None:
                return sol
        return None

    def _fuchs_check(self, cs, q: Poly):
        n = self.n
        for k, c in enumerate(cs):
            if c.is_zero():
                continue
            if c.pole_order_at_factor(q) > n - k:
                raise IrregularSingularity(
                    "Fuchs criterion fails at factor %r" % (list(q.coeffs),))

    # -- bookkeeping ----------------------------------------------------------

    def complexity(self):
        """(max degree, max height) over the entries of Omega."""
        deg, ht = 0, 1
        for row in self.omega:
            for e in row:
                deg = max(deg, e.degree)
                ht = max(ht, e.height)
        return deg, ht

    def to_json(self):
        def fr(c):
            return "%d/%d" % (c.numerator, c.denominator)

        entries = []
        for row in self.omega:
            for e in row:
                entries.append({"num": [fr(c) for c in e.num.coeffs],
                                "den": [fr(c) for c in e.den.coeffs]})
        return json.dumps({"dimension": self.n, "omega": entries},
                          sort_keys=True)

    @staticmethod
    def from_json(text):
        data = json.loads(text)
        n = data["dimension"]
        ent = data["omega"]
        if len(ent) != n * n:
            raise ValueError("omega must have dimension^2 entries (row-major)")

        def pf(strs):
            return Poly([Fraction(s) for s in strs]) if strs else Poly([])

        omega = []
        for i in range(n):
            row = []
            for j in range(n):
                rec = ent[i * n + j]
                den = pf(rec["den"])
                row.append(RationalFunction(pf(rec["num"]),
                                            den if not den.is_zero() else Poly([1])))
            omega.append(row)
        return ConnectionSystem(omega)


def singular_locus(system: ConnectionSystem, prec=30):
    return system.singular_locus(prec)


def complexity(system: ConnectionSystem):
    return system.complexity()


def legendre_system() -> ConnectionSystem:
    """Hypergeometric companion system for the Legendre family:
    Omega = [[0, 1], [(1/4)/(t(1-t)), (-1+2t)/(t(1-t))]] dt."""
    den = Poly([0, 1, -1])  # t(1-t)
    return ConnectionSystem([
        [RationalFunction(0), RationalFunction(1)],
        [RationalFunction(Poly([Fraction(1, 4)]), den),
         RationalFunction(Poly([-1, 2]), den)],
    ])


# ---------------------------------------------------------------------------
# Exact rational-function linear algebra (tiny dimensions)
# ---------------------------------------------------------------------------

def _rf_det(rows):
    n = len(rows)
    if n == 1:
        return rows[0][0]
    det = RationalFunction(0)
    for j in range(n):
        minor = [r[:j] + r[j + 1:] for r in rows[1:]]
        term = rows[0][j] * _rf_det(minor)
        det = det + term if j % 2 == 0 else det - term
    return det


def _rf_solve(W, b):
    """Solve x·W = b for a row vector x over Q(z) (Cramer)."""
    n = len(W)
    det = _rf_det(W)
    if det.is_zero():
        return None
    sol = []
    for k in range(n):
        Wk = [W[i] if i != k else b for i in range(n)]
        sol.append(_rf_det(Wk) / det)
    return sol


# ---------------------------------------------------------------------------
# Ball series helpers
# ---------------------------------------------------------------------------

def _poly_series_at(p: Poly, z0, K):
    """Ball Taylor coefficients of an exact polynomial at z0, orders
    0..min(K, deg p) (trailing exact zeros dropped)."""
    z0b = z0 if isinstance(z0, Ball) else Ball(z0)
    out = []
    dp = p
    fact = 1
    for k in range(min(K, max(p.degree, 0)) + 1):
        if dp.is_zero():
            break
        out.append(dp(z0b) * Ball.from_exact(Fraction(1, fact)))
        dp = dp.derivative()
        fact *= (k + 1)
    return out or [Ball(0)]


def _series_inv(a, K):
    inv0 = a[0].inverse()
    out = [inv0]
    for k in range(1, K + 1):
        s = Ball(0)
        for j in range(1, min(k, len(a) - 1) + 1):
            s = s + a[j] * out[k - j]
        out.append(-(inv0 * s))
    return out


def _series_mul(a, b, K):
    out = []
    for k in range(K + 1):
        s = Ball(0)
        for j in range(max(0, k - len(b) + 1), min(k, len(a) - 1) + 1):
            s = s + a[j] * b[k - j]
        out.append(s)
    return out


def _ratfun_series(e: RationalFunction, z0, K):
    if e.is_zero():
        return [Ball(0)] * (K + 1)
    num = _poly_series_at(e.num, z0, K)
    if e.den.degree == 0:
        inv = Ball.from_exact(Fraction(1) / e.den.coeffs[0])
        out = [c * inv for c in num]
        return out + [Ball(0)] * (K + 1 - len(out)) if len(out) <= K else out[:K + 1]
    den = _poly_series_at(e.den, z0, K)
    return _series_mul(num, _series_inv(den, K), K)


def _sup_on_circle(fun, center, radius, arcs=32, max_refine=6):
    """Upper bound for sup |fun| on |z - center| = radius via arc
    enclosures; ``fun``: Ball -> Ball."""
    centerb = mpc(center)
    jobs = [(2 * math.pi * k / arcs, 2 * math.pi * (k + 1) / arcs, 0)
            for k in range(arcs)]
    best = 0.0
    while jobs:
        t0, t1, depth = jobs.pop()
        tm = (t0 + t1) / 2
        p = centerb + radius * mpc(math.cos(tm), math.sin(tm))
        half = radius * math.sin((t1 - t0) / 2) * 1.01 + 1e-300
        try:
            v = fun(Ball(p, half))
            best = max(best, v.abs_up())
        except NotCertified:
            if depth >= max_refine:
                raise
            jobs.append((t0, tm, depth + 1))
            jobs.append((tm, t1, depth + 1))
    return best


# ---------------------------------------------------------------------------
# Solution germs
# ---------------------------------------------------------------------------

class SolutionGerm:
    """Truncated fundamental-solution series at an ordinary basepoint:
    X(z0 + u) = sum_k C_k u^k, with a Cauchy-majorant tail bound valid for
    |u| < maj_radius <= dist(z0, Sigma)."""

    __slots__ = ("system", "basepoint", "K", "coeffs", "radius",
                 "maj_M", "maj_radius", "c0_norm", "prec")

    def __init__(self, system, basepoint, K, coeffs, radius, maj_M,
                 maj_radius, c0_norm, prec):
        self.system = system
        self.basepoint = mpc(basepoint)
        self.K = K
        self.coeffs = coeffs
        self.radius = radius
        self.maj_M = maj_M
        self.maj_radius = maj_radius
        self.c0_norm = c0_norm
        self.prec = prec

    def x0(self):
        return self.coeffs[0]

    def _majorant_sup(self, rho_p):
        a = 1.0 / self.maj_radius
        s = self.maj_M / a
        return max(self.c0_norm, 1e-300) * (1.0 - a * rho_p) ** (-s)

    def tail(self, rho, K=None) -> float:
        """Upper bound for sum_{k>K} ||C_k||_inf rho^k."""
        K = self.K if K is None else K
        if rho >= 0.999 * self.maj_radius:
            raise NotCertified("evaluation outside the majorant disc")
        rho_p = (rho + self.maj_radius) / 2.0
        V = self._majorant_sup(rho_p)
        q = rho / rho_p
        return V * q ** (K + 1) / (1.0 - q) * 1.0000001

    def tail_deriv(self, rho, K=None) -> float:
        """Upper bound for sum_{k>K} k ||C_k||_inf rho^{k-1}."""
        K = self.K if K is None else K
        if rho >= 0.999 * self.maj_radius:
            raise NotCertified("evaluation outside the majorant disc")
        if rho == 0.0:
            rho = 1e-30 * self.maj_radius
        rho_p = (rho + self.maj_radius) / 2.0
        V = self._majorant_sup(rho_p)
        q = rho / rho_p
        ssum = q ** (K + 1) * ((K + 1) * (1 - q) + q) / (1 - q) ** 2
        return V * ssum / rho * 1.0000001

    def eval(self, z, derivative=False):
        """Certified X(z) (or X'(z)) as a ball matrix; z may be a Ball."""
        zb = z if isinstance(z, Ball) else Ball(z)
        u = zb - Ball(self.basepoint)
        rho = u.abs_up()
        n = self.system.n
        acc = [[Ball(0) for _ in range(n)] for _ in range(n)]
        if derivative:
            for k in range(self.K, 0, -1):
                for i in range(n):
                    for j in range(n):
                        acc[i][j] = acc[i][j] * u + self.coeffs[k][i][j] * k
            extra = self.tail_deriv(rho)
        else:
            for k in range(self.K, -1, -1):
                for i in range(n):
                    for j in range(n):
                        acc[i][j] = acc[i][j] * u + self.coeffs[k][i][j]
            extra = self.tail(rho)
        return [[Ball(acc[i][j].mid, acc[i][j].rad + extra)
                 for j in range(n)] for i in range(n)]

    def residual_bound(self, samples=5):
        """Max over sample points of ||X' - Omega X||_entrywise inside a
        quarter of the majorant disc (self-consistency check)."""
        worst = 0.0
        n = self.system.n
        for t in range(samples):
            theta = 2 * math.pi * t / samples + 0.37
            z = self.basepoint + 0.25 * self.maj_radius * mpc(
                math.cos(theta), math.sin(theta))
            Xp = self.eval(z, derivative=True)
            X = self.eval(z)
            A = [[self.system.omega[i][j](Ball(z)) for j in range(n)]
                 for i in range(n)]
            AX = mat_mul(A, X)
            worst = max(worst, max((Xp[i][j] - AX[i][j]).abs_up()
                                   for i in range(n) for j in range(n)))
        return worst


def _system_majorant(system, z0, prec):
    """(M, r_maj, dist): ||A_j||_inf <= M / r_maj^j for the Taylor
    coefficients of Omega at z0."""
    sing = system.singular_locus(prec)
    z0c = mpc(z0)
    d = float("inf")
    for s in sing:
        d = min(d, float(abs(z0c - s.mid)) / 1.0000001 - s.rad)
    if d <= 0:
        raise PathTooClose("basepoint too close to singularity")
    r_maj = 0.8 * d if not math.isinf(d) else 2.0 * (1.0 + float(abs(z0c)))
    n = system.n
    M = 1e-30
    for i in range(n):
        s_row = 0.0
        for j in range(n):
            e = system.omega[i][j]
            if e.is_zero():
                continue
            s_row += _sup_on_circle(lambda b, e=e: e(b), z0c, r_maj)
        M = max(M, s_row)
    return M, r_maj, d


def local_solve(system: ConnectionSystem, z0, K, prec=30, x0=None):
    """Certified solution germ with X(z0) = identity (or x0)."""
    if K < 1:
        raise ValueError("K >= 1 required")
    from .balls import _mag_up
    with mp.workdps(prec + _WORKGUARD):
        Mmaj, r_maj, d = _system_majorant(system, z0, prec)
        n = system.n
        eps = 2.0 ** (4 - mp.prec)
        A = [[system.entry_series(i, j, z0, K - 1) for j in range(n)]
             for i in range(n)]
        # split into parallel mid/rad/mag arrays indexed [order][i][j]
        Am = [[[A[i][j][k].mid if k < len(A[i][j]) else mpc(0)
                for j in range(n)] for i in range(n)] for k in range(K)]
        Ar = [[[A[i][j][k].rad if k < len(A[i][j]) else 0.0
                for j in range(n)] for i in range(n)] for k in range(K)]
        Ag = [[[_mag_up(Am[k][i][j]) for j in range(n)] for i in range(n)]
              for k in range(K)]
        C0 = mat_eye(n) if x0 is None else [row[:] for row in x0]
        cm = [[[C0[i][j].mid for j in range(n)] for i in range(n)]]
        cr = [[[C0[i][j].rad for j in range(n)] for i in range(n)]]
        cg = [[[_mag_up(C0[i][j].mid) for j in range(n)] for i in range(n)]]
        zero = mpc(0)
        for k in range(K):
            nm = [[zero] * n for _ in range(n)]
            nr = [[0.0] * n for _ in range(n)]
            for j in range(k + 1):
                am, ar, ag = Am[j], Ar[j], Ag[j]
                km, kr, kg = cm[k - j], cr[k - j], cg[k - j]
                for a in range(n):
                    ama, ara, aga = am[a], ar[a], ag[a]
                    for b in range(n):
                        sm = nm[a][b]
                        sr = nr[a][b]
                        for l in range(n):
                            x, y = ama[l], km[l][b]
                            sm = sm + x * y
                            xg, yg = aga[l], kg[l][b]
                            xr, yr = ara[l], kr[l][b]
                            sr += xg * yr + yg * xr + xr * yr + eps * (xg * yg)
                        nm[a][b] = sm
                        nr[a][b] = sr * (1 + 1e-12) + eps * _mag_up(sm)
            inv = 1.0 / (k + 1)
            invm = mpc(1) / (k + 1)
            rowm = [[nm[a][b] * invm for b in range(n)] for a in range(n)]
            rowr = [[(nr[a][b] * inv) * (1 + 1e-12) +
                     eps * _mag_up(rowm[a][b]) for b in range(n)]
                    for a in range(n)]
            cm.append(rowm)
            cr.append(rowr)
            cg.append([[_mag_up(rowm[a][b]) for b in range(n)]
                       for a in range(n)])
        coeffs = [[[Ball(cm[k][a][b], cr[k][a][b]) for b in range(n)]
                   for a in range(n)] for k in range(K + 1)]
        c0n = mat_norm_inf(C0)
        return SolutionGerm(system, z0, K, coeffs, d, Mmaj, r_maj, c0n, prec)


def _choose_order(M, r_maj, step, target) -> int:
    """Smallest K with the majorant tail at |u| = step below target."""
    a = 1.0 / r_maj
    rho_p = (step + r_maj) / 2
    s = M / a
    try:
        logV = -s * math.log(1.0 - a * rho_p)
    except ValueError:
        raise RaisePrecision("degenerate majorant disc")
    q = step / rho_p
    K = int(math.ceil((math.log(target) - logV + math.log(1 - q))
                      / math.log(q)))
    if K > 100000:
        raise RaisePrecision("series order would be impractical; shrink step")
    return max(K, 8)


def _point_segment_dist(p, a, b):
    ap, ab = p - a, b - a
    denom = abs(ab) ** 2
    if denom == 0:
        return float(abs(ap)) / 1.0000001
    t = (ap.real * ab.real + ap.imag * ab.imag) / denom
    t = min(1.0, max(0.0, float(t)))
    return float(abs(p - (a + t * ab))) / 1.0000001


def _segment_clearance(a, b, sing):
    best = float("inf")
    for s in sing:
        best = min(best, _point_segment_dist(s.mid, a, b) - s.rad)
    return best


def continue_along(germ: SolutionGerm, path, prec=None, step_frac=0.2,
                   tail_target=None):
    """Analytic continuation of a germ along a polyline.

    The path starts at the germ's basepoint and must keep a positive
    certified margin from Sigma.  The accumulated error lives in the ball
    radii of the result and must come out below 10^(-prec/2), else
    RaisePrecision."""
    prec = germ.prec if prec is None else prec
    system = germ.system
    with mp.workdps(prec + _WORKGUARD):
        pts = [mpc(p) for p in path]
        if abs(pts[0] - germ.basepoint) > mpmath.mpf(10) ** (-prec / 2.0):
            raise ValueError("path must start at the germ basepoint")
        sing = system.singular_locus(prec)
        X = germ.x0()
        cur = germ.basepoint
        target = tail_target if tail_target is not None else 10.0 ** (-(prec + 10))
        for seg_end in pts[1:]:
            clearance = _segment_clearance(cur, seg_end, sing)
            if clearance <= 10.0 ** (-prec / 4.0):
                raise PathTooClose("path too close to Sigma")
            while abs(cur - seg_end) > 0:
                M, r_maj, d = _system_majorant(system, cur, prec)
                remaining = float(abs(seg_end - cur))
                step_len = min(step_frac * d, remaining)
                if step_len >= remaining:
                    nxt = seg_end
                else:
                    nxt = cur + mpc(seg_end - cur) / remaining * step_len
                rho = float(abs(nxt - cur)) * 1.0000001
                K = _choose_order(M, r_maj, rho, target)
                step_germ = local_solve(system, cur, K, prec)
                T = step_germ.eval(nxt)
                X = mat_mul(T, X)
                cur = nxt
        err = max(x.rad for row in X for x in row)
        if err > 10.0 ** (-prec / 2.0):
            raise RaisePrecision("continuation error budget exhausted; "
                                 "raise precision")
        return local_solve(system, cur, max(germ.K, 8), prec, x0=X)


class MonodromyMatrix:
    """Certified monodromy around a loop, acting on initial conditions:
    continuing a solution with value v at the basepoint yields M·v."""

    __slots__ = ("matrix", "loop", "k", "unipotency_defect", "prec")

    def __init__(self, matrix, loop, k, defect, prec):
        self.matrix = matrix
        self.loop = loop
        self.k = k
        self.unipotency_defect = defect
        self.prec = prec

    @property
    def entry_error(self):
        return max(x.rad for row in self.matrix for x in row)

    def det_ball(self):
        return mat_det(self.matrix)


def loop_around(s, basepoint, radius=None, sides=16, orientation=1):
    """Closed polyline from basepoint, once around s (counterclockwise for
    orientation=+1), back to basepoint."""
    s, basepoint = mpc(s), mpc(basepoint)
    dist = abs(basepoint - s)
    if radius is None:
        radius = 0.5 * float(dist)
    direction = (basepoint - s) / dist
    entry = s + radius * direction
    theta0 = float(mpmath.arg(direction))
    circle = [s + radius * mpc(math.cos(theta0 + orientation * 2 * math.pi * k / sides),
                               math.sin(theta0 + orientation * 2 * math.pi * k / sides))
              for k in range(sides + 1)]
    if abs(entry - basepoint) < 1e-12 * (1 + float(dist)):
        return circle
    return [basepoint] + circle + [basepoint]


def monodromy(system: ConnectionSystem, loop, basepoint, prec=30,
              k_cap=24) -> MonodromyMatrix:
    """Monodromy along a closed polyline (or a standard loop around a given
    singular point), with quasi-unipotency certification: the smallest
    k <= k_cap such that (M^k - I)^n contains zero entrywise is recorded."""
    with mp.workdps(prec + _WORKGUARD):
        if isinstance(loop, (list, tuple)):
            pts = [mpc(p) for p in loop]
        else:
            sing = system.singular_locus(prec)
            sc = mpc(loop)
            d_other = min((float(abs(sc - t.mid)) - t.rad for t in sing
                           if abs(sc - t.mid) > 1e-9), default=float("inf"))
            d_base = float(abs(mpc(basepoint) - sc))
            radius = min(0.5 * d_other, 0.95 * d_base)
            pts = loop_around(loop, basepoint, radius=radius)
        germ = local_solve(system, basepoint, 8, prec)
        end = continue_along(germ, pts, prec)
        M = end.x0()
        if mat_det(M).contains_zero():
            raise RaisePrecision("monodromy determinant not certifiably "
                                 "nonzero")
        n = system.n
        k_found = defect = None
        Mk = mat_eye(n)
        for k in range(1, k_cap + 1):
            Mk = mat_mul(Mk, M)
            N = [[Mk[i][j] - (1 if i == j else 0) for j in range(n)]
                 for i in range(n)]
            Nn = N
            for _ in range(n - 1):
                Nn = mat_mul(Nn, N)
            if all(x.contains_zero() for row in Nn for x in row):
                k_found = k
                defect = max(x.abs_up() for row in Nn for x in row)
                break
        return MonodromyMatrix(M, pts, k_found, defect, prec)


# ---------------------------------------------------------------------------
# Exact local (Laurent) data at a rational singular point
# ---------------------------------------------------------------------------

def _exact_poly_shift(p: Poly, s: Fraction) -> Poly:
    return p.shift(s)


def _exact_series_inv(c, K):
    """Inverse of an exact series (list of Fractions, c[0] != 0) mod u^{K+1}."""
    inv = [Fraction(1) / c[0]]
    for k in range(1, K + 1):
        acc = Fraction(0)
        for j in range(1, min(k, len(c) - 1) + 1):
            acc += c[j] * inv[k - j]
        inv.append(-acc * inv[0])
    return inv


def _exact_series_mul(a, b, K):
    out = []
    for k in range(K + 1):
        acc = Fraction(0)
        for j in range(max(0, k - len(b) + 1), min(k, len(a) - 1) + 1):
            acc += a[j] * b[k - j]
        out.append(acc)
    return out


def _exact_omega_laurent(system, s: Fraction, K):
    """Exact Laurent coefficients of Omega at a rational singular point:
    returns (layout, pole_order) with layout[l] = matrix coefficient of
    u^{l - pole_order}."""
    n = system.n
    shifted = []
    pole_order = 0
    for i in range(n):
        for j in range(n):
            e = system.omega[i][j]
            if e.is_zero():
                shifted.append((i, j, 0, None, None))
                continue
            num = e.num.shift(s)
            den = e.den.shift(s)
            m = 0
            while den.coeffs and den.coeffs[0] == 0:
                den = Poly(den.coeffs[1:])
                m += 1
            pole_order = max(pole_order, m)
            shifted.append((i, j, m, num, den))
    L = K + pole_order
    layout = [[[Fraction(0) for _ in range(n)] for _ in range(n)]
              for _ in range(L + 1)]
    for i, j, m, num, den in shifted:
        if num is None:
            continue
        a = list(num.coeffs) + [Fraction(0)] * (L + 1)
        d = list(den.coeffs) + [Fraction(0)] * (L + 1)
        quot = _exact_series_mul(a, _exact_series_inv(d, L), L)
        off = pole_order - m
        for l in range(0, L + 1 - off):
            layout[l + off][i][j] += quot[l]
    return layout, pole_order


def _exact_mat_mul(A, B):
    n, k, m = len(A), len(B), len(B[0])
    return [[sum(A[i][l] * B[l][j] for l in range(k)) for j in range(m)]
            for i in range(n)]


def _exact_mat_is_zero(A):
    return all(x == 0 for row in A for x in row)


def _exact_shear_diag(layout, pows, m):
    """Gauge by T = diag(u^{pows}) on an exact Laurent layout with pole
    order m; returns a layout with pole order m+1 (slot added)."""
    n = len(layout[0])
    L = len(layout)
    out = [[[Fraction(0) for _ in range(n)] for _ in range(n)]
           for _ in range(L + 1)]
    for l in range(L):
        for i in range(n):
            for j in range(n):
                v = layout[l][i][j]
                if v == 0:
                    continue
                tgt = l + (pows[j] - pows[i]) + 1
                if 0 <= tgt < L + 1:
                    out[tgt][i][j] += v
    for i in range(n):
        if pows[i]:
            out[m][i][i] -= pows[i]
    return out


def _exact_pole_order(layout, m):
    n = len(layout[0])
    for l in range(len(layout)):
        if any(layout[l][i][j] != 0 for i in range(n) for j in range(n)):
            return m - l
    return 0


def _exact_charpoly(R):
    """Characteristic polynomial (ascending Fractions) via
    Faddeev-LeVerrier."""
    n = len(R)
    coeffs = [Fraction(0)] * (n + 1)
    coeffs[n] = Fraction(1)
    Mk = [[Fraction(1 if i == j else 0) for j in range(n)] for i in range(n)]
    for k in range(1, n + 1):
        Mk = _exact_mat_mul(R, Mk)
        tr = sum(Mk[i][i] for i in range(n))
        c = -tr / k
        coeffs[n - k] = c
        for i in range(n):
            Mk[i][i] += c
    return Poly(coeffs)


def _exact_eigen_data(R, n):
    """[(rational eigenvalue, multiplicity)]; raises if the spectrum is not
    rational (quasi-unipotency would be violated)."""
    cp = _exact_charpoly(R)
    eigs = []
    for q, m in cp.factor_list():
        if q.degree == 0:
            continue
        if q.degree != 1:
            raise IrregularSingularity(
                "irrational local exponents at the singular point")
        lam = -q.coeffs[0] / q.coeffs[1]
        if lam.denominator > math.factorial(n):
            raise IrregularSingularity("exponent denominator exceeds n!")
        eigs.append((lam, m))
    eigs.sort()
    return eigs


def _exact_projectors(R, eigs):
    """Exact spectral projectors pi_i = p_i(R), CRT interpolants."""
    n = len(R)
    projs = []
    for lam, m in eigs:
        rest = Poly([1])
        for mu, mm in eigs:
            if mu != lam:
                f = Poly([-mu, 1])
                for _ in range(mm):
                    rest = rest * f
        g = _poly_inverse_mod_power(rest, lam, m)
        p_i = g * rest
        projs.append(_exact_poly_of_matrix(p_i, R))
    return projs


def _poly_inverse_mod_power(rest: Poly, lam: Fraction, m: int) -> Poly:
    sh = rest.shift(lam)
    c = list(sh.coeffs) + [Fraction(0)] * (m + 1)
    inv = [Fraction(1) / c[0]]
    for k in range(1, m):
        s = Fraction(0)
        for j in range(1, k + 1):
            s += c[j] * inv[k - j]
        inv.append(-s * inv[0])
    return Poly(inv).shift(-lam)


def _exact_poly_of_matrix(p: Poly, R):
    n = len(R)
    acc = [[Fraction(0) for _ in range(n)] for _ in range(n)]
    for c in reversed(p.coeffs):
        acc = _exact_mat_mul(acc, R)
        for i in range(n):
            acc[i][i] += c
    return acc


def _exact_shear_projs(layout, projs, pows, m):
    """Gauge by T = sum_i u^{pows_i} pi_i (orthogonal exact projectors) on a
    simple-pole layout (m == 1).  pows must lie in {-1, 0, 1}.  Returns a
    simple-pole layout, one slot shorter."""
    n = len(layout[0])
    L = len(layout)
    out = [[[Fraction(0) for _ in range(n)] for _ in range(n)]
           for _ in range(L)]
    for bi, (pi_i, k_i) in enumerate(zip(projs, pows)):
        for bj, (pi_j, k_j) in enumerate(zip(projs, pows)):
            shift = k_j - k_i
            for l_out in range(L):
                l_in = l_out - shift
                if 0 <= l_in < L:
                    blk = _exact_mat_mul(pi_i, _exact_mat_mul(layout[l_in], pi_j))
                    if _exact_mat_is_zero(blk):
                        continue
                    tgt = out[l_out]
                    for a in range(n):
                        for b in range(n):
                            tgt[a][b] += blk[a][b]
            if shift == -1:
                # the residue block would land at u^{-2}; it vanishes because
                # the projectors commute with the residue, but verify.
                blk = _exact_mat_mul(pi_i, _exact_mat_mul(layout[0], pi_j))
                if bi != bj and not _exact_mat_is_zero(blk):
                    raise IrregularSingularity(
                        "shear produced a higher-order pole")
    for pi_i, k_i in zip(projs, pows):
        if k_i:
            for a in range(n):
                for b in range(n):
                    out[0][a][b] -= k_i * pi_i[a][b]
    return out


# ---------------------------------------------------------------------------
# Frobenius expansion
# ---------------------------------------------------------------------------

class LocalExpansion:
    """Frobenius expansion X(s+u) = T(u)·U(u)·u^R on a punctured disc with a
    straight branch cut from s.

    T collects the exact shear layers (Laurent monomials in spectral
    projectors), U is a certified ball power series with U(0) = I and a
    truncation tail bound, R is the exact sheared residue with rational
    eigenvalues in [0,1).  Entries of X take the form
    sum_lambda u^lambda P_lambda(log u) with deg P_lambda <= n-1.
    """

    __slots__ = ("system", "s", "exponents", "shear_terms", "Rt", "Rt_eigs",
                 "Rt_projs", "U", "depth", "radius", "tail_W", "tail_sigma",
                 "rho_p", "cut_angle", "prec", "nilpotent_deg")

    def __init__(self, **kw):
        for k in self.__slots__:
            setattr(self, k, kw[k])

    def branch_log(self, u: Ball) -> Ball:
        """log u with arg in (cut_angle - 2pi, cut_angle]."""
        rot = mpmath.exp(mpc(0, -(self.cut_angle - math.pi)))
        v = u * Ball(rot)
        lv = v.log()
        return lv + Ball(mpc(0, self.cut_angle - math.pi))

    def u_tail(self, rho: float) -> float:
        q = rho / self.rho_p
        if q >= 1:
            raise NotCertified("outside certified disc of the expansion")
        return (self.tail_sigma * self.tail_W *
                q ** (self.depth + 1) / (1 - q) * 1.0000001)

    def _u_power_matrix(self, u, logu):
        n = self.system.n
        out = [[Ball(0) for _ in range(n)] for _ in range(n)]
        for (lam, _m), pi in zip(self.Rt_eigs, self.Rt_projs):
            pib = [[Ball.from_exact(x) for x in row] for row in pi]
            ulam = (logu * Ball.from_exact(lam)).exp()
            Ni = [[Ball.from_exact(self.Rt[i][j] - (lam if i == j else 0))
                   for j in range(n)] for i in range(n)]
            Ni = mat_mul(Ni, pib)
            term = [row[:] for row in pib]
            powN = pib
            fact = 1
            for d in range(1, n):
                powN = mat_mul(Ni, powN)
                fact *= d
                scale = (logu ** d) * Ball.from_exact(Fraction(1, fact))
                term = [[term[i][j] + powN[i][j] * scale
                         for j in range(n)] for i in range(n)]
            for i in range(n):
                for j in range(n):
                    out[i][j] = out[i][j] + ulam * term[i][j]
        return out

    def _shear_value(self, u, logu):
        """T(u) as a ball matrix (product over exact shear layers)."""
        n = self.system.n
        out = mat_eye(n)
        for power_terms in self.shear_terms:
            layer = [[Ball(0) for _ in range(n)] for _ in range(n)]
            for k, Mx in power_terms:
                up = (logu * k).exp() if k else Ball(1)
                for i in range(n):
                    for j in range(n):
                        layer[i][j] = layer[i][j] + up * Ball.from_exact(Mx[i][j])
            out = mat_mul(out, layer)
        return out

    def eval(self, z, x0=None):
        zb = z if isinstance(z, Ball) else Ball(z)
        u = zb - Ball.from_exact(self.s)
        rho = u.abs_up()
        if rho >= self.radius:
            raise NotCertified("outside the certified punctured disc")
        logu = self.branch_log(u)
        n = self.system.n
        Uv = [[Ball(0) for _ in range(n)] for _ in range(n)]
        for k in range(self.depth, -1, -1):
            for i in range(n):
                for j in range(n):
                    Uv[i][j] = Uv[i][j] * u + self.U[k][i][j]
        extra = self.u_tail(rho)
        Uv = [[Ball(Uv[i][j].mid, Uv[i][j].rad + extra) for j in range(n)]
              for i in range(n)]
        X = mat_mul(self._shear_value(u, logu),
                    mat_mul(Uv, self._u_power_matrix(u, logu)))
        if x0 is not None:
            X = mat_mul(X, x0)
        return X

    def log_degree(self):
        return self.nilpotent_deg

    def term_table(self, max_order=2):
        """dict exponent -> list over log-degree d of ball matrices C_d:
        X = sum u^expo (log u)^d C_d + (higher exponents)."""
        n = self.system.n
        shear_expand = [(0, [[Fraction(1 if i == j else 0) for j in range(n)]
                             for i in range(n)])]
        for power_terms in self.shear_terms:
            new = []
            for k1, M1 in shear_expand:
                for k2, M2 in power_terms:
                    new.append((k1 + k2, _exact_mat_mul(M1, M2)))
            # merge equal powers
            merged = {}
            for k, Mx in new:
                if k not in merged:
                    merged[k] = [[Fraction(0)] * n for _ in range(n)]
                for a in range(n):
                    for b in range(n):
                        merged[k][a][b] += Mx[a][b]
            shear_expand = sorted(merged.items())

        terms = {}

        def add(expo, d, M):
            key = Fraction(expo)
            if key not in terms:
                terms[key] = [[[Ball(0) for _ in range(n)] for _ in range(n)]
                              for _ in range(n)]
            tgt = terms[key][d]
            for a in range(n):
                for b in range(n):
                    tgt[a][b] = tgt[a][b] + M[a][b]

        for (lam, _m), pi in zip(self.Rt_eigs, self.Rt_projs):
            pib = [[Ball.from_exact(x) for x in row] for row in pi]
            Ni = [[Ball.from_exact(self.Rt[i][j] - (lam if i == j else 0))
                   for j in range(n)] for i in range(n)]
            Ni = mat_mul(Ni, pib)
            powN = pib
            fact = 1
            for d in range(n):
                if d > 0:
                    powN = mat_mul(Ni, powN)
                    fact *= d
                base = [[powN[a][b] * Ball.from_exact(Fraction(1, fact))
                         for b in range(n)] for a in range(n)]
                if all(x.contains_zero() and x.rad == 0 for row in base
                       for x in row):
                    continue
                for kpow, SM in shear_expand:
                    SMb = [[Ball.from_exact(x) for x in row] for row in SM]
                    for m_ser in range(0, self.depth + 1):
                        expo = lam + kpow + m_ser
                        if expo > max_order:
                            break
                        M = mat_mul(SMb, mat_mul(self.U[m_ser], base))
                        add(expo, d, M)
        return dict(sorted(terms.items()))

    def entry_leading(self, i, j, max_order=2):
        """(exponent, [c_0..c_{n-1}]) for the lowest u-power whose
        log-polynomial at entry (i,j) has a coefficient excluding zero."""
        for expo, logmats in self.term_table(max_order).items():
            col = [logmats[d][i][j] for d in range(len(logmats))]
            if any(not c.contains_zero() for c in col):
                return expo, col
        return None, None


def local_expansion(system: ConnectionSystem, s, depth=40,
                    cut_angle=math.pi, prec=30) -> LocalExpansion:
    """Frobenius expansion at a rational singular point s in Sigma.

    The branch cut is the ray from s in direction ``cut_angle`` (default
    pi: the negative real direction of z - s).  Irrational singular points
    are not supported by this operation."""
    s = Fraction(s) if not isinstance(s, Fraction) else s
    with mp.workdps(prec + _WORKGUARD):
        sing = system.singular_locus(prec)
        sb = Ball.from_exact(s)
        hit = [t for t in sing if t.overlaps(sb)]
        if not hit:
            raise ValueError("s is not in the singular locus")
        n = system.n
        others = [t for t in sing if t is not hit[0]]
        rad = min((float(abs(t.mid - sb.mid)) / 1.0000001 - t.rad
                   for t in others),
                  default=2.0 * (1 + float(abs(sb.mid))))

        KS = depth + 2 * n + 4
        layout, m = _exact_omega_laurent(system, s, KS)

        shear_layers = []  # list of [(power, exact matrix)] per layer
        tries = 0
        while m > 1:
            progressed = False
            for mask in range(1, 1 << n):
                pows = [(1 if (mask >> i) & 1 else 0) for i in range(n)]
                cand = _exact_shear_diag(layout, pows, m)
                order = _exact_pole_order(cand, m + 1)
                if order < m:
                    # relayout so index 0 is the u^(-new order) coefficient
                    if order == 0:
                        layout, m = cand[m:], 1
                    else:
                        layout, m = cand[m + 1 - order:], order
                    shear_layers.append(
                        [(pows[i], _coord_proj(n, i)) for i in range(n)])
                    progressed = True
                    break
            tries += 1
            if not progressed or tries > n * n + 4:
                raise IrregularSingularity(
                    "irregular singularity (pole order not reducible)")

        # exponent normalization to [0,1) by unit shears on spectral blocks
        for _pass in range(8 * n + 8):
            R = layout[0]
            eigs = _exact_eigen_data(R, n)
            if all(0 <= lam < 1 for lam, _m2 in eigs):
                break
            projs = _exact_projectors(R, eigs)
            pows = []
            for lam, _m2 in eigs:
                f = math.floor(lam)
                pows.append(max(-1, min(1, f)))
            layout = _exact_shear_projs(layout, projs, pows, 1)
            shear_layers.append(list(zip(pows, projs)))
        else:
            raise IrregularSingularity("exponent normalization stalled")

        R = layout[0]
        eigs = _exact_eigen_data(R, n)
        projs = _exact_projectors(R, eigs)

        # ball regular part B_m = coefficient of u^m, m >= 0
        B = [[[Ball.from_exact(layout[l][i][j]) for j in range(n)]
              for i in range(n)] for l in range(1, len(layout))]
        Rb = [[Ball.from_exact(R[i][j]) for j in range(n)] for i in range(n)]

        U = [mat_eye(n)]
        for k in range(depth):
            rhs = [[Ball(0) for _ in range(n)] for _ in range(n)]
            for mm in range(0, min(k, len(B) - 1) + 1):
                term = mat_mul(B[mm], U[k - mm])
                for a in range(n):
                    for b in range(n):
                        rhs[a][b] = rhs[a][b] + term[a][b]
            U.append(_solve_sylvester(Rb, k + 1, rhs))

        r_reg = 0.8 * rad
        MB = _ball_laurent_sup(B, r_reg)
        kappa = 2.0 * mat_norm_inf(Rb)
        rho_p = 0.6 * rad
        a = 1.0 / r_reg
        if depth + 1 <= kappa:
            raise RaisePrecision("depth too small versus residue norm; "
                                 "increase depth")
        sigma = MB * rho_p / ((depth + 1 - kappa) * (1 - a * rho_p))
        if sigma >= 0.5:
            raise RaisePrecision("Frobenius tail not contracting; increase "
                                 "depth")
        Wmax = max(mat_norm_inf(U[k]) * rho_p ** k for k in range(depth + 1))

        nil_deg = 0
        for (lam, _m2), pi in zip(eigs, projs):
            Nx = [[R[x][y] - (lam if x == y else 0) for y in range(n)]
                  for x in range(n)]
            Nx = _exact_mat_mul(Nx, pi)
            powN = Nx
            for d in range(1, n):
                if not _exact_mat_is_zero(powN):
                    nil_deg = max(nil_deg, d)
                powN = _exact_mat_mul(powN, Nx)

        return LocalExpansion(
            system=system, s=s, exponents=[lam for lam, _m2 in eigs],
            shear_terms=shear_layers, Rt=R, Rt_eigs=eigs, Rt_projs=projs,
            U=U, depth=depth, radius=rho_p, tail_W=Wmax,
            tail_sigma=sigma / (1 - sigma), rho_p=rho_p,
            cut_angle=float(cut_angle), prec=prec, nilpotent_deg=nil_deg)


def _coord_proj(n, i):
    return [[Fraction(1 if (a == b == i) else 0) for b in range(n)]
            for a in range(n)]


def _ball_laurent_sup(B, r):
    best = 1e-30
    for m, Bm in enumerate(B):
        v = mat_norm_inf(Bm) * r ** m
        best = max(best, v)
    return best * 1.0000001


def _solve_sylvester(R, k, rhs):
    """Solve k V - R V + V R = rhs in ball arithmetic (vectorized)."""
    n = len(R)
    N = n * n
    A = [[Ball(0) for _ in range(N)] for _ in range(N)]
    for a in range(n):
        for b in range(n):
            row = a * n + b
            A[row][row] = A[row][row] + Ball(k)
            for c in range(n):
                A[row][c * n + b] = A[row][c * n + b] - R[a][c]
                A[row][a * n + c] = A[row][a * n + c] + R[c][b]
    bvec = [[rhs[a][b]] for a in range(n) for b in range(n)]
    sol = mat_solve(A, bvec)
    return [[sol[a * n + b][0] for b in range(n)] for a in range(n)]
