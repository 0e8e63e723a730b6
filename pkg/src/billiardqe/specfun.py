"""Cylinder functions (J_m, Y_m, H_m^(1)) and their zeros.

Everything the Helmholtz boundary kernels need is evaluated here in plain
float64, with no external special-function library: power series at small
argument, Steed's continued fractions in the intermediate range, Hankel
asymptotic sums at large argument, and Miller backward recurrence for general
order.  Accuracy is measured relative to the Hankel modulus sqrt(J^2 + Y^2);
pointwise relative error near a zero of an oscillatory function is limited by
the rounding of the argument itself, and for x beyond ~1e4 the phase x mod 2pi
carries an irreducible eps*x uncertainty.  Both facts hold for any double
precision implementation and are accounted for in the test tolerances.
"""

from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np

EULER_GAMMA = 0.5772156649015329

ORDER_MAX = 200
ARG_MIN = 1e-8
ARG_MAX = 1e6

# branch switch points, chosen so the series still has ~1e-13 headroom at the
# top of its range and the asymptotic sum bottoms out below 1e-15 at x = 19
_X_SERIES = 7.0
_X_ASYM = 19.0


def _series_jy01(x):
    """J0, Y0, J1, Y1 by power series, x <= ~7.5."""
    x = np.asarray(x, dtype=float)
    q = 0.25 * x * x
    logfac = np.log(0.5 * x) + EULER_GAMMA

    j0 = np.ones_like(x)
    y0s = np.zeros_like(x)          # sum_k (-1)^{k+1} H_k q^k / (k!)^2
    j1 = np.ones_like(x)            # missing the overall x/2
    y1s = np.ones_like(x)           # sum_k (-1)^k (H_k + H_{k+1}) q^k / (k!(k+1)!), k=0 term H_0+H_1 = 1
    t0 = np.ones_like(x)
    t1 = np.ones_like(x)
    hk = 0.0
    for k in range(1, 34):
        t0 = t0 * (-q) / (k * k)
        t1 = t1 * (-q) / (k * (k + 1))
        hk += 1.0 / k
        j0 += t0
        j1 += t1
        y0s -= t0 * hk
        y1s += t1 * (2.0 * hk + 1.0 / (k + 1))
    j1 *= 0.5 * x
    y0 = (2.0 / math.pi) * (logfac * j0 + y0s)
    y1 = (2.0 / math.pi) * (logfac * j1 - 1.0 / x - 0.25 * x * y1s)
    return j0, y0, j1, y1


def _steed_jy01(x, cf1_iters=44, cf2_iters=24):
    """J0, Y0, J1, Y1 by Steed's method (CF1 + complex CF2), 7 <= x < 19."""
    x = np.asarray(x, dtype=float)

    # CF1: r = J1/J0 = 1/(b1 - 1/(b2 - ...)), b_k = 2k/x  (modified Lentz)
    f = np.full_like(x, 1e-30)
    c = f.copy()
    d = np.zeros_like(x)
    for k in range(1, cf1_iters + 1):
        b = 2.0 * k / x
        a = 1.0 if k == 1 else -1.0
        d = b + a * d
        d = np.where(np.abs(d) < 1e-290, 1e-290, d)
        c = b + a / c
        c = np.where(np.abs(c) < 1e-290, 1e-290, c)
        d = 1.0 / d
        f = f * (c * d)
    r = f                           # J1/J0
    fp = -r                         # J0'/J0

    # CF2: H0'/H0 = i - 1/(2x) + (i/x) * K,
    # K = a1/(b1 + a2/(b2 + ...)), a_k = (k-1/2)^2, b_k = 2(x + ik)
    zf = np.full(x.shape, 1e-30 + 0j)
    zc = zf.copy()
    zd = np.zeros(x.shape, dtype=complex)
    for k in range(1, cf2_iters + 1):
        a = (k - 0.5) ** 2
        b = 2.0 * (x + 1j * k)
        zd = b + a * zd
        zd = np.where(np.abs(zd) < 1e-290, 1e-290, zd)
        zc = b + a / zc
        zc = np.where(np.abs(zc) < 1e-290, 1e-290, zc)
        zd = 1.0 / zd
        zf = zf * (zc * zd)
    # the Lentz value is a1/(b1 + a2/(b2 + ...)) with a1 = 1/4 included;
    # only the (i/x) prefactor of the published CF stays outside
    ratio = 1j - 0.5 / x + (1j / x) * zf
    p = np.real(ratio)
    q = np.imag(ratio)

    w = 2.0 / (math.pi * x)
    gam = (p - fp) / q
    j0mag = np.sqrt(w / ((p - fp) * gam + q))

    # resolve the global sign from the asymptotic phase, using whichever of
    # cos/sin is away from its zero
    th = x - 0.25 * math.pi + (0.125 - (25.0 / 384.0) / (x * x)) / x
    cth = np.cos(th)
    sth = np.sin(th)
    sign_from_j = np.sign(cth)
    sign_from_y = np.sign(sth) * np.sign(gam)
    sign = np.where(np.abs(cth) >= np.abs(sth), sign_from_j, sign_from_y)
    sign = np.where(sign == 0.0, 1.0, sign)
    j0 = sign * j0mag
    y0 = gam * j0
    j1 = r * j0
    y1 = -(p * y0 + q * j0)
    return j0, y0, j1, y1


def _asym_jy01(x, terms=20):
    """J0, Y0, J1, Y1 by the Hankel asymptotic sums, x >= ~19.

    Both orders share the phase trig: chi_1 = chi_0 - pi/2.  The term count
    is tiered by the caller; truncation bottoms out below 2e-15 at x = 19
    with 20 terms and needs only 8 once x >= 60.
    """
    x = np.asarray(x, dtype=float)
    inv8x = 0.125 / x
    p0 = np.ones_like(x)
    q0 = np.zeros_like(x)
    p1 = np.ones_like(x)
    q1 = np.zeros_like(x)
    u0 = np.ones_like(x)
    u1 = np.ones_like(x)
    sgn = 1.0
    for k in range(terms):
        odd2 = (2 * k + 1) ** 2
        fac = inv8x / (k + 1)
        u0 = u0 * (-odd2) * fac
        u1 = u1 * (4.0 - odd2) * fac
        if k % 2 == 0:
            q0 += sgn * u0
            q1 += sgn * u1
        else:
            sgn = -sgn
            p0 += sgn * u0
            p1 += sgn * u1
    amp = np.sqrt(2.0 / (math.pi * x))
    c = np.cos(x - 0.25 * math.pi)
    s = np.sin(x - 0.25 * math.pi)
    return (amp * (p0 * c - q0 * s), amp * (p0 * s + q0 * c),
            amp * (p1 * s + q1 * c), amp * (q1 * s - p1 * c))


def _jy01_raw(x):
    """J0, Y0, J1, Y1 for positive array x, no argument validation."""
    x = np.asarray(x, dtype=float)
    out = [np.empty_like(x) for _ in range(4)]
    lo = x < _X_SERIES
    hi = x >= _X_ASYM
    mid = ~(lo | hi)
    if np.any(lo):
        vals = _series_jy01(x[lo])
        for o, v in zip(out, vals):
            o[lo] = v
    if np.any(mid):
        vals = _steed_jy01(x[mid])
        for o, v in zip(out, vals):
            o[mid] = v
    if np.any(hi):
        for sel, terms in (((x >= _X_ASYM) & (x < 30.0), 20),
                           ((x >= 30.0) & (x < 60.0), 12),
                           (x >= 60.0, 8)):
            if np.any(sel):
                for o, v in zip(out, _asym_jy01(x[sel], terms)):
                    o[sel] = v
    return tuple(out)


def _validate_arg(x):
    x = np.asarray(x, dtype=float)
    if x.size and (np.any(~np.isfinite(x)) or np.any(x < ARG_MIN) or np.any(x > ARG_MAX)):
        raise ValueError(f"argument outside supported range [{ARG_MIN}, {ARG_MAX}]")
    return x


def _validate_order(m):
    if m != int(m) or m < 0 or m > ORDER_MAX:
        raise ValueError(f"order must be an integer in [0, {ORDER_MAX}]")
    return int(m)


def _miller_j(m, x):
    """J_m and J_{m-1} (m >= 2) for array x by backward recurrence.

    Normalized with J_0 + 2*sum_k J_2k = 1.  Cost O(max(m, x_max)).
    """
    x = np.asarray(x, dtype=float)
    xmax = float(np.max(x)) if x.size else 1.0
    # start far enough above the turning point that the unwanted solution has
    # decayed below eps by the time the recursion re-enters the oscillatory zone
    top = max(m, int(xmax)) + 20 + int(4.0 * math.sqrt(max(m, xmax)))
    if top % 2:
        top += 1
    jp = np.zeros_like(x)           # J_{k+1}
    jc = np.full_like(x, 1e-300)    # J_k at k = top
    norm = np.zeros_like(x)         # J_0 + 2 sum J_{2i}
    got_m = np.zeros_like(x)
    got_m1 = np.zeros_like(x)
    for k in range(top, 0, -1):
        jm = (2.0 * k / x) * jc - jp
        jp = jc
        jc = jm
        kk = k - 1                  # jc now holds J_{kk}
        if kk == m:
            got_m = jc.copy()
        elif kk == m - 1:
            got_m1 = jc.copy()
        if kk % 2 == 0 and kk > 0:
            norm += 2.0 * jc
        big = np.abs(jc) > 1e280
        if np.any(big):
            scale = np.where(big, 1e-280, 1.0)
            jc *= scale
            jp *= scale
            norm *= scale
            got_m *= scale
            got_m1 *= scale
    norm += jc                      # jc = J_0
    return got_m / norm, got_m1 / norm


class CylinderFunctionValue(NamedTuple):
    """J_m, Y_m and first derivatives at one argument (or an array of them)."""

    j: float | np.ndarray
    y: float | np.ndarray
    jp: float | np.ndarray
    yp: float | np.ndarray

    @property
    def h1(self):
        """Outgoing Hankel combination J + iY."""
        return self.j + 1j * self.y


def bessel_jy(m, x):
    """Return CylinderFunctionValue(J_m(x), Y_m(x), J_m'(x), Y_m'(x)).

    m is an integer order in [0, 200]; x may be a scalar or array within
    [1e-8, 1e6].  The result unpacks as a plain (J, Y, J', Y') tuple.  For x
    far below a large order, Y_m can overflow float64 and is then returned as
    +-inf.
    """
    m = _validate_order(m)
    xv = _validate_arg(x)
    scalar = xv.ndim == 0
    xa = np.atleast_1d(xv)
    j0, y0, j1, y1 = _jy01_raw(xa)
    if m == 0:
        res = (j0, y0, -j1, -y1)
    elif m == 1:
        res = (j1, y1, j0 - j1 / xa, y0 - y1 / xa)
    else:
        jm = np.empty_like(xa)
        jm1 = np.empty_like(xa)
        up = xa >= 2.0 * m          # oscillatory all the way up: forward recurrence is stable
        if np.any(up):
            xu = xa[up]
            jkm1, jk = j0[up], j1[up]
            for k in range(1, m):
                jkm1, jk = jk, (2.0 * k / xu) * jk - jkm1
            jm[up] = jk
            jm1[up] = jkm1
        if np.any(~up):
            jm[~up], jm1[~up] = _miller_j(m, xa[~up])
        with np.errstate(over="ignore", invalid="ignore"):
            yk1, yk = y0, y1        # Y_{k-1}, Y_k with k = 1
            for k in range(1, m):
                yk1, yk = yk, (2.0 * k / xa) * yk - yk1
            ym, ym1 = yk, yk1
            yp = ym1 - (m / xa) * ym
        # once the recurrence overflows, inf - inf debris appears downstream;
        # the true limits there are Y_m -> -inf, Y_m' -> +inf
        bad = ~np.isfinite(ym)
        if np.any(bad):
            ym = np.where(bad, -np.inf, ym)
            yp = np.where(bad, np.inf, yp)
        res = (jm, ym, jm1 - (m / xa) * jm, yp)
    if scalar:
        return CylinderFunctionValue(*(float(v[0]) for v in res))
    return CylinderFunctionValue(*res)


def hankel1(m, x):
    """H_m^(1)(x) = J_m(x) + i Y_m(x)."""
    j, y, _, _ = bessel_jy(m, x)
    return j + 1j * y


def hankel1_01_raw(x):
    """(H_0^(1), H_1^(1)) on a positive array, skipping range validation.

    Kernel-assembly hot path: one shared branch dispatch for both orders.
    """
    j0, y0, j1, y1 = _jy01_raw(np.asarray(x, dtype=float))
    return j0 + 1j * y0, j1 + 1j * y1


def _brent(fn, a, b, xtol=1e-14):
    """Brent root refinement on a sign-change bracket."""
    from scipy.optimize import brentq

    return brentq(fn, a, b, xtol=xtol, rtol=4 * np.finfo(float).eps)


class _ZeroTable:
    """Lazily extended table of the positive zeros of J_m or J_m'."""

    def __init__(self, m, kind):
        self.m = m
        self.kind = kind            # "J" or "Jp"
        self.zeros = []
        self.scanned_to = 0.0

    def _fn_values(self, grid):
        j, _, jp, _ = bessel_jy(self.m, grid)
        return j if self.kind == "J" else jp

    def _fn_scalar(self, x):
        j, _, jp, _ = bessel_jy(self.m, float(x))
        return j if self.kind == "J" else jp

    def extend_to(self, hi):
        lo = self.scanned_to
        if hi <= lo:
            return
        start = max(lo, ARG_MIN * 2)
        if self.m >= 2 and not self.zeros:
            # J_m and J_m' are positive below sqrt(m(m+2)); skip the dead zone
            start = max(start, 0.9 * math.sqrt(self.m * (self.m + 2.0)))
        step = 0.5 * math.pi        # consecutive zeros are at least pi apart
        n = max(2, int(math.ceil((hi - start) / step)) + 1)
        grid = np.linspace(start, hi, n)
        vals = self._fn_values(grid)
        sgn = np.sign(vals)
        flips = np.nonzero(sgn[:-1] * sgn[1:] < 0)[0]
        for i in flips:
            z = _brent(self._fn_scalar, grid[i], grid[i + 1])
            if not self.zeros or z - self.zeros[-1] > 1e-9:
                self.zeros.append(z)
        self.scanned_to = hi

    def get(self, k):
        while len(self.zeros) < k:
            guess = (k + 0.5 * self.m + 0.75) * math.pi + self.m
            self.extend_to(max(self.scanned_to * 1.5, guess, 10.0))
        return self.zeros[k - 1]

    def upto(self, hi):
        self.extend_to(hi + 1e-9)
        return [z for z in self.zeros if z <= hi]


_zero_tables: dict[tuple[int, str], _ZeroTable] = {}


def _table(m, kind):
    m = _validate_order(m)
    if kind not in ("J", "Jp"):
        raise ValueError("kind must be 'J' (zeros of J_m) or 'Jp' (zeros of J_m')")
    key = (m, kind)
    if key not in _zero_tables:
        _zero_tables[key] = _ZeroTable(m, kind)
    return _zero_tables[key]


def bessel_zero(m, k, kind="J"):
    """k-th positive zero (k >= 1) of J_m (kind='J') or J_m' (kind='Jp').

    Convention: the zeros of J_0' are the zeros of J_1, so
    bessel_zero(0, 1, 'Jp') = 3.8317...; x = 0 is never counted.
    """
    if k < 1 or k != int(k):
        raise ValueError("zero index k must be a positive integer")
    return _table(m, kind).get(int(k))


def bessel_zeros_upto(m, xmax, kind="J"):
    """All positive zeros <= xmax of J_m or J_m', in increasing order."""
    if not (0 < xmax <= ARG_MAX):
        raise ValueError("xmax outside supported range")
    return _table(m, kind).upto(float(xmax))
