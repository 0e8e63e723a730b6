"""Boundary observables, their quantization, and equidistribution
statistics for eigenfunction traces.

Observables are functions a(s, eta) of boundary arclength s and the
tangential velocity component eta in (-1, 1).  Quantization is the
standard left (Kohn-Nirenberg) rule on the boundary circle: traces are
resampled to a uniform arclength grid by trigonometric interpolation,
expanded in boundary Fourier modes xi_n = 2 pi n / |Y|, and a acts as
a(s, xi/lam) on the mode of frequency xi.

The classical comparison value is

    omega_bc(a) = (2 / (pi |Omega|)) Int_Y Int_{-1}^{1}
                      a(s, eta) gamma(eta)^{p} deta ds,

gamma = sqrt(1 - eta^2), with p = +1 for Dirichlet data and p = -1 for
Neumann.  For a == 1 this gives |Y|/|Omega| and 2|Y|/|Omega|; matching
those limits fixes the Dirichlet trace scaling lam^{-2} used throughout.

Equidistribution is quantified by Cesaro means, variances, and deviation
fractions of the per-trace measures against omega_bc(a), plus two
dynamical consistency checks: exact invariance of measures under the
boundary operator, and the comparison of a with its one-step billiard
transfer gamma/(gamma o beta) * (a o beta).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .billiard import GrazingError, phase_point, step
from .geometry import Domain
from .layer_ops import NystromGrid, assemble_F, check_bc

GRAZING_CUTOFF = 0.05
ALIAS_ENERGY_TOL = 1e-6
ALIAS_BAND = 0.8


def _next_pow2(n: int) -> int:
    return 1 << max(int(n - 1).bit_length(), 8)


class UniformBoundaryGrid:
    """Trigonometric resampling from a boundary grid to uniform arclength.

    Traces live on the grid's uniform-in-t nodes; as functions of t they
    are smooth and periodic, so the discrete Fourier interpolant
    evaluates them at the parameter preimages of m equispaced arclength
    points.  The (m x n) evaluation matrix is built once per grid."""

    def __init__(self, grid: NystromGrid, m: int | None = None):
        self.grid = grid
        self.m = int(m) if m is not None else _next_pow2(grid.n)
        if self.m < grid.n:
            raise ValueError("uniform grid must be at least as fine as "
                             "the source grid")
        per = grid.domain.perimeter
        self.s = per * np.arange(self.m) / self.m
        self.ds = per / self.m
        self.xi = 2.0 * math.pi * np.fft.fftfreq(self.m, d=per / self.m)
        n = grid.n
        ks = np.fft.fftfreq(n, d=1.0 / n)
        # split the unmatched Nyquist mode symmetrically
        ks_ext = np.concatenate([ks, [-ks[n // 2]]])
        tau = self.grid.t_of_s(self.s) - math.pi / n
        e = np.exp(1j * np.outer(tau, ks_ext)) / n
        e[:, n // 2] *= 0.5
        e[:, n] *= 0.5
        self._eval = e
        self._phase = None

    def phase_matrix(self) -> np.ndarray:
        """exp(i xi_n s_j), shared by every quantized observable."""
        if self._phase is None:
            jn = np.outer(np.arange(self.m), np.arange(self.m))
            self._phase = np.exp(2j * math.pi * (jn % self.m) / self.m)
        return self._phase

    def resample(self, traces: np.ndarray) -> np.ndarray:
        """(n,) or (n, k) node values -> (m,) or (m, k) uniform values."""
        tr = np.asarray(traces, dtype=complex)
        one = tr.ndim == 1
        c = np.fft.fft(tr, axis=0)
        c = np.concatenate([c, c[self.grid.n // 2:self.grid.n // 2 + 1]],
                           axis=0)
        out = self._eval @ c
        return out[:, 0] if one and out.ndim == 2 else out


_resampler_cache: dict = {}


def uniform_boundary_grid(grid: NystromGrid,
                          m: int | None = None) -> UniformBoundaryGrid:
    key = (id(grid), m)
    if key not in _resampler_cache:
        _resampler_cache[key] = UniformBoundaryGrid(grid, m)
    return _resampler_cache[key]


class QuantizedObservable:
    """Left-quantized boundary operator for one observable at one lam.

    apply/matrix_element work on uniform-arclength samples; traces on
    the source grid go through .measure, which also applies the
    Dirichlet lam^{-2} data scaling.
    """

    def __init__(self, symbol: Callable, uniform: UniformBoundaryGrid,
                 lam: float):
        self.symbol = symbol
        self.uniform = uniform
        self.lam = float(lam)
        eta = self.uniform.xi / self.lam
        self._sym = np.asarray(symbol(self.uniform.s[:, None],
                                      eta[None, :]), dtype=float)
        self._phase = self.uniform.phase_matrix()

    def apply(self, f_uniform: np.ndarray) -> np.ndarray:
        f = np.asarray(f_uniform, dtype=complex)
        c = np.fft.fft(f) / self.uniform.m
        band = np.abs(self.uniform.xi) > ALIAS_BAND * np.max(
            np.abs(self.uniform.xi))
        tot = float(np.sum(np.abs(c) ** 2))
        if tot > 0 and float(np.sum(np.abs(c[band]) ** 2)) > \
                ALIAS_ENERGY_TOL * tot:
            raise ValueError(
                "trace energy above 0.8x the uniform grid Nyquist band; "
                "raise the quantization grid size")
        return (self._sym * self._phase) @ c

    def matrix_element(self, f_uniform, g_uniform=None) -> complex:
        g = f_uniform if g_uniform is None else g_uniform
        return complex(np.sum(self.apply(f_uniform) * np.conj(g))
                       * self.uniform.ds)

    def measure(self, trace: np.ndarray, bc: str) -> float:
        """Real diagonal measure of one trace, with Dirichlet scaling."""
        check_bc(bc)
        f = self.uniform.resample(trace)
        scale = self.lam ** -2 if bc == "dirichlet" else 1.0
        return scale * float(np.real(self.matrix_element(f)))


def quantize(symbol: Callable, grid: NystromGrid, lam: float,
             m: int | None = None) -> QuantizedObservable:
    """Quantize a(s, eta) at frequency lam on a boundary grid."""
    if lam <= 0:
        raise ValueError("frequency must be positive")
    return QuantizedObservable(symbol, uniform_boundary_grid(grid, m), lam)


def omega(domain: Domain, bc: str, symbol: Callable, *, n_s: int = 1024,
          n_eta: int = 96) -> float:
    """Classical limit value omega_bc(a) (module docstring).

    Both eta weights are handled through eta = sin(theta): the Dirichlet
    weight gamma becomes cos^2(theta) and the Neumann 1/gamma becomes 1,
    keeping the quadrature spectrally clean at the grazing endpoints.
    """
    check_bc(bc)
    s = domain.perimeter * (np.arange(n_s) + 0.5) / n_s
    th, w = np.polynomial.legendre.leggauss(n_eta)
    th = 0.5 * math.pi * th
    w = 0.5 * math.pi * w
    eta = np.sin(th)
    wt = w * np.cos(th) ** 2 if bc == "dirichlet" else w
    vals = np.asarray(symbol(s[:, None], eta[None, :]), dtype=float)
    ds = domain.perimeter / n_s
    return float(2.0 / (math.pi * domain.area)
                 * np.sum(vals * wt[None, :]) * ds)


def measure_traces(traces, grid: NystromGrid, symbol: Callable,
                   *, m: int | None = None):
    """Per-trace diagonal measures for a list of EigenTrace records.

    Returns (lams, values) sorted by frequency.  The quantized operator
    is rebuilt per frequency (the symbol sees eta = xi/lam), but the
    resampling matrix is shared.
    """
    order = np.argsort([t.lam for t in traces])
    lams, vals = [], []
    for i in order:
        t = traces[i]
        op = quantize(symbol, grid, t.lam, m=m)
        lams.append(t.lam)
        vals.append(op.measure(t.trace, t.bc))
    return np.array(lams), np.array(vals)


def cesaro_weyl(lams, values):
    """Running Cesaro means ordered by frequency: (lams, cumulative)."""
    lams = np.asarray(lams, dtype=float)
    values = np.asarray(values, dtype=float)
    order = np.argsort(lams)
    v = values[order]
    return lams[order], np.cumsum(v) / np.arange(1, len(v) + 1)


@dataclass
class QEStatistics:
    """Equidistribution statistics of trace measures against omega(a)."""

    lams: np.ndarray
    values: np.ndarray
    omega_value: float

    def cesaro(self):
        return cesaro_weyl(self.lams, self.values)

    def variance(self, lam: float) -> float:
        """Mean squared deviation from omega over frequencies <= lam."""
        sel = self.lams <= lam
        if not np.any(sel):
            raise ValueError("no trace frequencies at or below lam")
        return float(np.mean((self.values[sel] - self.omega_value) ** 2))

    def deviation_fraction(self, eps: float, lam: float) -> float:
        """Fraction of measures below lam deviating more than eps."""
        sel = self.lams <= lam
        if not np.any(sel):
            raise ValueError("no trace frequencies at or below lam")
        return float(np.mean(
            np.abs(self.values[sel] - self.omega_value) > eps))

    def variance_series(self, n_points: int = 40):
        """(lam, variance(lam)) on a frequency grid spanning the data."""
        gs = np.linspace(self.lams.min(), self.lams.max(), n_points)
        return gs, np.array([self.variance(g) for g in gs])


def qe_statistics(traces, grid: NystromGrid, domain: Domain, bc: str,
                  symbol: Callable, *, m: int | None = None) -> QEStatistics:
    lams, vals = measure_traces(traces, grid, symbol, m=m)
    return QEStatistics(lams, vals, omega(domain, bc, symbol))


# -- observables -------------------------------------------------------------

def grazing_cutoff(eta, delta: float = GRAZING_CUTOFF):
    """Smooth even window: 1 for |eta| <= 1-2 delta, 0 for |eta| >= 1-delta."""
    x = (1.0 - delta - np.abs(np.asarray(eta, dtype=float))) / delta
    u = np.clip(x, 0.0, 1.0)
    return u * u * u * (10.0 - 15.0 * u + 6.0 * u * u)


def position_bump(domain: Domain, center_frac: float = 0.0,
                  concentration: float = 2.0) -> Callable:
    """Smooth positive periodic observable of position only."""
    per = domain.perimeter
    s0 = center_frac * per

    def a(s, eta):
        s_b, eta_b = np.broadcast_arrays(np.asarray(s, dtype=float),
                                         np.asarray(eta, dtype=float))
        return np.exp(concentration
                      * (np.cos(2.0 * math.pi * (s_b - s0) / per) - 1.0)) \
            + 0.0 * eta_b
    return a


def constant_observable():
    def a(s, eta):
        return np.ones(np.broadcast_shapes(np.shape(s), np.shape(eta)))
    return a


# -- dynamical consistency ---------------------------------------------------

def invariance_defect(trace: np.ndarray, lam: float, bc: str,
                      grid: NystromGrid, symbol: Callable,
                      *, m: int | None = None) -> float:
    """Relative defect of <Op a F u, F u> against <Op a u, u>.

    Eigenfunction traces satisfy u = -F u, making the two sides equal
    exactly; the defect measures only trace residual and quantization
    error, and is the operator-level invariance check.
    """
    op = quantize(symbol, grid, lam, m=m)
    fu = -assemble_F(lam, grid, check_bc(bc)).apply(trace)
    a_u = op.matrix_element(op.uniform.resample(trace))
    a_fu = op.matrix_element(op.uniform.resample(fu))
    scale = max(abs(a_u), 1e-12)
    return float(abs(a_fu - a_u) / scale)


def transfer_symbol(domain: Domain, symbol: Callable,
                    *, delta: float = GRAZING_CUTOFF, n_s: int = 256,
                    n_eta: int = 192) -> Callable:
    """One-step transfer gamma/(gamma o beta) * (a o beta) as a symbol.

    The billiard map is evaluated on a product grid away from grazing
    (|eta| <= 1 - delta) and interpolated with cubic splines; outside
    the grid the returned symbol is zero, so pair it with symbols
    supported away from grazing.  Corner-terminated orbits contribute
    zero.
    """
    per = domain.perimeter
    s_g = per * np.arange(n_s + 1) / n_s          # wrapped endpoint
    eta_g = np.linspace(-1.0 + delta, 1.0 - delta, n_eta)
    vals = np.zeros((n_s + 1, n_eta))
    for i in range(n_s):
        for j, eta in enumerate(eta_g):
            q = phase_point(s_g[i], eta)
            try:
                res = step(domain, q)
            except GrazingError:
                continue
            if res.next is None:
                continue
            q2 = res.next
            a2 = float(np.asarray(symbol(q2.s, q2.eta)))
            vals[i, j] = (q.gamma / q2.gamma) * a2
    vals[n_s] = vals[0]
    interp = RegularGridInterpolator((s_g, eta_g), vals, method="cubic",
                                     bounds_error=False, fill_value=0.0)
    lo, hi = eta_g[0], eta_g[-1]

    def transferred(s, eta):
        s_b, eta_b = np.broadcast_arrays(np.asarray(s, float),
                                         np.asarray(eta, float))
        out = np.zeros(s_b.shape)
        sel = (eta_b >= lo) & (eta_b <= hi)
        if np.any(sel):
            pts = np.stack([np.mod(s_b[sel], per), eta_b[sel]], axis=-1)
            out[sel] = interp(pts)
        return out
    return transferred


@dataclass
class EgorovReport:
    lams: np.ndarray
    invariance: np.ndarray
    base_values: np.ndarray
    transfer_values: np.ndarray

    @property
    def transfer_defects(self) -> np.ndarray:
        return np.abs(self.base_values - self.transfer_values)

    def defect_decay_exponent(self) -> tuple[float, float]:
        """Decay exponent p (defect ~ lam^-p) by least squares, with
        standard error; p near 1 is the one-step transfer statement."""
        d = np.maximum(self.transfer_defects, 1e-300)
        x = np.log(self.lams)
        y = np.log(d)
        a = np.stack([x, np.ones_like(x)], axis=1)
        coef, res, *_ = np.linalg.lstsq(a, y, rcond=None)
        n = len(x)
        if n > 2 and res.size:
            se = math.sqrt(float(res[0]) / (n - 2)
                           / float(np.sum((x - x.mean()) ** 2)))
        else:
            se = math.inf
        return float(-coef[0]), se


def boundary_wave_packet(grid: NystromGrid, lam: float, eta0: float,
                         *, s_center: float = 0.0,
                         concentration: float = 2.0) -> np.ndarray:
    """Periodic boundary state localized near (s_center, eta0).

    A smooth positive envelope times a pure mode whose index is the
    nearest integer to lam * eta0 * per / (2 pi), so the state is exactly
    periodic and its tangential frequency sits within one mode of the
    requested eta0.  Sampled on the grid nodes.
    """
    per = grid.domain.perimeter
    k0 = round(lam * eta0 * per / (2.0 * math.pi))
    env = np.exp(concentration
                 * (np.cos(2.0 * math.pi * (grid.s - s_center) / per)
                    - 1.0))
    return env * np.exp(1j * k0 * (2.0 * math.pi / per) * grid.s)


def packet_transfer_defects(domain: Domain, grid: NystromGrid, bc: str,
                            symbol: Callable, lams, *, eta0: float = 0.45,
                            s_center: float = 2.0,
                            delta: float = GRAZING_CUTOFF,
                            n_s: int = 256, n_eta: int = 192):
    """One-step transfer defects probed by wave packets at momentum eta0.

    For each frequency, compares <Op(a) F v, F v> against the transferred
    side <Op((gamma/gamma o beta) a o beta) v, v> on a packet v localized
    away from grazing, normalized by <v, v>.  Unlike eigentraces pinned
    to a single mode, packets carry enough frequency spread to expose the
    lam^{-1} remainder of the one-step law.  Returns (lams, defects).
    """
    from .layer_ops import assemble_F

    check_bc(bc)
    tsym = transfer_symbol(domain, symbol, delta=delta, n_s=n_s,
                           n_eta=n_eta)
    lams = np.sort(np.asarray(lams, dtype=float))
    defects = []
    for lam in lams:
        v = boundary_wave_packet(grid, lam, eta0, s_center=s_center)
        fv = assemble_F(lam, grid, bc).apply(v)
        op_a = quantize(symbol, grid, lam)
        op_t = quantize(tsym, grid, lam)
        vu = op_a.uniform.resample(v)
        fvu = op_a.uniform.resample(fv)
        nrm = float(np.sum(np.abs(vu) ** 2) * op_a.uniform.ds)
        defects.append(abs(op_a.matrix_element(fvu)
                           - op_t.matrix_element(vu)) / nrm)
    return lams, np.array(defects)


def egorov_check(traces, grid: NystromGrid, domain: Domain, bc: str,
                 symbol: Callable, *, delta: float = GRAZING_CUTOFF,
                 m: int | None = None, n_s: int = 256,
                 n_eta: int = 64) -> EgorovReport:
    """Invariance and one-step transfer comparison over a trace family.

    The symbol should vanish near grazing (compose with grazing_cutoff);
    the transfer side uses the same cutoff support.  Transfer defects
    decaying like lam^{-1} are the quantitative one-step statement.
    """
    check_bc(bc)
    tsym = transfer_symbol(domain, symbol, delta=delta, n_s=n_s,
                           n_eta=n_eta)
    lams = np.array(sorted(t.lam for t in traces))
    inv, base, trans = [], [], []
    for t in sorted(traces, key=lambda t: t.lam):
        inv.append(invariance_defect(t.trace, t.lam, bc, grid, symbol, m=m))
        op_a = quantize(symbol, grid, t.lam, m=m)
        op_t = quantize(tsym, grid, t.lam, m=m)
        base.append(op_a.measure(t.trace, bc))
        trans.append(op_t.measure(t.trace, bc))
    return EgorovReport(lams, np.array(inv), np.array(base),
                        np.array(trans))
