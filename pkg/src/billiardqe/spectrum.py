"""Eigenvalue location, boundary-trace extraction, and trace normalization.

Interior eigenvalues are the real frequencies where the boundary operator
acquires a -1 eigenvector (both boundary conditions, inward-normal frames;
see layer_ops).  The pipeline scans the smallest weighted singular value of
I + F over frequency, refines each dip, extracts null vectors by blocked
inverse iteration, validates them by operator and interior-Helmholtz
residuals, and rescales so the interior L2 norm is one.

Normalization uses a boundary identity: for an eigenfunction at frequency
lam with outward normal nu,

    2 lam^2 |u|_{L2(Omega)}^2
        = Int_Y (x . nu) (lam^2 |u|^2 + |d_nu u|^2 - |d_s u|^2) ds,

which reduces to the familiar one-sided forms because one of u, d_nu u
vanishes on the boundary.  It is spectrally accurate on the trace grid,
which quasi-Monte Carlo interior sampling (available as a cross-check)
cannot match.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
import time
from dataclasses import dataclass, field, replace
from typing import Callable, NamedTuple

import numpy as np
from scipy.linalg import lu_factor, lu_solve
from scipy.stats import qmc as scipy_qmc

from . import __version__
from .geometry import Domain, build_domain
from .layer_ops import (
    NystromGrid,
    assemble_both,
    assemble_F,
    build_grid,
    check_bc,
    layer_potential_eval,
)
from .specfun import bessel_jy, bessel_zeros_upto

SIGMA_ACCEPT = 1e-6
RESIDUAL_ACCEPT = 1e-5
CLUSTER_FACTOR = 10.0
REFINE_RTOL = 1e-9
DIP_FACTOR = 0.1
STORE_VERSION = "2"

_DENSITY_FLOOR = 0.05


def two_term_weyl(domain: Domain, bc: str, lam: float):
    """Two-term eigenvalue count: (|Omega|/4pi) lam^2 -+ (|Y|/4pi) lam."""
    check_bc(bc)
    lam = np.asarray(lam, dtype=float)
    sign = -1.0 if bc == "dirichlet" else 1.0
    return (domain.area * lam * lam + sign * domain.perimeter * lam) \
        / (4.0 * math.pi)


def mean_spacing(domain: Domain, bc: str, lam: float) -> float:
    """Inverse of the two-term counting density at lam."""
    check_bc(bc)
    sign = -1.0 if bc == "dirichlet" else 1.0
    dens = (2.0 * domain.area * lam + sign * domain.perimeter) \
        / (4.0 * math.pi)
    return 1.0 / max(dens, _DENSITY_FLOOR)


# -- indicator ---------------------------------------------------------------

class Indicator:
    """sigma_min of the weighted operator I + F at a given frequency.

    The similarity W^(1/2) (I + F) W^(-1/2), W = diag(quadrature weights),
    makes singular values approximate the boundary-L2 operator ones, so
    values are comparable across parametrizations.  LU factors are cached
    for the most recent frequency; sigma_min comes from inverse power
    iteration on the factored matrix, full SVDs are never needed.
    """

    def __init__(self, domain: Domain, bc: str, grid: NystromGrid):
        self.domain = domain
        self.bc = check_bc(bc)
        self.grid = grid
        self._sqw = np.sqrt(grid.weights)
        self._lam = None
        self._b = None
        self._lu = None
        self._warm = None
        self._rng = np.random.default_rng(12345)
        self.n_assemblies = 0

    def weighted(self, lam: float) -> np.ndarray:
        if self._lam != lam:
            a = assemble_F(lam, self.grid, self.bc).entries
            self._install(lam, a)
        return self._b

    def _install(self, lam: float, entries: np.ndarray) -> None:
        b = entries * (self._sqw[:, None] / self._sqw[None, :])
        b[np.diag_indices_from(b)] += 1.0
        self._lam = lam
        self._b = b
        self._lu = None
        self.n_assemblies += 1

    def factor(self, lam: float):
        self.weighted(lam)
        if self._lu is None:
            self._lu = lu_factor(self._b, check_finite=False)
        return self._lu

    def _inv_gram_apply(self, lu, x):
        # (B^H B)^{-1} x via two triangular solve pairs
        y = lu_solve(lu, x, trans=2, check_finite=False)
        return lu_solve(lu, y, trans=0, check_finite=False)

    def sigma_min(self, lam: float, iters: int = 6) -> float:
        # block of two: the warm vector plus a fresh random column; the
        # warm vector alone can sit in an exactly invariant symmetry
        # class (circulant grids) and never see the true minimum
        lu = self.factor(lam)
        n = self.grid.n
        fresh = self._rng.standard_normal(n) + 1j * self._rng.standard_normal(n)
        if self._warm is None or len(self._warm) != n:
            self._warm = self._rng.standard_normal(n) \
                + 1j * self._rng.standard_normal(n)
        v = np.stack([self._warm, fresh], axis=1)
        v, _ = np.linalg.qr(v)
        for _ in range(iters):
            v = self._inv_gram_apply(lu, v)
            v, _ = np.linalg.qr(v)
        _, s, wh = np.linalg.svd(self._b @ v, full_matrices=False)
        self._warm = (v @ wh.conj().T)[:, int(np.argmin(s))]
        return float(s.min())

    def smallest_singular(self, lam: float, k: int = 3, iters: int = 12):
        """k smallest singular values and unweighted null-vector candidates."""
        lu = self.factor(lam)
        n = self.grid.n
        rng = np.random.default_rng(271828)
        v = rng.standard_normal((n, k)) + 1j * rng.standard_normal((n, k))
        v, _ = np.linalg.qr(v)
        for _ in range(iters):
            v = self._inv_gram_apply(lu, v)
            v, _ = np.linalg.qr(v)
        # Rayleigh-Ritz on the subspace: SVD of B V gives the refined pairs
        bv = self._b @ v
        _, s, wh = np.linalg.svd(bv, full_matrices=False)
        v = v @ wh.conj().T
        order = np.argsort(s)[::-1]   # s sorted desc; want asc by smallness
        s = s[order][::-1]
        v = v[:, order][:, ::-1]
        traces = (v / self._sqw[:, None]).T
        return s, [np.array(t) for t in traces]

    def residual(self, lam: float, trace: np.ndarray) -> float:
        """|(I + F) u| / |u| in the weighted boundary norm."""
        b = self.weighted(lam)
        v = trace * self._sqw
        return float(np.linalg.norm(b @ v) / np.linalg.norm(v))


def logdet_indicator(lam: float, grid: NystromGrid, bc: str) -> float:
    """log|det(I + F)| from the LU diagonal; diagnostic alternative to
    sigma_min with a numerically hostile dynamic range."""
    ind = Indicator(grid.domain, bc, grid)
    lu, _ = ind.factor(lam)
    return float(np.sum(np.log(np.abs(np.diag(lu)))))


# -- scanning ----------------------------------------------------------------

class Bracket(NamedTuple):
    lo: float
    mid: float
    hi: float
    sigma: float


@dataclass
class ScanResult:
    lams: np.ndarray
    sigmas: np.ndarray
    brackets: list
    warnings: list
    grid: NystromGrid


def _step_density(domain, bc, lam):
    # two-term density, guarded: the Dirichlet boundary correction drives
    # it to zero at small lam, where the leading Weyl term is the honest
    # pace; an absolute floor caps the step near the bottom of the range
    sign = -1.0 if bc == "dirichlet" else 1.0
    lead = domain.area * lam / (2.0 * math.pi)
    two = lead + sign * domain.perimeter / (4.0 * math.pi)
    return max(two, 0.5 * lead, 0.4)


def _adaptive_lams(domain, bc, lo, hi, dlam):
    lams = [lo]
    while lams[-1] < hi:
        step = dlam if dlam is not None else \
            0.25 / _step_density(domain, bc, lams[-1])
        lams.append(lams[-1] + step)
    lams[-1] = hi
    return np.array(lams)


def _find_brackets(lams, sigmas, dip_factor):
    med = float(np.median(sigmas))
    thresh = dip_factor * med
    out = []
    for i in range(1, len(lams) - 1):
        if sigmas[i] < thresh and sigmas[i] <= sigmas[i - 1] \
                and sigmas[i] < sigmas[i + 1]:
            out.append(Bracket(lams[i - 1], lams[i], lams[i + 1],
                               sigmas[i]))
    return out


def scan_spectrum(domain: Domain, bc: str, lam_range, dlam: float | None = None,
                  *, grid: NystromGrid | None = None, ppw: float = 12.0,
                  dip_factor: float = DIP_FACTOR) -> ScanResult:
    """Sweep the indicator over lam_range and bracket its dips.

    Steps adapt to a quarter of the local two-term mean spacing unless a
    fixed dlam is given; an over-coarse fixed step is allowed but produces
    a warning with a predicted miss count.
    """
    lo, hi = float(lam_range[0]), float(lam_range[1])
    if not 0.0 < lo < hi:
        raise ValueError("need 0 < lam_lo < lam_hi")
    if grid is None:
        grid = build_grid(domain, hi, ppw=ppw)
    warnings = []
    if dlam is not None:
        tight = 0.25 / _step_density(domain, bc, hi)
        if dlam > tight * (1.0 + 1e-12):
            expected = float(two_term_weyl(domain, bc, hi)
                             - two_term_weyl(domain, bc, lo))
            miss = expected * max(0.0, 1.0 - tight / dlam)
            warnings.append(
                f"step {dlam:g} exceeds a quarter mean spacing {tight:g} "
                f"at lam={hi:g}; of ~{expected:.0f} expected eigenvalues "
                f"up to ~{miss:.0f} may be missed")
    lams = _adaptive_lams(domain, bc, lo, hi, dlam)
    ind = Indicator(domain, bc, grid)
    sigmas = np.array([ind.sigma_min(l) for l in lams])
    return ScanResult(lams, sigmas, _find_brackets(lams, sigmas, dip_factor),
                      warnings, grid)


# -- refinement --------------------------------------------------------------

class RefinedDip(NamedTuple):
    lam: float
    sigma: float
    n_eval: int


class RejectedDip(NamedTuple):
    lam: float
    sigma: float
    reason: str


def _golden_min(f, a, b, c, rel_tol):
    inv = 0.6180339887498949
    x0, x3 = a, c
    if abs(c - b) > abs(b - a):
        x1, x2 = b, b + (1 - inv) * (c - b)
    else:
        x1, x2 = b - (1 - inv) * (b - a), b
    f1, f2 = f(x1), f(x2)
    while abs(x3 - x0) > rel_tol * (abs(x1) + abs(x2)):
        if f2 < f1:
            x0, x1, f1 = x1, x2, f2
            x2 = x1 + inv * (x3 - x1)
            f2 = f(x2)
        else:
            x3, x2, f2 = x2, x1, f1
            x1 = x2 - inv * (x2 - x0)
            f1 = f(x1)
    return (x1, f1) if f1 < f2 else (x2, f2)


def refine_eigenvalue(bracket: Bracket, indicator: Indicator,
                      *, rel_tol: float = REFINE_RTOL,
                      accept: float = SIGMA_ACCEPT):
    """Polish a bracketed dip to |dlam| <= rel_tol * lam.

    Golden-section bracket shrinking with a parabolic accelerant on
    sigma_min^2 (smooth through the dip, unlike the V-shaped sigma_min).
    Dips whose bottom stays above the acceptance threshold are rejected as
    discretization or near-resonance artifacts.
    """
    evals = [0]

    def f(lam):
        evals[0] += 1
        s = indicator.sigma_min(float(lam))
        return s * s

    from scipy.optimize import minimize_scalar
    try:
        res = minimize_scalar(f, bracket=(bracket.lo, bracket.mid, bracket.hi),
                              method="brent", options={"xtol": rel_tol})
        lam, fval = float(res.x), float(res.fun)
    except ValueError:
        lam, fval = _golden_min(f, bracket.lo, bracket.mid, bracket.hi,
                                rel_tol)
    sigma = math.sqrt(max(fval, 0.0))
    if sigma > accept:
        return RejectedDip(lam, sigma, "dip bottom above acceptance "
                           f"threshold {accept:g}")
    return RefinedDip(lam, sigma, evals[0])


# -- traces ------------------------------------------------------------------

def _fix_phase(trace: np.ndarray) -> np.ndarray:
    i = int(np.argmax(np.abs(trace)))
    z = trace[i]
    if z == 0:
        return trace
    return trace * (abs(z) / z)


class ExtractResult(NamedTuple):
    sigmas: np.ndarray
    traces: list
    flagged: bool
    next_sigma: float | None


def extract_traces(lam: float, indicator: Indicator,
                   *, cluster_factor: float = CLUSTER_FACTOR,
                   max_cluster: int = 4) -> ExtractResult:
    """Null vectors at a refined dip, cluster-aware.

    All singular vectors within cluster_factor of sigma_min form the
    (near-)degenerate cluster; they come out orthonormal in the discrete
    boundary inner product sum w_i f_i conj(g_i), with the largest-modulus
    node rotated to the positive real axis.  Clusters larger than
    max_cluster are returned flagged for review.  next_sigma is the first
    singular value beyond the cluster; a small value betrays a second
    eigenvalue hiding within the scan step.
    """
    k = 3
    while True:
        s, traces = indicator.smallest_singular(lam, k=k)
        cut = cluster_factor * s[0]
        m = int(np.sum(s <= cut))
        if m < k or k >= max_cluster + 1:
            break
        k = max_cluster + 1
    flagged = m > max_cluster
    nxt = float(s[m]) if m < len(s) else None
    return ExtractResult(s[:m], [_fix_phase(t) for t in traces[:m]],
                         flagged, nxt)


def reconstruct_interior(trace: np.ndarray, lam: float, bc: str,
                         grid: NystromGrid, x):
    """Interior eigenfunction values from a boundary trace.

    With inward normals, a Dirichlet trace (normal derivative data)
    rebuilds u as minus the single-layer potential; a Neumann trace
    (boundary values) as plus the double layer.  Presentations with
    outward normals flip both signs.
    """
    check_bc(bc)
    if bc == "dirichlet":
        val = layer_potential_eval(lam, grid, trace, x, kind="single")
        return val._replace(value=-val.value)
    return layer_potential_eval(lam, grid, trace, x, kind="double")


def _interior_probes(domain: Domain, grid: NystromGrid, pad: float):
    rng = np.random.default_rng(978634)
    return domain.sample_interior(3, rng, margin=pad)


def interior_residual(trace: np.ndarray, lam: float, bc: str,
                      grid: NystromGrid, points=None, h: float = 1e-4) -> float:
    """Relative Helmholtz defect (Delta + lam^2) u at interior probes.

    Five-point stencil; normalized by lam^2 times the largest probed field
    value so nodal-line probes cannot inflate the ratio.
    """
    domain = grid.domain
    if points is None:
        collar = 2.0 * float(np.max(grid.weights))
        points = _interior_probes(domain, grid, collar + 4.0 * h)
    points = np.atleast_2d(np.asarray(points, dtype=float))
    offs = np.array([[0.0, 0.0], [h, 0.0], [-h, 0.0], [0.0, h], [0.0, -h]])
    probes = (points[:, None, :] + offs[None, :, :]).reshape(-1, 2)
    vals = reconstruct_interior(trace, lam, bc, grid, probes).value
    vals = vals.reshape(len(points), 5)
    lap = (vals[:, 1:].sum(axis=1) - 4.0 * vals[:, 0]) / (h * h)
    defect = np.abs(lap + lam * lam * vals[:, 0])
    scale = lam * lam * max(float(np.abs(vals[:, 0]).max()), 1e-3)
    return float(defect.max() / scale)


# -- normalization -----------------------------------------------------------

@dataclass(frozen=True)
class NormalizationCertificate:
    interior_norm_estimate: float
    method: str
    error_bar: float
    cross_check: float | None = None
    cross_check_rel_dev: float | None = None
    flagged: bool = False


@dataclass
class EigenTrace:
    lam: float
    bc: str
    trace: np.ndarray
    sigma_min: float
    fone_residual: float
    interior_helmholtz_residual: float
    normalization: NormalizationCertificate
    cluster: int


def _tangential_derivative(trace: np.ndarray, grid: NystromGrid) -> np.ndarray:
    n = grid.n
    k = np.fft.fftfreq(n, d=1.0 / n)
    if n % 2 == 0:
        k = k.copy()
        k[n // 2] = 0.0           # drop the unmatched Nyquist mode
    dt = np.fft.ifft(1j * k * np.fft.fft(trace))
    return dt / grid.jacobian


def rellich_norm(trace: np.ndarray, lam: float, bc: str,
                 grid: NystromGrid) -> float:
    """Interior squared L2 norm from the boundary identity (module doc)."""
    check_bc(bc)
    pos = grid.frames.position
    x_dot_nu_out = -(pos[:, 0] * grid.frames.inward_normal[:, 0]
                     + pos[:, 1] * grid.frames.inward_normal[:, 1])
    if bc == "dirichlet":
        dens = np.abs(trace) ** 2
    else:
        ds = _tangential_derivative(trace, grid)
        dens = lam * lam * np.abs(trace) ** 2 - np.abs(ds) ** 2
    return float(np.sum(grid.weights * x_dot_nu_out * dens)
                 / (2.0 * lam * lam))


def qmc_norm(trace: np.ndarray, lam: float, bc: str, grid: NystromGrid,
             n_points: int = 200_000, seed: int = 0,
             collar_scale: float = 1.0):
    """Quasi-Monte Carlo interior norm estimate with an error bar.

    Scrambled Sobol points over the bounding box, rejection into the
    domain; a thin collar where the plain-quadrature potential degrades is
    excluded and replaced by its leading boundary-trace approximation.
    Returns (estimate, error_bar) for |u|^2 integrated over the domain.
    """
    domain = grid.domain
    collar = collar_scale * float(np.max(grid.weights))
    x0, x1, y0, y1 = domain.bbox
    box_area = (x1 - x0) * (y1 - y0)
    n_split = 4
    per = 1 << int(math.ceil(math.log2(max(n_points // n_split, 1024))))
    estimates = []
    for i in range(n_split):
        eng = scipy_qmc.Sobol(d=2, scramble=True, seed=seed + 7919 * i)
        pts = eng.random(per) * [x1 - x0, y1 - y0] + [x0, y0]
        inside = domain.contains(pts) \
            & (domain.boundary_margin(pts) > collar)
        vals = np.zeros(per)
        if inside.any():
            got = reconstruct_interior(trace, lam, bc, grid, pts[inside])
            vals[inside] = np.abs(got.value) ** 2
        estimates.append(box_area * float(vals.mean()))
    bulk = float(np.mean(estimates))
    err = float(np.std(estimates) / math.sqrt(n_split))
    # collar strip from the trace: u ~ (d_nu u) t for Dirichlet data,
    # u ~ u^b for Neumann, to leading order in the collar depth
    w = grid.weights
    kap = grid.frames.curvature
    a2 = np.abs(trace) ** 2
    if bc == "dirichlet":
        strip = float(np.sum(w * a2 * (collar**3 / 3.0
                                       - kap * collar**4 / 4.0)))
    else:
        strip = float(np.sum(w * a2 * (collar - kap * collar**2 / 2.0)))
    return bulk + strip, err


def normalize_trace(trace: np.ndarray, lam: float, bc: str,
                    grid: NystromGrid, *, sigma_min: float = 0.0,
                    fone_residual: float = 0.0,
                    interior_residual_value: float = 0.0,
                    cluster: int = 0, qmc: bool = False,
                    qmc_points: int = 200_000, seed: int = 0) -> EigenTrace:
    """Rescale a trace so the interior eigenfunction has unit L2 norm.

    The boundary identity supplies the scale (spectrally accurate); QMC
    interior sampling is computed on request as an independent cross-check
    and the certificate is flagged when they disagree beyond 1% or the
    QMC error bar, whichever is larger.
    """
    raw = rellich_norm(trace, lam, bc, grid)
    if not raw > 0.0:
        raise ValueError("boundary identity produced a non-positive norm; "
                         "trace is spurious or under-resolved")
    scaled = _fix_phase(trace / math.sqrt(raw))
    err_bar = max(10.0 * sigma_min, 1e-10)
    cross = rel_dev = None
    flagged = False
    if qmc:
        est, qerr = qmc_norm(scaled, lam, bc, grid, qmc_points, seed)
        cross = est
        rel_dev = abs(est - 1.0)
        flagged = rel_dev > max(0.01, 3.0 * qerr)
        err_bar = max(err_bar, qerr)
    cert = NormalizationCertificate(1.0, "boundary-rellich", err_bar,
                                    cross, rel_dev, flagged)
    return EigenTrace(float(lam), bc, scaled, float(sigma_min),
                      float(fone_residual), float(interior_residual_value),
                      cert, int(cluster))


# -- closed-form model spectra ----------------------------------------------

def _mode_trace(grid: NystromGrid, m: int, lam: float, bc: str,
                angular: str) -> np.ndarray:
    """Boundary trace of J_m(lam rho) x {cos,sin}(m theta) at the nodes."""
    pos = grid.frames.position
    rho = np.hypot(pos[:, 0], pos[:, 1])
    theta = np.arctan2(pos[:, 1], pos[:, 0])
    ang = np.cos(m * theta) if angular == "cos" else np.sin(m * theta)
    if bc == "neumann":
        return bessel_jy(m, np.maximum(lam * rho, 1e-8)).j * ang
    # Dirichlet data: inward-normal derivative of the mode
    dang = (-m * np.sin(m * theta) if angular == "cos"
            else m * np.cos(m * theta))
    rho_safe = np.maximum(rho, 1e-9)
    vals = bessel_jy(m, np.maximum(lam * rho_safe, 1e-8))
    ur = lam * vals.jp * ang
    ut_over_rho = vals.j * dang / rho_safe
    ex, ey = pos[:, 0] / rho_safe, pos[:, 1] / rho_safe
    gx = ur * ex - ut_over_rho * ey
    gy = ur * ey + ut_over_rho * ex
    nrm = grid.frames.inward_normal
    return gx * nrm[:, 0] + gy * nrm[:, 1]


def analytic_modes(domain: Domain, bc: str, lam_max: float,
                   *, grid: NystromGrid | None = None,
                   n: int | None = None) -> list:
    """Closed-form eigenpairs for the disc and half disc, grid-sampled.

    Disc: J_m(lam rho) e^{i m theta} families, doubly degenerate for
    m >= 1 (returned as a cos/sin cluster).  Half disc: the diameter acts
    as a mirror, keeping cos modes at J' zeros for Neumann and sin modes
    (m >= 1) at J zeros for Dirichlet.  Traces are normalized in closed
    form against the interior L2 norm.
    """
    check_bc(bc)
    name = domain.name
    if name not in ("disc", "half_disc"):
        raise ValueError(f"no closed-form spectrum for {name!r}")
    radius = float(domain.params["R"])
    if grid is None:
        grid = NystromGrid(domain, n if n is not None
                           else max(64, 2 * int(8 * lam_max * radius)))
    kind = "J" if bc == "dirichlet" else "Jp"
    half = name == "half_disc"
    modes = []
    m = 0
    while True:
        if half and bc == "dirichlet" and m == 0:
            m += 1
            continue
        zeros = bessel_zeros_upto(m, lam_max * radius, kind=kind)
        if len(zeros) == 0:
            # zeros of J_m / J_m' increase with m; once a whole family
            # starts above the cut, every later one does too
            if m > lam_max * radius + 2:
                break
            m += 1
            continue
        for z in zeros:
            lam = z / radius
            vals = bessel_jy(m, z)
            if bc == "dirichlet":
                radial2 = 0.5 * radius**2 * vals.jp**2
                amp = lam * abs(vals.jp)
            else:
                radial2 = 0.5 * radius**2 * (1.0 - (m / z) ** 2) * vals.j**2
                amp = abs(vals.j)
            if half:
                angulars = [("cos", math.pi if m == 0 else math.pi / 2)] \
                    if bc == "neumann" else [("sin", math.pi / 2)]
            else:
                angulars = [("cos", 2 * math.pi)] if m == 0 else \
                    [("cos", math.pi), ("sin", math.pi)]
            group = []
            for angular, ang_norm2 in angulars:
                norm = math.sqrt(radial2 * ang_norm2)
                tr = _mode_trace(grid, m, lam, bc, angular) / norm
                cert = NormalizationCertificate(1.0, "closed-form", 0.0)
                group.append(EigenTrace(lam, bc, _fix_phase(tr), 0.0, 0.0,
                                        0.0, cert, 0))
            modes.append((lam, m, group))
        m += 1
    modes.sort(key=lambda t: t[0])
    out = []
    for cid, (_, _, group) in enumerate(modes):
        for tr in group:
            tr.cluster = cid
            out.append(tr)
    return out


# -- persistence -------------------------------------------------------------

_INDEX_FIELDS = ["j", "lam", "sigma_min", "fone_residual",
                 "interior_residual", "norm_estimate", "norm_error_bar",
                 "norm_method", "qmc_cross_check", "qmc_rel_dev", "flagged",
                 "cluster", "trace_sha256"]


def _trace_bytes(trace: np.ndarray) -> bytes:
    buf = np.empty(2 * len(trace))
    buf[0::2] = trace.real
    buf[1::2] = trace.imag
    return buf.astype("<f8").tobytes()


def _atomic_write(path, data: bytes) -> None:
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


class SpectrumStore:
    """Ordered eigenvalue/trace collection with directory persistence.

    Layout: manifest.json (domain, bc, grid, thresholds, progress, index
    checksum), index.csv (one row per trace), trace_XXXXX.bin (float64
    re/im pairs).  Writes go through temp-file renames so a reader never
    sees a torn store; the manifest checksum catches corruption.
    """

    def __init__(self, domain_spec: str, bc: str, grid_n: int, graded: bool,
                 scan_meta: dict | None = None):
        self.domain_spec = domain_spec
        self.bc = check_bc(bc)
        self.grid_n = int(grid_n)
        self.graded = bool(graded)
        self.scan_meta = dict(scan_meta or {})
        self.traces: list[EigenTrace] = []
        self.version = STORE_VERSION

    # construction helpers
    @classmethod
    def for_grid(cls, domain: Domain, bc: str, grid: NystromGrid,
                 scan_meta=None) -> "SpectrumStore":
        return cls(domain.spec_string, bc, grid.n, grid.graded, scan_meta)

    def rebuild_grid(self) -> NystromGrid:
        return NystromGrid(build_domain(self.domain_spec), self.grid_n,
                           graded=self.graded)

    # views
    def eigenvalues(self) -> np.ndarray:
        return np.array([t.lam for t in self.traces])

    def count_upto(self, lam: float) -> int:
        return int(np.sum(self.eigenvalues() <= lam))

    def select(self, lam_max: float):
        return [t for t in self.traces if t.lam <= lam_max]

    def append(self, trace: EigenTrace) -> None:
        self.traces.append(trace)

    def sort(self) -> None:
        self.traces.sort(key=lambda t: (t.lam, t.cluster))

    # io
    def _index_bytes(self) -> bytes:
        import io
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(_INDEX_FIELDS)
        for j, t in enumerate(self.traces):
            c = t.normalization
            w.writerow([j, repr(t.lam), repr(t.sigma_min),
                        repr(t.fone_residual),
                        repr(t.interior_helmholtz_residual),
                        repr(c.interior_norm_estimate), repr(c.error_bar),
                        c.method,
                        "" if c.cross_check is None else repr(c.cross_check),
                        "" if c.cross_check_rel_dev is None
                        else repr(c.cross_check_rel_dev),
                        int(c.flagged), t.cluster,
                        hashlib.sha256(_trace_bytes(t.trace)).hexdigest()])
        return buf.getvalue().encode()

    def save(self, path) -> None:
        os.makedirs(path, exist_ok=True)
        index = self._index_bytes()
        # files are named by row position, and audits or doublet probes can
        # insert rows mid-spectrum between checkpoints, so every file is
        # rewritten; an existence test here once caused silent row/trace
        # misalignment after re-sorting
        for j, t in enumerate(self.traces):
            _atomic_write(os.path.join(path, f"trace_{j:05d}.bin"),
                          _trace_bytes(t.trace))
        manifest = {
            "format_version": self.version,
            "package_version": __version__,
            "domain": self.domain_spec,
            "bc": self.bc,
            "grid": {"n": self.grid_n, "graded": self.graded},
            "scan": self.scan_meta,
            "count": len(self.traces),
            "index_sha256": hashlib.sha256(index).hexdigest(),
        }
        _atomic_write(os.path.join(path, "index.csv"), index)
        _atomic_write(os.path.join(path, "manifest.json"),
                      json.dumps(manifest, indent=1, sort_keys=True).encode())

    @classmethod
    def load(cls, path) -> "SpectrumStore":
        with open(os.path.join(path, "manifest.json"), "rb") as fh:
            man = json.load(fh)
        with open(os.path.join(path, "index.csv"), "rb") as fh:
            index = fh.read()
        if hashlib.sha256(index).hexdigest() != man["index_sha256"]:
            raise ValueError("store index checksum mismatch; recompute "
                             "advised")
        store = cls(man["domain"], man["bc"], man["grid"]["n"],
                    man["grid"]["graded"], man.get("scan"))
        store.version = man["format_version"]
        rows = list(csv.DictReader(index.decode().splitlines()))
        if len(rows) != man["count"]:
            raise ValueError("store index row count disagrees with manifest")
        for j, row in enumerate(rows):
            with open(os.path.join(path, f"trace_{j:05d}.bin"), "rb") as fh:
                blob = fh.read()
            if hashlib.sha256(blob).hexdigest() != row["trace_sha256"]:
                raise ValueError(f"trace file {j} checksum mismatch; "
                                 "recompute advised")
            raw = np.frombuffer(blob, dtype="<f8")
            tr = raw[0::2] + 1j * raw[1::2]
            cert = NormalizationCertificate(
                float(row["norm_estimate"]), row["norm_method"],
                float(row["norm_error_bar"]),
                float(row["qmc_cross_check"]) if row["qmc_cross_check"]
                else None,
                float(row["qmc_rel_dev"]) if row["qmc_rel_dev"] else None,
                bool(int(row["flagged"])))
            store.traces.append(EigenTrace(
                float(row["lam"]), store.bc, tr, float(row["sigma_min"]),
                float(row["fone_residual"]),
                float(row["interior_residual"]), cert, int(row["cluster"])))
        return store


# -- pipeline ----------------------------------------------------------------

@dataclass
class BuildReport:
    accepted: int = 0
    rejected: list = field(default_factory=list)
    warnings: list = field(default_factory=list)
    rescan_windows: list = field(default_factory=list)
    seconds: float = 0.0


def _dedupe_lam(lam: float, store: SpectrumStore) -> bool:
    eig = store.eigenvalues()
    return bool(len(eig)) and bool(np.min(np.abs(eig - lam)) < 5e-9 * lam)


def _process_dip(bracket, indicator, store, report, *, qmc_seed, do_qmc,
                 qmc_points: int = 200_000, probe_doublet=True):
    refined = refine_eigenvalue(bracket, indicator)
    if isinstance(refined, RejectedDip):
        report.rejected.append(refined)
        return
    if _dedupe_lam(refined.lam, store):
        return
    got = extract_traces(refined.lam, indicator)
    if got.flagged:
        report.warnings.append(
            f"cluster at lam={refined.lam:.9g} larger than 4; kept flagged")
    cid = (max((t.cluster for t in store.traces), default=-1) + 1)
    for sig, tr in zip(got.sigmas, got.traces):
        res = indicator.residual(refined.lam, tr)
        if res > RESIDUAL_ACCEPT:
            report.rejected.append(RejectedDip(
                refined.lam, res, "operator residual above acceptance"))
            continue
        ih = interior_residual(tr, refined.lam, indicator.bc, indicator.grid)
        if ih > RESIDUAL_ACCEPT:
            report.rejected.append(RejectedDip(
                refined.lam, ih, "interior Helmholtz residual above "
                "acceptance"))
            continue
        et = normalize_trace(
            tr, refined.lam, indicator.bc, indicator.grid,
            sigma_min=float(sig), fone_residual=res,
            interior_residual_value=ih, cluster=cid, qmc=do_qmc,
            qmc_points=qmc_points, seed=qmc_seed)
        store.append(et)
        report.accepted += 1
    if probe_doublet and got.next_sigma is not None:
        _probe_near_dip(refined.lam, got.next_sigma, indicator, store,
                        report, qmc_seed=qmc_seed)


def _probe_near_dip(lam0, sigma2, indicator, store, report, *, qmc_seed):
    """Hunt for a quasi-degenerate partner the scan step straddled.

    Two eigenvalues closer than about half a scan spacing can share one
    scan local minimum; the survivor then shows a suspiciously small
    first out-of-cluster singular value sigma2.  One extra evaluation
    calibrates the local dip slope, turning sigma2 into a distance
    estimate; the partner, if real and not already stored, makes the
    indicator dip again at one of lam0 +- distance.
    """
    spacing = 1.0 / _step_density(indicator.domain, indicator.bc, lam0)
    if sigma2 > 0.25 * spacing:
        return      # wide enough for the scan itself; audit backstops
    delta = 2.0 * sigma2
    # max over both sides: a calibration point that falls into the
    # partner's own dip reports a bogus shallow slope
    slope = max(indicator.sigma_min(lam0 + delta) / delta,
                indicator.sigma_min(lam0 - delta) / delta, 0.3)
    dist = sigma2 / slope
    if dist < 5e-9 * lam0:
        return
    eig = store.eigenvalues()
    near = eig[np.abs(eig - lam0) > 5e-9 * lam0]
    if len(near) and np.min(np.abs(near - lam0)) < 1.8 * dist:
        return
    w = 1.8 * dist
    lams = np.linspace(lam0 - w, lam0 + w, 37)
    sig = np.array([indicator.sigma_min(l) for l in lams])
    for br in _find_brackets(lams, sig, dip_factor=math.inf):
        if br.sigma > 0.75 * sigma2 or abs(br.mid - lam0) < 1.5 * w / 18:
            continue
        _process_dip(br, indicator, store, report, qmc_seed=qmc_seed,
                     do_qmc=False, probe_doublet=False)


def _audit_gaps(store: SpectrumStore, domain: Domain, lo: float, hi: float,
                *, window: float = 1.5, jump: float = 1.2):
    """Frequency windows whose count deficit against the two-term
    prediction RISES by >= jump across them (a miss is a step up in the
    deficit; its absolute level only drifts within the two-term error)."""
    eig = np.sort(store.eigenvalues())
    grid_l = np.linspace(lo, hi, 600)
    pred = np.asarray(two_term_weyl(domain, store.bc, grid_l))
    found = np.searchsorted(eig, grid_l, side="right")
    deficit = pred - found
    w_pts = max(2, int(round(window / (grid_l[1] - grid_l[0]))))
    flagged = np.zeros(len(grid_l), dtype=bool)
    for i in range(len(grid_l) - w_pts):
        if deficit[i + w_pts] - deficit[i] >= jump:
            flagged[i:i + w_pts + 1] = True
    windows = []
    in_gap = False
    for i, f in enumerate(flagged):
        if f and not in_gap:
            in_gap, start = True, grid_l[i]
        elif not f and in_gap:
            in_gap = False
            windows.append((start, grid_l[i]))
    if in_gap:
        windows.append((start, hi))
    return windows


def build_spectrum(domain: Domain, bc: str, lam_range, *, out_dir=None,
                   grid: NystromGrid | None = None, ppw: float = 12.0,
                   dlam: float | None = None, chunk: float = 2.0,
                   qmc_every: int = 0, qmc_points: int = 50_000,
                   seed: int = 0,
                   progress: Callable[[str], None] | None = None,
                   resume: bool = True):
    """Scan, refine, extract, validate, normalize, and persist a spectrum.

    Work proceeds in frequency chunks, checkpointing the store after each,
    so an interrupted build resumes from the last completed chunk.  Dip
    candidates use a generous 0.75 x median threshold (cheap false
    brackets die at the refinement gate; missed dips are expensive), and
    a two-term-count audit rescans any deficit windows at a finer step
    afterwards.  Returns (store, report).
    """
    check_bc(bc)
    lo, hi = float(lam_range[0]), float(lam_range[1])
    if grid is None:
        grid = build_grid(domain, hi, ppw=ppw)
    report = BuildReport()
    t0 = time.perf_counter()
    store = None
    if out_dir is not None and resume and \
            os.path.exists(os.path.join(out_dir, "manifest.json")):
        try:
            store = SpectrumStore.load(out_dir)
        except ValueError as exc:
            report.warnings.append(f"existing store unusable ({exc}); "
                                   "rebuilding")
            store = None
        if store is not None and (store.grid_n != grid.n
                                  or store.domain_spec != domain.spec_string
                                  or store.bc != bc):
            report.warnings.append("existing store configuration differs; "
                                   "rebuilding")
            store = None
    if store is None:
        store = SpectrumStore.for_grid(domain, bc, grid)
        store.scan_meta = {"lam_lo": lo, "lam_hi": hi, "ppw": ppw,
                           "dlam": dlam, "dip_factor": DIP_FACTOR,
                           "sigma_accept": SIGMA_ACCEPT,
                           "residual_accept": RESIDUAL_ACCEPT,
                           "scan_upto": lo, "complete": False}
    indicator = Indicator(domain, bc, grid)
    do_qmc = (lambda j: qmc_every > 0 and j % qmc_every == 0)

    start = float(store.scan_meta.get("scan_upto", lo))
    a = start
    while a < hi - 1e-12:
        b = min(a + chunk, hi)
        pad = 0.25 / _step_density(domain, bc, max(a, 1.0))
        res = scan_spectrum(domain, bc, (max(lo, a - pad), min(hi, b + pad)),
                            dlam=dlam, grid=grid, dip_factor=0.75)
        for br in res.brackets:
            if not (a - 1e-12 <= br.mid < b + 1e-12):
                continue
            _process_dip(br, indicator, store, report,
                         qmc_seed=seed + len(store.traces),
                         do_qmc=do_qmc(len(store.traces)),
                         qmc_points=qmc_points)
        store.sort()
        store.scan_meta["scan_upto"] = b
        if out_dir is not None:
            store.save(out_dir)
        if progress is not None:
            progress(f"lam<={b:.3f}: {len(store.traces)} traces, "
                     f"{len(report.rejected)} rejected, "
                     f"{indicator.n_assemblies} assemblies")
        a = b

    for _pass in range(2):
        windows = _audit_gaps(store, domain, lo, hi)
        if not windows:
            break
        for wlo, whi in windows:
            report.rescan_windows.append((wlo, whi))
            fine = 0.0625 / _step_density(domain, bc, whi)
            res = scan_spectrum(domain, bc,
                                (max(lo, wlo - 0.3), min(hi, whi + 0.3)),
                                dlam=fine, grid=grid, dip_factor=0.9)
            for br in res.brackets:
                _process_dip(br, indicator, store, report,
                             qmc_seed=seed + len(store.traces),
                             do_qmc=False)
            store.sort()
    store.scan_meta["complete"] = True
    report.seconds = time.perf_counter() - t0
    if out_dir is not None:
        store.save(out_dir)
    if progress is not None:
        progress(f"done: {len(store.traces)} traces in "
                 f"{report.seconds:.1f}s")
    return store, report
