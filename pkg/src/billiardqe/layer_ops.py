"""Helmholtz layer kernels and Nystrom assembly of the boundary operator.

The operator acts on boundary densities by integrating the normal derivative
of the free outgoing Green's function G0(r) = (i/4) H0^(1)(lambda r) against
them; the Neumann variant differentiates at the source point, the Dirichlet
variant at the target, and the two kernels are each other's negative
transpose.  At an interior eigenvalue the corresponding boundary trace is a
fixed vector of the operator.

Sign convention (calibrated on the circle, where separation of variables
diagonalizes everything): with our inward normals, boundary traces of BOTH
conditions satisfy (I + F) u^b = 0, i.e. they are -1 eigenvectors.  A
presentation using outward normals in the Neumann kernel flips that variant
to +1; we keep the inward-normal frames and state the convention rather than
absorb the sign silently.  The circle eigenvalue of the Neumann variant on
the m-th Fourier mode is 1 + i pi lam J_m(lam) H_m^(1)'(lam), which the
assembly tests pin against an independent high-precision oracle.

Quadrature: the kernel times the parameter Jacobian splits as
P(t,tau) * log(4 sin^2((t-tau)/2)) + Q(t,tau) with P, Q smooth and periodic
in the uniform parameter t; P gets spectrally-accurate log weights, Q the
trapezoid rule.  Boundaries with curvature junctions (the stadium) are
reparametrized by a per-piece quintic smoothstep whose Jacobian vanishes at
the junctions, which restores algebraic convergence of order about 4 there.
"""

from __future__ import annotations

import math
import struct
from typing import NamedTuple

import numpy as np

from .geometry import Domain
from .specfun import _jy01_raw

MIN_POINTS_PER_WAVELENGTH = 8
DEFAULT_POINTS_PER_WAVELENGTH = 12

# fixed-point eigenvalue of the operator on boundary traces, per condition
FIXED_POINT_SIGN = {"dirichlet": -1.0, "neumann": -1.0}

_BC_CODE = {"dirichlet": 0, "neumann": 1}
_BC_NAME = {v: k for k, v in _BC_CODE.items()}


class ResolutionError(ValueError):
    """Grid too coarse for the requested frequency."""


class UnsupportedDomainError(ValueError):
    """Boundary shape outside the assembler's contract."""


def check_bc(bc: str) -> str:
    if bc not in _BC_CODE:
        raise ValueError(f"bc must be 'dirichlet' or 'neumann', got {bc!r}")
    return bc


def green0(lam: float, r):
    """Free outgoing Green's function and its radial derivative.

    Returns (G0, dG0/dr) with G0 = (i/4) H0^(1)(lambda r).
    """
    if lam <= 0.0:
        raise ValueError("frequency must be positive")
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0.0):
        raise ValueError("separation must be positive")
    j0, y0, j1, y1 = _jy01_raw(lam * r)
    h0 = j0 + 1j * y0
    h1 = j1 + 1j * y1
    return 0.25j * h0, -0.25j * lam * h1


def _smoothstep(u):
    # quintic: first and second derivatives vanish at both ends, so the
    # graded Jacobian is C^1 across junctions and the periodic trapezoid
    # rule keeps fourth-order accuracy there
    return u**3 * (10.0 - 15.0 * u + 6.0 * u * u)


def _smoothstep_d(u):
    return 30.0 * (u * (1.0 - u)) ** 2


class NystromGrid:
    """Uniform-parameter boundary grid with cached assembly geometry.

    nodes are t_i = 2 pi (i + 1/2)/N in a global parameter t; s(t) is either
    proportional to arclength (smooth loops) or the junction-graded
    smoothstep map.  weights are s'(t_i) * 2 pi / N and sum to the perimeter.
    """

    def __init__(self, domain: Domain, n: int, graded: bool | None = None):
        if n % 2 or n < 16:
            raise ValueError("node count must be even and >= 16")
        if not domain.single_loop:
            raise UnsupportedDomainError(
                f"{domain.name}: multi-loop boundaries are outside the "
                "assembler's contract (metric queries only)")
        self.domain = domain
        self.n = int(n)
        self.t = 2.0 * math.pi * (np.arange(n) + 0.5) / n
        if graded is None:
            graded = len(domain.junctions) > 0
        self.graded = bool(graded)
        per = domain.perimeter
        if self.graded:
            pieces = self._pieces(domain)
            lengths = np.array([hi - lo for lo, hi in pieces])
            t_edges = np.concatenate([[0.0], np.cumsum(lengths)]) * (2 * math.pi / per)
            self.piece_index = np.clip(
                np.searchsorted(t_edges, self.t, side="right") - 1,
                0, len(pieces) - 1)
            u = ((self.t - t_edges[self.piece_index])
                 / (t_edges[self.piece_index + 1] - t_edges[self.piece_index]))
            lo = np.array([p[0] for p in pieces])[self.piece_index]
            ln = lengths[self.piece_index]
            self.s = np.mod(lo + ln * _smoothstep(u), per)
            self.jacobian = (ln * _smoothstep_d(u)
                             / (2 * math.pi * ln / per))
            # rescale so each piece's weights sum to its length exactly;
            # the factor is 1 + O(h^4), beneath the quadrature error
            h = 2 * math.pi / n
            for k in range(len(pieces)):
                sel = self.piece_index == k
                self.jacobian[sel] *= lengths[k] / (h * self.jacobian[sel].sum())
            # nodes must stay clear of the junctions they cluster toward
            for j in domain.junctions:
                d = np.abs(self.s - j)
                if np.min(np.minimum(d, per - d)) < 1e-9:
                    raise ValueError("grid node collides with a junction; "
                                     "change the node count")
            self._grading = (np.array([p[0] for p in pieces]), lengths,
                             t_edges)
        else:
            self.piece_index = np.zeros(n, dtype=int)
            self.s = self.t * per / (2 * math.pi)
            self.jacobian = np.full(n, per / (2 * math.pi))
            self._grading = None
        self.frames = domain.frame_at(self.s)
        self.weights = self.jacobian * (2 * math.pi / n)
        self.jac_min = float(self.jacobian.min())
        self.jac_max = float(self.jacobian.max())
        self._geom = None
        self._logw = None

    @staticmethod
    def _pieces(domain: Domain):
        js = list(domain.junctions)
        per = domain.perimeter
        if not js:
            return [(0.0, per)]
        # smooth pieces between consecutive junctions; parametrization starts
        # mid-piece, so shift the frame so pieces tile [j0, j0 + perimeter]
        return [(js[i], js[i + 1] if i + 1 < len(js) else js[0] + per)
                for i in range(len(js))]

    def points_per_wavelength(self, lam: float) -> float:
        """Worst-case local node density relative to the wavelength."""
        return 2.0 * math.pi / (lam * self.jac_max * (2 * math.pi / self.n))

    def s_of_t(self, t):
        """Arclength image of arbitrary parameter values (the node map)."""
        t = np.mod(np.asarray(t, dtype=float), 2.0 * math.pi)
        per = self.domain.perimeter
        if self._grading is None:
            return t * per / (2.0 * math.pi)
        lo, lengths, edges = self._grading
        k = np.clip(np.searchsorted(edges, t, side="right") - 1,
                    0, len(lo) - 1)
        u = (t - edges[k]) / (edges[k + 1] - edges[k])
        return np.mod(lo[k] + lengths[k] * _smoothstep(u), per)

    def t_of_s(self, s):
        """Inverse parameter map; bisection within the owning piece.

        The grading map has vanishing derivative at junctions, so Newton
        is unusable there; 50 bisection steps give ~16 digits in u.
        """
        s = np.asarray(s, dtype=float)
        per = self.domain.perimeter
        if self._grading is None:
            return np.mod(s, per) * 2.0 * math.pi / per
        lo, lengths, edges = self._grading
        z = np.mod(s - lo[0], per)
        cum = np.concatenate([[0.0], np.cumsum(lengths)])
        k = np.clip(np.searchsorted(cum, z, side="right") - 1,
                    0, len(lo) - 1)
        v = np.clip((z - cum[k]) / lengths[k], 0.0, 1.0)
        ua, ub = np.zeros_like(v), np.ones_like(v)
        for _ in range(50):
            um = 0.5 * (ua + ub)
            hi = _smoothstep(um) >= v
            ub = np.where(hi, um, ub)
            ua = np.where(hi, ua, um)
        u = 0.5 * (ua + ub)
        return edges[k] + u * (edges[k + 1] - edges[k])

    def geometry_tables(self):
        """Pairwise distance/angle factors reused by every frequency."""
        if self._geom is None:
            pos = self.frames.position
            nrm = self.frames.inward_normal
            dx = pos[None, :, 0] - pos[:, None, 0]
            dy = pos[None, :, 1] - pos[:, None, 1]
            r = np.hypot(dx, dy)
            with np.errstate(invalid="ignore", divide="ignore"):
                # <y_j - y_i, nu(y_j)> / r  and  <y_j - y_i, nu(y_i)> / r
                c_src = (dx * nrm[None, :, 0] + dy * nrm[None, :, 1]) / r
                c_tgt = (dx * nrm[:, None, 0] + dy * nrm[:, None, 1]) / r
            np.fill_diagonal(c_src, 0.0)
            np.fill_diagonal(c_tgt, 0.0)
            dt = self.t[:, None] - self.t[None, :]
            log4s = np.log(4.0 * np.sin(0.5 * dt) ** 2, where=~np.eye(self.n, dtype=bool),
                           out=np.zeros((self.n, self.n)))
            self._geom = (r, c_src, c_tgt, log4s)
        return self._geom

    def log_weights(self):
        """Kress weights R_|i-j| for the log factor, cached per grid size."""
        if self._logw is None:
            n2 = self.n // 2
            d = np.arange(self.n)
            m = np.arange(1, n2)
            ang = np.outer(m, 2.0 * math.pi * d / self.n)
            rd = (-(2.0 * math.pi / n2) * (np.cos(ang) / m[:, None]).sum(axis=0)
                  - (math.pi / n2**2) * np.cos(math.pi * d))
            idx = np.abs(np.subtract.outer(d, d))
            self._logw = rd[np.minimum(idx, self.n - idx)]
        return self._logw


def build_grid(domain: Domain, lam_max: float,
               ppw: float = DEFAULT_POINTS_PER_WAVELENGTH,
               n_min: int = 64) -> NystromGrid:
    """Grid sized so the worst local density meets ppw at lam_max."""
    jac_max = domain.perimeter / (2 * math.pi)
    if len(domain.junctions):
        jac_max *= 1.875          # quintic smoothstep Jacobian peak
    n = max(n_min, int(math.ceil(ppw * lam_max * jac_max)))
    n += n % 2
    return NystromGrid(domain, n)


class OperatorMatrix(NamedTuple):
    lam: float
    bc: str
    entries: np.ndarray
    grid: NystromGrid
    kernel_variant: str

    def apply(self, f: np.ndarray) -> np.ndarray:
        """Matrix-vector action on a boundary density."""
        f = np.asarray(f)
        if f.shape[-1] != self.entries.shape[1]:
            raise ValueError("density length does not match the grid")
        return self.entries @ f


def kernel_F(domain: Domain, lam: float, s: float, sp: float, bc: str) -> complex:
    """Off-diagonal kernel value between boundary points s and sp.

    The diagonal is defined only as a continuous extension and is handled
    inside the assembler, not here.
    """
    check_bc(bc)
    f1 = domain.frame_at(float(s))
    f2 = domain.frame_at(float(sp))
    d = f2.position - f1.position
    r = float(np.hypot(*d))
    if r <= 1e-14:
        raise ValueError("coincident points: the diagonal is a continuous "
                         "extension computed by the assembler")
    nu = f2.inward_normal if bc == "neumann" else f1.inward_normal
    _, dg = green0(lam, r)
    sign = -2.0 if bc == "neumann" else 2.0
    proj = float(d @ nu) / r
    if bc == "dirichlet":
        proj = -proj              # derivative direction is grad_y r = -d/r
    return complex(sign * dg * proj)


def _assemble(lam: float, grid: NystromGrid, which: tuple[str, ...]):
    if lam <= 0.0:
        raise ValueError("frequency must be positive")
    if grid.domain.corner_domain:
        raise UnsupportedDomainError(
            f"{grid.domain.name}: corner domains are not assembled; "
            "use their closed-form modes instead")
    ppw = grid.points_per_wavelength(lam)
    if ppw < MIN_POINTS_PER_WAVELENGTH:
        raise ResolutionError(
            f"{ppw:.2f} points per wavelength at lam={lam:g}; "
            f"need >= {MIN_POINTS_PER_WAVELENGTH}")
    r, c_src, c_tgt, log4s = grid.geometry_tables()
    rw = grid.log_weights()
    n = grid.n
    h = 2.0 * math.pi / n
    jac = grid.jacobian
    kappa = grid.frames.curvature

    z = lam * r
    np.fill_diagonal(z, 1.0)      # dummy, overwritten below
    j1, y1 = _jy01_raw(z)[2:]
    # H1 split: i*(2/pi)*log(z/2)*J1 carries the log singularity; the rest,
    # including the 1/z pole that gives the curvature diagonal, stays in Q
    out = {}
    for bc in which:
        # both kernels are (i lam / 2) H1(lam r) <y'-y, nu>/r; Neumann takes
        # nu at the source point, Dirichlet at the target
        c = c_src if bc == "neumann" else c_tgt
        ker = 0.5j * lam * (j1 + 1j * y1) * c
        p = -(lam / (2.0 * math.pi)) * c * j1 * jac[None, :]
        a = ker * jac[None, :] - p * log4s
        diag_sign = -1.0 if bc == "neumann" else 1.0
        np.fill_diagonal(a, diag_sign * kappa * jac / (2.0 * math.pi))
        a *= h
        a += rw * p
        out[bc] = OperatorMatrix(float(lam), bc, a, grid,
                                 f"{bc}:H1-split-log")
    return out


def assemble_F(lam: float, grid: NystromGrid, bc: str) -> OperatorMatrix:
    """Nystrom matrix of the boundary operator at frequency lam."""
    check_bc(bc)
    return _assemble(lam, grid, (bc,))[bc]


def assemble_both(lam: float, grid: NystromGrid):
    """(dirichlet, neumann) matrices sharing one kernel evaluation pass."""
    out = _assemble(lam, grid, ("dirichlet", "neumann"))
    return out["dirichlet"], out["neumann"]


class PotentialValue(NamedTuple):
    value: complex | np.ndarray
    near_boundary: bool | np.ndarray


def layer_potential_eval(lam: float, grid: NystromGrid, density: np.ndarray,
                         x, kind: str = "single",
                         chunk: int = 4096) -> PotentialValue:
    """Evaluate a layer potential at strictly interior points.

    kind='single' integrates G0 against the density, kind='double' the
    source-normal derivative of G0.  Accuracy degrades within two grid
    spacings of the boundary; such points are flagged, not rejected.
    """
    if kind not in ("single", "double"):
        raise ValueError("kind must be 'single' or 'double'")
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    pts = x[None, :] if single else x
    density = np.asarray(density)
    pos = grid.frames.position
    nrm = grid.frames.inward_normal
    w = grid.weights * density
    vals = np.empty(len(pts), dtype=complex)
    near = np.empty(len(pts), dtype=bool)
    spacing = 2.0 * float(np.max(grid.weights))
    for lo in range(0, len(pts), chunk):
        p = pts[lo:lo + chunk]
        dx = pos[None, :, 0] - p[:, None, 0]
        dy = pos[None, :, 1] - p[:, None, 1]
        r = np.hypot(dx, dy)
        near[lo:lo + chunk] = r.min(axis=1) < spacing
        j0, y0, j1, y1 = _jy01_raw(lam * r)
        if kind == "single":
            kern = 0.25j * (j0 + 1j * y0)
        else:
            proj = (dx * nrm[None, :, 0] + dy * nrm[None, :, 1]) / r
            kern = -0.25j * lam * (j1 + 1j * y1) * proj
        vals[lo:lo + chunk] = kern @ w
    if single:
        return PotentialValue(complex(vals[0]), bool(near[0]))
    return PotentialValue(vals, near)


def save_operator(matrix: OperatorMatrix, path) -> None:
    """Binary dump: header (lam float64, N uint32, bc uint8), then row-major
    complex128 entries, all little-endian."""
    with open(path, "wb") as fh:
        fh.write(struct.pack("<dIB", matrix.lam, matrix.entries.shape[0],
                             _BC_CODE[matrix.bc]))
        fh.write(np.ascontiguousarray(matrix.entries,
                                      dtype="<c16").tobytes())


def load_operator(path, grid: NystromGrid | None = None) -> OperatorMatrix:
    with open(path, "rb") as fh:
        lam, n, code = struct.unpack("<dIB", fh.read(13))
        data = np.frombuffer(fh.read(), dtype="<c16")
    if data.size != n * n:
        raise ValueError("operator file truncated or corrupt")
    return OperatorMatrix(lam, _BC_NAME[code], data.reshape(n, n).copy(),
                          grid, "loaded")
