"""Piecewise-analytic planar domains and their metric queries.

A Domain is an ordered list of closed-form arcs (circle arcs, straight
segments, full ellipses) indexed by global arclength.  The boundary is
traversed with the interior on the left, so the inward normal is always the
left normal of the tangent and the signed curvature is positive on arcs that
bulge outward.  All frame quantities come from the parametrizations
themselves; nothing is splined or differenced.

Junctions are the arclengths where two arcs meet without curvature matching.
Frames exactly at a junction are ambiguous and must be requested one-sided;
rays landing on a junction raise JunctionHit, which the billiard layer turns
into trajectory termination.
"""

from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np

BOUNDARY_COLLAR = 1e-12     # membership is implementation-defined this close
JUNCTION_TOL = 1e-9         # ray hits this close to a junction are terminal
_HIT_TMIN = 1e-9            # ignore ray hits closer than this (start point)


class DomainSpecError(ValueError):
    """Bad shape name or parameters in a domain spec."""


class AmbiguousFrameError(ValueError):
    """Frame requested exactly at a junction without a side."""


class JunctionHit(Exception):
    """A traced ray landed within tolerance of a junction."""

    def __init__(self, s: float, t: float):
        super().__init__(f"ray hit junction at s={s:.12g}, t={t:.12g}")
        self.s = s
        self.t = t


class BoundaryFrame(NamedTuple):
    """Arclength frame: position, unit tangent, inward unit normal, curvature.

    Fields are scalars/(2,) vectors for scalar s, arrays/(N,2) for array s.
    """

    s: float | np.ndarray
    position: np.ndarray
    tangent: np.ndarray
    inward_normal: np.ndarray
    curvature: float | np.ndarray


class ChordClass(NamedTuple):
    endpoints: tuple[float, float]
    length: float
    kind: str                   # "interior" | "ghost" | "tangent"


def _rot90(v):
    """Left normal: rotate by +90 degrees."""
    v = np.asarray(v, dtype=float)
    out = np.empty_like(v)
    out[..., 0] = -v[..., 1]
    out[..., 1] = v[..., 0]
    return out


class CircleArc:
    """Arc of a circle, traversed in the direction sign*increasing angle."""

    def __init__(self, center, radius, angle0, sweep, sign=1.0):
        # sweep > 0 is the traversed angle; sign = -1 walks clockwise
        self.center = np.asarray(center, dtype=float)
        self.radius = float(radius)
        self.angle0 = float(angle0)
        self.sweep = float(sweep)
        self.sign = float(sign)
        self.length = self.radius * self.sweep
        self.full = abs(self.sweep - 2.0 * math.pi) < 1e-14

    def frame_local(self, u):
        th = self.angle0 + self.sign * np.asarray(u, dtype=float) / self.radius
        c, s = np.cos(th), np.sin(th)
        pos = self.center + self.radius * np.stack([c, s], axis=-1)
        tan = self.sign * np.stack([-s, c], axis=-1)
        nrm = _rot90(tan)
        kap = np.broadcast_to(self.sign / self.radius, np.shape(th)).copy()
        return pos, tan, nrm, kap

    def ray_hits(self, x, v):
        # |x + t v - c|^2 = R^2, solved with the stable quadratic form
        w = np.asarray(x, dtype=float) - self.center
        b = float(w @ v)
        c = float(w @ w) - self.radius**2
        disc = b * b - c
        if disc < 0.0:
            return []
        sq = math.sqrt(disc)
        q = -(b + math.copysign(sq, b)) if b != 0.0 else sq
        roots = {q}
        if q != 0.0:
            roots.add(c / q)
        hits = []
        for t in roots:
            p = x + t * v
            th = math.atan2(p[1] - self.center[1], p[0] - self.center[0])
            du = self.sign * (th - self.angle0)
            du = du % (2.0 * math.pi)
            u = self.radius * du
            if self.full or u <= self.length + 1e-9:
                hits.append((t, min(u, self.length)))
        return hits


class SegmentArc:
    """Straight segment from p0 to p1."""

    def __init__(self, p0, p1):
        self.p0 = np.asarray(p0, dtype=float)
        self.p1 = np.asarray(p1, dtype=float)
        d = self.p1 - self.p0
        self.length = float(np.hypot(*d))
        self.dir = d / self.length

    def frame_local(self, u):
        u = np.asarray(u, dtype=float)
        pos = self.p0 + u[..., None] * self.dir
        tan = np.broadcast_to(self.dir, pos.shape).copy()
        nrm = _rot90(tan)
        kap = np.zeros(np.shape(u))
        return pos, tan, nrm, kap

    def ray_hits(self, x, v):
        # solve t v - u dir = p0 - x by Cramer's rule
        d = self.dir
        den = v[0] * d[1] - v[1] * d[0]
        if abs(den) < 1e-14:
            return []
        w = self.p0 - np.asarray(x, dtype=float)
        t = (w[0] * d[1] - w[1] * d[0]) / den
        u = (w[0] * v[1] - w[1] * v[0]) / den
        if -1e-9 <= u <= self.length + 1e-9:
            return [(float(t), float(min(max(u, 0.0), self.length)))]
        return []


class EllipseArc:
    """Full ellipse x = a cos(phi), y = b sin(phi), traversed once CCW.

    Arclength and its inverse come from a dense cumulative table refined by
    Gauss-Legendre panels and Newton; both maps are accurate to ~1e-14.
    """

    _GL12 = np.polynomial.legendre.leggauss(12)

    def __init__(self, a, b, table_size=2048):
        self.a = float(a)
        self.b = float(b)
        k = np.arange(table_size + 1)
        self._phi = 2.0 * math.pi * k / table_size
        mids = 0.5 * (self._phi[:-1] + self._phi[1:])
        half = 0.5 * (self._phi[1] - self._phi[0])
        xg, wg = self._GL12
        nodes = mids[:, None] + half * xg[None, :]
        seg = half * np.sum(wg[None, :] * self._speed(nodes), axis=1)
        self._cum = np.concatenate([[0.0], np.cumsum(seg)])
        self.length = float(self._cum[-1])
        self.full = True

    def _speed(self, phi):
        s, c = np.sin(phi), np.cos(phi)
        return np.sqrt(self.a**2 * s * s + self.b**2 * c * c)

    def _arclength_of(self, phi):
        """Cumulative arclength from phi = 0, vectorized, phi in [0, 2pi]."""
        phi = np.asarray(phi, dtype=float)
        i = np.clip(np.searchsorted(self._phi, phi, side="right") - 1, 0, len(self._phi) - 2)
        lo = self._phi[i]
        mid = 0.5 * (lo + phi)
        half = 0.5 * (phi - lo)
        xg, wg = self._GL12
        nodes = mid[..., None] + half[..., None] * xg
        return self._cum[i] + half * np.sum(wg * self._speed(nodes), axis=-1)

    def phi_of_arclength(self, u):
        u = np.mod(np.asarray(u, dtype=float), self.length)
        phi = np.interp(u, self._cum, self._phi)
        for _ in range(4):
            phi = phi - (self._arclength_of(phi) - u) / self._speed(phi)
        return phi

    def frame_local(self, u):
        phi = self.phi_of_arclength(u)
        c, s = np.cos(phi), np.sin(phi)
        pos = np.stack([self.a * c, self.b * s], axis=-1)
        sp = self._speed(phi)
        tan = np.stack([-self.a * s, self.b * c], axis=-1) / sp[..., None]
        nrm = _rot90(tan)
        kap = self.a * self.b / sp**3
        return pos, tan, nrm, kap

    def ray_hits(self, x, v):
        # scale to the unit circle; the ray stays affine in t
        sx = np.array([x[0] / self.a, x[1] / self.b])
        sv = np.array([v[0] / self.a, v[1] / self.b])
        A = float(sv @ sv)
        B = float(sx @ sv)
        C = float(sx @ sx) - 1.0
        disc = B * B - A * C
        if disc < 0.0:
            return []
        sq = math.sqrt(disc)
        q = -(B + math.copysign(sq, B)) if B != 0.0 else sq
        roots = {q / A}
        if q != 0.0:
            roots.add(C / q)
        hits = []
        for t in roots:
            p = x + t * v
            phi = math.atan2(p[1] / self.b, p[0] / self.a) % (2.0 * math.pi)
            hits.append((float(t), float(self._arclength_of(phi))))
        return hits


class Domain:
    """Bounded planar domain with a piecewise-analytic boundary.

    Immutable after construction; every query is pure.  Multi-loop boundaries
    (the dented annulus) are supported for metric queries, but the integral
    operator assembler only accepts single smooth loops.
    """

    def __init__(self, name, arcs, area, params, *, loops=None, junctions=(),
                 corner_domain=False, convex=True, contains_fn=None,
                 margin_fn=None, spec_string=""):
        self.name = name
        self.arcs = list(arcs)
        self.params = dict(params)
        self.spec_string = spec_string or name
        lengths = [a.length for a in self.arcs]
        self.offsets = np.concatenate([[0.0], np.cumsum(lengths)])
        self.perimeter = float(self.offsets[-1])
        self.area = float(area)
        # loops: list of (first_arc_index, one_past_last) forming closed curves
        self.loops = loops if loops is not None else [(0, len(self.arcs))]
        self.junctions = np.asarray(sorted(junctions), dtype=float)
        self.corner_domain = bool(corner_domain)
        self.convex = bool(convex)
        self._contains_fn = contains_fn
        self._margin_fn = margin_fn
        if self.area <= 0 or self.perimeter <= 0:
            raise DomainSpecError("domain must have positive area and perimeter")

    # -- loop bookkeeping ---------------------------------------------------

    @property
    def single_loop(self) -> bool:
        return len(self.loops) == 1

    def loop_range(self, loop: int) -> tuple[float, float]:
        i0, i1 = self.loops[loop]
        return float(self.offsets[i0]), float(self.offsets[i1])

    def loop_of(self, s: float) -> int:
        s = self._wrap(s)
        for k in range(len(self.loops)):
            lo, hi = self.loop_range(k)
            if lo <= s < hi or (k == len(self.loops) - 1 and s >= hi - 1e-12):
                return k
        return len(self.loops) - 1

    def cyclic_distance(self, s1: float, s2: float) -> float:
        """Arclength distance along the loop containing both points."""
        k1, k2 = self.loop_of(s1), self.loop_of(s2)
        if k1 != k2:
            return math.inf
        lo, hi = self.loop_range(k1)
        span = hi - lo
        d = abs((s1 - lo) % span - (s2 - lo) % span)
        return min(d, span - d)

    def _wrap(self, s: float) -> float:
        return float(np.mod(s, self.perimeter))

    # -- frames -------------------------------------------------------------

    def _locate(self, s):
        s = np.mod(np.asarray(s, dtype=float), self.perimeter)
        idx = np.clip(np.searchsorted(self.offsets, s, side="right") - 1,
                      0, len(self.arcs) - 1)
        return s, idx, s - self.offsets[idx]

    def frame_at(self, s, side: int | None = None) -> BoundaryFrame:
        """Boundary frame at arclength s (scalar or array).

        Scalar s within 1e-12 of a junction needs side=+1 (arc after) or
        side=-1 (arc before); otherwise AmbiguousFrameError.  Array input is
        the bulk path used by quadrature grids, which avoid junctions by
        construction, so it skips the junction check.
        """
        arr = np.asarray(s, dtype=float)
        if arr.ndim == 0:
            sw = self._wrap(float(arr))
            near = None
            if len(self.junctions):
                j = int(np.argmin(np.abs(self.junctions - sw)))
                dj = abs(self.junctions[j] - sw)
                djw = min(dj, self.perimeter - dj)
                if djw < 1e-12:
                    near = float(self.junctions[j])
            if near is not None:
                if side is None:
                    raise AmbiguousFrameError(
                        f"s={sw:.12g} is a junction; pass side=+1 or side=-1")
                sw = near
                if side > 0:
                    _, idx, _ = self._locate(sw + 1e-9)
                    u = sw - self.offsets[idx]
                else:
                    _, idx, _ = self._locate(sw - 1e-9)
                    u = sw - self.offsets[idx]
                    if u < 0:
                        u += self.perimeter
                idx = int(idx)
            else:
                _, idx, u = self._locate(sw)
                idx, u = int(idx), float(u)
            pos, tan, nrm, kap = self.arcs[idx].frame_local(u)
            return BoundaryFrame(sw, pos, tan, nrm, float(kap))
        sw, idx, u = self._locate(arr)
        pos = np.empty(arr.shape + (2,))
        tan = np.empty_like(pos)
        nrm = np.empty_like(pos)
        kap = np.empty(arr.shape)
        for k in range(len(self.arcs)):
            sel = idx == k
            if np.any(sel):
                p, t, n, ka = self.arcs[k].frame_local(u[sel])
                pos[sel], tan[sel], nrm[sel], kap[sel] = p, t, n, ka
        return BoundaryFrame(sw, pos, tan, nrm, kap)

    # -- membership ---------------------------------------------------------

    def contains(self, x) -> bool | np.ndarray:
        """Point membership, exact outside a 1e-12 collar of the boundary.

        Inside the collar the answer is the sign of the same closed-form
        test, which is implementation-defined but deterministic.
        """
        x = np.asarray(x, dtype=float)
        return self._contains_fn(x)

    def boundary_margin(self, x) -> float | np.ndarray:
        """Distance to the boundary from inside (a sharp lower bound)."""
        x = np.asarray(x, dtype=float)
        return self._margin_fn(x)

    @property
    def bbox(self) -> tuple[float, float, float, float]:
        """Sampled bounding box, padded outward so it always covers the domain."""
        us = np.linspace(0.0, self.perimeter, 1024, endpoint=False)
        p = self.frame_at(us).position
        pad = 1e-3 * max(np.ptp(p[:, 0]), np.ptp(p[:, 1]))
        return (float(p[:, 0].min() - pad), float(p[:, 0].max() + pad),
                float(p[:, 1].min() - pad), float(p[:, 1].max() + pad))

    def sample_interior(self, n: int, rng, margin: float = 0.0) -> np.ndarray:
        """n interior points, at least margin away from the boundary."""
        x0, x1, y0, y1 = self.bbox
        out = []
        need = n
        while need > 0:
            cand = rng.random((max(64, 4 * need), 2))
            cand[:, 0] = x0 + (x1 - x0) * cand[:, 0]
            cand[:, 1] = y0 + (y1 - y0) * cand[:, 1]
            keep = self.contains(cand)
            if margin > 0.0:
                keep &= self.boundary_margin(cand) >= margin
            got = cand[keep]
            out.append(got[:need])
            need -= len(got[:need])
        return np.concatenate(out, axis=0)

    # -- rays and chords ----------------------------------------------------

    def first_boundary_hit(self, x, v, t_min: float = _HIT_TMIN) -> tuple[float, float]:
        """(s, t) of the first boundary point hit by the ray x + t v, t > t_min.

        Raises JunctionHit when the landing point is within JUNCTION_TOL of a
        junction, and RuntimeError when no forward hit exists (x outside).
        """
        x = np.asarray(x, dtype=float)
        v = np.asarray(v, dtype=float)
        best = None
        for k, arc in enumerate(self.arcs):
            for t, u in arc.ray_hits(x, v):
                if t > t_min and (best is None or t < best[0]):
                    best = (t, self.offsets[k] + u)
        if best is None:
            raise RuntimeError("ray found no forward boundary hit")
        t, s = best
        s = self._wrap(s)
        for j in self.junctions:
            d = abs(s - j)
            if min(d, self.perimeter - d) < JUNCTION_TOL:
                raise JunctionHit(float(j), float(t))
        return float(s), float(t)

    def classify_chord(self, s1: float, s2: float, *, n_base: int = 64,
                       n_max: int = 512) -> ChordClass:
        """Classify the open chord between boundary points s1 and s2.

        interior: an adaptively refined sampling stays in the closed domain;
        ghost: some sample leaves it; tangent: degenerate (zero-length) chord.
        Sampling uses endpoint-clustered Chebyshev points, refined by doubling
        until stable; approximate by construction.
        """
        p1 = self.frame_at(float(s1)).position
        p2 = self.frame_at(float(s2)).position
        length = float(np.hypot(*(p2 - p1)))
        if length <= 1e-9:
            return ChordClass((float(s1), float(s2)), length, "tangent")
        if self.convex:
            return ChordClass((float(s1), float(s2)), length, "interior")
        n = n_base
        while True:
            theta = (np.arange(1, n + 1) - 0.5) * math.pi / n
            tau = 0.5 * (1.0 - np.cos(theta))       # clusters at both ends
            pts = p1[None, :] + tau[:, None] * (p2 - p1)[None, :]
            inside = self.contains(pts)
            if not np.all(inside):
                return ChordClass((float(s1), float(s2)), length, "ghost")
            if n >= n_max:
                return ChordClass((float(s1), float(s2)), length, "interior")
            n *= 2

    # -- diagnostics ---------------------------------------------------------

    def greens_area(self) -> float:
        """Area from the boundary alone via Green's theorem.

        Integrated arc by arc with composite Gauss-Legendre panels, so the
        junction kinks of piecewise boundaries cost no accuracy.
        """
        xg, wg = np.polynomial.legendre.leggauss(24)
        total = 0.0
        for k, arc in enumerate(self.arcs):
            panels = max(1, int(math.ceil(arc.length)))
            edges = np.linspace(0.0, arc.length, panels + 1)
            mid = 0.5 * (edges[:-1] + edges[1:])
            half = 0.5 * (edges[1] - edges[0])
            u = (mid[:, None] + half * xg[None, :]).ravel()
            pos, tan, _, _ = arc.frame_local(u)
            integrand = pos[:, 0] * tan[:, 1] - pos[:, 1] * tan[:, 0]
            w = np.tile(half * wg, panels)
            total += 0.5 * float(np.sum(w * integrand))
        return total

    def __repr__(self):
        return (f"Domain({self.spec_string!r}, perimeter={self.perimeter:.6g}, "
                f"area={self.area:.6g}, loops={len(self.loops)})")


# -- constructors ------------------------------------------------------------

def _disc(R=1.0):
    R = float(R)
    arc = CircleArc((0.0, 0.0), R, 0.0, 2.0 * math.pi)

    def inside(x):
        return x[..., 0] ** 2 + x[..., 1] ** 2 < R * R

    def margin(x):
        return R - np.hypot(x[..., 0], x[..., 1])

    return dict(arcs=[arc], area=math.pi * R * R, contains_fn=inside,
                margin_fn=margin, convex=True)


def _ellipse(a=2.0, b=1.0):
    a, b = float(a), float(b)
    arc = EllipseArc(a, b)

    def inside(x):
        return (x[..., 0] / a) ** 2 + (x[..., 1] / b) ** 2 < 1.0

    def margin(x):
        rho = np.sqrt((x[..., 0] / a) ** 2 + (x[..., 1] / b) ** 2)
        return (1.0 - rho) * min(a, b)     # lower bound via |grad rho| <= 1/min(a,b)

    return dict(arcs=[arc], area=math.pi * a * b, contains_fn=inside,
                margin_fn=margin, convex=True)


def _stadium(a=1.0, R=1.0):
    # rectangle [-a, a] x [-R, R] with half-disc caps; s = 0 at (0, -R)
    a, R = float(a), float(R)
    arcs = [
        SegmentArc((0.0, -R), (a, -R)),
        CircleArc((a, 0.0), R, -0.5 * math.pi, math.pi),
        SegmentArc((a, R), (-a, R)),
        CircleArc((-a, 0.0), R, 0.5 * math.pi, math.pi),
        SegmentArc((-a, -R), (0.0, -R)),
    ]
    junctions = (a, a + math.pi * R, 3 * a + math.pi * R, 3 * a + 2 * math.pi * R)

    def core_dist(x):
        cx = np.clip(x[..., 0], -a, a)
        return np.hypot(x[..., 0] - cx, x[..., 1])

    def inside(x):
        return core_dist(x) < R

    def margin(x):
        return R - core_dist(x)

    return dict(arcs=arcs, area=4 * a * R + math.pi * R * R, junctions=junctions,
                contains_fn=inside, margin_fn=margin, convex=True)


def _half_disc(R=1.0):
    # upper half disc; s = 0 at the diameter midpoint, corners at (+-R, 0)
    R = float(R)
    arcs = [
        SegmentArc((0.0, 0.0), (R, 0.0)),
        CircleArc((0.0, 0.0), R, 0.0, math.pi),
        SegmentArc((-R, 0.0), (0.0, 0.0)),
    ]
    junctions = (R, R + math.pi * R)

    def inside(x):
        return (x[..., 0] ** 2 + x[..., 1] ** 2 < R * R) & (x[..., 1] > 0.0)

    def margin(x):
        return np.minimum(R - np.hypot(x[..., 0], x[..., 1]), x[..., 1])

    return dict(arcs=arcs, area=0.5 * math.pi * R * R, junctions=junctions,
                contains_fn=inside, margin_fn=margin, convex=True,
                corner_domain=True)


def _annular_dent(R=1.0, r=0.25, offset=0.5):
    # disc of radius R with a circular hole of radius r centered at (offset, 0)
    R, r, offset = float(R), float(r), float(offset)
    if offset + r >= R:
        raise DomainSpecError("hole must lie strictly inside the disc")
    outer = CircleArc((0.0, 0.0), R, 0.0, 2.0 * math.pi)
    hole = CircleArc((offset, 0.0), r, 0.0, 2.0 * math.pi, sign=-1.0)

    def inside(x):
        d0 = x[..., 0] ** 2 + x[..., 1] ** 2
        d1 = (x[..., 0] - offset) ** 2 + x[..., 1] ** 2
        return (d0 < R * R) & (d1 > r * r)

    def margin(x):
        return np.minimum(R - np.hypot(x[..., 0], x[..., 1]),
                          np.hypot(x[..., 0] - offset, x[..., 1]) - r)

    return dict(arcs=[outer, hole], area=math.pi * (R * R - r * r),
                loops=[(0, 1), (1, 2)], contains_fn=inside, margin_fn=margin,
                convex=False)


_SHAPES = {
    "disc": (_disc, ("R",)),
    "ellipse": (_ellipse, ("a", "b")),
    "stadium": (_stadium, ("a", "R")),
    "half_disc": (_half_disc, ("R",)),
    "annular_dent": (_annular_dent, ("R", "r", "offset")),
}


def parse_domain_spec(spec: str) -> tuple[str, dict]:
    """Parse 'stadium:a=1,R=1' into ('stadium', {'a': 1.0, 'R': 1.0})."""
    name, _, tail = spec.partition(":")
    name = name.strip()
    if name not in _SHAPES:
        raise DomainSpecError(
            f"unknown shape {name!r}; choose from {sorted(_SHAPES)}")
    params = {}
    if tail.strip():
        for item in tail.split(","):
            key, eq, val = item.partition("=")
            key = key.strip()
            if not eq or key not in _SHAPES[name][1]:
                raise DomainSpecError(
                    f"bad parameter {item!r} for shape {name!r}")
            try:
                params[key] = float(val)
            except ValueError:
                raise DomainSpecError(f"non-numeric value in {item!r}") from None
    return name, params


def build_domain(spec: str, **params) -> Domain:
    """Build a named domain: 'disc', 'ellipse', 'stadium', 'half_disc',
    'annular_dent', optionally with spec-string parameters ('disc:R=2') or
    keyword parameters (build_domain('disc', R=2)).
    """
    name, parsed = parse_domain_spec(spec)
    ctor, names = _SHAPES[name]
    full = dict(zip(names, ctor.__defaults__))
    for key in {**parsed, **params}:
        if key not in full:
            raise DomainSpecError(f"bad parameter {key!r} for shape {name!r}")
    full.update(parsed)
    full.update(params)
    for v in full.values():
        if not (isinstance(v, (int, float)) and v > 0 and math.isfinite(v)):
            raise DomainSpecError("shape parameters must be positive finite numbers")
    parts = ctor(**full)
    spec_string = name + ":" + ",".join(f"{k}={full[k]:g}" for k in names)
    return Domain(name, parts.pop("arcs"), parts.pop("area"), full,
                  spec_string=spec_string, **parts)
