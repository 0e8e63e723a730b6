"""Billiard map on the boundary phase space, and its weighted transfer operator.

Phase points are (s, eta): arclength and tangential momentum, |eta| < 1, with
gamma = sqrt(1 - eta^2) the normal component.  One step lifts the phase point
to the inward unit direction eta*tangent + gamma*normal, traces the ray to the
next boundary hit, and projects back; reflection preserves the tangential
component, which is what makes uniform ds d(eta) invariant.

Trajectories terminate when a ray lands on a junction (the map is undefined
there) or when the arrival direction is numerically grazing.  Both events
carry measure zero; statistics report the completed fraction.

Stepping runs in plain scalar floats on domains made of circle arcs and
segments, with a generic fallback through the geometry layer for the rest.
Both paths are property-tested against each other.
"""

from __future__ import annotations

import bisect
import math
from typing import Callable, NamedTuple

import numpy as np

from .geometry import ChordClass, CircleArc, Domain, JunctionHit, SegmentArc

GRAZING_GAMMA = 1e-8
_TWO_PI = 2.0 * math.pi


class GrazingError(RuntimeError):
    """Arrival direction too close to tangency for a reliable reflection."""


class PhasePoint(NamedTuple):
    s: float
    eta: float
    gamma: float


def phase_point(s: float, eta: float) -> PhasePoint:
    """Validated phase point with cached normal component."""
    eta = float(eta)
    if not abs(eta) < 1.0:
        raise ValueError("tangential momentum must satisfy |eta| < 1")
    return PhasePoint(float(s), eta, math.sqrt(1.0 - eta * eta))


class BilliardStepResult(NamedTuple):
    next: PhasePoint | None
    chord: ChordClass
    flight_length: float
    terminated: str | None = None       # None | "corner" | "grazing"


class Trajectory(NamedTuple):
    steps: list[BilliardStepResult]
    cumulative_lengths: np.ndarray
    terminated: str | None


class LoopProfile(NamedTuple):
    basepoint: float
    samples: list[tuple[float, float, float]]   # (eta, n_return or inf, distance)
    loop_measure_estimate: float
    confidence_halfwidth: float
    n_max: int
    tol: float


def lift(domain: Domain, q: PhasePoint) -> np.ndarray:
    """Inward unit direction eta*tangent + gamma*inward_normal at q."""
    fr = domain.frame_at(q.s)
    return q.eta * fr.tangent + q.gamma * fr.inward_normal


class _FastStepper:
    """Scalar-float stepping tables for circle/segment boundaries."""

    __slots__ = ("arcs", "junctions", "perimeter")

    def __init__(self, domain: Domain):
        self.arcs = []
        for arc, off in zip(domain.arcs, domain.offsets):
            if isinstance(arc, CircleArc):
                self.arcs.append((
                    "c", float(arc.center[0]), float(arc.center[1]),
                    arc.radius, arc.angle0, arc.sign, arc.length, float(off),
                    arc.full,
                ))
            elif isinstance(arc, SegmentArc):
                self.arcs.append((
                    "s", float(arc.p0[0]), float(arc.p0[1]),
                    float(arc.dir[0]), float(arc.dir[1]), arc.length, float(off),
                ))
            else:
                raise TypeError("fast stepping needs circle/segment arcs")
        self.junctions = [float(j) for j in domain.junctions]
        self.perimeter = domain.perimeter

    def frame(self, s: float):
        """(x, y, tx, ty, nx, ny) at arclength s, plain floats."""
        s = s % self.perimeter
        for rec in self.arcs:
            off = rec[7] if rec[0] == "c" else rec[6]
            length = rec[6] if rec[0] == "c" else rec[5]
            if off <= s <= off + length + 1e-12:
                u = s - off
                if rec[0] == "c":
                    _, cx, cy, R, a0, sg, _, _, _ = rec
                    th = a0 + sg * u / R
                    ct, st = math.cos(th), math.sin(th)
                    tx, ty = -sg * st, sg * ct
                    return cx + R * ct, cy + R * st, tx, ty, -ty, tx
                _, px, py, dx, dy, _, _ = rec
                return px + u * dx, py + u * dy, dx, dy, -dy, dx
        raise RuntimeError("arclength outside boundary range")

    def hit(self, x: float, y: float, vx: float, vy: float,
            t_min: float = 1e-9) -> tuple[float, float]:
        best_t = math.inf
        best_s = 0.0
        for rec in self.arcs:
            if rec[0] == "c":
                _, cx, cy, R, a0, sg, length, off, full = rec
                wx, wy = x - cx, y - cy
                b = wx * vx + wy * vy
                c = wx * wx + wy * wy - R * R
                disc = b * b - c
                if disc < 0.0:
                    continue
                sq = math.sqrt(disc)
                q = -(b + math.copysign(sq, b)) if b != 0.0 else sq
                roots = (q, c / q) if q != 0.0 else (q,)
                for t in roots:
                    if t <= t_min or t >= best_t:
                        continue
                    th = math.atan2(y + t * vy - cy, x + t * vx - cx)
                    u = R * ((sg * (th - a0)) % _TWO_PI)
                    if full or u <= length + 1e-9:
                        best_t = t
                        best_s = off + min(u, length)
            else:
                _, px, py, dx, dy, length, off = rec
                den = vx * dy - vy * dx
                if abs(den) < 1e-14:
                    continue
                wx, wy = px - x, py - y
                t = (wx * dy - wy * dx) / den
                if t <= t_min or t >= best_t:
                    continue
                u = (wx * vy - wy * vx) / den
                if -1e-9 <= u <= length + 1e-9:
                    best_t = t
                    best_s = off + min(max(u, 0.0), length)
        if not math.isfinite(best_t):
            raise RuntimeError("ray found no forward boundary hit")
        s = best_s % self.perimeter
        for j in self.junctions:
            d = abs(s - j)
            if min(d, self.perimeter - d) < 1e-9:
                raise JunctionHit(j, best_t)
        return best_t, s


def _stepper(domain: Domain) -> _FastStepper | None:
    try:
        return domain._billiard_stepper
    except AttributeError:
        try:
            st = _FastStepper(domain)
        except TypeError:
            st = None
        domain._billiard_stepper = st
        return st


def _step_generic(domain: Domain, q: PhasePoint) -> BilliardStepResult:
    """Reference stepping path through the vector geometry layer."""
    if q.gamma < GRAZING_GAMMA:
        raise GrazingError(f"gamma={q.gamma:.3g} below cutoff")
    fr = domain.frame_at(q.s)
    v = q.eta * fr.tangent + q.gamma * fr.inward_normal
    try:
        s2, t = domain.first_boundary_hit(fr.position, v)
    except JunctionHit as hit:
        chord = ChordClass((q.s, hit.s), hit.t, "interior")
        return BilliardStepResult(None, chord, hit.t, "corner")
    fr2 = domain.frame_at(s2)
    eta2 = float(v @ fr2.tangent)
    gamma2 = -float(v @ fr2.inward_normal)
    chord = ChordClass((q.s, s2), t, "interior")
    if gamma2 < GRAZING_GAMMA or abs(eta2) >= 1.0:
        return BilliardStepResult(None, chord, t, "grazing")
    return BilliardStepResult(PhasePoint(s2, eta2, gamma2), chord, t)


def step(domain: Domain, q: PhasePoint) -> BilliardStepResult:
    """One bounce; terminal results carry the reason instead of a next point."""
    st = _stepper(domain)
    if st is None:
        return _step_generic(domain, q)
    if q.gamma < GRAZING_GAMMA:
        raise GrazingError(f"gamma={q.gamma:.3g} below cutoff")
    x, y, tx, ty, nx, ny = st.frame(q.s)
    vx = q.eta * tx + q.gamma * nx
    vy = q.eta * ty + q.gamma * ny
    try:
        t, s2 = st.hit(x, y, vx, vy)
    except JunctionHit as hit:
        chord = ChordClass((q.s, hit.s), hit.t, "interior")
        return BilliardStepResult(None, chord, hit.t, "corner")
    _, _, tx2, ty2, nx2, ny2 = st.frame(s2)
    eta2 = vx * tx2 + vy * ty2
    gamma2 = -(vx * nx2 + vy * ny2)
    chord = ChordClass((q.s, s2), t, "interior")
    if gamma2 < GRAZING_GAMMA or abs(eta2) >= 1.0:
        return BilliardStepResult(None, chord, t, "grazing")
    return BilliardStepResult(PhasePoint(s2, eta2, gamma2), chord, t)


def trajectory(domain: Domain, q0: PhasePoint, n: int) -> Trajectory:
    """n bounces from q0, or fewer if the orbit dies at a junction/tangency."""
    steps = []
    lengths = []
    total = 0.0
    terminated = None
    q = q0
    for _ in range(n):
        res = step(domain, q)
        steps.append(res)
        total += res.flight_length
        lengths.append(total)
        if res.next is None:
            terminated = res.terminated
            break
        q = res.next
    return Trajectory(steps, np.asarray(lengths), terminated)


class BirkhoffResult(NamedTuple):
    value: float
    n_requested: int
    n_completed: int
    terminated: str | None


def birkhoff_average(domain: Domain, q0: PhasePoint,
                     observable: Callable[[float, float], float],
                     n: int) -> BirkhoffResult:
    """Time average (1/N) sum observable(beta^k q0) over k < N.

    Early termination returns the partial average with the completed count.
    """
    st = _stepper(domain)
    total = observable(q0.s, q0.eta)
    count = 1
    terminated = None
    if st is not None:
        s, eta, gamma = q0.s, q0.eta, q0.gamma
        frame = st.frame(s)
        for _ in range(n - 1):
            x, y, tx, ty, nx, ny = frame
            vx = eta * tx + gamma * nx
            vy = eta * ty + gamma * ny
            try:
                _, s = st.hit(x, y, vx, vy)
            except JunctionHit:
                terminated = "corner"
                break
            frame = st.frame(s)
            eta = vx * frame[2] + vy * frame[3]
            gamma = -(vx * frame[4] + vy * frame[5])
            if gamma < GRAZING_GAMMA or abs(eta) >= 1.0:
                terminated = "grazing"
                break
            total += observable(s, eta)
            count += 1
    else:
        q = q0
        for _ in range(n - 1):
            res = step(domain, q)
            if res.next is None:
                terminated = res.terminated
                break
            q = res.next
            total += observable(q.s, q.eta)
            count += 1
    return BirkhoffResult(total / count, n, count, terminated)


def transfer_apply(domain: Domain, f: Callable[[float, float], float],
                   q: PhasePoint, adjoint: bool = False) -> float:
    """Weighted transfer operator (Tf)(q) = [gamma(q)/gamma(beta q)] f(beta q).

    adjoint=True applies the companion weight gamma(beta q)/gamma(q).
    """
    res = step(domain, q)
    if res.next is None:
        raise GrazingError(f"transfer undefined: orbit terminated ({res.terminated})")
    q2 = res.next
    w = q2.gamma / q.gamma if adjoint else q.gamma / q2.gamma
    return w * f(q2.s, q2.eta)


def loop_profile(domain: Domain, s: float, n_max: int = 20,
                 n_samples: int = 2000, tol: float = 1e-3,
                 seed: int = 0) -> LoopProfile:
    """Fraction of directions at basepoint s whose orbit base returns to s.

    For each sampled eta, the smallest n <= n_max with cyclic distance
    |base(beta^n) - s| <= tol counts as a loop; terminated orbits never do.
    The estimate carries a 95% binomial confidence half-width.
    """
    rng = np.random.default_rng(seed)
    samples = []
    loops = 0
    for eta in rng.uniform(-1.0, 1.0, size=n_samples):
        if 1.0 - eta * eta < GRAZING_GAMMA**2:
            continue
        q = phase_point(s, eta)
        best = math.inf
        found = math.inf
        for nstep in range(1, n_max + 1):
            res = step(domain, q)
            if res.next is None:
                break
            q = res.next
            d = domain.cyclic_distance(q.s, s)
            best = min(best, d)
            if d <= tol:
                found = nstep
                break
        if math.isfinite(found):
            loops += 1
        samples.append((float(eta), found, best))
    n_eff = max(len(samples), 1)
    p = loops / n_eff
    half = 1.96 * math.sqrt(max(p * (1.0 - p), 1.0 / n_eff) / n_eff)
    return LoopProfile(float(s), samples, p, half, n_max, tol)


def loop_lengths(domain: Domain, s: float, *, n_max: int = 8,
                 n_samples: int = 20000, tol: float = 5e-3,
                 cluster_gap: float = 0.25) -> list[tuple[float, int]]:
    """Geometric lengths of loops based at s, clustered over directions.

    Sweeps eta uniformly over (-1, 1), follows each orbit for up to n_max
    bounces, and records the accumulated flight length the first time the
    base returns within tol of s.  Terminated orbits are dropped.  Lengths
    closer than cluster_gap merge; returns (mean length, hit count) pairs
    sorted by length.
    """
    lengths = []
    for eta in np.linspace(-1.0, 1.0, n_samples + 2)[1:-1]:
        q = phase_point(s, eta)
        total = 0.0
        for _ in range(n_max):
            res = step(domain, q)
            if res.next is None:
                total = math.nan
                break
            total += res.flight_length
            q = res.next
            if domain.cyclic_distance(q.s, s) <= tol:
                break
        else:
            total = math.nan
        if math.isfinite(total):
            lengths.append(total)
    lengths.sort()
    clusters: list[list[float]] = []
    for val in lengths:
        if clusters and val - clusters[-1][-1] <= cluster_gap:
            clusters[-1].append(val)
        else:
            clusters.append([val])
    return [(float(np.mean(c)), len(c)) for c in clusters]
