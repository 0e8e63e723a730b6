"""Spectral asymptotics read off the boundary.

Everything here consumes a SpectralSeries: a frequency-sorted list of
(eigenvalue, boundary trace) pairs living on one Nystrom grid, wrapped with
enough provenance to know whether the list is complete up to its top
frequency.  On top of that sit the pointwise sums of squared trace values
and their jumps, log-log growth-exponent fits with bootstrap intervals,
per-mode norm tables with an interpolation-refined sup, the time-side wave
trace, and a two-term count audit that flags windows where the scan likely
missed an eigenvalue.

Off-node trace values come from global trigonometric interpolation of the
midpoint node samples, the same convention the observable quantization
uses, so one point query costs an FFT-sized inner product and is cached
per basepoint.

The wave trace sums exp(i t lam_j) |u_j^b(q)|^2 under a Gaussian frequency
window.  A series truncated at lam_max only resolves time structure
coarser than ~1/lam_max, so the width argument is gated at
4 pi / lam_max; past the gate, peak times of the modulus land on lengths
of billiard loops through the basepoint, which the billiard-side loop
scan provides independently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.signal import find_peaks

from .geometry import Domain
from .layer_ops import NystromGrid, check_bc
from .spectrum import SpectrumStore, two_term_weyl

WAVE_RESOLUTION_FACTOR = 4.0 * math.pi
MIN_FIT_POINTS = 20
MIN_WINDOW_RATIO = 4.0


class SpectralSeries:
    """Frequency-sorted eigenpairs on one grid, with point evaluation.

    from_store wraps a scan result, carrying its completeness flag and top
    frequency; from_modes wraps closed-form disc or half-disc eigenpairs.
    A point query returns every |u_j^b(q)|^2 at once plus the running sum,
    cached per basepoint, so counting-function sweeps stay cheap.
    """

    def __init__(self, bc: str, traces: Sequence, grid: NystromGrid,
                 lam_max: float, complete: bool, provenance: str):
        check_bc(bc)
        self.bc = bc
        self.traces = sorted(traces, key=lambda t: t.lam)
        self.lams = np.array([t.lam for t in self.traces])
        self.grid = grid
        self.lam_max = float(lam_max)
        self.complete = bool(complete)
        self.provenance = provenance
        self._coeffs = None
        self._points: dict = {}

    @classmethod
    def from_store(cls, store: SpectrumStore,
                   grid: NystromGrid | None = None) -> "SpectralSeries":
        if grid is None:
            grid = store.rebuild_grid()
        meta = store.scan_meta
        lam_max = float(meta.get("lam_hi", meta.get("scan_upto", 0.0)))
        return cls(store.bc, list(store.traces), grid, lam_max,
                   bool(meta.get("complete", False)),
                   f"store:{store.domain_spec}")

    @classmethod
    def from_modes(cls, modes: Sequence, grid: NystromGrid,
                   lam_max: float) -> "SpectralSeries":
        kept = [t for t in modes if t.lam <= lam_max]
        if not kept:
            raise ValueError("no modes at or below lam_max")
        return cls(kept[0].bc, kept, grid, float(lam_max), True, "analytic")

    def count_upto(self, lam: float) -> int:
        """N(lam): eigenvalues at or below lam, right continuous in lam."""
        return int(np.searchsorted(self.lams, lam, side="right"))

    def _coeff_matrix(self) -> np.ndarray:
        if self._coeffs is None:
            n = self.grid.n
            if self.traces:
                c = np.fft.fft(np.vstack([t.trace for t in self.traces]),
                               axis=1)
            else:
                c = np.zeros((0, n), dtype=complex)
            self._coeffs = np.concatenate([c, c[:, n // 2:n // 2 + 1]],
                                          axis=1)
        return self._coeffs

    def boundary_values_sq(self, s: float) -> tuple[np.ndarray, np.ndarray]:
        """All |u_j^b(q)|^2 and their running sum, q at arclength s."""
        per = self.grid.domain.perimeter
        key = round(float(s) % per, 12)
        hit = self._points.get(key)
        if hit is None:
            n = self.grid.n
            ks = np.fft.fftfreq(n, d=1.0 / n)
            # split the unmatched Nyquist mode symmetrically
            ks_ext = np.concatenate([ks, [-ks[n // 2]]])
            tau = float(self.grid.t_of_s(key)) - math.pi / n
            row = np.exp(1j * tau * ks_ext) / n
            row[n // 2] *= 0.5
            row[n] *= 0.5
            vals = np.abs(self._coeff_matrix() @ row) ** 2
            hit = (vals, np.cumsum(vals))
            self._points[key] = hit
        return hit


def pointwise_spectral_sum(series: SpectralSeries, s: float,
                           lam: float) -> float:
    """Sum of |u_j^b(q)|^2 over eigenvalues up to lam, q at arclength s."""
    if not series.complete:
        raise ValueError("series is incomplete; partial sums would be "
                         "biased low")
    if lam > series.lam_max * (1.0 + 1e-12):
        raise ValueError(f"series is complete only up to "
                         f"lam={series.lam_max:g}")
    _, cum = series.boundary_values_sq(s)
    k = series.count_upto(lam)
    return float(cum[k - 1]) if k else 0.0


def pointwise_interval_sum(series: SpectralSeries, s: float,
                           lam_lo: float, lam_hi: float) -> float:
    """Band restriction of the pointwise sum to (lam_lo, lam_hi]."""
    return (pointwise_spectral_sum(series, s, lam_hi)
            - pointwise_spectral_sum(series, s, lam_lo))


def jump_bound(series: SpectralSeries, s: float, lam: float,
               *, tol: float = 1e-6) -> float:
    """Jump of the pointwise sum at an eigenvalue: the cluster mass at q.

    Sums |u_j^b(q)|^2 over every series member within relative tol of
    lam, so degenerate pairs contribute both members.
    """
    sel = np.abs(series.lams - lam) <= tol * max(1.0, abs(lam))
    if not np.any(sel):
        raise ValueError(f"lam={lam:g} is not an eigenvalue of the series")
    vals, _ = series.boundary_values_sq(s)
    return float(vals[sel].sum())


@dataclass(frozen=True)
class ExponentFit:
    tag: str
    exponent: float
    ci_low: float
    ci_high: float
    window: tuple[float, float]
    residual_rms: float
    n_points: int


def exponent_fit(lams, values, window, *, tag: str = "",
                 n_boot: int = 400, seed: int = 0) -> ExponentFit:
    """Log-log slope of sampled values against frequency over a window.

    Plain least squares on the log-log pairs inside the window, with a
    bootstrap-over-points 95% interval.  The window must span at least a
    factor MIN_WINDOW_RATIO in frequency and hold MIN_FIT_POINTS samples;
    narrower fits dress noise up as exponents.
    """
    lo, hi = float(window[0]), float(window[1])
    if not (lo > 0.0 and hi > lo and hi / lo >= MIN_WINDOW_RATIO):
        raise ValueError("fit window must be positive and span at least a "
                         f"factor {MIN_WINDOW_RATIO:g} in frequency")
    lams = np.asarray(lams, dtype=float)
    values = np.asarray(values, dtype=float)
    sel = (lams >= lo) & (lams <= hi)
    n_in = int(sel.sum())
    if n_in < MIN_FIT_POINTS:
        raise ValueError(f"need at least {MIN_FIT_POINTS} samples in the "
                         f"window, got {n_in}")
    if np.any(values[sel] <= 0.0):
        raise ValueError("log-log fit needs positive values")
    x = np.log(lams[sel])
    y = np.log(values[sel])
    design = np.column_stack([x, np.ones_like(x)])
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    resid = y - design @ coef
    rng = np.random.default_rng(seed)
    picks = rng.integers(0, n_in, size=(n_boot, n_in))
    slopes = np.empty(n_boot)
    for b in range(n_boot):
        cb, *_ = np.linalg.lstsq(design[picks[b]], y[picks[b]], rcond=None)
        slopes[b] = cb[0]
    ci_lo, ci_hi = np.percentile(slopes, [2.5, 97.5])
    return ExponentFit(tag, float(coef[0]), float(ci_lo), float(ci_hi),
                       (lo, hi), float(np.sqrt(np.mean(resid ** 2))), n_in)


def binned_maxima(lams, values, *, lam_lo: float, lam_hi: float,
                  n_bins: int) -> tuple[np.ndarray, np.ndarray]:
    """Envelope samples: the largest value in each uniform frequency bin.

    Returns (frequency of each bin's maximizer, that maximum) over the
    nonempty bins.  Bins must stay wider than the record-setting family's
    own spacing, or low bins sample sub-extremal modes and the envelope
    exponent drifts; uniform bins make that a single width check.
    """
    lams = np.asarray(lams, dtype=float)
    values = np.asarray(values, dtype=float)
    keep = (lams >= lam_lo) & (lams <= lam_hi)
    lams, values = lams[keep], values[keep]
    edges = np.linspace(lam_lo, lam_hi, n_bins + 1)
    idx = np.minimum(np.digitize(lams, edges) - 1, n_bins - 1)
    xs, ys = [], []
    for b in range(n_bins):
        sel = idx == b
        if np.any(sel):
            j = int(np.argmax(values[sel]))
            xs.append(lams[sel][j])
            ys.append(values[sel][j])
    return np.array(xs), np.array(ys)


def _dense_values(trace: np.ndarray,
                  factor: int) -> tuple[np.ndarray, np.ndarray]:
    """Trigonometric upsampling of midpoint node samples.

    Returns (t, values) at factor*n points offset by the coarse half
    step, so index factor*j reproduces node j exactly and no per-mode
    phase is needed; the Nyquist coefficient is split symmetrically.
    """
    n = len(trace)
    m = factor * n
    ks = np.fft.fftfreq(n, d=1.0 / n).astype(int)
    c = np.fft.fft(np.asarray(trace, dtype=complex)) / n
    big = np.zeros(m, dtype=complex)
    big[ks] = c
    big[n // 2] = 0.5 * c[n // 2]
    big[m - n // 2] = 0.5 * c[n // 2]
    t = 2.0 * math.pi * np.arange(m) / m + math.pi / n
    return t, np.fft.ifft(big) * m


def _trig_evaluator(trace: np.ndarray):
    """Scalar-t evaluator of the node interpolant, for sup refinement."""
    n = len(trace)
    ks = np.fft.fftfreq(n, d=1.0 / n)
    ks_ext = np.concatenate([ks, [-ks[n // 2]]])
    a = np.fft.fft(np.asarray(trace, dtype=complex)) / n
    a = np.concatenate([a, a[n // 2:n // 2 + 1]])
    a[n // 2] *= 0.5
    a[n] *= 0.5
    shift = math.pi / n

    def ev(t: float) -> complex:
        return a @ np.exp(1j * (t - shift) * ks_ext)

    return ev


def trace_norm(trace: np.ndarray, grid: NystromGrid, p) -> float:
    """Discrete L^p boundary norm against the quadrature weights.

    p = inf takes the grid champion of a 4x trigonometric upsampling and
    finishes with a bounded maximization of the interpolant's squared
    modulus; band-limited traces make that a faithful global sup.
    """
    tr = np.asarray(trace, dtype=complex)
    if p == math.inf:
        t_pts, vals = _dense_values(tr, 4)
        mod = np.abs(vals)
        j = int(np.argmax(mod))
        h = t_pts[1] - t_pts[0]
        ev = _trig_evaluator(tr)
        res = minimize_scalar(lambda t: -abs(ev(t)) ** 2,
                              bounds=(t_pts[j] - h, t_pts[j] + h),
                              method="bounded", options={"xatol": 1e-12})
        return math.sqrt(max(-float(res.fun), float(mod[j]) ** 2))
    p = float(p)
    if p < 1.0:
        raise ValueError("p must be >= 1 (or inf)")
    return float((grid.weights @ np.abs(tr) ** p) ** (1.0 / p))


class TraceNorms(NamedTuple):
    lam: float
    l2: float
    l4: float
    l8: float
    sup: float


def norms_table(series: SpectralSeries) -> list[TraceNorms]:
    """Per-mode L2/L4/L8/sup boundary norms, frequency sorted."""
    return [TraceNorms(float(t.lam),
                       trace_norm(t.trace, series.grid, 2),
                       trace_norm(t.trace, series.grid, 4),
                       trace_norm(t.trace, series.grid, 8),
                       trace_norm(t.trace, series.grid, math.inf))
            for t in series.traces]


def tataru_ratio(eigentrace, grid: NystromGrid) -> float:
    """Boundary L2 mass of a unit-interior-mass Neumann eigenfunction.

    The interior normalization is baked into the trace, so the boundary
    L2 norm is itself the boundary-to-interior ratio; the interesting
    ceiling to plot it against is lam^(1/3).  Diagnostic only.
    """
    if eigentrace.bc != "neumann":
        raise ValueError("boundary-mass ratio applies to Neumann traces; "
                         f"got {eigentrace.bc!r}")
    return trace_norm(eigentrace.trace, grid, 2)


@dataclass
class WaveTrace:
    t: np.ndarray
    values: np.ndarray
    sigma_t: float
    value_at_zero: float
    peak_times: np.ndarray
    peak_heights: np.ndarray


def wave_trace(series: SpectralSeries, s: float, t_grid, sigma_t: float,
               *, peak_floor_t: float = 0.5,
               peak_prominence: float = 0.10) -> WaveTrace:
    """Frequency-smoothed boundary wave trace at a point, with peak times.

    Sums exp(i t lam_j) exp(-lam_j^2 sigma_t^2 / 2) |u_j^b(q)|^2, so each
    travel-time singularity smears into a bump of width ~sigma_t.  Peaks
    of the modulus past peak_floor_t are reported with prominence gauged
    against the t = 0 mass; the t = 0 lobe itself is not a peak.
    """
    if sigma_t * series.lam_max < WAVE_RESOLUTION_FACTOR:
        raise ValueError("sigma_t is below the resolution bound "
                         f"{WAVE_RESOLUTION_FACTOR:g}/lam_max; peaks would "
                         "drown in truncation ringing")
    vals2, _ = series.boundary_values_sq(s)
    w = np.exp(-0.5 * (series.lams * sigma_t) ** 2) * vals2
    t_grid = np.asarray(t_grid, dtype=float)
    values = np.exp(1j * np.outer(t_grid, series.lams)) @ w
    w0 = float(w.sum())
    mod = np.abs(values)
    locs, _ = find_peaks(mod, prominence=peak_prominence * w0)
    keep = t_grid[locs] >= peak_floor_t
    return WaveTrace(t_grid, values, float(sigma_t), w0,
                     t_grid[locs][keep], mod[locs][keep])


@dataclass
class WeylAudit:
    max_deviation: float
    max_smoothed_deviation: float
    suspected_gaps: list[tuple[float, float]]
    lam_grid: np.ndarray
    deviation: np.ndarray
    smoothed: np.ndarray


def weyl_audit(series: SpectralSeries, domain: Domain, *,
               step: float = 0.01, smooth_window: float = 2.0,
               gap_threshold: float = 0.8) -> WeylAudit:
    """Two-term count deviation over the series range, with gap flags.

    deviation(lam) = N(lam) minus the two-term count.  Its raw sup is
    dominated by genuine count oscillation (order sqrt(lam) on round
    domains), so the tracking quality lives in the centered moving
    average over smooth_window, reported separately.  Any stretch
    dropping gap_threshold below the median of the smoothed deviation is
    flagged as a suspected missed-eigenvalue window; the flags are
    relative, so a uniformly shifted count (a series that starts above
    frequency zero, say) does not trigger them.
    """
    lam = np.arange(0.0, series.lam_max + step, step)
    counts = np.searchsorted(series.lams, lam, side="right")
    dev = counts - two_term_weyl(domain, series.bc, lam)
    k = max(int(round(smooth_window / step)) | 1, 3)
    sm = np.convolve(dev, np.ones(k) / k, mode="same")
    core = slice(k // 2, len(sm) - k // 2)
    flagged = sm < np.median(sm[core]) - gap_threshold
    flagged[:k // 2] = False
    flagged[len(flagged) - k // 2:] = False
    gaps = []
    start = None
    for j, f in enumerate(flagged):
        if f and start is None:
            start = lam[j]
        elif not f and start is not None:
            gaps.append((float(start), float(lam[j - 1])))
            start = None
    if start is not None:
        gaps.append((float(start), float(lam[-1])))
    return WeylAudit(float(np.abs(dev).max()),
                     float(np.abs(sm[core]).max()), gaps, lam, dev, sm)
