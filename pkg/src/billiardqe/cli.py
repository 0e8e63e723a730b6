"""Batch command-line surface over the library.

One entry point, `billiardqe`, with subcommands for domain metrics,
billiard orbits and loop scans, spectrum builds, trace export,
equidistribution reports, count audits, and the time-side wave trace.
Every run writes plot-ready CSV/JSON artifacts plus a manifest naming the
configuration hash, the code version, and what quantity each file holds.

Settings resolve in three layers: dataclass defaults, then an optional
TOML file (--config), then explicit flags.  Spectrum builds land in a
content-keyed cache (domain spec, boundary condition, grid policy, scan
step, frequency window, code version), so reruns with the same settings
reuse the stored result and reruns with any of those changed rebuild.

Exit codes: 0 success, 2 configuration or usage error, 3 unmet
precondition (missing store, frequency out of range, unresolvable
request), 4 numerical acceptance failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import subprocess
import sys
from dataclasses import dataclass, field, fields

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:                 # 3.10 fallback, same API
    import tomli as tomllib

from . import __version__, qe
from . import asymptotics as asym
from .billiard import GrazingError, loop_lengths, loop_profile, \
    phase_point, trajectory
from .geometry import Domain, DomainSpecError, build_domain
from .layer_ops import check_bc
from .spectrum import SpectrumStore, analytic_modes, build_spectrum, \
    two_term_weyl

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_PRECONDITION = 3
EXIT_NUMERIC = 4

DEFAULT_THRESHOLDS = {
    "weyl_smooth_window": 2.0,      # moving-average span for count audits
    "weyl_gap_threshold": 0.8,      # drop below median flagged as a gap
    "peak_prominence": 0.10,        # wave-trace peak floor vs t=0 mass
}


class ConfigError(ValueError):
    """Rejected settings: unknown keys, bad specs, inconsistent ranges."""


@dataclass
class ExperimentConfig:
    """Batch-run settings; every field has a working default.

    domain       shape spec string, e.g. 'stadium:a=1,R=1'
    bc           'dirichlet' or 'neumann'
    lam_min/max  frequency window for scans and series queries
    dlam         fixed scan step; 0 lets the scanner adapt to the local
                 mean spacing
    ppw          grid points per wavelength at lam_max
    observable   'const' or 'bump:center=C,concentration=K' with C a
                 perimeter fraction
    probe_s      boundary arclength for pointwise and wave-trace queries
    sigma_t      wave-trace smoothing width; 0 picks the resolution bound
                 4 pi / lam_max
    seed         global seed for every stochastic subsample
    out_dir      artifact directory for the subcommand's outputs
    cache_dir    root of the persistent spectrum-store cache
    thresholds   flagging constants, see DEFAULT_THRESHOLDS
    """

    domain: str = "disc:R=1"
    bc: str = "dirichlet"
    lam_min: float = 0.5
    lam_max: float = 12.0
    dlam: float = 0.0
    ppw: float = 12.0
    observable: str = "const"
    probe_s: float = 0.0
    sigma_t: float = 0.0
    seed: int = 0
    out_dir: str = "runs"
    cache_dir: str = "runs/cache"
    thresholds: dict = field(
        default_factory=lambda: dict(DEFAULT_THRESHOLDS))

    def validate(self) -> "ExperimentConfig":
        try:
            check_bc(self.bc)
            build_domain(self.domain)
        except (ValueError, DomainSpecError) as exc:
            raise ConfigError(str(exc)) from exc
        for name in ("lam_min", "lam_max", "dlam", "ppw", "probe_s",
                     "sigma_t"):
            val = getattr(self, name)
            if not math.isfinite(val):
                raise ConfigError(f"{name} must be finite, got {val!r}")
        if not 0.0 < self.lam_min < self.lam_max:
            raise ConfigError("need 0 < lam_min < lam_max, got "
                              f"({self.lam_min:g}, {self.lam_max:g})")
        if self.dlam < 0.0 or self.ppw <= 0.0:
            raise ConfigError("dlam must be >= 0 and ppw > 0")
        unknown = set(self.thresholds) - set(DEFAULT_THRESHOLDS)
        if unknown:
            raise ConfigError(f"unknown thresholds {sorted(unknown)}")
        parse_observable(self.observable, build_domain(self.domain))
        return self

    def to_dict(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in fields(self)}
        out["thresholds"] = dict(self.thresholds)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f.name: f.type for f in fields(cls)}
        unknown = set(data) - set(known)
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        kwargs = {}
        for f in fields(cls):
            if f.name not in data:
                continue
            val = data[f.name]
            if f.name == "thresholds":
                if not isinstance(val, dict):
                    raise ConfigError("thresholds must be a table")
                merged = dict(DEFAULT_THRESHOLDS)
                merged.update({k: float(v) for k, v in val.items()})
                kwargs[f.name] = merged
            elif f.name == "seed":
                kwargs[f.name] = int(val)
            elif isinstance(getattr(cls, f.name), float):
                kwargs[f.name] = float(val)
            else:
                kwargs[f.name] = str(val)
        return cls(**kwargs)

    def to_toml(self) -> str:
        lines = []
        for f in fields(self):
            if f.name == "thresholds":
                continue
            lines.append(f"{f.name} = {_toml_value(getattr(self, f.name))}")
        lines.append("")
        lines.append("[thresholds]")
        for key in sorted(self.thresholds):
            lines.append(f"{key} = {_toml_value(self.thresholds[key])}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_toml_file(cls, path: str) -> "ExperimentConfig":
        try:
            with open(path, "rb") as fh:
                data = tomllib.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config file: {exc}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"malformed config file: {exc}") from exc
        return cls.from_dict(data)

    def config_hash(self) -> str:
        blob = json.dumps({"config": self.to_dict(),
                           "version": __version__},
                          sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    def cache_key(self) -> str:
        spec = build_domain(self.domain).spec_string
        blob = json.dumps({"domain": spec, "bc": self.bc,
                           "ppw": self.ppw, "dlam": self.dlam,
                           "lam_min": self.lam_min,
                           "lam_max": self.lam_max,
                           "version": __version__},
                          sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        return repr(float(v))
    if isinstance(v, str):
        return json.dumps(v)
    raise TypeError(f"no TOML form for {type(v).__name__}")


def parse_observable(spec: str, domain: Domain):
    """Observable factory from a spec string; raises ConfigError."""
    if spec == "const":
        return qe.constant_observable()
    if spec.startswith("bump:"):
        params = {"center": 0.0, "concentration": 2.0}
        body = spec[len("bump:"):]
        for part in filter(None, body.split(",")):
            if "=" not in part:
                raise ConfigError(f"malformed observable field {part!r}")
            key, _, val = part.partition("=")
            if key not in params:
                raise ConfigError(f"unknown observable field {key!r}")
            try:
                params[key] = float(val)
            except ValueError as exc:
                raise ConfigError(str(exc)) from exc
        return qe.position_bump(domain, params["center"],
                                params["concentration"])
    raise ConfigError(f"unknown observable {spec!r}; use 'const' or "
                      "'bump:center=C,concentration=K'")


# -- artifact plumbing -------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def write_csv(path: str, header, rows) -> None:
    """RFC-4180 CSV with shortest-round-trip float fields."""
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def write_json(path: str, obj) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_manifest(cfg: ExperimentConfig, command: str,
                   quantities: dict) -> None:
    """quantities maps artifact file name -> what the columns hold."""
    write_json(os.path.join(cfg.out_dir, "manifest.json"),
               {"command": command,
                "config": cfg.to_dict(),
                "config_hash": cfg.config_hash(),
                "code_version": __version__,
                "quantities": quantities})


# -- spectrum cache ----------------------------------------------------------

def cache_path(cfg: ExperimentConfig) -> str:
    d = build_domain(cfg.domain)
    return os.path.join(cfg.cache_dir,
                        f"{d.name}_{cfg.bc}_{cfg.cache_key()}")


def cache_lookup(cfg: ExperimentConfig):
    """Cached SpectrumStore for these settings, or None on a miss.

    The key hashes domain spec, boundary condition, grid policy, scan
    step, frequency window, and code version.  A checksum failure inside
    a hit propagates as ValueError: recomputation should be a deliberate
    choice, not a silent fallback.
    """
    path = cache_path(cfg)
    if not os.path.exists(os.path.join(path, "manifest.json")):
        return None
    return SpectrumStore.load(path)


def ensure_store(cfg: ExperimentConfig, progress=None) -> SpectrumStore:
    store = cache_lookup(cfg)
    if store is not None:
        return store
    domain = build_domain(cfg.domain)
    store, _report = build_spectrum(
        domain, cfg.bc, (cfg.lam_min, cfg.lam_max),
        out_dir=cache_path(cfg), ppw=cfg.ppw,
        dlam=cfg.dlam or None, seed=cfg.seed, progress=progress)
    return store


def _store_series(cfg: ExperimentConfig, progress=None):
    store = ensure_store(cfg, progress=progress)
    return asym.SpectralSeries.from_store(store)


# -- subcommands -------------------------------------------------------------

def cmd_domain_info(cfg: ExperimentConfig, args) -> int:
    d = build_domain(cfg.domain)
    info = {"spec": d.spec_string, "area": d.area,
            "perimeter": d.perimeter, "junctions": list(d.junctions),
            "single_loop": d.single_loop}
    print(json.dumps(info, indent=2, sort_keys=True))
    write_json(os.path.join(cfg.out_dir, "domain_info.json"), info)
    write_manifest(cfg, "domain-info",
                   {"domain_info.json": "domain metrics"})
    return EXIT_OK


def cmd_billiard_sim(cfg: ExperimentConfig, args) -> int:
    d = build_domain(cfg.domain)
    try:
        q0 = phase_point(args.s0 % d.perimeter, args.eta0)
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    traj = trajectory(d, q0, args.bounces)
    rows = []
    q = q0
    total = 0.0
    rows.append((0, q.s, q.eta, 0.0, 0.0))
    for k, st in enumerate(traj.steps, start=1):
        if st.next is None:
            break
        total += st.flight_length
        q = st.next
        rows.append((k, q.s, q.eta, st.flight_length, total))
    write_csv(os.path.join(cfg.out_dir, "orbit.csv"),
              ("bounce", "s", "eta", "flight_length", "cumulative_length"),
              rows)
    write_json(os.path.join(cfg.out_dir, "orbit_summary.json"),
               {"requested": args.bounces, "completed": len(rows) - 1,
                "terminated": traj.terminated, "total_length": total})
    write_manifest(cfg, "billiard-sim",
                   {"orbit.csv": "billiard orbit samples",
                    "orbit_summary.json": "orbit completion summary"})
    return EXIT_OK


def cmd_loop_profile(cfg: ExperimentConfig, args) -> int:
    d = build_domain(cfg.domain)
    s0 = cfg.probe_s % d.perimeter
    prof = loop_profile(d, s0, n_max=args.n_max, n_samples=args.samples,
                        tol=args.tol, seed=cfg.seed)
    lengths = loop_lengths(d, s0, n_max=args.n_max,
                           n_samples=args.samples, tol=5e-3)
    write_csv(os.path.join(cfg.out_dir, "loop_samples.csv"),
              ("eta", "n_return", "base_distance"),
              [(e, n, dist) for e, n, dist in prof.samples])
    write_json(os.path.join(cfg.out_dir, "loop_profile.json"),
               {"basepoint": prof.basepoint,
                "loop_measure_estimate": prof.loop_measure_estimate,
                "confidence_halfwidth": prof.confidence_halfwidth,
                "n_max": prof.n_max, "tol": prof.tol,
                "lengths": [{"length": L, "count": c}
                            for L, c in lengths]})
    write_manifest(cfg, "loop-profile",
                   {"loop_samples.csv": "direction sweep return records",
                    "loop_profile.json":
                    "loop measure and clustered loop lengths"})
    return EXIT_OK


def _eigenvalue_rows(store: SpectrumStore):
    for j, t in enumerate(store.traces):
        yield (j, t.lam, t.cluster, t.sigma_min, t.fone_residual)


def cmd_spectrum_scan(cfg: ExperimentConfig, args) -> int:
    store = ensure_store(cfg, progress=_progress)
    write_csv(os.path.join(cfg.out_dir, "eigenvalues.csv"),
              ("index", "lam", "cluster", "sigma_min", "fone_residual"),
              _eigenvalue_rows(store))
    write_json(os.path.join(cfg.out_dir, "scan_summary.json"),
               {"count": len(store.traces),
                "lam_range": [cfg.lam_min, cfg.lam_max],
                "complete": bool(store.scan_meta.get("complete", False)),
                "cache_path": cache_path(cfg)})
    write_manifest(cfg, "spectrum-scan",
                   {"eigenvalues.csv": "eigenvalue index with residuals",
                    "scan_summary.json": "scan completeness summary"})
    return EXIT_OK


def cmd_trace_export(cfg: ExperimentConfig, args) -> int:
    store = ensure_store(cfg, progress=_progress)
    lams = store.eigenvalues()
    if len(lams) == 0:
        print("precondition error: store holds no eigenvalues",
              file=sys.stderr)
        return EXIT_PRECONDITION
    k = int(np.argmin(np.abs(lams - args.lam)))
    lam_k = lams[k]
    if abs(lam_k - args.lam) > args.window:
        print(f"precondition error: no eigenvalue within {args.window:g} "
              f"of lam={args.lam:g} (nearest {lam_k:g})", file=sys.stderr)
        return EXIT_PRECONDITION
    members = [t for t in store.traces
               if abs(t.lam - lam_k) <= 1e-8 * max(1.0, lam_k)]
    grid = store.rebuild_grid()
    quantities = {}
    for j, t in enumerate(members):
        name = f"trace_{j}.csv"
        write_csv(os.path.join(cfg.out_dir, name),
                  ("s", "re", "im", "abs"),
                  zip(grid.s, t.trace.real, t.trace.imag,
                      np.abs(t.trace)))
        quantities[name] = f"boundary trace samples at lam={lam_k!r}"
    write_json(os.path.join(cfg.out_dir, "trace_export.json"),
               {"lam": float(lam_k), "members": len(members),
                "bc": cfg.bc})
    quantities["trace_export.json"] = "exported cluster summary"
    write_manifest(cfg, "trace-export", quantities)
    return EXIT_OK


def cmd_qe_report(cfg: ExperimentConfig, args) -> int:
    d = build_domain(cfg.domain)
    obs = parse_observable(cfg.observable, d)
    store = ensure_store(cfg, progress=_progress)
    if not store.traces:
        print("precondition error: store holds no traces", file=sys.stderr)
        return EXIT_PRECONDITION
    grid = store.rebuild_grid()
    stats = qe.qe_statistics(store.traces, grid, d, cfg.bc, obs)
    _, cesaro = stats.cesaro()
    write_csv(os.path.join(cfg.out_dir, "measures.csv"),
              ("index", "lam", "measure", "cesaro_mean"),
              ((j, stats.lams[j], stats.values[j], cesaro[j])
               for j in range(len(stats.lams))))
    lam_top = float(stats.lams.max())
    write_json(os.path.join(cfg.out_dir, "qe_report.json"),
               {"observable": cfg.observable,
                "omega": stats.omega_value,
                "count": int(len(stats.lams)),
                "variance_at_top": stats.variance(lam_top),
                "deviation_fraction_0p2": stats.deviation_fraction(
                    0.2, lam_top),
                "final_cesaro": float(cesaro[-1])})
    write_manifest(cfg, "qe-report",
                   {"measures.csv":
                    "diagonal measures and running means",
                    "qe_report.json":
                    "equidistribution statistics vs classical average"})
    return EXIT_OK


def cmd_weyl_fit(cfg: ExperimentConfig, args) -> int:
    d = build_domain(cfg.domain)
    series = _store_series(cfg, progress=_progress)
    audit = asym.weyl_audit(
        series, d,
        smooth_window=cfg.thresholds["weyl_smooth_window"],
        gap_threshold=cfg.thresholds["weyl_gap_threshold"])
    counts = np.searchsorted(series.lams, audit.lam_grid, side="right")
    two_term = two_term_weyl(d, cfg.bc, audit.lam_grid)
    write_csv(os.path.join(cfg.out_dir, "weyl.csv"),
              ("lam", "count", "two_term", "deviation", "smoothed"),
              zip(audit.lam_grid, counts, two_term, audit.deviation,
                  audit.smoothed))
    write_json(os.path.join(cfg.out_dir, "weyl_fit.json"),
               {"max_deviation": audit.max_deviation,
                "max_smoothed_deviation": audit.max_smoothed_deviation,
                "suspected_gaps": audit.suspected_gaps})
    write_manifest(cfg, "weyl-fit",
                   {"weyl.csv": "two-term count deviation profile",
                    "weyl_fit.json": "count audit summary"})
    return EXIT_OK


def cmd_wave_trace(cfg: ExperimentConfig, args) -> int:
    d = build_domain(cfg.domain)
    series = _store_series(cfg, progress=_progress)
    sigma_t = cfg.sigma_t or asym.WAVE_RESOLUTION_FACTOR / cfg.lam_max
    t_grid = np.arange(0.0, args.tmax + args.dt, args.dt)
    wt = asym.wave_trace(
        series, cfg.probe_s, t_grid, sigma_t,
        peak_prominence=cfg.thresholds["peak_prominence"])
    lengths = loop_lengths(d, cfg.probe_s % d.perimeter)
    peaks = []
    for tpk, hpk in zip(wt.peak_times, wt.peak_heights):
        nearest = min((abs(tpk - L), L) for L, _ in lengths)[1] \
            if lengths else None
        peaks.append({"t": float(tpk), "height": float(hpk),
                      "nearest_loop_length": nearest})
    write_csv(os.path.join(cfg.out_dir, "wave_trace.csv"),
              ("t", "abs", "re", "im"),
              zip(wt.t, np.abs(wt.values), wt.values.real,
                  wt.values.imag))
    write_json(os.path.join(cfg.out_dir, "wave_trace.json"),
               {"probe_s": cfg.probe_s, "sigma_t": sigma_t,
                "value_at_zero": wt.value_at_zero, "peaks": peaks,
                "loop_lengths": [{"length": L, "count": c}
                                 for L, c in lengths]})
    write_manifest(cfg, "wave-trace",
                   {"wave_trace.csv": "windowed time trace at the probe",
                    "wave_trace.json": "peak times vs loop lengths"})
    return EXIT_OK


def cmd_oracle_disc(cfg: ExperimentConfig, args) -> int:
    d = build_domain(cfg.domain)
    if d.name != "disc":
        print("config error: the oracle check is defined on disc domains",
              file=sys.stderr)
        return EXIT_CONFIG
    oracle = np.sort([t.lam for t in analytic_modes(d, cfg.bc,
                                                    cfg.lam_max, n=64)])
    oracle = oracle[oracle >= cfg.lam_min]
    store = ensure_store(cfg, progress=_progress)
    got = store.eigenvalues()
    write_csv(os.path.join(cfg.out_dir, "oracle.csv"),
              ("index", "oracle_lam"), enumerate(oracle))
    report = {"count_oracle": int(len(oracle)),
              "count_store": int(len(got)),
              "tolerance": args.tol}
    if len(got) == len(oracle):
        report["max_abs_dlam"] = float(np.max(np.abs(got - oracle)))
        report["pass"] = bool(report["max_abs_dlam"] <= args.tol)
    else:
        report["max_abs_dlam"] = None
        report["pass"] = False
    write_json(os.path.join(cfg.out_dir, "oracle_report.json"), report)
    write_manifest(cfg, "oracle-disc",
                   {"oracle.csv": "closed-form eigenvalue list",
                    "oracle_report.json": "store vs oracle comparison"})
    print(json.dumps(report, indent=2, sort_keys=True))
    return EXIT_OK if report["pass"] else EXIT_NUMERIC


def cmd_acceptance(cfg: ExperimentConfig, args) -> int:
    path = args.tests
    if path is None:
        here = os.path.dirname(os.path.abspath(__file__))
        candidates = [
            os.path.join(os.getcwd(), "tests", "test_acceptance.py"),
            os.path.normpath(os.path.join(here, "..", "..", "tests",
                                          "test_acceptance.py")),
        ]
        path = next((c for c in candidates if os.path.exists(c)), None)
    if path is None or not os.path.exists(path):
        print("precondition error: cannot locate the acceptance test "
              "file; pass --tests", file=sys.stderr)
        return EXIT_PRECONDITION
    proc = subprocess.run(
        [sys.executable, "-m", "pytest", path, "-v", "--tb=short"],
        capture_output=True, text=True)
    sys.stdout.write(proc.stdout)
    sys.stderr.write(proc.stderr)
    os.makedirs(cfg.out_dir, exist_ok=True)
    with open(os.path.join(cfg.out_dir, "acceptance_report.txt"), "w",
              encoding="utf-8") as fh:
        fh.write(proc.stdout)
        if proc.stderr:
            fh.write("\n--- stderr ---\n")
            fh.write(proc.stderr)
    write_manifest(cfg, "acceptance",
                   {"acceptance_report.txt": "per-criterion test report"})
    if proc.returncode == 0:
        return EXIT_OK
    if proc.returncode == 1:
        return EXIT_NUMERIC
    return EXIT_PRECONDITION


def _progress(msg: str) -> None:
    print(msg, file=sys.stderr)


# -- argument wiring ---------------------------------------------------------

def _add_common(sp: argparse.ArgumentParser) -> None:
    sp.add_argument("domain", nargs="?", default=None,
                    help="shape spec, e.g. stadium:a=1,R=1")
    sp.add_argument("--config", default=None,
                    help="TOML settings file; explicit flags override it")
    sp.add_argument("--bc", choices=("dirichlet", "neumann"), default=None)
    sp.add_argument("--lmin", dest="lam_min", type=float, default=None)
    sp.add_argument("--lmax", dest="lam_max", type=float, default=None)
    sp.add_argument("--dlam", type=float, default=None)
    sp.add_argument("--ppw", type=float, default=None)
    sp.add_argument("--observable", default=None)
    sp.add_argument("--probe-s", dest="probe_s", type=float, default=None)
    sp.add_argument("--sigma-t", dest="sigma_t", type=float, default=None)
    sp.add_argument("--seed", type=int, default=None)
    sp.add_argument("--out-dir", dest="out_dir", default=None)
    sp.add_argument("--cache-dir", dest="cache_dir", default=None)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="billiardqe",
        description="boundary-integral eigenfunction statistics toolkit")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    handlers = {}

    def register(name, func, help_text):
        sp = sub.add_parser(name, help=help_text)
        _add_common(sp)
        handlers[name] = func
        return sp

    register("domain-info", cmd_domain_info,
             "area, perimeter, and corner layout of a shape spec")

    sp = register("billiard-sim", cmd_billiard_sim,
                  "bounce an orbit and export it")
    sp.add_argument("--s0", type=float, default=0.0)
    sp.add_argument("--eta0", type=float, default=0.3)
    sp.add_argument("--bounces", type=int, default=1000)

    sp = register("loop-profile", cmd_loop_profile,
                  "directional return scan at a basepoint")
    sp.add_argument("--n-max", dest="n_max", type=int, default=8)
    sp.add_argument("--samples", type=int, default=4000)
    sp.add_argument("--tol", type=float, default=1e-3)

    register("spectrum-scan", cmd_spectrum_scan,
             "build or reuse the eigenvalue store for the window")

    sp = register("trace-export", cmd_trace_export,
                  "export the boundary trace cluster nearest a frequency")
    sp.add_argument("--lam", type=float, required=True)
    sp.add_argument("--window", type=float, default=0.5,
                    help="largest accepted |lam - eigenvalue|")

    register("qe-report", cmd_qe_report,
             "diagonal measures of an observable against its "
             "classical average")

    register("weyl-fit", cmd_weyl_fit,
             "two-term count audit with missed-window flags")

    sp = register("wave-trace", cmd_wave_trace,
                  "windowed time trace at a probe point vs loop lengths")
    sp.add_argument("--tmax", type=float, default=12.0)
    sp.add_argument("--dt", type=float, default=0.005)

    sp = register("oracle-disc", cmd_oracle_disc,
                  "compare a disc store against closed-form eigenvalues")
    sp.add_argument("--tol", type=float, default=1e-7)

    sp = register("acceptance", cmd_acceptance,
                  "run the acceptance suite and archive the report")
    sp.add_argument("--tests", default=None,
                    help="path to the acceptance test file")

    p.set_defaults(_handlers=handlers)
    return p


def resolve_config(args) -> ExperimentConfig:
    if getattr(args, "config", None):
        cfg = ExperimentConfig.from_toml_file(args.config)
    else:
        cfg = ExperimentConfig()
    overrides = {}
    for f in fields(ExperimentConfig):
        if f.name == "thresholds":
            continue
        val = getattr(args, f.name, None)
        if val is not None:
            overrides[f.name] = val
    if overrides:
        cfg = ExperimentConfig.from_dict({**cfg.to_dict(), **overrides})
    return cfg.validate()


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    handler = args._handlers[args.command]
    try:
        return handler(cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (GrazingError, ValueError) as exc:
        print(f"precondition error: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION


if __name__ == "__main__":
    sys.exit(main())
