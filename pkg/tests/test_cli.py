"""Command-line surface tests.

A tiny disc window (four distinct frequencies below lam = 6) keeps the
store builds under a second, so every subcommand runs end to end against
a real cache; closed-form stadium metrics and Bessel zeros anchor the
numbers that artifacts must reproduce.
"""

import hashlib
import json
import math
import os

import numpy as np
import pytest
from oracles import ref_bessel_zero

from billiardqe import cli
from billiardqe.cli import ExperimentConfig, ConfigError
from billiardqe.geometry import build_domain


def _sha(path):
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    return tmp_path_factory.mktemp("cli")


@pytest.fixture(scope="module")
def cache_dir(workdir):
    # one shared store build for the whole module
    out = workdir / "primed"
    rc = cli.main(["spectrum-scan", "disc:R=1", "--bc", "dirichlet",
                   "--lmin", "2", "--lmax", "6",
                   "--out-dir", str(out),
                   "--cache-dir", str(workdir / "cache")])
    assert rc == 0
    return workdir / "cache"


def run_cached(cache_dir, *argv):
    return cli.main([*argv, "--cache-dir", str(cache_dir)])


class TestConfig:
    def test_toml_round_trip_is_lossless(self, tmp_path):
        cfg = ExperimentConfig(domain="ellipse:a=1.4,b=0.9", bc="neumann",
                               lam_min=0.7, lam_max=11.000000000000213,
                               dlam=0.013, seed=9,
                               observable="bump:center=0.25,"
                               "concentration=1.5")
        path = tmp_path / "cfg.toml"
        path.write_text(cfg.to_toml())
        assert ExperimentConfig.from_toml_file(str(path)) == cfg

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "cfg.toml"
        path.write_text('lam_maxx = 9.0\n')
        with pytest.raises(ConfigError, match="unknown config keys"):
            ExperimentConfig.from_toml_file(str(path))

    def test_validate_rejects_bad_settings(self):
        with pytest.raises(ConfigError):
            ExperimentConfig(bc="robin").validate()
        with pytest.raises(ConfigError):
            ExperimentConfig(domain="hexagon").validate()
        with pytest.raises(ConfigError, match="lam_min"):
            ExperimentConfig(lam_min=8.0, lam_max=4.0).validate()
        with pytest.raises(ConfigError, match="observable"):
            ExperimentConfig(observable="fourier:k=3").validate()
        with pytest.raises(ConfigError, match="thresholds"):
            ExperimentConfig(
                thresholds={"weyl_smooth_window": 2.0,
                            "surprise": 1.0}).validate()

    def test_cache_key_tracks_scan_settings_only(self):
        base = ExperimentConfig()
        assert base.cache_key() != \
            ExperimentConfig(dlam=0.05).cache_key()
        assert base.cache_key() != \
            ExperimentConfig(lam_max=13.0).cache_key()
        # output routing must not split the cache
        assert base.cache_key() == \
            ExperimentConfig(out_dir="elsewhere").cache_key()
        # but the full config hash does see it
        assert base.config_hash() != \
            ExperimentConfig(out_dir="elsewhere").config_hash()

    def test_flag_overrides_config_file(self, tmp_path):
        path = tmp_path / "cfg.toml"
        path.write_text(ExperimentConfig(lam_max=9.0, bc="neumann")
                        .to_toml())
        parser = cli.build_parser()
        args = parser.parse_args(["domain-info", "--config", str(path),
                                  "--lmax", "6"])
        cfg = cli.resolve_config(args)
        assert cfg.lam_max == 6.0
        assert cfg.bc == "neumann"

    def test_observable_parsing(self):
        d = build_domain("disc")
        const = cli.parse_observable("const", d)
        assert const(1.0, 0.2) == 1.0
        bump = cli.parse_observable("bump:center=0.25,concentration=1.5",
                                    d)
        top = bump(0.25 * d.perimeter, 0.0)
        assert top == pytest.approx(1.0, rel=1e-12)
        assert bump(0.75 * d.perimeter, 0.0) < top
        with pytest.raises(ConfigError, match="unknown observable"):
            cli.parse_observable("steps", d)
        with pytest.raises(ConfigError, match="field"):
            cli.parse_observable("bump:radius=2", d)


class TestDomainInfo:
    def test_stadium_metrics(self, workdir, capsys):
        out = workdir / "dominfo"
        rc = cli.main(["domain-info", "stadium:a=1,R=1",
                       "--out-dir", str(out)])
        assert rc == 0
        info = json.loads((out / "domain_info.json").read_text())
        assert info["area"] == pytest.approx(math.pi + 4.0, rel=1e-12)
        assert info["perimeter"] == pytest.approx(2.0 * math.pi + 4.0,
                                                  rel=1e-12)
        # stdout carries the same JSON
        assert json.loads(capsys.readouterr().out) == info
        man = json.loads((out / "manifest.json").read_text())
        assert man["code_version"] and man["config_hash"]
        assert "domain_info.json" in man["quantities"]

    def test_unknown_shape_is_config_error(self, workdir):
        rc = cli.main(["domain-info", "hexagon",
                       "--out-dir", str(workdir / "nope")])
        assert rc == 2

    def test_unknown_flag_exits_usage(self):
        with pytest.raises(SystemExit) as exc:
            cli.main(["domain-info", "--frobnicate"])
        assert exc.value.code == 2


class TestSpectrumScan:
    def test_small_disc_window_lists_bessel_zeros(self, workdir,
                                                  cache_dir):
        csv_path = workdir / "primed" / "eigenvalues.csv"
        rows = csv_path.read_text().strip().splitlines()[1:]
        lams = [float(r.split(",")[1]) for r in rows]
        expect = [ref_bessel_zero(0, 1), ref_bessel_zero(1, 1),
                  ref_bessel_zero(1, 1), ref_bessel_zero(2, 1),
                  ref_bessel_zero(2, 1), ref_bessel_zero(0, 2)]
        assert np.allclose(lams, expect, atol=1e-7)

    def test_cache_hit_reproduces_bytes(self, workdir, cache_dir):
        out2 = workdir / "rerun"
        rc = run_cached(cache_dir, "spectrum-scan", "disc:R=1",
                        "--bc", "dirichlet", "--lmin", "2", "--lmax", "6",
                        "--out-dir", str(out2))
        assert rc == 0
        assert _sha(out2 / "eigenvalues.csv") == \
            _sha(workdir / "primed" / "eigenvalues.csv")

    def test_fresh_rebuild_is_deterministic(self, workdir, cache_dir,
                                            tmp_path):
        out3 = tmp_path / "fresh"
        rc = cli.main(["spectrum-scan", "disc:R=1", "--bc", "dirichlet",
                       "--lmin", "2", "--lmax", "6",
                       "--out-dir", str(out3),
                       "--cache-dir", str(tmp_path / "cache2")])
        assert rc == 0
        assert _sha(out3 / "eigenvalues.csv") == \
            _sha(workdir / "primed" / "eigenvalues.csv")

    def test_corrupt_cache_reports_checksum(self, workdir, cache_dir,
                                            tmp_path, capsys):
        import shutil
        bad_cache = tmp_path / "badcache"
        shutil.copytree(cache_dir, bad_cache)
        store_dir = next(bad_cache.glob("disc_dirichlet_*"))
        blob = bytearray((store_dir / "trace_00000.bin").read_bytes())
        blob[16] ^= 0xFF
        (store_dir / "trace_00000.bin").write_bytes(blob)
        rc = run_cached(bad_cache, "spectrum-scan", "disc:R=1",
                        "--bc", "dirichlet", "--lmin", "2", "--lmax", "6",
                        "--out-dir", str(tmp_path / "out"))
        assert rc == 3


class TestTraceExport:
    def test_degenerate_pair_exports_both(self, workdir, cache_dir):
        out = workdir / "traces"
        rc = run_cached(cache_dir, "trace-export", "disc:R=1",
                        "--bc", "dirichlet", "--lmin", "2", "--lmax", "6",
                        "--lam", "3.83", "--out-dir", str(out))
        assert rc == 0
        meta = json.loads((out / "trace_export.json").read_text())
        assert meta["members"] == 2
        assert meta["lam"] == pytest.approx(ref_bessel_zero(1, 1),
                                            abs=1e-7)
        assert (out / "trace_0.csv").exists()
        assert (out / "trace_1.csv").exists()

    def test_far_frequency_is_precondition_error(self, workdir,
                                                 cache_dir):
        rc = run_cached(cache_dir, "trace-export", "disc:R=1",
                        "--bc", "dirichlet", "--lmin", "2", "--lmax", "6",
                        "--lam", "4.5", "--window", "0.2",
                        "--out-dir", str(workdir / "t2"))
        assert rc == 3


class TestReports:
    def test_qe_report_tracks_classical_average(self, workdir, cache_dir):
        out = workdir / "qe"
        rc = run_cached(cache_dir, "qe-report", "disc:R=1",
                        "--bc", "dirichlet", "--lmin", "2", "--lmax", "6",
                        "--observable", "bump:center=0.25,"
                        "concentration=1.5", "--out-dir", str(out))
        assert rc == 0
        rep = json.loads((out / "qe_report.json").read_text())
        assert rep["count"] == 6
        assert rep["final_cesaro"] == pytest.approx(rep["omega"],
                                                    abs=0.05)

    def test_weyl_fit_clean_on_exact_window(self, workdir, cache_dir):
        out = workdir / "weyl"
        rc = run_cached(cache_dir, "weyl-fit", "disc:R=1",
                        "--bc", "dirichlet", "--lmin", "2", "--lmax", "6",
                        "--out-dir", str(out))
        assert rc == 0
        rep = json.loads((out / "weyl_fit.json").read_text())
        assert rep["suspected_gaps"] == []
        assert rep["max_smoothed_deviation"] <= 1.0
        header = (out / "weyl.csv").read_text().splitlines()[0]
        assert header == "lam,count,two_term,deviation,smoothed"

    def test_wave_trace_artifacts(self, workdir, cache_dir):
        out = workdir / "wave"
        rc = run_cached(cache_dir, "wave-trace", "disc:R=1",
                        "--bc", "dirichlet", "--lmin", "2", "--lmax", "6",
                        "--probe-s", "0.9", "--tmax", "6", "--dt", "0.01",
                        "--out-dir", str(out))
        assert rc == 0
        rep = json.loads((out / "wave_trace.json").read_text())
        assert rep["sigma_t"] == pytest.approx(4.0 * math.pi / 6.0)
        assert rep["value_at_zero"] > 0
        assert any(abs(e["length"] - 4.0) < 0.05
                   for e in rep["loop_lengths"])
        n_rows = len((out / "wave_trace.csv").read_text()
                     .strip().splitlines())
        assert n_rows == 1 + len(np.arange(0.0, 6.0 + 0.01, 0.01))

    def test_oracle_disc_passes_on_store(self, workdir, cache_dir,
                                         capsys):
        out = workdir / "oracle"
        rc = run_cached(cache_dir, "oracle-disc", "disc:R=1",
                        "--bc", "dirichlet", "--lmin", "2", "--lmax", "6",
                        "--out-dir", str(out))
        assert rc == 0
        rep = json.loads((out / "oracle_report.json").read_text())
        assert rep["pass"] is True
        assert rep["count_store"] == rep["count_oracle"] == 6
        assert rep["max_abs_dlam"] <= 1e-7


class TestOrbits:
    def test_billiard_sim_cumulative_lengths(self, workdir):
        out = workdir / "sim"
        rc = cli.main(["billiard-sim", "stadium:a=1,R=1", "--s0", "0.2",
                       "--eta0", "0.31", "--bounces", "40",
                       "--out-dir", str(out)])
        assert rc == 0
        rows = (out / "orbit.csv").read_text().strip().splitlines()[1:]
        cum = [float(r.split(",")[4]) for r in rows]
        assert len(cum) == 41
        assert all(b > a for a, b in zip(cum, cum[1:]))

    def test_loop_profile_finds_disc_diameter(self, workdir):
        out = workdir / "loops"
        rc = cli.main(["loop-profile", "disc:R=1", "--probe-s", "0.5",
                       "--samples", "4000", "--out-dir", str(out)])
        assert rc == 0
        rep = json.loads((out / "loop_profile.json").read_text())
        assert any(abs(e["length"] - 4.0) < 0.05 for e in rep["lengths"])
        assert rep["loop_measure_estimate"] < 0.2


class TestAcceptanceCommand:
    def test_green_suite_exits_zero(self, tmp_path):
        probe = tmp_path / "probe_pass.py"
        probe.write_text("def test_ok():\n    assert True\n")
        rc = cli.main(["acceptance", "--tests", str(probe),
                       "--out-dir", str(tmp_path / "ok")])
        assert rc == 0
        assert (tmp_path / "ok" / "acceptance_report.txt").exists()

    def test_red_suite_exits_numeric_failure(self, tmp_path):
        probe = tmp_path / "probe_fail.py"
        probe.write_text("def test_no():\n    assert 1 == 2\n")
        rc = cli.main(["acceptance", "--tests", str(probe),
                       "--out-dir", str(tmp_path / "bad")])
        assert rc == 4

    def test_missing_file_is_precondition_error(self, tmp_path):
        rc = cli.main(["acceptance", "--tests",
                       str(tmp_path / "ghost.py"),
                       "--out-dir", str(tmp_path / "gone")])
        assert rc == 3
