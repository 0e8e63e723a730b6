"""Quantization and equidistribution-statistics tests.

The unit-radius disc anchors most of them: its Dirichlet traces satisfy
lam^-2 |trace|^2 = 2 exactly, its Neumann trace norms have a closed form,
and its billiard map conserves the tangential velocity component.
"""

import math

import mpmath
import numpy as np
import pytest
from oracles import ref_bessel_zero

from billiardqe.geometry import build_domain
from billiardqe.layer_ops import NystromGrid
from billiardqe import qe, spectrum as sp


@pytest.fixture(scope="module")
def disc():
    return build_domain("disc")


@pytest.fixture(scope="module")
def disc_grid(disc):
    return NystromGrid(disc, 192)


@pytest.fixture(scope="module")
def stadium_grid():
    return NystromGrid(build_domain("stadium"), 384)


class TestResampler:
    def test_round_trip_on_graded_grid(self, stadium_grid):
        per = stadium_grid.domain.perimeter
        f = lambda s: np.exp(np.cos(2 * math.pi * s / per)) \
            + 1j * np.sin(4 * math.pi * s / per)
        uni = qe.uniform_boundary_grid(stadium_grid)
        got = uni.resample(f(stadium_grid.s))
        # finite-smoothness of the grading map caps the interpolant at
        # a few parts in 1e8 here; plenty below measurement tolerances
        assert np.abs(got - f(uni.s)).max() < 5e-7

    def test_batch_matches_single(self, disc_grid):
        rng = np.random.default_rng(3)
        c = rng.standard_normal((8, 2)) @ np.array([1, 1j])
        f = sum(ck * np.exp(1j * k * disc_grid.t)
                for k, ck in enumerate(c, start=-4))
        uni = qe.uniform_boundary_grid(disc_grid)
        both = uni.resample(np.stack([f, 2 * f], axis=1))
        assert np.allclose(both[:, 1], 2 * uni.resample(f), atol=1e-12)

    def test_refuses_coarser_target(self, disc_grid):
        with pytest.raises(ValueError, match="at least as fine"):
            qe.UniformBoundaryGrid(disc_grid, m=64)


class TestQuantize:
    def test_position_symbol_is_multiplication(self, disc_grid, disc):
        a = qe.position_bump(disc, 0.2, 1.0)
        op = qe.quantize(a, disc_grid, lam=5.0)
        uni = op.uniform
        f = np.exp(2j * uni.s / disc.perimeter * 2 * math.pi)
        got = op.apply(f)
        want = a(uni.s, 0.0) * f
        assert np.abs(got - want).max() < 1e-10

    def test_eta_symbol_is_fourier_multiplier(self, disc_grid, disc):
        lam = 9.0
        sym = lambda s, eta: np.asarray(eta, float) ** 2 \
            + 0.0 * np.asarray(s, float)
        op = qe.quantize(sym, disc_grid, lam)
        uni = op.uniform
        k = 5
        xi = 2 * math.pi * k / disc.perimeter
        f = np.exp(1j * xi * uni.s)
        got = op.apply(f)
        assert np.abs(got - (xi / lam) ** 2 * f).max() < 1e-10

    def test_constant_has_unit_action(self, disc_grid):
        op = qe.quantize(qe.constant_observable(), disc_grid, 4.0)
        f = np.cos(3 * op.uniform.s)
        assert np.abs(op.apply(f.astype(complex)) - f).max() < 1e-10

    def test_aliasing_guard(self, disc_grid):
        op = qe.quantize(qe.constant_observable(), disc_grid, 4.0)
        m = op.uniform.m
        junk = np.exp(1j * (0.45 * 2 * math.pi) * np.arange(m))
        with pytest.raises(ValueError, match="Nyquist"):
            op.apply(junk)

    def test_bad_frequency(self, disc_grid):
        with pytest.raises(ValueError):
            qe.quantize(qe.constant_observable(), disc_grid, -1.0)


class TestMeasures:
    def test_dirichlet_constant_measure_is_two(self, disc, disc_grid):
        # x . nu == R == 1 on the disc boundary, so the data norm
        # identity pins every Dirichlet measure of 1 at exactly 2
        modes = sp.analytic_modes(disc, "dirichlet", 9.0, grid=disc_grid)
        _, vals = qe.measure_traces(modes, disc_grid,
                                    qe.constant_observable())
        assert np.abs(vals - 2.0).max() < 1e-12

    def test_neumann_constant_measures_closed_form(self, disc, disc_grid):
        modes = sp.analytic_modes(disc, "neumann", 7.0, grid=disc_grid)
        lams, vals = qe.measure_traces(modes, disc_grid,
                                       qe.constant_observable())
        pairs = []
        for m in range(12):
            k = 1
            while True:
                z = ref_bessel_zero(m, k, derivative=True)
                if z > 7.0:
                    break
                pairs += [(z, 2.0 / (1.0 - (m / z) ** 2))] \
                    * (1 if m == 0 else 2)
                k += 1
        pairs.sort()
        want = np.array([p[1] for p in pairs])
        assert np.allclose(vals, want, atol=1e-12)

    def test_omega_limits(self, disc):
        one = qe.constant_observable()
        assert qe.omega(disc, "dirichlet", one) == pytest.approx(2.0,
                                                                 abs=1e-12)
        assert qe.omega(disc, "neumann", one) == pytest.approx(4.0,
                                                               abs=1e-12)

    def test_omega_position_bump_reference(self, disc):
        kappa = 2.0
        a0 = qe.position_bump(disc, 0.3, kappa)
        base = float(2 * math.pi * mpmath.exp(-kappa)
                     * mpmath.besseli(0, kappa)) / (math.pi * disc.area)
        assert qe.omega(disc, "dirichlet", a0) \
            == pytest.approx(base * math.pi, rel=1e-10)
        assert qe.omega(disc, "neumann", a0) \
            == pytest.approx(base * 2 * math.pi, rel=1e-10)


class TestStatistics:
    def test_cesaro_orders_by_frequency(self):
        lams = np.array([3.0, 1.0, 2.0])
        vals = np.array([30.0, 10.0, 20.0])
        gl, gc = qe.cesaro_weyl(lams, vals)
        assert np.allclose(gl, [1, 2, 3])
        assert np.allclose(gc, [10.0, 15.0, 20.0])

    def test_variance_and_deviation_fraction(self):
        stats = qe.QEStatistics(np.array([1.0, 2.0, 3.0, 4.0]),
                                np.array([2.0, 4.0, 2.0, 4.0]), 3.0)
        assert stats.variance(4.0) == pytest.approx(1.0)
        assert stats.deviation_fraction(0.5, 4.0) == pytest.approx(1.0)
        assert stats.deviation_fraction(1.5, 2.5) == pytest.approx(0.0)
        with pytest.raises(ValueError):
            stats.variance(0.5)

    def test_variance_series_monotone_grid(self):
        stats = qe.QEStatistics(np.linspace(1, 10, 30),
                                np.random.default_rng(0).normal(0, 1, 30),
                                0.0)
        gs, vs = stats.variance_series(12)
        assert len(gs) == len(vs) == 12
        assert np.all(np.isfinite(vs))


class TestObservables:
    def test_grazing_cutoff_shape(self):
        eta = np.array([0.0, 0.89, 0.95, 1.0, -1.0, -0.9])
        got = qe.grazing_cutoff(eta)
        assert got[0] == 1.0
        assert got[1] == 1.0
        assert got[3] == got[4] == 0.0
        mid = qe.grazing_cutoff(np.linspace(0.9, 0.95, 50))
        assert np.all(np.diff(mid) <= 1e-12)

    def test_position_bump_broadcast(self, disc):
        a = qe.position_bump(disc, 0.5, 2.0)
        v = a(np.zeros((4, 1)), np.zeros((1, 7)))
        assert v.shape == (4, 7)
        assert np.all(v > 0)
        assert float(np.asarray(a(0.0, 0.0))) \
            == pytest.approx(float(np.asarray(a(disc.perimeter, 0.0))))


class TestDynamicalChecks:
    def test_invariance_defect_closed_form_mode(self, disc, disc_grid):
        lam = ref_bessel_zero(2, 2)
        mode = [t for t in sp.analytic_modes(disc, "dirichlet", lam + 0.1,
                                             grid=disc_grid)
                if abs(t.lam - lam) < 1e-9][0]
        d = qe.invariance_defect(mode.trace, mode.lam, "dirichlet",
                                 disc_grid, qe.position_bump(disc, 0.1, 1.0))
        assert d < 1e-10

    def test_invariance_defect_extracted_trace(self, disc, disc_grid):
        lam = ref_bessel_zero(3, 1)
        got = sp.extract_traces(lam, sp.Indicator(disc, "dirichlet",
                                                  disc_grid))
        d = qe.invariance_defect(got.traces[0], lam, "dirichlet", disc_grid,
                                 qe.position_bump(disc, 0.1, 1.0))
        assert d < 1e-8

    def test_transfer_conserves_eta_symbol_on_disc(self, disc):
        cut = qe.grazing_cutoff

        def a(s, eta):
            e = np.asarray(eta, float)
            return e * e * cut(e) + 0.0 * np.asarray(s, float)
        tsym = qe.transfer_symbol(disc, a, n_s=48)
        eta = np.linspace(-0.9, 0.9, 33)
        assert np.abs(tsym(1.3, eta) - a(1.3, eta)).max() < 5e-4

    def test_transfer_matches_direct_map(self, disc):
        from billiardqe.billiard import transfer_apply
        a0 = qe.position_bump(disc, 0.25, 1.5)

        def a(s, eta):
            return a0(s, eta) * qe.grazing_cutoff(eta)
        tsym = qe.transfer_symbol(disc, a)
        from billiardqe.billiard import phase_point
        for s0, eta0 in [(0.7, 0.3), (4.0, -0.5), (2.2, 0.0)]:
            direct = transfer_apply(disc, lambda s, e: float(
                np.asarray(a(s, e))), phase_point(s0, eta0))
            assert float(tsym(s0, eta0)) == pytest.approx(direct, abs=2e-3)

    def test_egorov_report_on_rotation_family(self, disc, disc_grid):
        modes = sp.analytic_modes(disc, "dirichlet", 9.0, grid=disc_grid)
        fam = [t for t in modes
               if np.allclose(t.trace, t.trace.mean(), atol=1e-9)]
        assert len(fam) >= 2
        rep = qe.egorov_check(fam, disc_grid, disc, "dirichlet",
                              qe.position_bump(disc, 0.25, 1.5),
                              n_s=96, n_eta=48)
        assert rep.invariance.max() < 1e-8
        # rotationally invariant traces see only the s-average of the
        # transferred observable, and the half-perimeter shift at eta=0
        # preserves that average: the defect is pure interpolation error,
        # identical for every member, with no frequency decay
        assert rep.transfer_defects.max() < 2e-5
        assert np.ptp(rep.transfer_defects) < 1e-10
        p, _ = rep.defect_decay_exponent()
        assert abs(p) < 0.05

    def test_defect_decay_exponent_fit(self):
        lams = np.linspace(5, 30, 12)
        rep = qe.EgorovReport(lams, np.zeros(12), 3.0 / lams,
                              np.zeros(12))
        p, se = rep.defect_decay_exponent()
        assert p == pytest.approx(1.0, abs=1e-9)
        assert se < 1e-9
