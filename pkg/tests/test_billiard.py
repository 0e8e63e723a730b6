"""Billiard map: reflection law, invariant measure, transfer operator, loops."""

import math

import numpy as np
import pytest
from scipy import stats

from billiardqe import billiard
from billiardqe.billiard import (
    GrazingError,
    birkhoff_average,
    lift,
    loop_lengths,
    loop_profile,
    phase_point,
    step,
    trajectory,
    transfer_apply,
)
from billiardqe.geometry import build_domain

DISC = build_domain("disc:R=1")
STADIUM = build_domain("stadium:a=1,R=1")
HALF_DISC = build_domain("half_disc:R=1")
ELLIPSE = build_domain("ellipse:a=2,b=1")


def random_phase_points(domain, n, rng, eta_max=0.999):
    s = rng.random(n) * domain.perimeter
    eta = rng.uniform(-eta_max, eta_max, n)
    return [phase_point(si, ei) for si, ei in zip(s, eta)]


class TestPhasePoint:
    def test_gamma_cached(self):
        q = phase_point(0.3, 0.6)
        assert q.gamma == pytest.approx(0.8, abs=1e-14)
        assert q.gamma**2 + q.eta**2 == pytest.approx(1.0, abs=1e-14)

    def test_strict_momentum_bound(self):
        with pytest.raises(ValueError):
            phase_point(0.0, 1.0)
        with pytest.raises(ValueError):
            phase_point(0.0, -1.2)


class TestLift:
    def test_normal_shot(self):
        q = phase_point(0.0, 0.0)
        assert np.allclose(lift(DISC, q), [-1.0, 0.0], atol=1e-14)

    def test_components(self):
        q = phase_point(0.0, 0.6)
        v = lift(DISC, q)
        fr = DISC.frame_at(0.0)
        assert float(v @ fr.tangent) == pytest.approx(0.6, abs=1e-14)
        assert float(v @ fr.inward_normal) == pytest.approx(0.8, abs=1e-14)

    def test_grazing_limit(self):
        q = phase_point(0.0, 1.0 - 1e-12)
        v = lift(DISC, q)
        assert np.allclose(v, DISC.frame_at(0.0).tangent, atol=2e-6)


class TestStep:
    def test_disc_diametral_bounce(self):
        res = step(DISC, phase_point(0.0, 0.0))
        assert res.next is not None
        assert res.next.s == pytest.approx(math.pi, abs=1e-12)
        assert res.next.eta == pytest.approx(0.0, abs=1e-14)
        assert res.flight_length == pytest.approx(2.0, abs=1e-12)

    def test_disc_closed_form_rotation(self):
        rng = np.random.default_rng(2)
        for q in random_phase_points(DISC, 200, rng):
            res = step(DISC, q)
            want_s = (q.s + math.pi - 2.0 * math.asin(q.eta)) % (2 * math.pi)
            assert res.next.s == pytest.approx(want_s, abs=1e-10)
            assert res.next.eta == pytest.approx(q.eta, abs=1e-12)
            assert res.flight_length == pytest.approx(2.0 * q.gamma, abs=1e-12)

    def test_stadium_bouncing_ball(self):
        res = step(STADIUM, phase_point(0.5, 0.0))
        assert res.flight_length == pytest.approx(2.0, abs=1e-12)
        assert res.next.eta == pytest.approx(0.0, abs=1e-14)
        # arrives at (0.5, 1) on the top side
        top = STADIUM.frame_at(res.next.s).position
        assert np.allclose(top, [0.5, 1.0], atol=1e-12)

    @pytest.mark.parametrize("domain", [DISC, STADIUM, HALF_DISC, ELLIPSE])
    def test_equal_angle_and_flight_length(self, domain):
        rng = np.random.default_rng(3)
        for q in random_phase_points(domain, 150, rng):
            res = step(domain, q)
            if res.next is None:
                continue
            assert abs(res.next.gamma - math.sqrt(1 - res.next.eta**2)) <= 1e-10
            p1 = domain.frame_at(q.s).position
            p2 = domain.frame_at(res.next.s).position
            assert res.flight_length == pytest.approx(
                float(np.hypot(*(p2 - p1))), abs=1e-12
            )
            assert res.chord.kind == "interior"

    @pytest.mark.parametrize("domain", [DISC, STADIUM, HALF_DISC])
    def test_fast_path_matches_generic(self, domain):
        rng = np.random.default_rng(5)
        for q in random_phase_points(domain, 200, rng):
            fast = step(domain, q)
            ref = billiard._step_generic(domain, q)
            assert (fast.next is None) == (ref.next is None)
            if fast.next is None:
                continue
            assert fast.next.s == pytest.approx(ref.next.s, abs=1e-10)
            assert fast.next.eta == pytest.approx(ref.next.eta, abs=1e-12)
            assert fast.flight_length == pytest.approx(ref.flight_length, abs=1e-12)

    @pytest.mark.parametrize("domain", [DISC, STADIUM, ELLIPSE])
    def test_time_reversal(self, domain):
        rng = np.random.default_rng(7)
        for q in random_phase_points(domain, 100, rng):
            res = step(domain, q)
            if res.next is None:
                continue
            back = step(domain, phase_point(res.next.s, -res.next.eta))
            assert back.next is not None
            assert domain.cyclic_distance(back.next.s, q.s) <= 1e-8
            assert back.next.eta == pytest.approx(-q.eta, abs=1e-8)

    def test_corner_hit_terminates(self):
        # aim from an arc point straight at the half-disc corner (1, 0)
        s_arc = 1.0 + 0.25 * math.pi
        p = HALF_DISC.frame_at(s_arc).position
        fr = HALF_DISC.frame_at(s_arc)
        v = np.array([1.0, 0.0]) - p
        v /= np.linalg.norm(v)
        q = phase_point(s_arc, float(v @ fr.tangent))
        res = step(HALF_DISC, q)
        assert res.next is None
        assert res.terminated == "corner"
        assert res.chord.endpoints[1] == pytest.approx(1.0, abs=1e-9)


class TestTrajectory:
    def test_disc_diameter_period_two(self):
        tr = trajectory(DISC, phase_point(0.0, 0.0), 4)
        assert tr.terminated is None
        assert tr.steps[1].next.s == pytest.approx(0.0, abs=1e-10)
        assert np.allclose(tr.cumulative_lengths, [2.0, 4.0, 6.0, 8.0], atol=1e-10)

    def test_stadium_period_two(self):
        tr = trajectory(STADIUM, phase_point(0.5, 0.0), 6)
        assert tr.cumulative_lengths[-1] == pytest.approx(12.0, abs=1e-10)

    def test_stadium_generic_orbit_disperses(self):
        tr = trajectory(STADIUM, phase_point(0.37, 0.2), 400)
        assert tr.terminated is None
        ss = np.array([r.next.s for r in tr.steps])
        # orbit visits all four quarters of the boundary
        counts, _ = np.histogram(ss % STADIUM.perimeter, bins=4,
                                 range=(0, STADIUM.perimeter))
        assert counts.min() > 20


class TestInvariantMeasure:
    @pytest.mark.parametrize("domain", [DISC, STADIUM])
    def test_one_step_pushforward_uniform(self, domain):
        rng = np.random.default_rng(11)
        n = 100_000
        s = rng.random(n) * domain.perimeter
        eta = rng.uniform(-1.0, 1.0, n)
        s2 = np.empty(n)
        eta2 = np.empty(n)
        keep = np.ones(n, dtype=bool)
        for i in range(n):
            res = step(domain, phase_point(s[i], eta[i]))
            if res.next is None:
                keep[i] = False
            else:
                s2[i], eta2[i] = res.next.s, res.next.eta
        assert keep.mean() > 0.999
        u = s2[keep] / domain.perimeter
        w = (eta2[keep] + 1.0) / 2.0
        for sample in (u, w, (u + w) % 1.0):
            stat = stats.kstest(sample, "uniform")
            assert stat.pvalue > 0.01


class TestBirkhoff:
    def test_constant_observable(self):
        res = birkhoff_average(STADIUM, phase_point(0.3, 0.4), lambda s, e: 1.0, 500)
        assert res.value == 1.0
        assert res.n_completed == 500

    def test_disc_periodic_orbit_average(self):
        # eta = 1/2 gives the equilateral-triangle orbit; a 3-periodic
        # observable averages to its orbit value, not the space average 0
        s0 = 0.3
        res = birkhoff_average(
            DISC, phase_point(s0, 0.5), lambda s, e: math.cos(3.0 * s), 300
        )
        assert res.value == pytest.approx(math.cos(3.0 * s0), abs=1e-9)

    def test_disc_orbit_average_matches_rotation(self):
        q0 = phase_point(1.1, 0.27)
        n = 2000
        delta = math.pi - 2.0 * math.asin(q0.eta)
        ss = q0.s + delta * np.arange(n)
        want = float(np.mean(np.cos(ss)))
        res = birkhoff_average(DISC, q0, lambda s, e: math.cos(s), n)
        assert res.value == pytest.approx(want, abs=1e-8)

    def test_stadium_gamma_average_is_quarter_pi(self):
        res = birkhoff_average(
            STADIUM, phase_point(0.123, 0.3456), lambda s, e: math.sqrt(1 - e * e),
            1_000_000,
        )
        assert res.n_completed == 1_000_000
        assert abs(res.value - math.pi / 4.0) < 1e-2


class TestTransferOperator:
    def test_gamma_is_invariant(self):
        gamma = lambda s, e: math.sqrt(1.0 - e * e)
        rng = np.random.default_rng(13)
        worst = 0.0
        for q in random_phase_points(STADIUM, 10_000, rng):
            try:
                tv = transfer_apply(STADIUM, gamma, q)
            except GrazingError:
                continue
            worst = max(worst, abs(tv - q.gamma))
        assert worst <= 1e-12

    def test_identity_function_on_disc(self):
        rng = np.random.default_rng(17)
        for q in random_phase_points(DISC, 100, rng):
            assert transfer_apply(DISC, lambda s, e: 1.0, q) == pytest.approx(
                1.0, abs=1e-13
            )

    def test_adjoint_weight(self):
        q = phase_point(0.4, 0.3)
        res = step(STADIUM, q)
        t = transfer_apply(STADIUM, lambda s, e: 1.0, q)
        ts = transfer_apply(STADIUM, lambda s, e: 1.0, q, adjoint=True)
        assert t * ts == pytest.approx(1.0, abs=1e-12)
        assert t == pytest.approx(q.gamma / res.next.gamma, abs=1e-12)

    def test_monte_carlo_isometry(self):
        # f smooth, supported away from grazing; T preserves the
        # gamma^{-2}-weighted L2 norm exactly, MC verifies within 3 SE
        def bump(e):
            a = e / 0.9
            return math.exp(-1.0 / (1.0 - a * a)) if abs(a) < 1.0 else 0.0

        def f(s, e):
            return (1.0 + 0.5 * math.sin(2.0 * math.pi * s / STADIUM.perimeter)) * bump(e)

        rng = np.random.default_rng(19)
        n = 20_000
        vals_f = []
        vals_tf = []
        for _ in range(n):
            s = rng.random() * STADIUM.perimeter
            e = rng.uniform(-0.95, 0.95)
            q = phase_point(s, e)
            g2 = 1.0 / (1.0 - e * e)
            vals_f.append(f(s, e) ** 2 * g2)
            try:
                vals_tf.append(transfer_apply(STADIUM, f, q) ** 2 * g2)
            except GrazingError:
                vals_tf.append(0.0)
        diff = np.asarray(vals_tf) - np.asarray(vals_f)
        se = diff.std(ddof=1) / math.sqrt(n)
        assert abs(diff.mean()) <= 3.0 * se


class TestLoopProfile:
    def test_disc_loops_are_rare(self):
        prof = loop_profile(DISC, 0.0, n_max=20, n_samples=2000, tol=1e-3, seed=0)
        assert prof.loop_measure_estimate < 0.05

    def test_half_disc_center_focusing(self):
        prof = loop_profile(HALF_DISC, 0.0, n_max=20, n_samples=500, tol=1e-3, seed=0)
        assert prof.loop_measure_estimate > 0.1

    def test_zero_iterations(self):
        prof = loop_profile(DISC, 0.0, n_max=0, n_samples=50, tol=1e-3, seed=0)
        assert prof.loop_measure_estimate == 0.0
        assert all(math.isinf(rec[1]) for rec in prof.samples)

    def test_confidence_halfwidth_reported(self):
        prof = loop_profile(HALF_DISC, 0.0, n_max=10, n_samples=400, tol=1e-3, seed=1)
        assert 0.0 < prof.confidence_halfwidth < 0.2

    def test_disc_loop_lengths_hit_polygons(self):
        # back-and-forth diameter (4) and inscribed triangle (3 sqrt 3)
        found = [L for L, _ in loop_lengths(DISC, 0.0, n_samples=4000)]
        assert any(abs(L - 4.0) < 0.05 for L in found)
        assert any(abs(L - 3.0 * math.sqrt(3.0)) < 0.05 for L in found)
        assert all(c >= 1 for _, c in loop_lengths(DISC, 0.0, n_samples=400))

    def test_loop_lengths_sorted_and_clustered(self):
        pairs = loop_lengths(DISC, 1.0, n_samples=3000, cluster_gap=0.25)
        lens = [L for L, _ in pairs]
        assert lens == sorted(lens)
        assert all(b - a > 0.25 for a, b in zip(lens, lens[1:]))
