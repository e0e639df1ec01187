import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from sewnspace.errors import ConstructionError, ParameterError
from sewnspace.tools.revolution_geometry import build_tunnel, scalar_curvature_profile
from sewnspace.tools.tunnel_curve import (
    ALPHA_MAX,
    ALPHA_MIN,
    CONTRACTION_BOUND,
    CurvatureProfile,
    PlaneCurve,
    build_step_profile,
    integrate_curve,
    smooth_profile,
    template_integral,
    transition_template,
    verify_bend_condition,
)

DELTA0_GRID = [0.1, 0.03, 0.01, 0.003]


@pytest.fixture(scope="module")
def two_jump_profile():
    """k = 0, 3, 0 on three half-unit segments; smoothing widths in (0.02, 0.5) are admissible."""
    return CurvatureProfile(K=1.0, delta0=0.1, s_breaks=(0.0, 0.5, 1.0, 1.5), k_values=(0.0, 3.0, 0.0))


class TestTemplate:
    def test_endpoints(self):
        assert transition_template(0.0) == 0.0
        assert transition_template(1.0) == 1.0
        assert transition_template(-0.5) == 0.0
        assert transition_template(2.0) == 1.0

    def test_symmetric(self):
        x = np.linspace(0.01, 0.99, 25)
        np.testing.assert_allclose(transition_template(x) + transition_template(1.0 - x), 1.0, atol=1e-14)

    def test_integral_at_one(self):
        assert template_integral(1.0) == pytest.approx(0.5, abs=1e-12)
        assert template_integral(2.0) == pytest.approx(1.5, abs=1e-12)

    @pytest.mark.parametrize("x", [0.1, 0.3, 0.5, 0.7, 0.9])
    def test_integral_matches_quadrature(self, x):
        expected, _ = quad(lambda t: float(transition_template(t)), 0.0, x, epsabs=1e-14, epsrel=1e-12)
        assert template_integral(x) == pytest.approx(expected, abs=1e-10)

    @pytest.mark.parametrize("x", [0.05, 0.2, 0.45])
    def test_integral_reflection(self, x):
        # G(1 - x) = 1/2 - x + G(x) from g(t) + g(1 - t) = 1
        assert template_integral(1.0 - x) == pytest.approx(0.5 - x + template_integral(x), abs=1e-12)


class TestStepProfile:
    def test_structure(self, step_profile):
        p = step_profile
        assert p.k_values[0] == -1.0
        assert p.k_values[-1] == 0.0
        assert p.s_breaks[0] == 0.0
        assert np.all(np.diff(p.s_breaks) > 0)
        assert p.theta_values[-1] == pytest.approx(math.pi / 4)
        assert p.n_steps >= 1
        assert not p.is_smooth

    def test_first_segment_is_half_delta0(self, step_profile):
        assert step_profile.s_breaks[1] == pytest.approx(0.005)

    @pytest.mark.parametrize("delta0", DELTA0_GRID)
    def test_contraction_bound(self, delta0):
        p = build_step_profile(1.0, delta0)
        assert p.contraction_ratios
        assert max(p.contraction_ratios) <= CONTRACTION_BOUND + 1e-9

    def test_heights_decrease(self, step_profile):
        assert np.all(np.diff(step_profile.b_values) < 0)

    @pytest.mark.parametrize("delta0", DELTA0_GRID)
    def test_angle_gain_per_step(self, delta0):
        p = build_step_profile(1.0, delta0)
        theta = np.array(p.theta_values)
        gains = np.diff(theta)
        # every full step gains sin(theta)/8; the last one is cut at pi/4
        np.testing.assert_allclose(gains[:-1], np.sin(theta[:-2]) / 8.0, rtol=1e-12)
        assert np.all(gains > 0)
        assert theta[-1] == pytest.approx(math.pi / 4, abs=1e-15)

    @pytest.mark.parametrize("delta0", DELTA0_GRID)
    def test_integrated_angle_and_height_are_monotone(self, delta0):
        c = integrate_curve(build_step_profile(1.0, delta0), delta0 / 100.0)
        bent = slice(c.milestones[0], None)
        assert np.all(np.diff(c.theta[bent]) >= -1e-12)
        assert np.all(np.diff(c.x1) <= 1e-12 * c.x1[:-1])

    def test_step_curvature_follows_recursion(self, step_profile):
        p = step_profile
        for i in range(1, p.n_steps + 1):
            expected = math.sin(p.theta_values[i - 1]) / (4.0 * p.b_values[i - 1])
            assert p.k_values[i] == pytest.approx(expected, rel=1e-12)

    def test_final_bend(self, step_profile):
        p = step_profile
        assert p.k_values[-2] == pytest.approx(p.alpha_bend / p.b_values[-1])

    @pytest.mark.parametrize("alpha", [ALPHA_MIN, ALPHA_MAX, 0.9, 0.1])
    def test_rejects_alpha(self, alpha):
        with pytest.raises(ParameterError):
            build_step_profile(1.0, 0.01, alpha)

    @pytest.mark.parametrize("K,delta0", [(1.5, 0.01), (0.0, 0.01), (1.0, 0.0), (1.0, 1.0)])
    def test_rejects_parameters(self, K, delta0):
        with pytest.raises(ParameterError):
            build_step_profile(K, delta0)

    def test_rejects_initial_angle_past_quarter(self):
        # theta_0 = 0.9 - 0.1 * 0.45 > pi/4
        with pytest.raises(ParameterError):
            build_step_profile(0.01, 0.9)


class TestSmoothing:
    def test_total_turn_preserved(self, step_profile):
        p = smooth_profile(step_profile, 0.05 * min(step_profile.lengths))
        assert p.is_smooth
        assert p.beta > 0
        assert p.total_turn() == pytest.approx(math.pi / 2 - p.theta_start, abs=1e-12)

    def test_zero_width_is_identity(self, step_profile):
        assert smooth_profile(step_profile, 0.0) is step_profile

    def test_width_too_large(self, step_profile):
        with pytest.raises(ParameterError):
            smooth_profile(step_profile, min(step_profile.lengths))

    def test_already_smooth(self, step_profile):
        p = smooth_profile(step_profile, 0.05 * min(step_profile.lengths))
        with pytest.raises(ParameterError):
            smooth_profile(p, p.smooth_width)

    def test_compensation_segment_falls_to_zero(self, step_profile):
        p = smooth_profile(step_profile, 0.05 * min(step_profile.lengths))
        comp = p.compensation_index
        start = p.s_breaks[comp]
        assert p.evaluate(start) == pytest.approx(p.k_values[comp - 1])
        assert p.evaluate(start + p.beta) == pytest.approx(0.0, abs=1e-12)

    def test_profile_dict(self, step_profile):
        p = smooth_profile(step_profile, 0.05 * min(step_profile.lengths))
        data = p.to_dict()
        assert data["smooth"] is True
        again = CurvatureProfile.from_dict(data)
        assert again.beta == p.beta
        assert again.k_values == p.k_values

    def test_curve_converges_as_width_shrinks(self, two_jump_profile):
        s = np.linspace(0.0, 1.0, 2001)
        step_curve = integrate_curve(two_jump_profile, 1e-3, start=(0.0, 1.0), phi_start=0.0)
        gaps = []
        for width in (0.2, 0.1, 0.05):
            c = integrate_curve(smooth_profile(two_jump_profile, width), 1e-3, start=(0.0, 1.0), phi_start=0.0)
            gaps.append(max(
                np.max(np.abs(np.interp(s, c.s, c.x0) - np.interp(s, step_curve.s, step_curve.x0))),
                np.max(np.abs(np.interp(s, c.s, c.x1) - np.interp(s, step_curve.s, step_curve.x1))),
            ))
        assert gaps[0] > gaps[1] > gaps[2]
        assert gaps[2] < gaps[0] / 3.0


class TestIntegration:
    def test_quarter_circle(self):
        p = CurvatureProfile(K=1.0, delta0=0.1, s_breaks=(0.0, math.pi / 2), k_values=(-1.0,))
        c = integrate_curve(p, 1e-3, start=(0.0, 1.0), phi_start=0.0)
        assert c.x0[-1] == pytest.approx(1.0, abs=1e-9)
        assert c.x1[-1] == pytest.approx(0.0, abs=1e-9)
        np.testing.assert_allclose(np.hypot(c.x0, c.x1), 1.0, atol=1e-9)
        assert c.arclength_defect() < 1e-6

    def test_straight_line(self):
        p = CurvatureProfile(K=1.0, delta0=0.1, s_breaks=(0.0, 2.0), k_values=(0.0,))
        c = integrate_curve(p, 0.1, start=(0.0, 0.5), phi_start=0.0)
        assert c.x0[-1] == pytest.approx(2.0)
        np.testing.assert_allclose(c.x1, 0.5)

    def test_rejects_step(self, step_profile):
        with pytest.raises(ParameterError):
            integrate_curve(step_profile, 0.0)

    def test_initial_arc_on_sphere_circle(self, step_profile):
        c = integrate_curve(step_profile, 1e-5)
        head = slice(0, c.milestones[0] + 1)
        np.testing.assert_allclose(c.x1[head], np.sin(c.theta[head]), rtol=1e-9)

    @pytest.mark.parametrize("delta0", DELTA0_GRID)
    def test_tunnel_properties(self, delta0):
        c = build_tunnel(1.0, 10.0 * delta0 if delta0 < 0.1 else 0.4, delta0).curve
        assert c.theta[-1] == pytest.approx(math.pi / 2, abs=1e-6)
        assert verify_bend_condition(c).ok
        assert np.all(scalar_curvature_profile(c) > 0)
        assert c.x0_strictly_increasing()
        assert np.all(c.x1 > 0)

    def test_length_scales_with_delta0(self):
        ratios = [build_tunnel(1.0, 0.4, d).curve.L / d for d in DELTA0_GRID]
        assert max(ratios) / min(ratios) <= 2.0

    def test_tail_is_flat(self, tunnel_02):
        c = tunnel_02.curve
        tail = slice(c.tail_start, None)
        np.testing.assert_allclose(c.k[tail][1:], 0.0)
        np.testing.assert_allclose(c.theta[tail][1:], math.pi / 2, atol=1e-6)

    def test_tail_keeps_height_at_small_delta0(self):
        c = build_tunnel(1.0, 0.03, 0.003).curve
        tail = slice(c.tail_start, None)
        assert c.x1[c.tail_start] > 0
        assert np.all(c.x1[tail] == c.x1[c.tail_start])
        assert np.all(c.theta[tail][1:] == math.pi / 2)

    def test_rejects_curve_reaching_the_axis(self):
        # straight descent from (0, sin 0.1) crosses x1 = 0 near s = 0.1
        p = CurvatureProfile(K=1.0, delta0=0.1, s_breaks=(0.0, 1.0), k_values=(0.0,))
        with pytest.raises(ConstructionError, match="axis"):
            integrate_curve(p, 1e-2)

    def test_transitions_converge_at_second_order(self, two_jump_profile):
        p = smooth_profile(two_jump_profile, 0.2)
        ends = []
        for m in (32, 64, 128):
            c = integrate_curve(p, 0.2 / m, start=(0.0, 1.0), phi_start=0.0)
            ends.append(np.array([c.x0[-1], c.x1[-1]]))
        coarse = np.linalg.norm(ends[0] - ends[1])
        fine = np.linalg.norm(ends[1] - ends[2])
        assert 3.0 < coarse / fine < 5.0


class TestBendCondition:
    def test_inflated_first_step_violates(self, step_profile):
        ks = list(step_profile.k_values)
        ks[1] *= 2.5
        bad = replace(step_profile, k_values=tuple(ks))
        report = verify_bend_condition(integrate_curve(bad, 1e-5, start=bad.start_point, phi_start=bad.phi_start))
        assert not report.ok
        assert report.min_margin < 0

    def test_zero_height_is_reported(self):
        c = PlaneCurve(
            s=np.array([0.0]), x0=np.array([0.0]), x1=np.array([0.0]), phi=np.array([0.0]),
            theta=np.array([math.pi / 2]), k=np.array([0.0]),
            ds=np.array([]), dx0=np.array([]), dx1=np.array([]),
        )
        assert verify_bend_condition(c).min_margin == -np.inf

    @given(
        theta=st.floats(0.01, math.pi - 0.01),
        x1=st.floats(1e-6, 10.0),
        k=st.floats(-100.0, 100.0),
    )
    @settings(max_examples=300, deadline=None)
    def test_scal_sign_matches_bend_margin(self, theta, x1, k):
        c = PlaneCurve(
            s=np.array([0.0]), x0=np.array([0.0]), x1=np.array([x1]), phi=np.array([theta - math.pi / 2]),
            theta=np.array([theta]), k=np.array([k]),
            ds=np.array([]), dx0=np.array([]), dx1=np.array([]),
        )
        margin = verify_bend_condition(c).min_margin
        assume(abs(margin) > 1e-9 * (1.0 + abs(k)))
        assert (scalar_curvature_profile(c)[0] > 0) == (margin > 0)
