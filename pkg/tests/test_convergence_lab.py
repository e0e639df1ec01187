import math

import numpy as np
import pytest

from sewnspace.errors import ParameterError
from sewnspace.tools.convergence_lab import (
    ANNULUS,
    EDITED,
    IDENTITY,
    AlmostIsometry,
    ConvergenceReport,
    StepRecord,
    build_F,
    distortion,
    gh_upper_bound,
    lipschitz_estimate,
    mm_convergence_table,
)
from sewnspace.tools.metric_core import SHELL, FiniteMetricSpace, distance_to_circle
from sewnspace.tools.revolution_geometry import tube_volume
from sewnspace.tools.sewing_sim import build_sewn, default_schedule, place_balls


def _line(*points):
    x = np.array(points, dtype=float)
    return FiniteMetricSpace(np.ones(len(x)), dist=np.abs(x[:, None] - x[None, :]))


def _identity(n):
    return AlmostIsometry(map=np.arange(n), region=np.zeros(n, dtype=np.int8), p0_index=0, delta=0.1)


def _record(j, distortion_value, mass, neck_area=1.0, ball_vols=(1.0,)):
    return StepRecord(
        j=j, delta=0.4 / 2 ** j, n=2, h=1.0, distortion=distortion_value, gh_upper=distortion_value / 2,
        coverage_gap=0.0, lip_est=1.0, mass=mass, epsilon_measured=0.0, neck_area=neck_area,
        edited_volume=1.0 / (j + 1), edited_diameter=0.0, H_delta=1.0, p0_node=0, ball_vols=list(ball_vols),
    )


@pytest.fixture(scope="module")
def sewn_map(string_spaces):
    X, Y, a_tube = string_spaces
    s = build_sewn(X, place_balls(X, 2, 0.2))
    return s, Y, build_F(s, Y, 0.2, a_tube)


class TestDistortion:
    def test_identity_on_line(self):
        X = _line(0, 1, 3, 10)
        F = _identity(X.n)
        assert distortion(F, X, X) == 0.0
        assert F.coverage_gap == 0.0
        assert gh_upper_bound(F) == 0.0

    def test_coverage_gap(self):
        X, Y = _line(0, 1), _line(0, 1, 3)
        F = _identity(2)
        assert distortion(F, X, Y) == 0.0
        assert F.coverage_gap == 2.0
        assert gh_upper_bound(F) == 2.0

    def test_collapse(self):
        X, Y = _line(0, 1, 3), _line(0)
        F = AlmostIsometry(map=np.zeros(3, dtype=np.intp), region=np.zeros(3, dtype=np.int8), p0_index=0, delta=0.1)
        assert distortion(F, X, Y) == 3.0
        assert gh_upper_bound(F) == 1.5

    def test_gh_needs_distortion(self):
        with pytest.raises(ParameterError):
            gh_upper_bound(_identity(3))

    def test_map_size_must_match(self):
        with pytest.raises(ParameterError):
            distortion(_identity(2), _line(0, 1, 3), _line(0, 1, 3))

    def test_identity_on_pulled_space(self, string_spaces):
        _, Y, _ = string_spaces
        F = _identity(Y.n)
        assert distortion(F, Y, Y) == 0.0
        assert lipschitz_estimate(F, Y, Y, pairs=2000) == pytest.approx(1.0)


class TestBuildF:
    def test_regions(self, sewn_map):
        s, _, F = sewn_map
        counts = F.region_counts()
        assert sum(counts.values()) == s.metric.n
        assert all(v > 0 for v in counts.values())
        assert np.all(F.region[s.metric.tags == SHELL] == EDITED)
        assert np.all(F.region[s.edited_idx] == EDITED)

    def test_edited_region_goes_to_p0(self, sewn_map):
        _, Y, F = sewn_map
        assert np.all(F.map[F.region == EDITED] == Y.p0_index)

    def test_identity_region_keeps_labels(self, sewn_map):
        s, Y, F = sewn_map
        far = np.flatnonzero(F.region == IDENTITY)
        assert np.all(distance_to_circle(s.metric.coords[far]) >= 2 * 0.2)
        np.testing.assert_array_equal(Y.labels[F.map[far]], s.metric.labels[far])

    def test_annulus_targets(self, string_spaces, sewn_map):
        _, _, a_tube = string_spaces
        s, Y, F = sewn_map
        annulus = np.flatnonzero(F.region == ANNULUS)
        d = distance_to_circle(s.metric.coords[annulus])
        assert np.all((d >= 0.2) & (d < 0.4))
        targets = F.map[annulus]
        assert np.all((targets >= 0) & (targets < Y.n))
        inner = d * (d - 0.2) / 0.2 <= a_tube
        assert np.all(targets[inner] == Y.p0_index)

    def test_statistics(self, sewn_map):
        s, Y, F = sewn_map
        value = distortion(F, s, Y)
        assert 0 < value < 2 * math.pi
        assert F.coverage_gap >= 0
        assert gh_upper_bound(F) >= value / 2
        assert lipschitz_estimate(F, s, Y, pairs=5000) > 0

    def test_needs_coordinates(self, sewn_map, line_space):
        s, _, _ = sewn_map
        from sewnspace.tools.metric_core import pull_set

        with pytest.raises(ParameterError):
            build_F(s, pull_set(line_space, [0], 0), 0.2)


class TestReportFlags:
    def test_trends(self):
        report = ConvergenceReport(
            records=[_record(0, 1.0, 10.0, 3.0), _record(1, 0.5, 10.2, 2.0), _record(2, 0.2, 9.9, 1.0)],
            r_grid=[0.3], tube_targets=[1.0], pulled_ball_vols=[1.0], seed=0,
            schedule=default_schedule(3), vol_M=10.0, epsilon=0.05,
        )
        flags = report.flags()
        assert flags == {
            "distortion_strictly_decreasing": True,
            "distortion_quartered": True,
            "distortion_reduced": True,
            "ball_error_decreasing": True,
            "masses_ok": True,
            "neck_areas_decreasing": True,
            "edited_volume_decreasing": True,
        }
        assert report.table_rows()[1] == (1, 0.2, 2, 1.0, 0.5, 0.25, 10.2, 2.0)
        assert report.ball_rows(0) == [(0.3, 1.0, 1.0)]

    def test_mass_outside_tolerance(self):
        report = ConvergenceReport(
            records=[_record(0, 1.0, 10.0), _record(1, 1.2, 11.0)],
            r_grid=[0.3], tube_targets=[1.0], pulled_ball_vols=[1.0], seed=0,
            schedule=default_schedule(2), vol_M=10.0, epsilon=0.05,
        )
        assert not report.masses_ok
        assert not report.distortion_reduced
        assert not report.distortion_strictly_decreasing


class TestSchedule:
    def test_small_schedule(self, string_spaces):
        report = mm_convergence_table([(0.4, 1), (0.2, 1)], [0.6], lip_pairs=2000, spaces=string_spaces)
        assert [r.delta for r in report.records] == [0.4, 0.2]
        assert report.masses_ok
        assert report.records[0].neck_area > report.records[1].neck_area
        assert report.tube_targets == [pytest.approx(tube_volume(0.6))]
        assert report.pulled_ball_vols[0] == pytest.approx(tube_volume(0.6), rel=0.15)
        for record in report.records:
            assert record.distortion > 0
            assert record.gh_upper >= record.distortion / 2
            assert record.edited_diameter <= record.H_delta
            assert record.ball_vols[0] > 0
        data = report.to_dict()
        assert len(data["records"]) == 2
        assert "masses_ok" in data
        assert data["schedule"] == [[0.4, 1], [0.2, 1]]

    def test_rejects_increasing_deltas(self, string_spaces):
        with pytest.raises(ParameterError, match="decreasing"):
            mm_convergence_table([(0.2, 1), (0.4, 1)], [0.6], spaces=string_spaces)

    def test_rejects_empty_schedule(self, string_spaces):
        with pytest.raises(ParameterError):
            mm_convergence_table([], [0.6], spaces=string_spaces)

    @pytest.mark.slow
    def test_default_schedule_at_desk_scale(self):
        report = mm_convergence_table(default_schedule(), [0.2, 0.3, 0.4, 0.5, 0.6], N=8000, seed=0)
        assert report.masses_ok
        assert report.distortion_strictly_decreasing, report.distortions
        assert report.distortion_quartered, report.distortions
        assert report.ball_error_decreasing, report.ball_errors
        assert report.edited_volume_decreasing
        assert report.records[-1].edited_volume < 0.01 * report.records[0].edited_volume
        assert report.neck_areas_decreasing
        assert all(r.neck_area <= 4.0 * math.pi * (r.delta / 10.0) ** 2 for r in report.records)
        assert all(r.lip_est <= 4.5 for r in report.records)
