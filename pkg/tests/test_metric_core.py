import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.distance import cdist

from sewnspace.errors import ParameterError
from sewnspace.tools.metric_core import (
    STRING,
    FiniteMetricSpace,
    ProbeResolutionError,
    ball_volume,
    check_metric,
    circle_coords,
    distance_to_circle,
    load_space,
    pull_great_circle,
    pull_set,
    sample_sphere3,
    save_space,
    scalar_probe,
    with_great_circle,
)


class TestSphereSample:
    def test_unit_norm_and_mass(self, sphere_small):
        np.testing.assert_allclose(np.linalg.norm(sphere_small.coords, axis=1), 1.0, atol=1e-12)
        assert sphere_small.total_weight == pytest.approx(2.0 * math.pi ** 2)

    def test_deterministic(self):
        a = sample_sphere3(100, seed=5)
        b = sample_sphere3(100, seed=5)
        c = sample_sphere3(100, seed=6)
        assert np.array_equal(a.coords, b.coords)
        assert not np.array_equal(a.coords, c.coords)

    def test_curvature_scales_mass(self):
        X = sample_sphere3(100, K=0.25)
        assert X.total_weight == pytest.approx(16.0 * math.pi ** 2)

    @pytest.mark.parametrize("N,K", [(9, 1.0), (100, 0.0), (100, -1.0)])
    def test_rejects(self, N, K):
        with pytest.raises(ParameterError):
            sample_sphere3(N, K)

    def test_rows_match_arccos(self, sphere_small):
        d = sphere_small.rows([0, 1, 2])
        dots = np.clip(sphere_small.coords[[0, 1, 2]] @ sphere_small.coords.T, -1.0, 1.0)
        np.testing.assert_allclose(d, np.arccos(dots), atol=1e-7)
        assert d[0, 0] == 0.0

    def test_pair_distances_match_rows(self, sphere_small):
        a = np.array([3, 7, 11])
        b = np.array([5, 7, 900])
        np.testing.assert_allclose(sphere_small.pair_distances(a, b), sphere_small.rows(a)[np.arange(3), b], atol=1e-14)

    def test_metric_axioms(self):
        X = sample_sphere3(200, seed=3)
        check = check_metric(X)
        assert check.ok
        assert check.diameter <= math.pi

    def test_kdtree_ball_volumes_match_rows(self, sphere_small):
        centers = np.arange(20)
        radii = np.array([0.3, 0.6])
        vols, counts = sphere_small.mean_ball_volumes(centers, radii)
        rows = sphere_small.rows(centers)
        expected = [np.mean(np.sum(rows <= r, axis=1)) for r in radii]
        np.testing.assert_allclose(counts, expected)
        np.testing.assert_allclose(vols, np.array(expected) * sphere_small.weight[0])


class TestGreatCircle:
    def test_string_nodes(self, sphere_small):
        X = with_great_circle(sphere_small, 64)
        assert X.n == sphere_small.n + 64
        assert X.total_weight == pytest.approx(sphere_small.total_weight, rel=1e-12)
        strings = np.flatnonzero(X.tags == STRING)
        assert len(strings) == 64
        np.testing.assert_allclose(distance_to_circle(X.coords[strings]), 0.0, atol=1e-12)
        assert len(np.unique(X.labels)) == X.n

    def test_distance_to_circle(self):
        pole = np.array([[0.0, 0.0, 1.0, 0.0]])
        assert distance_to_circle(pole)[0] == pytest.approx(math.pi / 2)
        assert distance_to_circle(circle_coords([0.7]))[0] == pytest.approx(0.0)

    def test_pull_great_circle(self, string_spaces):
        X, Y, a_tube = string_spaces
        assert Y.tags[Y.p0_index] == STRING
        assert Y.weight[Y.p0_index] == 0.0
        assert np.all(distance_to_circle(X.coords[Y.K_idx]) <= a_tube)
        assert Y.total_weight + Y.removed_weight == pytest.approx(X.total_weight, rel=1e-12)

    def test_pull_great_circle_rejects(self, sphere_small):
        with pytest.raises(ParameterError):
            pull_great_circle(sphere_small, -0.1)


class TestPulling:
    def test_line_example(self, line_space):
        # collapse {0, 3}: a(1) = 1, a(10) = 7
        Y = pull_set(line_space, [0, 2], 0)
        assert Y.n == 3
        np.testing.assert_allclose(Y.reach, [0.0, 1.0, 7.0])
        assert Y.dist[1, 2] == 8.0
        assert Y.dist[0, 2] == 7.0
        assert Y.total_weight == 2.0
        assert Y.removed_weight == 2.0

    def test_singleton_keeps_distances(self, line_space):
        Y = pull_set(line_space, [1], 1)
        np.testing.assert_allclose(Y.dist, line_space.dist)
        assert Y.weight[1] == 0.0

    def test_rejects_p0_outside(self, line_space):
        with pytest.raises(ParameterError):
            pull_set(line_space, [0, 1], 2)

    def test_rejects_empty(self, line_space):
        with pytest.raises(ParameterError):
            pull_set(line_space, [], 0)

    def test_labels_follow_points(self, line_space):
        Y = pull_set(line_space, [1, 2], 2)
        assert list(Y.labels) == [0, 2, 3]
        assert Y.index_of(3) == 2

    @given(
        n=st.integers(2, 60),
        seed=st.integers(0, 2**32 - 1),
        fraction=st.floats(0.01, 0.95),
    )
    @settings(max_examples=200, deadline=None)
    def test_pulled_space_is_metric_with_exact_mass(self, n, seed, fraction):
        rng = np.random.default_rng(seed)
        points = rng.normal(size=(n, 3))
        weight = rng.integers(0, 5, size=n).astype(float)
        X = FiniteMetricSpace(weight, dist=cdist(points, points))
        K_idx = rng.choice(n, size=max(1, int(fraction * n)), replace=False)
        Y = pull_set(X, K_idx, int(K_idx[0]))

        check = check_metric(Y)
        assert check.ok, check
        assert Y.total_weight + Y.removed_weight == X.total_weight
        assert Y.n == n - len(K_idx) + 1
        assert np.all(Y.dist <= X.dist[np.ix_(Y.keep, Y.keep)])


class TestBallVolume:
    def test_line_balls(self, line_space):
        assert ball_volume(line_space, 0, 0.0) == 1.0
        assert ball_volume(line_space, 0, 1.0) == 2.0
        assert ball_volume(line_space, 1, 2.0) == 3.0

    def test_rejects_negative_radius(self, line_space):
        with pytest.raises(ParameterError):
            ball_volume(line_space, 0, -1.0)


class TestScalarProbe:
    def test_resolution_guard(self):
        X = sample_sphere3(200, seed=1)
        with pytest.raises(ProbeResolutionError):
            scalar_probe(X, 0, [0.1])

    def test_rejects_radii(self, sphere_small):
        with pytest.raises(ParameterError):
            scalar_probe(sphere_small, 0, [])
        with pytest.raises(ParameterError):
            scalar_probe(sphere_small, 0, [0.5, -0.1])

    def test_report_shape(self, sphere_small):
        report = scalar_probe(sphere_small, np.arange(sphere_small.n), [0.6, 0.8])
        assert report.n_centers == sphere_small.n
        np.testing.assert_allclose(report.scal_est, 30.0 * report.ratio)
        assert len(list(report.rows())) == 2
        assert np.all(report.scal_est > 0)

    @pytest.mark.slow
    def test_unit_sphere_scalar_curvature(self):
        X = sample_sphere3(20000, seed=0)
        radii = np.round(np.arange(0.3, 0.6 + 1e-9, 0.05), 12)
        report = scalar_probe(X, np.arange(X.n), radii)
        assert np.all(report.scal_est >= 5.1)
        assert np.all(report.scal_est <= 6.9)

    @pytest.mark.slow
    def test_pulled_point_divergence(self):
        from sewnspace.tools.convergence_lab import pulled_string_space

        _, Y, _ = pulled_string_space(20000, seed=0)
        radii = np.round(np.arange(0.2, 0.5 + 1e-9, 0.05), 12)
        report = scalar_probe(Y, Y.p0_index, radii)
        scaled = report.ratio * radii ** 3
        target = -1.5 * math.pi
        assert np.all(scaled <= 0.7 * target)
        assert np.all(scaled >= 1.3 * target)
        assert np.all(np.diff(report.ratio) > 0)


class TestContainers:
    def test_save_and_load(self, line_space, tmp_path):
        path = save_space(line_space, tmp_path / "space.npz", {"p0_index": 1})
        space, meta = load_space(path)
        assert meta == {"p0_index": 1}
        assert np.array_equal(space.dist, line_space.dist)
        assert np.array_equal(space.weight, line_space.weight)
        assert space.coords is None
