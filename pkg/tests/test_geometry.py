from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from turbolab.geometry import (
    BallCover,
    CoverInsufficient,
    NotAGraph,
    curve_distance,
    cutoff,
    graph_from_curve,
    graph_from_levelset,
    polyline_normals,
    resample_closed,
    star_boundary,
)


def circle(n: int = 512, radius: float = 1.0) -> np.ndarray:
    t = 2 * np.pi * np.arange(n) / n
    return radius * np.stack([np.cos(t), np.sin(t)], axis=1)


def unit_disk_phi(p):
    return 1.0 - np.hypot(p[..., 0], p[..., 1])


class TestCutoff:
    @pytest.mark.parametrize("beta", [0.05, 0.2, 0.45])
    def test_plateau_and_support(self, beta):
        assert cutoff(0.0, beta) == 1.0
        assert cutoff(1 - beta, beta) == 1.0
        assert cutoff(1.0, beta) == 0.0
        assert cutoff(1.3, beta) == 0.0

    @settings(max_examples=50, deadline=None)
    @given(s=st.floats(-2, 2), beta=st.floats(0.01, 0.49))
    def test_range(self, s, beta):
        v = float(cutoff(s, beta))
        assert 0.0 <= v <= 1.0

    @pytest.mark.parametrize("beta", [0.0, 0.5, -0.1])
    def test_rejects_beta(self, beta):
        with pytest.raises(ValueError):
            cutoff(0.5, beta)


class TestCurves:
    def test_resample_spacing(self):
        c = circle(16)
        r = resample_closed(c, 0.01)
        gaps = np.linalg.norm(np.roll(r, -1, axis=0) - r, axis=1)
        assert gaps.max() <= 0.01 + 1e-12

    def test_outward_normals_on_circle(self):
        c = circle(256)
        np.testing.assert_allclose(polyline_normals(c), c, atol=1e-3)

    def test_curve_distance_to_circle(self):
        c = circle(4096)
        pts = np.array([[0.0, 0.0], [2.0, 0.0], [0.0, -1.5], [0.3, 0.4]])
        np.testing.assert_allclose(curve_distance(pts, c), [1.0, 1.0, 0.5, 0.5], atol=1e-6)

    def test_star_boundary_on_circle(self):
        b = star_boundary(lambda p: 0.8 - np.hypot(p[..., 0], p[..., 1]), 1024)
        np.testing.assert_allclose(np.hypot(b[:, 0], b[:, 1]), 0.8, atol=1e-13)

    def test_star_boundary_requires_inside_center(self):
        with pytest.raises(ValueError):
            star_boundary(lambda p: 0.3 - np.hypot(p[..., 0] - 1, p[..., 1]), 64)


class TestCover:
    def test_on_circle(self):
        cover = BallCover.on_curve(circle(), 16)
        assert len(cover) == 16
        assert cover.radius == pytest.approx(1.5 * 2 * np.pi / 16, rel=1e-3)
        np.testing.assert_allclose(np.linalg.norm(cover.normals, axis=1), 1.0)
        cover.check_covers(circle(2048))

    def test_too_few_balls(self):
        cover = BallCover.on_curve(circle(), 4, radius=0.5)
        with pytest.raises(CoverInsufficient):
            cover.check_covers(circle(2048))

    def test_frame_places_boundary_at_twice_radius(self):
        cover = BallCover.on_curve(circle(), 8, radius=0.6)
        fr = cover.frame(0)
        x, y = fr.to_local(cover.centers[0])
        assert x == pytest.approx(0.0, abs=1e-12)
        assert y == pytest.approx(1.2)
        back = fr.to_global(np.array([0.1]), np.array([0.7]))
        np.testing.assert_allclose(fr.to_local(back), [[0.1], [0.7]])

    def test_xi_is_cutoff_of_scaled_distance(self):
        cover = BallCover.on_curve(circle(), 8, radius=0.6, beta=0.3)
        c = cover.centers[2]
        assert cover.xi(2, c) == 1.0
        assert cover.xi(2, c + np.array([0.6, 0.0])) == 0.0


class TestGraphs:
    cover = BallCover.on_curve(circle(), 12, radius=0.6)

    def test_levelset_graph_of_circle(self):
        fr = self.cover.frame(3)
        xs = np.linspace(-0.5, 0.5, 41)
        F = graph_from_levelset(unit_disk_phi, fr, xs, 0.6)
        # distance from the frame origin to the circle along the frame's vertical lines
        c = self.cover.centers[3]
        o = c - 1.2 * self.cover.normals[3]
        pts = fr.to_global(xs, F)
        np.testing.assert_allclose(np.hypot(pts[:, 0], pts[:, 1]), 1.0, atol=1e-13)
        assert np.all(F > 0.1 * 0.6)
        assert np.allclose(o, fr.origin)

    def test_curve_graph_matches_levelset_graph(self):
        fr = self.cover.frame(5)
        xs = np.linspace(-0.5, 0.5, 41)
        a = graph_from_levelset(unit_disk_phi, fr, xs, 0.6)
        b = graph_from_curve(circle(8192), fr, xs, 0.6)
        np.testing.assert_allclose(a, b, atol=1e-8)

    def test_levelset_not_a_graph(self):
        # two thin parallel walls cross every vertical line twice within the ball
        def walls(p):
            x, y = p[..., 0], p[..., 1]
            return 0.05 - np.abs(np.abs(y - 1.0) - 0.2) + 0 * x

        cover = BallCover(np.array([[0.0, 1.0]]), np.array([[0.0, 1.0]]), 0.6)
        with pytest.raises(NotAGraph):
            graph_from_levelset(walls, cover.frame(0), np.linspace(-0.3, 0.3, 11), 0.6)

    def test_curve_fold_detected(self):
        # an S-shaped wiggle folds back over the frame's horizontal axis
        t = np.linspace(-1, 1, 400)
        x = t - 0.3 * np.sin(3 * np.pi * t)
        curve = np.stack([x, 1.2 + 0.05 * t], axis=1)
        curve = np.vstack([curve, [[1.0, -5.0], [-1.0, -5.0]]])
        cover = BallCover(np.array([[0.0, 1.2]]), np.array([[0.0, 1.0]]), 0.6)
        with pytest.raises(NotAGraph):
            graph_from_curve(curve, cover.frame(0), np.linspace(-0.3, 0.3, 11), 0.6)
