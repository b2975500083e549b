from __future__ import annotations

import numpy as np
import pytest

from turbolab.diffeo import (
    DiffeoMap,
    FoldDetected,
    boundary_match,
    build_cutoff,
    build_eta,
    default_cover,
    diffeo_report,
    fd4,
    grid_hs_norm,
    jacobian_fd,
    local_graph_map,
)
from turbolab.domain_approx import DomainPair, disk_domain
from turbolab.field_core import Grid
from turbolab.geometry import GraphDegeneracy

BOX = Grid(2, 64, 4.0, -2.0)
DELTA = 0.05


@pytest.fixture(scope="module")
def disk():
    return disk_domain(BOX)


@pytest.fixture(scope="module")
def dilated(disk):
    pair = DomainPair(disk, disk_domain(BOX, 1 + DELTA), 0.01)
    cover = default_cover(pair, 12, 0.85, 0.45)
    return pair, cover, build_eta(pair, cover)


class TestCutoff:
    @pytest.mark.parametrize("beta", [0.1, 0.2, 0.4])
    def test_slope_scales_like_inverse_beta(self, beta):
        xi = build_cutoff(beta)
        s = np.linspace(0, 1.2, 24001)
        slope = np.abs(np.gradient(xi(s), s)).max()
        assert 1.0 / beta <= slope <= 4.0 / beta

    def test_rejects_beta(self):
        with pytest.raises(ValueError):
            build_cutoff(0.6)


class TestLocalGraphMap:
    cover_args = (12, 0.85, 0.45)

    def test_equal_graphs_give_identity(self, disk):
        pair = DomainPair(disk, disk, 0.01)
        cover = default_cover(pair, *self.cover_args)
        xs = np.linspace(-0.85, 0.85, 65)
        F0 = np.full_like(xs, 1.7)
        m = local_graph_map(F0, F0.copy(), xs, cover, 0)
        assert m.is_identity
        p = np.random.default_rng(0).uniform(-2, 2, (50, 2))
        np.testing.assert_array_equal(m(p), p)

    def test_uniform_stretch(self, disk):
        pair = DomainPair(disk, disk, 0.01)
        cover = default_cover(pair, *self.cover_args)
        xs = np.linspace(-0.85, 0.85, 65)
        m = local_graph_map(np.full_like(xs, 1.7), np.full_like(xs, 1.7 * 1.1), xs, cover, 2)
        fr = cover.frame(2)
        # on the plateau of the cutoff the map is the pure vertical stretch
        p = fr.to_global(np.array([0.05, -0.1]), np.array([1.7, 1.65]))
        xl, yl = fr.to_local(m(p))
        np.testing.assert_allclose(xl, [0.05, -0.1], atol=1e-13)
        np.testing.assert_allclose(yl, [1.87, 1.815], rtol=1e-12)
        far = cover.centers[2] + 2.0 * cover.normals[2]
        np.testing.assert_array_equal(m(far[None]), far[None])

    def test_degenerate_graph(self, disk):
        pair = DomainPair(disk, disk, 0.01)
        cover = default_cover(pair, *self.cover_args)
        xs = np.linspace(-0.85, 0.85, 9)
        with pytest.raises(GraphDegeneracy):
            local_graph_map(np.full_like(xs, 0.01), np.ones_like(xs), xs, cover, 0)
        with pytest.raises(GraphDegeneracy):
            local_graph_map(np.full_like(xs, np.nan), np.ones_like(xs), xs, cover, 0)


class TestBuildEta:
    def test_same_domain_is_identity(self, disk):
        pair = DomainPair(disk, disk, 0.01)
        m = build_eta(pair, default_cover(pair, 12, 0.85, 0.45))
        assert m.steps == []
        rep = diffeo_report(m, 4, pair)
        assert rep.eta_norm == 0.0 and rep.a_norm == 0.0
        assert rep.min_det == 1.0 and rep.inverse_error == 0.0

    def test_dilated_disk_displacement(self, dilated, disk):
        pair, _, m = dilated
        pts = m._points()
        disp = np.linalg.norm(m.eta - pts, axis=-1)
        assert disp[disk.evaluate(pts) > 0].max() <= 1.5 * DELTA
        assert boundary_match(m, pair) <= 2 * BOX.h

    def test_report_audits(self, dilated):
        pair, _, m = dilated
        rep = diffeo_report(m, 4, pair)
        assert rep.min_det > 0
        assert rep.a_identity_error < 1e-12
        assert rep.inverse_error < 1e-10
        assert rep.grad_ratio <= 2.5

    def test_a_inverts_jacobian_pointwise(self, dilated):
        _, _, m = dilated
        p = np.random.default_rng(3).uniform(-1.5, 1.5, (40, 2))
        prod = np.einsum("...ij,...jk->...ik", m.a_at(p), m.jacobian(p))
        np.testing.assert_allclose(prod, np.broadcast_to(np.eye(2), prod.shape), atol=1e-12)

    def test_order_independence_up_to_grid_scale(self, dilated, disk):
        pair, cover, m = dilated
        rev = build_eta(pair, cover, order=list(range(len(cover) - 1, -1, -1)))
        inside = disk.evaluate(m._points()) > 0
        assert np.abs(m.eta - rev.eta)[inside].max() <= 5 * BOX.h

    def test_fold_detected(self, disk):
        pair = DomainPair(disk, disk_domain(BOX, 1.3), 0.01)
        with pytest.raises(FoldDetected):
            build_eta(pair, default_cover(pair, 12, 0.85, 0.45))


class TestDiscreteOperators:
    def test_fd4_on_trig(self):
        x, _ = BOX.coords()
        k = 2 * np.pi / BOX.length
        err = np.abs(fd4(np.sin(k * x), -2, BOX.h) - k * np.cos(k * x)).max()
        assert err < (k * BOX.h) ** 4

    def test_jacobian_fd_of_linear_map(self):
        A = np.array([[1.2, -0.3], [0.4, 0.9]])
        p = np.random.default_rng(1).standard_normal((7, 2))
        J = jacobian_fd(lambda q: q @ A.T, p)
        np.testing.assert_allclose(J, np.broadcast_to(A, J.shape), atol=1e-12)

    def test_grid_norm_of_constant(self):
        a = np.full((1,) + BOX.shape, 2.0)
        assert grid_hs_norm(a, 3, BOX.h) == pytest.approx(2.0 * BOX.length)
        mask = np.zeros(BOX.shape)
        assert grid_hs_norm(a, 3, BOX.h, mask) == 0.0

    def test_empty_map(self):
        m = DiffeoMap([], BOX)
        np.testing.assert_array_equal(m.eta, m._points())
