from __future__ import annotations

import numpy as np
import pytest

from turbolab.analytic_norms import ENTIRE, estimate_radius
from turbolab.domain_approx import (
    Boundary,
    DegenerateLevelSet,
    DomainPair,
    EmptyApproximation,
    LevelSetDomain,
    dense_boundary,
    disk_domain,
    domain_from_field,
    extract_boundary,
    graph_convergence_report,
    hausdorff_distance,
    lipschitz_spot_check,
    make_domain,
    mollify_levelset,
    radial_oracle_radius,
    radial_oracle_value,
)
from turbolab.field_core import Grid, SpectralField
from turbolab.geometry import BallCover, NotAGraph
from turbolab.mollify import heat_mollify

BOX = Grid(2, 128, 4.0, -2.0)


@pytest.fixture(scope="module")
def disk():
    return disk_domain(BOX)


def circle(n: int, radius: float = 1.0) -> np.ndarray:
    t = 2 * np.pi * np.arange(n) / n
    return radius * np.stack([np.cos(t), np.sin(t)], axis=1)


def mean_radius(b: Boundary) -> np.ndarray:
    return np.hypot(b.points[:, 0], b.points[:, 1])


class TestShapes:
    @pytest.mark.parametrize("shape", ["disk", "square", "star"])
    def test_lipschitz_bound_holds(self, shape):
        dom = make_domain(shape, BOX)
        assert lipschitz_spot_check(dom, 10_000) <= dom.lipschitz_bound * (1 + 1e-9)

    @pytest.mark.parametrize("shape", ["disk", "square", "star"])
    def test_single_closed_boundary(self, shape):
        dom = make_domain(shape, BOX)
        assert len(dom.boundary.polylines) == 1

    def test_unknown_shape(self):
        with pytest.raises(ValueError):
            make_domain("torus", BOX)

    def test_domain_from_field_estimates_lipschitz(self, disk):
        dom = domain_from_field(disk.phi)
        assert 0.9 < dom.lipschitz_bound < 1.5
        assert dom.boundary


class TestExtractBoundary:
    def test_quadratic_circle(self):
        x, y = BOX.coords()
        phi = SpectralField.from_values(BOX, 1 - x**2 - y**2)
        b = extract_boundary(phi)
        assert np.abs(mean_radius(b) - 1.0).max() <= 0.5 * BOX.h**2

    def test_positive_everywhere(self):
        b = extract_boundary(SpectralField.from_values(BOX, np.ones(BOX.shape)))
        assert not b and b.whole_box

    def test_square_corners(self):
        dom = make_domain("square", BOX)
        pts = dom.boundary.points
        for cx in (-1, 1):
            for cy in (-1, 1):
                d = np.hypot(pts[:, 0] - cx, pts[:, 1] - cy).min()
                assert d <= 2 * BOX.h

    def test_interior_on_left(self, disk):
        poly = disk.boundary.polylines[0]
        area = 0.5 * np.sum(poly[:, 0] * np.roll(poly[:, 1], -1) - np.roll(poly[:, 0], -1) * poly[:, 1])
        assert area > 0  # counterclockwise

    def test_degenerate(self):
        vals = np.ones(BOX.shape)
        vals[10:14, 10:14] = 0.0
        vals[40:50, 40:50] = -1.0
        with pytest.raises(DegenerateLevelSet):
            extract_boundary(SpectralField(BOX, np.fft.fft2(vals) / BOX.n**2))


class TestHausdorff:
    def test_identical(self):
        c = circle(400)
        assert hausdorff_distance(c, c, 0.01) == 0.0

    def test_concentric(self):
        h = 0.01
        assert hausdorff_distance(circle(600), circle(600, 1.1), h) == pytest.approx(0.1, abs=h)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            hausdorff_distance(Boundary(()), circle(10), 0.1)


class TestMollify:
    def test_radial_oracle_radius(self, disk):
        eps = 0.01
        rho = radial_oracle_radius(eps)
        q = mollify_levelset(disk, eps)
        r = mean_radius(q.boundary)
        assert np.abs(r - rho).max() <= 2 * BOX.h
        assert hausdorff_distance(disk.boundary, q.boundary, BOX.h) == pytest.approx(abs(rho - 1), abs=BOX.h)

    def test_radial_oracle_matches_spectral_value(self, disk):
        eps = 0.02
        q = mollify_levelset(disk, eps)
        for rho in (0.3, 0.9, 1.2):
            assert q.evaluate(np.array([rho, 0.0])) == pytest.approx(radial_oracle_value(rho, eps), abs=1e-6)

    def test_constant_preserved(self):
        c = SpectralField.from_values(BOX, np.full(BOX.shape, 0.7))
        np.testing.assert_allclose(heat_mollify(c, 0.3).values(), 0.7, atol=1e-15)

    def test_hausdorff_shrinks_dyadically(self, disk):
        hs = [hausdorff_distance(disk.boundary, mollify_levelset(disk, 0.1 * 2.0**-k).boundary, BOX.h)
              for k in range(7)]
        assert all(b <= a for a, b in zip(hs, hs[1:]))
        assert hs[-1] < 3 * BOX.h
        # nested errors at eps and eps/2
        assert all(b <= a + 2 * BOX.h for a, b in zip(hs, hs[1:]))

    def test_empty_approximation(self):
        g = Grid(2, 64, 4.0, -2.0)
        tiny = disk_domain(g, radius=0.1)
        with pytest.raises(EmptyApproximation):
            mollify_levelset(tiny, 1.0)
        with pytest.raises(ValueError):
            mollify_levelset(tiny, 0.0)

    @pytest.mark.parametrize("eps", [0.02, 0.005])
    def test_mollified_levelset_is_entire(self, disk, eps):
        # Gaussian damping of the spectrum outruns any exponential rate
        assert estimate_radius(mollify_levelset(disk, eps).phi) == ENTIRE

    def test_ordering_preserved(self, disk):
        rng = np.random.default_rng(0)
        x, y = BOX.coords()
        for _ in range(20):
            a, b, c = rng.uniform(0.5, 3, 3)
            bump = 0.05 * (1.2 + np.sin(np.pi * a * x / 2) * np.cos(np.pi * b * y / 2)) * c
            psi = SpectralField.from_values(BOX, disk.phi.values()[0] - bump)
            for eps in (0.01, 0.05):
                inner = heat_mollify(psi, eps).values()[0] > 0
                outer = heat_mollify(disk.phi, eps).values()[0] > 0
                assert not np.any(inner & ~outer)


class TestGraphReport:
    def test_identical_pair(self, disk):
        pair = DomainPair(disk, disk, 1e-3)
        cover = BallCover.on_curve(dense_boundary(disk), 12, 0.6)
        for row in graph_convergence_report(pair, cover):
            assert max(row.norms) == 0.0

    def test_h0_matches_radius_shift(self, disk):
        eps = 1e-3
        pair = DomainPair(disk, mollify_levelset(disk, eps), eps)
        cover = BallCover.on_curve(dense_boundary(disk), 12, 0.6)
        shift = abs(radial_oracle_radius(eps) - 1)
        for row in graph_convergence_report(pair, cover):
            assert abs(row.norms[0] - shift) <= 2 * BOX.h

    def test_sweep_columns_monotone(self, disk):
        cover = BallCover.on_curve(dense_boundary(disk), 12, 0.6)
        cols = []
        for k in range(1, 6):
            eps = 0.1 * 2.0**-k
            rows = graph_convergence_report(DomainPair(disk, mollify_levelset(disk, eps), eps), cover)
            cols.append(np.max([r.norms for r in rows], axis=0))
        cols = np.array(cols)
        assert np.all(np.diff(cols, axis=0) <= 1e-12)

    def test_not_a_graph_when_ball_misses(self, disk):
        far = BallCover(np.array([[0.0, 1.5]]), np.array([[0.0, 1.0]]), 0.2)
        with pytest.raises(NotAGraph):
            graph_convergence_report(DomainPair(disk, disk, 1e-3), far)

    def test_pair_validation(self, disk):
        empty = LevelSetDomain(disk.phi, 1.0, Boundary(()))
        with pytest.raises(ValueError):
            DomainPair(disk, empty, 0.1)
        with pytest.raises(ValueError):
            DomainPair(disk, disk, 0.0)
