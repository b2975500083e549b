from __future__ import annotations

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from turbolab.field_core import (
    Grid,
    SobolevIndex,
    SpectralField,
    curl2d,
    dealias,
    derivative,
    divergence,
    evaluate_at,
    l2_norm,
    leray_project,
    parse_snapshot,
    read_snapshot,
    snapshot_bytes,
    sobolev_norm,
    write_csv_samples,
    write_snapshot,
)

G1 = Grid(1, 64)
G2 = Grid(2, 32)


def random_field(grid: Grid, seed: int, channels: int = 1, band: int | None = None) -> SpectralField:
    rng = np.random.default_rng(seed)
    f = SpectralField.from_values(grid, rng.standard_normal((channels,) + grid.shape))
    if band is not None:
        keep = np.logical_and.reduce(np.broadcast_arrays(*[np.abs(k) <= band for k in grid.kvec]))
        f = f.with_coeffs(f.coeffs * keep)
    return f


class TestGrid:
    @pytest.mark.parametrize("dim, n", [(0, 16), (4, 16), (2, 6), (2, 15)])
    def test_rejects_bad_shapes(self, dim, n):
        with pytest.raises(ValueError):
            Grid(dim, n)

    def test_spacing(self):
        assert Grid(2, 64, 4.0).h == pytest.approx(4.0 / 64)

    def test_sobolev_index_requires_r_above_three(self):
        with pytest.raises(ValueError):
            SobolevIndex(3)
        assert int(SobolevIndex(4)) == 4


class TestSobolevNorm:
    def test_zero(self):
        assert sobolev_norm(SpectralField.zeros(G2, 2), 4) == 0.0

    def test_constant_one(self):
        one = SpectralField.from_values(G2, np.ones(G2.shape))
        assert sobolev_norm(one, SobolevIndex(4)) == pytest.approx(1.0, rel=1e-15)

    def test_sine_matches_extended_precision_sum(self):
        f = SpectralField.from_function(G1, np.sin)
        mpmath.mp.dps = 40
        # brute-force DFT in extended precision, then the weighted sum
        xs = [mpmath.mpf(2) * mpmath.pi * j / 64 for j in range(64)]
        total = mpmath.mpf(0)
        for k in range(-32, 32):
            if k == -32:
                continue
            c = sum(mpmath.sin(x) * mpmath.exp(-1j * k * x) for x in xs) / 64
            total += (1 + k * k) ** 4 * abs(c) ** 2
        assert sobolev_norm(f, 4) == pytest.approx(float(mpmath.sqrt(total)), rel=1e-12)

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 2**31), r1=st.integers(0, 6), dr=st.integers(0, 4))
    def test_monotone_in_r(self, seed, r1, dr):
        f = random_field(G2, seed)
        assert sobolev_norm(f, r1) <= sobolev_norm(f, r1 + dr)


class TestParseval:
    def test_500_random_fields(self):
        rng = np.random.default_rng(0)
        for _ in range(500):
            v = rng.standard_normal(G2.shape)
            f = SpectralField.from_values(G2, v)
            # Nyquist planes are dropped, so compare against the stored samples
            grid_l2 = np.sqrt(np.mean(f.values() ** 2))
            assert l2_norm(f) == pytest.approx(grid_l2, rel=1e-12)

    def test_nyquist_is_zero_and_field_real(self):
        f = random_field(G2, 3)
        assert np.all(f.coeffs[:, G2.n // 2, :] == 0)
        assert np.all(f.coeffs[:, :, G2.n // 2] == 0)
        back = SpectralField.from_values(G2, f.values())
        np.testing.assert_allclose(back.coeffs, f.coeffs, atol=1e-15)


class TestLeray:
    def test_gradient_annihilated_mean_kept(self):
        q = random_field(G2, 1, band=6)
        grad = SpectralField(G2, np.concatenate([derivative(q, 0).coeffs, derivative(q, 1).coeffs]))
        mean = np.zeros((2,) + G2.shape, dtype=complex)
        mean[:, 0, 0] = [0.3, -0.7]
        out = leray_project(grad.with_coeffs(grad.coeffs + mean))
        np.testing.assert_allclose(out.coeffs, mean, atol=1e-14)

    def test_divfree_unchanged(self):
        psi = random_field(G2, 2, band=8)
        u = SpectralField(G2, np.concatenate([derivative(psi, 1).coeffs, -derivative(psi, 0).coeffs]))
        np.testing.assert_allclose(leray_project(u).coeffs, u.coeffs, atol=1e-14)

    @pytest.mark.parametrize("seed", range(5))
    def test_divergence_and_idempotence(self, seed):
        f = random_field(G2, seed, channels=2, band=10)
        p = leray_project(f)
        kx, ky = G2.kvec
        spec_div = np.abs(kx * p.coeffs[0] + ky * p.coeffs[1]).max()
        assert spec_div <= 1e-12 * l2_norm(f)
        assert l2_norm(leray_project(p) - p) <= 1e-12 * l2_norm(f)

    def test_commutes_with_derivative(self):
        f = random_field(G2, 9, channels=2, band=10)
        a = leray_project(derivative(f, 0))
        b = derivative(leray_project(f), 0)
        assert l2_norm(a - b) <= 1e-12 * l2_norm(derivative(f, 0))

    def test_needs_vector_field(self):
        with pytest.raises(ValueError):
            leray_project(random_field(G2, 0))


class TestDerivative:
    def test_sine(self):
        f = SpectralField.from_function(G1, np.sin)
        np.testing.assert_allclose(derivative(f, 0).values()[0], np.cos(G1.coords()[0]), atol=1e-13)

    def test_constant(self):
        f = SpectralField.from_values(G2, np.full(G2.shape, 2.5))
        assert np.abs(derivative(f, 1).values()).max() == 0.0

    def test_mixed_commute(self):
        f = random_field(G2, 4)
        a = derivative(derivative(f, 0), 1).values()
        b = derivative(derivative(f, 1), 0).values()
        assert np.abs(a - b).max() <= 1e-13

    def test_order_argument(self):
        f = random_field(G2, 5, band=6)
        np.testing.assert_allclose(derivative(f, 0, 3).coeffs, derivative(derivative(derivative(f, 0), 0), 0).coeffs,
                                   atol=1e-12)

    def test_div_curl_of_rotation(self):
        g = Grid(2, 16)
        u = SpectralField.from_function(g, lambda x, y: (np.sin(y), np.sin(x)))
        assert np.abs(divergence(u).values()).max() < 1e-14
        np.testing.assert_allclose(curl2d(u).values()[0], np.cos(g.coords()[0]) - np.cos(g.coords()[1]), atol=1e-13)


def test_dealias_keeps_low_modes():
    g = Grid(2, 24)
    f = SpectralField.from_function(g, lambda x, y: np.sin(3 * x) * np.cos(2 * y))
    np.testing.assert_allclose(dealias(f).coeffs, f.coeffs, atol=1e-15)
    high = SpectralField.from_function(g, lambda x, y: np.sin(11 * x))
    assert l2_norm(dealias(high)) < 1e-14


def test_evaluate_at_matches_closed_form():
    g = Grid(2, 32, 4.0, -2.0)
    f = SpectralField.from_function(g, lambda x, y: np.sin(np.pi * x / 2) * np.cos(np.pi * y))
    pts = np.random.default_rng(0).uniform(-2, 2, (50, 2))
    np.testing.assert_allclose(evaluate_at(f, pts)[0], np.sin(np.pi * pts[:, 0] / 2) * np.cos(np.pi * pts[:, 1]),
                               atol=1e-13)


class TestSnapshots:
    def test_round_trip(self, tmp_path):
        f = random_field(G2, 7, channels=2)
        path = tmp_path / "u.trbf"
        write_snapshot(path, f)
        back = read_snapshot(path)
        np.testing.assert_array_equal(back.values(), SpectralField.from_values(G2, f.values()).values())

    def test_header_layout(self):
        data = snapshot_bytes(np.zeros((2, 8, 8)), 2)
        assert data[:4] == b"TRBF"
        assert data[4:7] == bytes([1, 2, 2])
        assert int.from_bytes(data[7:11], "little") == 8
        assert len(data) == 11 + 2 * 64 * 8

    @pytest.mark.parametrize("mutate", [lambda d: b"XXXX" + d[4:], lambda d: d[:4] + b"\x09" + d[5:], lambda d: d[:-8]])
    def test_rejects_corrupt(self, mutate):
        data = snapshot_bytes(np.zeros((1, 8, 8)), 2)
        with pytest.raises(ValueError):
            parse_snapshot(mutate(data))

    def test_csv_export(self, tmp_path):
        f = SpectralField.from_values(Grid(1, 8), np.arange(8.0))
        path = tmp_path / "f.csv"
        write_csv_samples(path, f)
        lines = path.read_text().splitlines()
        assert len(lines) == 9
        assert lines[1].split(",")[0] == "0"
