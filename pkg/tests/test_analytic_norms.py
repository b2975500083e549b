from __future__ import annotations

import itertools
import math
import warnings
from fractions import Fraction

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from turbolab.analytic_norms import (
    ENTIRE,
    AnalyticNormParams,
    InsufficientDecayData,
    TangentialSystem,
    TruncationWarning,
    coeff_cij,
    coeff_y,
    estimate_radius,
    komatsu_tensor,
    norm_X,
    norm_Xtilde,
    norm_Y,
    norm_Ybar,
    norm_Ytilde,
    product_rule_residual,
    subset_count_identity,
    tensor_norm,
)
from turbolab.field_core import Grid, SpectralField, l2_norm, product, sobolev_norm

G = Grid(2, 32)


def trig_poly(grid: Grid, seed: int, degree: int = 3) -> SpectralField:
    rng = np.random.default_rng(seed)
    x, y = grid.coords()
    out = np.zeros(grid.shape)
    for a in range(-degree, degree + 1):
        for b in range(-degree, degree + 1):
            out += rng.standard_normal() * np.cos(a * x + b * y + rng.uniform(0, 2 * np.pi))
    return SpectralField.from_values(grid, out)


class TestParams:
    @pytest.mark.parametrize("kwargs", [
        dict(r=3), dict(tau=0.0), dict(eps_bar=0.4, eps=0.3), dict(eps=1.5), dict(max_order=5),
    ])
    def test_rejects_invalid(self, kwargs):
        with pytest.raises(ValueError):
            AnalyticNormParams(**kwargs)

    def test_with_tau(self):
        p = AnalyticNormParams(tau=0.1).with_tau(0.2)
        assert p.tau == 0.2 and p.r == 4


class TestWeights:
    @pytest.mark.parametrize("i", range(5))
    def test_threshold_shell_has_no_tau(self, i):
        p = AnalyticNormParams(r=4, tau=0.37, eps_bar=0.05, eps=0.3)
        expected = 4**4 / math.factorial(4) * 0.05**i * 0.3 ** (4 - i)
        assert coeff_cij(i, 4 - i, p) == pytest.approx(expected, rel=1e-14)

    def test_rational_oracle(self):
        p = AnalyticNormParams(r=4, tau=0.5, eps_bar=0.1, eps=0.5)
        exact = Fraction(5**4, math.factorial(5)) * Fraction(1, 2) * Fraction(1, 10) ** 5
        assert coeff_cij(5, 0, p) == pytest.approx(float(exact), rel=1e-14)

    def test_tau_power_law(self):
        p = AnalyticNormParams(r=4, tau=0.2)
        ratio = coeff_cij(7, 1, p.with_tau(0.4)) / coeff_cij(7, 1, p)
        assert ratio == pytest.approx(2.0**4, rel=1e-13)

    def test_large_orders_do_not_overflow(self):
        p = AnalyticNormParams(r=4, tau=2.0, max_order=200)
        assert 0.0 <= coeff_cij(150, 50, p) < 1.0

    @pytest.mark.parametrize("i, j", [(0, 3), (2, 1), (-1, 6)])
    def test_rejects_low_orders(self, i, j):
        with pytest.raises(ValueError):
            coeff_cij(i, j, AnalyticNormParams())

    def test_y_weight_has_one_more_power(self):
        p = AnalyticNormParams(r=4, tau=0.3)
        exact = 6**5 / math.factorial(6) * 0.3 * 0.05**2 * 0.3**4
        assert coeff_y(2, 4, p) == pytest.approx(exact, rel=1e-13)
        with pytest.raises(ValueError):
            coeff_y(2, 2, p)


class TestKomatsuTensor:
    def test_order_zero_is_singleton(self):
        f = trig_poly(G, 0)
        t = komatsu_tensor(f, 0, 0, TangentialSystem.torus(2))
        assert t.count == 1
        assert t.entries[0][2] is f

    def test_constant_has_vanishing_second_derivatives(self):
        # affine functions on the torus are constants
        f = SpectralField.from_values(G, np.full(G.shape, 3.0))
        t = komatsu_tensor(f, 2, 0, TangentialSystem.torus(2))
        assert t.count == 4 and t.norm() == 0.0

    @pytest.mark.parametrize("k", [(1, 0), (2, 3), (-1, 4)])
    def test_single_mode_multinomial(self, k):
        f = SpectralField.from_function(G, lambda x, y: np.cos(k[0] * x + k[1] * y))
        t = komatsu_tensor(f, 3, 0, TangentialSystem.torus(2))
        assert t.count == 8
        assert t.norm() == pytest.approx((abs(k[0]) + abs(k[1])) ** 3 * l2_norm(f), rel=1e-12)

    @pytest.mark.parametrize("i, j", [(0, 2), (2, 1), (3, 0), (1, 2)])
    def test_entry_sum_matches_grouped_moments(self, i, j):
        f = trig_poly(G, 1)
        T = TangentialSystem.torus(2)
        t = komatsu_tensor(f, i, j, T)
        assert t.count == 2**i * 2**j
        assert tensor_norm(f, i, j, T) == pytest.approx(t.norm(), rel=1e-12)

    def test_order_overflow(self):
        with pytest.raises(ValueError):
            komatsu_tensor(trig_poly(G, 0), 5, 5, TangentialSystem.torus(2), max_order=8)

    def test_rotation_annihilates_radial(self):
        g = Grid(2, 64, 8.0, -4.0)
        f = SpectralField.from_function(g, lambda x, y: np.exp(-2 * (x**2 + y**2)))
        T = TangentialSystem.rotation(g)
        assert T.count == 1  # n(n-1)/2 in two dimensions
        assert l2_norm(T.apply(f, 0)) < 1e-10 * l2_norm(f)

    def test_variable_coefficient_norm_matches_entries(self):
        g = Grid(2, 32, 8.0, -4.0)
        f = SpectralField.from_function(g, lambda x, y: np.exp(-(x**2 + 2 * y**2)) * x)
        T = TangentialSystem.rotation(g)
        assert tensor_norm(f, 1, 1, T) == pytest.approx(komatsu_tensor(f, 1, 1, T).norm(), rel=1e-12)


class TestProductRule:
    def test_g_one(self):
        f = trig_poly(G, 2)
        one = SpectralField.from_values(G, np.ones(G.shape))
        # every correction term vanishes; what is left is transform round-off
        assert product_rule_residual(f, one, 3) <= 1e-12 * tensor_norm(f, 3, 0)

    def test_leibniz_first_order(self):
        f = trig_poly(G, 3, degree=2)
        assert product_rule_residual(f, f, 1) <= 1e-13 * l2_norm(f) ** 2 * 10

    @pytest.mark.parametrize("seed", range(6))
    def test_third_order_polynomials(self, seed):
        f, g = trig_poly(G, seed, 2), trig_poly(G, seed + 100, 2)
        scale = tensor_norm(product(f, g, dealiased=False), 3, 0) + l2_norm(f) * l2_norm(g)
        assert product_rule_residual(f, g, 3) <= 1e-12 * scale

    @settings(max_examples=40, deadline=None)
    @given(alpha=st.lists(st.integers(0, 4), min_size=1, max_size=3), k=st.integers(0, 12))
    def test_subset_count_identity(self, alpha, k):
        if k <= sum(alpha):
            assert subset_count_identity(alpha, k)


class TestNorms:
    P = AnalyticNormParams(r=4, tau=0.1, eps_bar=0.05, eps=0.3, max_order=20)

    def test_constant(self):
        f = SpectralField.from_values(G, np.full(G.shape, -2.0))
        assert norm_X(f, self.P) == 0.0 and norm_Y(f, self.P) == 0.0
        for fn in (norm_Xtilde, norm_Ytilde, norm_Ybar):
            assert fn(f, self.P) == pytest.approx(2.0, rel=1e-15)

    def test_single_mode_against_shell_oracle(self):
        f = SpectralField.from_function(G, lambda x, y: np.cos(x))
        mpmath.mp.dps = 30
        p = self.P
        # only the all-x word survives, each with norm ||f|| = 1/sqrt(2)
        tau, eb, e = mpmath.mpf("0.1"), mpmath.mpf("0.05"), mpmath.mpf("0.3")
        total = mpmath.mpf(0)
        for s in range(p.r, p.max_order + 1):
            for i in range(s + 1):
                total += mpmath.mpf(s) ** p.r / mpmath.factorial(s) * tau ** (s - p.r) * eb**i * e ** (s - i)
        assert norm_X(f, p) == pytest.approx(float(total / mpmath.sqrt(2)), rel=1e-10)

    def test_tilde_definitions(self):
        f = trig_poly(G, 5, 2)
        p = self.P
        h = sobolev_norm(f, p.r)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", TruncationWarning)
            assert norm_Xtilde(f, p) == pytest.approx(norm_X(f, p) + h)
            assert norm_Ytilde(f, p) == pytest.approx(p.tau * norm_Y(f, p) + h)
            assert norm_Ybar(f, p) == pytest.approx(norm_Y(f, p) + h)

    def test_monotone_in_tau_on_100_fields(self):
        g = Grid(2, 16)
        p = AnalyticNormParams(r=4, tau=0.05, max_order=12)
        rng = np.random.default_rng(11)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", TruncationWarning)
            for _ in range(100):
                f = SpectralField.from_values(g, rng.standard_normal(g.shape))
                t1, t2 = sorted(rng.uniform(0.01, 0.5, 2))
                assert norm_X(f, p.with_tau(t1)) <= norm_X(f, p.with_tau(t2))

    def test_truncation_warning(self):
        f = SpectralField.from_function(G, lambda x, y: np.cos(10 * x))
        with pytest.warns(TruncationWarning):
            norm_X(f, AnalyticNormParams(r=4, tau=1.0, eps_bar=0.5, eps=1.0, max_order=8))


class TestRadius:
    def synthetic(self, decay) -> SpectralField:
        g = Grid(2, 128)
        kabs = np.sqrt(g.k2)
        return SpectralField(g, decay(kabs))

    def test_exponential_decay_recovered(self):
        tau = estimate_radius(self.synthetic(lambda k: np.exp(-0.7 * k)))
        assert 0.686 <= tau <= 0.714

    def test_band_limited_is_entire(self):
        f = SpectralField.from_function(G, lambda x, y: np.sin(2 * x) + np.cos(3 * y))
        assert estimate_radius(f) == ENTIRE

    def test_gaussian_is_entire(self):
        assert estimate_radius(self.synthetic(lambda k: np.exp(-0.02 * k**2))) == ENTIRE

    def test_zero_field(self):
        with pytest.raises(InsufficientDecayData):
            estimate_radius(SpectralField.zeros(G))

    def test_physical_units(self):
        # the same profile on a box twice as long decays twice as slowly per unit wavenumber
        g = Grid(2, 128, 4 * np.pi)
        f = SpectralField(g, np.exp(-0.35 * np.sqrt(g.k2)))
        assert estimate_radius(f) == pytest.approx(0.35, rel=0.02)


def test_compositions_enumerate_words():
    from turbolab.analytic_norms import compositions

    for total, parts in itertools.product(range(5), range(1, 4)):
        comps = list(compositions(total, parts))
        assert len(comps) == math.comb(total + parts - 1, parts - 1)
        assert all(sum(c) == total for c in comps)
