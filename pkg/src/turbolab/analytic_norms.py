"""Komatsu derivative tensors, weighted analytic norms and radius estimation.

On the torus the tangential system defaults to the coordinate derivatives, so
every entry of ``d^i T^j f`` is a pure mixed derivative. Tensor norms follow the
Komatsu convention: the norm of a tensor is the sum of the L2 norms of its
entries, counted with repetition.
"""
from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field
from math import comb, factorial, lgamma, log
from typing import Sequence

import numpy as np

from .field_core import SobolevIndex, SpectralField, derivative, l2_norm, sobolev_norm

__all__ = [
    "AnalyticNormParams",
    "TangentialSystem",
    "DerivativeTensor",
    "TruncationWarning",
    "InsufficientDecayData",
    "ENTIRE",
    "coeff_cij",
    "coeff_y",
    "komatsu_tensor",
    "tensor_norm",
    "product_rule_residual",
    "subset_count_identity",
    "norm_X",
    "norm_Xtilde",
    "norm_Y",
    "norm_Ytilde",
    "norm_Ybar",
    "shifted_derivative_sum",
    "norm_shells",
    "estimate_radius",
    "compositions",
]

ENTIRE = math.inf


class TruncationWarning(UserWarning):
    """The last retained shell of a truncated analytic sum is not negligible."""


class InsufficientDecayData(ValueError):
    pass


@dataclass(frozen=True)
class AnalyticNormParams:
    r: int = 4
    tau: float = 0.1
    eps_bar: float = 0.05
    eps: float = 0.3
    max_order: int = 24

    def __post_init__(self):
        SobolevIndex(self.r)
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if not (0 < self.eps_bar <= self.eps <= 1):
            raise ValueError("need 0 < eps_bar <= eps <= 1")
        if self.max_order < self.r + 2:
            raise ValueError("max_order must be at least r + 2")

    def with_tau(self, tau: float) -> "AnalyticNormParams":
        return AnalyticNormParams(self.r, tau, self.eps_bar, self.eps, self.max_order)


@dataclass(frozen=True, eq=False)
class TangentialSystem:
    """First-order operators ``T_l = sum_m a_lm d_m``.

    ``coefficients[l][m]`` is either a float (constant coefficient) or an array
    of grid samples.
    """

    coefficients: tuple
    name: str = "custom"

    @classmethod
    def torus(cls, dim: int) -> "TangentialSystem":
        eye = tuple(tuple(1.0 if a == b else 0.0 for b in range(dim)) for a in range(dim))
        return cls(eye, "coordinate")

    @classmethod
    def rotation(cls, grid) -> "TangentialSystem":
        """``x1 d2 - x2 d1`` about the origin; annihilates radial functions."""
        x, y = grid.coords()
        return cls(((-y, x),), "rotation")

    @property
    def count(self) -> int:
        return len(self.coefficients)

    @property
    def is_constant(self) -> bool:
        return all(np.isscalar(a) for op in self.coefficients for a in op)

    @property
    def is_coordinate(self) -> bool:
        return self.name == "coordinate"

    def apply(self, f: SpectralField, l: int) -> SpectralField:
        op = self.coefficients[l]
        if self.is_constant:
            g = f.grid
            mult = sum(1j * a * g.kvec[m] for m, a in enumerate(op))
            return f.with_coeffs(f.coeffs * mult)
        vals = sum(np.asarray(a) * derivative(f, m).values() for m, a in enumerate(op))
        return SpectralField.from_values(f.grid, vals)


@dataclass(frozen=True, eq=False)
class DerivativeTensor:
    i: int
    j: int
    entries: list = field(repr=False)  # (alpha, beta, SpectralField)

    @property
    def count(self) -> int:
        return len(self.entries)

    def norm(self) -> float:
        return float(sum(l2_norm(e) for _, _, e in self.entries))


# ---------------------------------------------------------------------------
# weights


def _log_cij(i: int, j: int, p: AnalyticNormParams, shift: int) -> float:
    s = i + j
    rr = p.r + shift
    return rr * log(s) - lgamma(s + 1) + (s - rr) * log(p.tau) + i * log(p.eps_bar) + j * log(p.eps)


def coeff_cij(i: int, j: int, p: AnalyticNormParams) -> float:
    """``(i+j)^r / (i+j)! * tau^(i+j-r) * eps_bar^i * eps^j`` for ``i + j >= r``."""
    if i < 0 or j < 0 or i + j < p.r:
        raise ValueError(f"c_ij needs i + j >= r (got i={i}, j={j}, r={p.r})")
    return math.exp(_log_cij(i, j, p, 0))


def coeff_y(i: int, j: int, p: AnalyticNormParams) -> float:
    """Weight of the Y norm, defined for ``i + j >= r + 1``."""
    if i < 0 or j < 0 or i + j < p.r + 1:
        raise ValueError("Y weights need i + j >= r + 1")
    return math.exp(_log_cij(i, j, p, 1))


# ---------------------------------------------------------------------------
# tensors


def compositions(total: int, parts: int):
    """Exponent tuples of length ``parts`` summing to ``total`` (lexicographic)."""
    if parts == 1:
        yield (total,)
        return
    for a in range(total, -1, -1):
        for rest in compositions(total - a, parts - 1):
            yield (a,) + rest


def _multinomial(expo: Sequence[int]) -> int:
    out, acc = 1, 0
    for e in expo:
        acc += e
        out *= comb(acc, e)
    return out


def komatsu_tensor(f: SpectralField, i: int, j: int, T: TangentialSystem, max_order: int = 24) -> DerivativeTensor:
    """Enumerate all ``d^i * K^j`` entries ``D^alpha T^beta f`` with repetition."""
    if i + j > max_order:
        raise ValueError(f"order {i + j} exceeds truncation {max_order}")
    d = f.grid.dim
    entries = []
    tcache: dict = {(): f}
    for beta in itertools.product(range(T.count), repeat=j):
        g = tcache.get(beta)
        if g is None:
            g = f
            for l in reversed(beta):
                g = T.apply(g, l)
            tcache[beta] = g
        for alpha in itertools.product(range(d), repeat=i):
            e = g
            for m in alpha:
                e = derivative(e, m)
            entries.append((alpha, beta, e))
    return DerivativeTensor(i, j, entries)


class _Moments:
    """Weighted spectral moments ``sum_k prod_m |k_m|^(2 a_m) |f_k|^2``."""

    def __init__(self, f: SpectralField, top: int):
        g = f.grid
        self.dim = g.dim
        p = np.sum(np.abs(f.coeffs) ** 2, axis=0)
        kk = np.abs(g.k1d)
        pw = np.stack([kk ** (2 * a) for a in range(top + 1)])  # (top+1, n)
        if g.dim == 1:
            self.m = pw @ p
        elif g.dim == 2:
            self.m = pw @ p @ pw.T
        else:
            self.m = np.einsum("ax,by,cz,xyz->abc", pw, pw, pw, p)
        self.top = top

    def entry(self, expo: Sequence[int]) -> float:
        return float(np.sqrt(max(self.m[tuple(expo)], 0.0)))

    def shell(self, s: int) -> float:
        """``||d^s f||`` in the Komatsu sense."""
        return float(sum(_multinomial(e) * self.entry(e) for e in compositions(s, self.dim)))


def _constant_entry_norm(f: SpectralField, T: TangentialSystem, a: Sequence[int], b: Sequence[int]) -> float:
    g = f.grid
    mult = np.ones(g.shape)
    for m, e in enumerate(a):
        if e:
            mult = mult * np.abs(g.kvec[m]) ** e
    for l, e in enumerate(b):
        if e:
            kt = sum(c * g.kvec[m] for m, c in enumerate(T.coefficients[l]))
            mult = mult * np.abs(kt) ** e
    return float(np.sqrt(np.sum(mult**2 * np.abs(f.coeffs) ** 2)))


def tensor_norm(f: SpectralField, i: int, j: int, T: TangentialSystem | None = None, _moments=None) -> float:
    """``||d^i T^j f||`` as an entry sum, grouping identical entries by multiplicity."""
    d = f.grid.dim
    T = T or TangentialSystem.torus(d)
    if T.is_coordinate:
        mom = _moments or _Moments(f, i + j)
        return mom.shell(i + j)
    if T.is_constant:
        total = 0.0
        for a in compositions(i, d):
            for b in compositions(j, T.count):
                total += _multinomial(a) * _multinomial(b) * _constant_entry_norm(f, T, a, b)
        return total
    # variable coefficients: T-words do not commute, derivatives do
    total = 0.0
    for beta in itertools.product(range(T.count), repeat=j):
        gfield = f
        for l in reversed(beta):
            gfield = T.apply(gfield, l)
        mom = _Moments(gfield, i)
        total += mom.shell(i)
    return total


# ---------------------------------------------------------------------------
# product rule


def subset_count_identity(alpha: Sequence[int], k: int) -> bool:
    """Check ``sum_{alpha' <= alpha, |alpha'| = k} C(alpha, alpha') == C(|alpha|, k)``."""
    m = sum(alpha)
    total = 0
    for sub in itertools.product(*[range(a + 1) for a in alpha]):
        if sum(sub) == k:
            total += math.prod(comb(a, s) for a, s in zip(alpha, sub))
    return total == comb(m, k)


def _dalpha(f: SpectralField, alpha) -> SpectralField:
    for m in alpha:
        f = derivative(f, m)
    return f


def product_rule_residual(f: SpectralField, g: SpectralField, i: int) -> float:
    """Entry-sum norm of ``d^i(fg) - f d^i g - sum_k C(i,k) (d^k f)(d^(i-k) g)``.

    The binomial term is realized entrywise: for each index word ``alpha`` the
    ``C(i, k)`` position subsets of size ``k`` route ``k`` derivatives to ``f``.
    """
    d = f.grid.dim
    fv = f.values()[0]
    gv = g.values()[0]
    fg = SpectralField.from_values(f.grid, fv * gv)
    total = 0.0
    for alpha in itertools.product(range(d), repeat=i):
        lhs = _dalpha(fg, alpha).values()[0] - fv * _dalpha(g, alpha).values()[0]
        rhs = np.zeros_like(lhs)
        for k in range(1, i + 1):
            for pos in itertools.combinations(range(i), k):
                a_f = [alpha[p] for p in pos]
                a_g = [alpha[p] for p in range(i) if p not in pos]
                rhs += _dalpha(f, a_f).values()[0] * _dalpha(g, a_g).values()[0]
        total += float(np.sqrt(np.mean((lhs - rhs) ** 2)))
    return total


# ---------------------------------------------------------------------------
# norms


def _shell_table(f: SpectralField, p: AnalyticNormParams, T: TangentialSystem, shift: int, lo: int, hi: int,
                 extra_derivative: int = 0) -> np.ndarray:
    """Per-shell contributions ``sum_{i+j=s} w_ij ||d^(i+extra) T^j f||`` for s in [lo, hi]."""
    d = f.grid.dim
    T = T or TangentialSystem.torus(d)
    mom = _Moments(f, hi + extra_derivative) if T.is_coordinate else None
    out = np.zeros(hi - lo + 1)
    for s in range(lo, hi + 1):
        acc = 0.0
        for i in range(s + 1):
            j = s - i
            w = math.exp(_log_cij(i, j, p, shift))
            if w == 0.0:
                continue
            acc += w * tensor_norm(f, i + extra_derivative, j, T, _moments=mom)
        out[s - lo] = acc
    return out


def _warn_truncation(shells: np.ndarray, label: str) -> None:
    total = shells.sum()
    if total > 0 and shells[-1] > 0.01 * total:
        warnings.warn(f"{label}: last shell holds {shells[-1] / total:.1%} of the sum; truncation unreliable",
                      TruncationWarning, stacklevel=3)


def norm_shells(f: SpectralField, p: AnalyticNormParams, T: TangentialSystem | None = None, kind: str = "X") -> np.ndarray:
    if kind == "X":
        return _shell_table(f, p, T, 0, p.r, p.max_order)
    if kind == "Y":
        return _shell_table(f, p, T, 1, p.r + 1, p.max_order)
    raise ValueError(kind)


def norm_X(f: SpectralField, p: AnalyticNormParams, T: TangentialSystem | None = None) -> float:
    shells = norm_shells(f, p, T, "X")
    _warn_truncation(shells, "X norm")
    return float(shells.sum())


def norm_Y(f: SpectralField, p: AnalyticNormParams, T: TangentialSystem | None = None) -> float:
    shells = norm_shells(f, p, T, "Y")
    _warn_truncation(shells, "Y norm")
    return float(shells.sum())


def norm_Xtilde(f, p, T=None) -> float:
    return norm_X(f, p, T) + sobolev_norm(f, p.r)


def norm_Ytilde(f, p, T=None) -> float:
    return p.tau * norm_Y(f, p, T) + sobolev_norm(f, p.r)


def norm_Ybar(f, p, T=None) -> float:
    return norm_Y(f, p, T) + sobolev_norm(f, p.r)


def shifted_derivative_sum(f: SpectralField, p: AnalyticNormParams, T: TangentialSystem | None = None) -> float:
    """``sum_{r <= i+j <= M-1} c_ij ||d^(i+1) T^j f||``."""
    return float(_shell_table(f, p, T, 0, p.r, p.max_order - 1, extra_derivative=1).sum())


# ---------------------------------------------------------------------------
# radius of analyticity


def shell_profile(f: SpectralField) -> tuple[np.ndarray, np.ndarray]:
    """Shell index (integer |k| in box units) and max coefficient modulus per shell."""
    g = f.grid
    kmod = np.sqrt(g.k2) * g.length / (2 * np.pi)
    shell = np.rint(kmod).astype(int)
    amp = np.max(np.abs(f.coeffs), axis=0)
    nshell = shell.max() + 1
    prof = np.zeros(nshell)
    np.maximum.at(prof, shell.ravel(), amp.ravel())
    return np.arange(nshell), prof


def estimate_radius(f: SpectralField, threshold: float = 1e-13) -> float:
    """Fit ``log(shell max) ~ c - tau * |k|`` and return ``tau`` in physical units.

    Returns :data:`ENTIRE` when the spectrum stops strictly inside the
    dealiased band (finitely many modes) or decays super-exponentially.
    """
    g = f.grid
    shells, prof = shell_profile(f)
    peak = prof.max()
    if peak == 0:
        raise InsufficientDecayData("zero field")
    usable = prof > threshold * peak
    usable[0] = False  # the mean carries no decay information
    ks = shells[usable]
    band_edge = int(np.floor(g.n / 3))
    if len(ks) == 0 or ks.max() < band_edge - 1:
        return ENTIRE
    if len(ks) < 4:
        raise InsufficientDecayData(f"only {len(ks)} usable shells")
    scale = 2 * np.pi / g.length
    x = ks * scale
    y = np.log(prof[usable])
    slope, _ = np.polyfit(x, y, 1)
    a2, b2, _ = np.polyfit(x, y, 2)
    s_start = -(b2 + 2 * a2 * x[0])
    s_end = -(b2 + 2 * a2 * x[-1])
    if s_start > 0 and s_end > 3 * s_start:
        return ENTIRE
    return float(max(-slope, 0.0))
