"""Diffeomorphism from a domain onto its analytic approximation.

``eta`` is built inductively over a cover of the boundary by balls:
``eta_l = (xi_l G_l + (1 - xi_l) id) o eta_{l-1}``, where ``G_l`` stretches the
ball-frame vertical coordinate by ``F / F0`` so that the current image of the
boundary (graph ``F0``) lands on the target boundary (graph ``F``).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.interpolate import CubicSpline

from .domain_approx import DomainPair, dense_boundary
from .field_core import Grid
from .geometry import (
    BallCover,
    GraphDegeneracy,
    LocalFrame,
    curve_distance,
    cutoff,
    graph_from_curve,
    graph_from_levelset,
)

__all__ = [
    "BallCover",
    "build_cutoff",
    "LocalGraphMap",
    "local_graph_map",
    "DiffeoMap",
    "FoldDetected",
    "build_eta",
    "default_cover",
    "diffeo_report",
    "boundary_match",
    "DiffeoReport",
    "fd4",
    "grid_hs_norm",
    "jacobian_fd",
]


class FoldDetected(ValueError):
    pass


def build_cutoff(beta: float):
    """Radial profile ``xi(s)``: 1 on ``s <= 1 - beta``, 0 on ``s >= 1``."""
    if not 0 < beta < 0.5:
        raise ValueError("beta must lie in (0, 1/2)")
    return lambda s: cutoff(s, beta)


# ---------------------------------------------------------------------------
# local graph maps


def _fill_edges(v: np.ndarray) -> np.ndarray:
    """Replace NaNs outside the valid run by the nearest valid value."""
    ok = np.isfinite(v)
    if not ok.any():
        raise GraphDegeneracy("graph degeneracy: no valid graph samples")
    idx = np.arange(len(v))
    return np.interp(idx, idx[ok], v[ok])


@dataclass(frozen=True)
class LocalGraphMap:
    """``G(x', y) = (x', y F(x') / F0(x'))`` in a ball frame, blended to the identity by ``xi``."""

    frame: LocalFrame
    center: np.ndarray
    radius: float
    beta: float
    xs: np.ndarray
    ratio: np.ndarray

    @cached_property
    def _spline(self) -> CubicSpline:
        return CubicSpline(self.xs, self.ratio)

    def stretch(self, xl: np.ndarray) -> np.ndarray:
        return self._spline(np.clip(xl, self.xs[0], self.xs[-1]))

    def unblended(self, p: np.ndarray) -> np.ndarray:
        xl, yl = self.frame.to_local(p)
        return self.frame.to_global(xl, yl * self.stretch(xl))

    def __call__(self, p: np.ndarray) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        if self.is_identity:
            return p.copy()
        xi = cutoff(np.linalg.norm(p - self.center, axis=-1) / self.radius, self.beta)
        out = p.copy()
        live = xi > 0
        if np.any(live):
            q = p[live]
            out[live] = q + xi[live][:, None] * (self.unblended(q) - q)
        return out

    @property
    def is_identity(self) -> bool:
        return bool(np.all(self.ratio == 1.0))


def local_graph_map(F0: np.ndarray, F: np.ndarray, xs: np.ndarray, cover: BallCover, l: int) -> LocalGraphMap:
    """Local map sending the graph of ``F0`` to the graph of ``F`` inside ball ``l``."""
    F0 = _fill_edges(np.asarray(F0, dtype=float))
    F = _fill_edges(np.asarray(F, dtype=float))
    if np.min(np.abs(F0)) < 0.1 * cover.radius:
        raise GraphDegeneracy(f"graph degeneracy: min |F0| = {np.min(np.abs(F0)):.3g} below 0.1 radius")
    # graphs agreeing to root-finding accuracy give an exact identity
    ratio = np.where(np.abs(F - F0) <= 1e-12 * np.abs(F0), 1.0, F / F0)
    return LocalGraphMap(cover.frame(l), cover.centers[l], cover.radius, cover.beta, np.asarray(xs, float), ratio)


# ---------------------------------------------------------------------------
# the composed map


@dataclass
class DiffeoMap:
    """Composition of blended local graph maps, sampled on a box grid.

    ``eta``, ``eta_inverse``, ``a`` and ``det`` are samples at the box grid
    nodes; the map itself can be evaluated anywhere by calling the object.
    """

    steps: list[LocalGraphMap]
    grid: Grid
    fd_step: float = 1e-3
    _cache: dict = field(default_factory=dict, repr=False)

    def __call__(self, p: np.ndarray) -> np.ndarray:
        out = np.asarray(p, dtype=float)
        for s in self.steps:
            out = s(out)
        return out

    def jacobian(self, p: np.ndarray) -> np.ndarray:
        if not self.steps:
            p = np.asarray(p, dtype=float)
            return np.broadcast_to(np.eye(2), p.shape + (2,)).copy()
        return jacobian_fd(self, p, self.fd_step)

    def a_at(self, p: np.ndarray) -> np.ndarray:
        """``(grad eta)^{-1}`` at points, shape ``(..., 2, 2)``."""
        return np.linalg.inv(self.jacobian(p))

    def inverse(self, y: np.ndarray, tol: float = 1e-13, max_iter: int = 50) -> np.ndarray:
        """Newton solve of ``eta(x) = y`` started from ``x = y``."""
        y = np.asarray(y, dtype=float)
        x = y.copy()
        for _ in range(max_iter):
            res = self(x) - y
            if np.max(np.abs(res), initial=0.0) <= tol:
                break
            x = x - np.einsum("...ij,...j->...i", self.a_at(x), res)
        return x

    def _points(self) -> np.ndarray:
        x, y = self.grid.coords()
        return np.stack([x, y], axis=-1)

    @property
    def eta(self) -> np.ndarray:
        if "eta" not in self._cache:
            self._cache["eta"] = self(self._points())
        return self._cache["eta"]

    @property
    def jac(self) -> np.ndarray:
        if "jac" not in self._cache:
            self._cache["jac"] = self.jacobian(self._points())
        return self._cache["jac"]

    @property
    def a(self) -> np.ndarray:
        if "a" not in self._cache:
            self._cache["a"] = np.linalg.inv(self.jac)
        return self._cache["a"]

    @property
    def det(self) -> np.ndarray:
        return np.linalg.det(self.jac)

    @property
    def eta_inverse(self) -> np.ndarray:
        if "inv" not in self._cache:
            self._cache["inv"] = self.inverse(self._points())
        return self._cache["inv"]


def jacobian_fd(fun, p: np.ndarray, h: float = 1e-3) -> np.ndarray:
    """Fourth-order central-difference Jacobian ``J[..., i, j] = d fun_i / d x_j``."""
    p = np.asarray(p, dtype=float)
    cols = []
    for j in range(2):
        e = np.zeros(2)
        e[j] = h
        d = (-fun(p + 2 * e) + 8 * fun(p + e) - 8 * fun(p - e) + fun(p - 2 * e)) / (12 * h)
        cols.append(d)
    return np.stack(cols, axis=-1)


def default_cover(pair: DomainPair, count: int = 16, radius: float | None = None, beta: float = 0.2) -> BallCover:
    return BallCover.on_curve(dense_boundary(pair.original), count, radius, beta)


def build_eta(pair: DomainPair, cover: BallCover | None = None, order=None, samples: int = 512,
              dense: int = 4096, check_folds: bool = True) -> DiffeoMap:
    """Inductive construction of ``eta`` with ``eta(Omega) = Q``."""
    cover = cover or default_cover(pair)
    src = dense_boundary(pair.original, dense)
    cover.check_covers(src, dense_boundary(pair.approx, dense))
    R = cover.radius
    xs = np.linspace(-R, R, samples)
    dmap = DiffeoMap([], pair.original.phi.grid)
    order = range(len(cover)) if order is None else order
    for l in order:
        fr = cover.frame(l)
        current = dmap(src)
        F0 = graph_from_curve(current, fr, xs, R)
        F = graph_from_levelset(pair.approx.evaluate, fr, xs, R)
        step = local_graph_map(F0, F, xs, cover, l)
        if not step.is_identity:
            dmap.steps.append(step)
    if check_folds and dmap.steps:
        det = dmap.det
        if np.any(det <= 0):
            raise FoldDetected(f"fold detected: min det grad eta = {det.min():.3g}")
    return dmap


# ---------------------------------------------------------------------------
# reports


def fd4(a: np.ndarray, axis: int, h: float) -> np.ndarray:
    """Fourth-order periodic central difference along ``axis``."""
    r = lambda k: np.roll(a, k, axis=axis)  # noqa: E731
    return (-r(-2) + 8 * r(-1) - 8 * r(1) + r(2)) / (12 * h)


def grid_hs_norm(a: np.ndarray, s: int, h: float, mask: np.ndarray | None = None) -> float:
    """``sqrt(sum_{|alpha| <= s} int |d^alpha a|^2)`` over the masked cells, Komatsu-style counting.

    ``a`` has shape ``(..., n, n)``; each ordered derivative word is counted, so
    mixed derivatives carry their multinomial multiplicity.
    """
    a = np.asarray(a, dtype=float)
    w = h * h if mask is None else h * h * mask
    total = 0.0
    level = {(0, 0): a}
    for order in range(s + 1):
        for (px, py), v in level.items():
            mult = _binom(order, px)
            total += mult * float(np.sum(w * v**2))
        if order == s:
            break
        nxt = {}
        for (px, py), v in level.items():
            if (px + 1, py) not in nxt:
                nxt[(px + 1, py)] = fd4(v, -2, h)
            if (px, py + 1) not in nxt:
                nxt[(px, py + 1)] = fd4(v, -1, h)
        level = nxt
    return float(np.sqrt(total))


def _binom(n: int, k: int) -> int:
    from math import comb

    return comb(n, k)


@dataclass(frozen=True)
class DiffeoReport:
    eta_norm: float
    a_norm: float
    min_det: float
    inverse_error: float
    a_identity_error: float
    boundary_match: float
    grad_ratio: float


def boundary_match(m: DiffeoMap, pair: DomainPair, count: int = 2048) -> float:
    """Largest distance from ``eta(boundary of Omega)`` to the boundary of ``Q``."""
    img = m(dense_boundary(pair.original, count))
    return float(curve_distance(img, dense_boundary(pair.approx, 4 * count)).max())


def diffeo_report(m: DiffeoMap, r: int, pair: DomainPair | None = None) -> DiffeoReport:
    """Discrete ``||eta - id||_{H^{r+2}(Omega)}``, ``||a - I||_{H^{r+1}(Omega)}`` and map audits."""
    g = m.grid
    pts = m._points()
    mask = None
    if pair is not None:
        mask = (pair.original.evaluate(pts) > 0).astype(float)
    disp = np.moveaxis(m.eta - pts, -1, 0)
    eta_norm = grid_hs_norm(disp, r + 2, g.h, mask)
    a_minus = np.moveaxis(m.a - np.eye(2), (-2, -1), (0, 1))
    a_norm = grid_hs_norm(a_minus, r + 1, g.h, mask)
    comp = m(m.eta_inverse) - pts
    inv_err = float(np.abs(comp).max())
    aj = np.einsum("...ij,...jk->...ik", m.a, m.jac) - np.eye(2)
    e = np.linalg.norm(m.jac - np.eye(2), ord=2, axis=(-2, -1))
    f = np.linalg.norm(m.a - np.eye(2), ord=2, axis=(-2, -1))
    small = (e <= 0.5) & (e > 1e-12)
    ratio = float(np.max(f[small] / e[small])) if np.any(small) else 0.0
    match = float("nan")
    if pair is not None:
        match = boundary_match(m, pair)
    return DiffeoReport(eta_norm, a_norm, float(m.det.min()), inv_err, float(np.abs(aj).max()), match, ratio)
