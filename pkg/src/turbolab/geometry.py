"""Boundary geometry shared by domain approximation and the diffeomorphism build.

A boundary arc inside a ball is handled in a local frame: the origin sits two
ball radii inward from the ball center along the outward normal, so the arc is
a graph ``y = F(x')`` that stays well away from ``y = 0``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.spatial import cKDTree

__all__ = [
    "cutoff",
    "LocalFrame",
    "BallCover",
    "NotAGraph",
    "CoverInsufficient",
    "GraphDegeneracy",
    "graph_from_levelset",
    "graph_from_curve",
    "star_boundary",
    "polyline_normals",
    "resample_closed",
    "curve_distance",
]

PhiFunc = Callable[[np.ndarray], np.ndarray]


class NotAGraph(ValueError):
    pass


class CoverInsufficient(ValueError):
    pass


class GraphDegeneracy(ValueError):
    pass


def _glue(t: np.ndarray) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    pos = t > 0
    out[pos] = np.exp(-1.0 / t[pos])
    return out


def cutoff(s, beta: float) -> np.ndarray:
    """Radial bump: 1 for ``s <= 1 - beta``, 0 for ``s >= 1``, smooth in between."""
    if not 0 < beta < 0.5:
        raise ValueError("beta must lie in (0, 1/2)")
    t = (1.0 - np.abs(np.asarray(s, dtype=float))) / beta
    a = _glue(t)
    b = _glue(1.0 - t)
    return a / (a + b)


@dataclass(frozen=True)
class LocalFrame:
    origin: np.ndarray
    tangent: np.ndarray
    normal: np.ndarray

    def to_local(self, p: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        d = np.asarray(p, dtype=float) - self.origin
        return d @ self.tangent, d @ self.normal

    def to_global(self, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
        return self.origin + np.multiply.outer(xs, self.tangent) + np.multiply.outer(ys, self.normal)


@dataclass(frozen=True)
class BallCover:
    """Balls of a common radius centered on a boundary, with outward normals fixing the rotations."""

    centers: np.ndarray
    normals: np.ndarray
    radius: float
    beta: float = 0.2

    def __post_init__(self):
        if not 0 < self.beta < 0.5:
            raise ValueError("beta must lie in (0, 1/2)")
        if self.radius <= 0:
            raise ValueError("ball radius must be positive")

    def __len__(self) -> int:
        return len(self.centers)

    def frame(self, l: int) -> LocalFrame:
        n = self.normals[l]
        return LocalFrame(self.centers[l] - 2 * self.radius * n, np.array([-n[1], n[0]]), n)

    def xi(self, l: int, p: np.ndarray) -> np.ndarray:
        return cutoff(np.linalg.norm(np.asarray(p) - self.centers[l], axis=-1) / self.radius, self.beta)

    def uncovered(self, points: np.ndarray) -> np.ndarray:
        """Points lying in no ``(1 - beta)``-shrunk ball."""
        d = np.linalg.norm(points[:, None, :] - self.centers[None, :, :], axis=-1)
        return points[d.min(axis=1) > (1 - self.beta) * self.radius]

    def check_covers(self, *curves: np.ndarray) -> None:
        for c in curves:
            bad = self.uncovered(c)
            if len(bad):
                raise CoverInsufficient(f"cover insufficient: {len(bad)} boundary samples in no shrunk ball")

    @classmethod
    def on_curve(cls, curve: np.ndarray, count: int = 16, radius: float | None = None,
                 beta: float = 0.2) -> "BallCover":
        """Equal-arclength centers on a closed CCW curve; radius 1.5x the center spacing by default."""
        curve = np.asarray(curve, dtype=float)
        closed = np.vstack([curve, curve[:1]])
        seg = np.linalg.norm(np.diff(closed, axis=0), axis=1)
        s = np.r_[0.0, np.cumsum(seg)]
        total = s[-1]
        targets = total * np.arange(count) / count
        cx = np.interp(targets, s, closed[:, 0])
        cy = np.interp(targets, s, closed[:, 1])
        centers = np.stack([cx, cy], axis=1)
        if radius is None:
            radius = 1.5 * total / count
        nrm = polyline_normals(curve)
        normals = np.empty_like(centers)
        for l, c in enumerate(centers):
            near = np.linalg.norm(curve - c, axis=1) <= radius
            v = nrm[near].sum(axis=0)
            normals[l] = v / np.linalg.norm(v)
        return cls(centers, normals, float(radius), beta)


def polyline_normals(curve: np.ndarray) -> np.ndarray:
    """Outward unit normals at the vertices of a closed CCW polyline (central differences)."""
    t = np.roll(curve, -1, axis=0) - np.roll(curve, 1, axis=0)
    n = np.stack([t[:, 1], -t[:, 0]], axis=1)
    return n / np.linalg.norm(n, axis=1, keepdims=True)


def resample_closed(curve: np.ndarray, spacing: float) -> np.ndarray:
    """Insert points so consecutive vertices of a closed polyline are at most ``spacing`` apart."""
    curve = np.asarray(curve, dtype=float)
    nxt = np.roll(curve, -1, axis=0)
    seg = np.linalg.norm(nxt - curve, axis=1)
    pieces = []
    for p, q, L in zip(curve, nxt, seg):
        k = max(int(np.ceil(L / spacing)), 1)
        t = np.arange(k)[:, None] / k
        pieces.append(p + t * (q - p))
    return np.vstack(pieces)


def curve_distance(points: np.ndarray, curve: np.ndarray) -> np.ndarray:
    """Distance from each point to a closed polyline (exact segment projection near the nearest vertex)."""
    curve = np.asarray(curve, dtype=float)
    points = np.asarray(points, dtype=float)
    n = len(curve)
    _, idx = cKDTree(curve).query(points)
    best = np.full(len(points), np.inf)
    for off in (-1, 0):
        a = curve[(idx + off) % n]
        b = curve[(idx + off + 1) % n]
        ab = b - a
        t = np.clip(np.sum((points - a) * ab, axis=1) / np.maximum(np.sum(ab * ab, axis=1), 1e-300), 0, 1)
        d = np.linalg.norm(points - (a + t[:, None] * ab), axis=1)
        best = np.minimum(best, d)
    return best


def _bisect(fun: PhiFunc, lo: np.ndarray, hi: np.ndarray, tol: float = 1e-14, iters: int = 100) -> np.ndarray:
    """Vectorized bracketed root search (Illinois false position) for ``fun(lo) > 0 >= fun(hi)``."""
    a, b = np.array(lo, dtype=float), np.array(hi, dtype=float)
    fa, fb = fun(a), fun(b)
    side = np.zeros(a.shape, dtype=int)
    for _ in range(iters):
        denom = fa - fb
        c = np.where(denom != 0, (a * -fb + b * fa) / np.where(denom != 0, denom, 1.0), 0.5 * (a + b))
        c = np.clip(c, np.minimum(a, b), np.maximum(a, b))
        fc = fun(c)
        pos = fc > 0
        # Illinois: halve the retained endpoint value when it is kept twice in a row
        a_new, b_new = np.where(pos, c, a), np.where(pos, b, c)
        fa_new = np.where(pos, fc, np.where(side == -1, 0.5 * fa, fa))
        fb_new = np.where(pos, np.where(side == 1, 0.5 * fb, fb), fc)
        side = np.where(pos, 1, -1)
        a, b, fa, fb = a_new, b_new, fa_new, fb_new
        if np.all(np.abs(b - a) <= tol * (1 + np.abs(a))) or np.all(fc == 0):
            break
    return np.where(np.abs(fa) < np.abs(fb), a, b)


def star_boundary(phi: PhiFunc, count: int = 2048, rmax: float = 1.9, center=(0.0, 0.0),
                  scan: int = 200) -> np.ndarray:
    """Zero set of ``phi`` along equally spaced rays (domain star-shaped about ``center``)."""
    c = np.asarray(center, dtype=float)
    th = 2 * np.pi * np.arange(count) / count
    e = np.stack([np.cos(th), np.sin(th)], axis=1)

    def along(rad):
        return phi(c + rad[:, None] * e)

    if count > 512 and count % 512 == 0:
        # bracket each fine ray around the interpolated coarse radius; rescan only where that fails
        coarse = np.linalg.norm(star_boundary(phi, 512, rmax, center, scan) - c, axis=1)
        guess = np.interp(th, 2 * np.pi * np.arange(513) / 512, np.append(coarse, coarse[0]))
        width = 2 * rmax / scan
        lo, hi = np.maximum(guess - width, 0.0), np.minimum(guess + width, rmax)
        ok = (along(lo) > 0) & (along(hi) <= 0)
        if ok.all():
            return c + _bisect(along, lo, hi)[:, None] * e
    rs = np.linspace(0.0, rmax, scan)
    vals = phi((c + rs[:, None, None] * e[None]).reshape(-1, 2)).reshape(scan, count)
    inside = vals > 0
    if not inside[0].all():
        raise ValueError("center is not inside the domain")
    last = scan - 1 - np.argmax(inside[::-1], axis=0)
    if np.any(last == scan - 1):
        raise ValueError("domain reaches the scan radius")
    lo, hi = rs[last], rs[last + 1]
    rad = _bisect(along, lo, hi)
    return c + rad[:, None] * e


def graph_from_levelset(phi: PhiFunc, frame: LocalFrame, xs: np.ndarray, radius: float,
                        scan: int = 64) -> np.ndarray:
    """Graph ``F(x')`` of the zero set of ``phi`` in a ball frame (NaN where no crossing).

    The domain lies below the graph. Raises :class:`NotAGraph` when a vertical
    line crosses the zero set more than once inside the ball.
    """
    xs = np.asarray(xs, dtype=float)
    ys = np.linspace(0.5 * radius, 3.5 * radius, scan)
    pts = frame.to_global(xs[:, None] + 0 * ys[None, :], ys[None, :] + 0 * xs[:, None])
    vals = phi(pts.reshape(-1, 2)).reshape(len(xs), scan)
    sign = vals > 0
    change = sign[:, :-1] & ~sign[:, 1:]
    up = ~sign[:, :-1] & sign[:, 1:]
    half = np.sqrt(np.maximum(radius**2 - xs**2, 0.0))
    ymid = 0.5 * (ys[:-1] + ys[1:])
    in_ball = np.abs(ymid[None, :] - 2 * radius) <= half[:, None]
    crossings = (change | up) & in_ball
    if np.any(crossings.sum(axis=1) > 1):
        raise NotAGraph("not a graph: a vertical line crosses the boundary twice inside the ball")
    # choose the downward crossing nearest the ball center
    score = np.where(change, -np.abs(ymid[None, :] - 2 * radius), -np.inf)
    idx = np.argmax(score, axis=1)
    ok = np.isfinite(score[np.arange(len(xs)), idx])
    out = np.full(len(xs), np.nan)
    if ok.any():
        xo = xs[ok]

        def along(y):
            return phi(frame.to_global(xo, y))

        out[ok] = _bisect(along, ys[idx[ok]], ys[idx[ok] + 1])
    return out


def graph_from_curve(curve: np.ndarray, frame: LocalFrame, xs: np.ndarray, radius: float) -> np.ndarray:
    """Graph ``F(x')`` of a dense closed curve in a ball frame, by cubic spline (NaN outside)."""
    x, y = frame.to_local(curve)
    band = (y > 0.5 * radius) & (y < 3.5 * radius) & (np.abs(x) < 1.1 * radius)
    start = int(np.argmin(x**2 + (y - 2 * radius) ** 2))
    n = len(curve)
    # walk both ways from the point nearest the center while inside the band
    fwd = [start]
    k = (start + 1) % n
    while band[k] and k != start and len(fwd) < n:
        fwd.append(k)
        k = (k + 1) % n
    bwd = []
    k = (start - 1) % n
    while band[k] and k not in fwd and len(fwd) + len(bwd) < n:
        bwd.append(k)
        k = (k - 1) % n
    run = bwd[::-1] + fwd
    xr, yr = x[run], y[run]
    dx = np.diff(xr)
    if not (np.all(dx > 0) or np.all(dx < 0)):
        raise NotAGraph("not a graph: curve folds back inside the ball frame")
    if dx[0] < 0:
        xr, yr = xr[::-1], yr[::-1]
    out = CubicSpline(xr, yr)(xs)
    out[(xs < xr[0]) | (xs > xr[-1])] = np.nan
    return out
