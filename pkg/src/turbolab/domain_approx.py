"""Analytic approximation of a Lipschitz domain by heat-mollified level sets.

A domain is ``{phi > 0}`` for a level-set function stored as a periodic field
on a box that strictly contains it. Mollifying ``phi`` with the heat kernel
gives an analytic level-set function whose positive set ``Q`` approximates the
domain. Boundaries are extracted by marching squares and compared by
Hausdorff distance and by local graph functions.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.integrate import quad
from scipy.optimize import brentq
from scipy.spatial.distance import directed_hausdorff
from scipy.special import ive
from skimage.measure import find_contours

from .field_core import Grid, SpectralField, evaluate_at
from .geometry import BallCover, NotAGraph, cutoff, graph_from_levelset, resample_closed, star_boundary
from .mollify import heat_mollify

__all__ = [
    "Boundary",
    "LevelSetDomain",
    "DomainPair",
    "EmptyApproximation",
    "DegenerateLevelSet",
    "disk_profile",
    "disk_domain",
    "square_domain",
    "star_domain",
    "domain_from_field",
    "make_domain",
    "mollify_levelset",
    "extract_boundary",
    "hausdorff_distance",
    "radial_oracle_value",
    "radial_oracle_radius",
    "lipschitz_spot_check",
    "graph_convergence_report",
    "GraphReportRow",
    "dense_boundary",
]

PhiFunc = Callable[[np.ndarray], np.ndarray]

FLOOR = -0.8
SHARPNESS = 20.0
SOFT_A = 0.3


class EmptyApproximation(ValueError):
    pass


class DegenerateLevelSet(ValueError):
    pass


@dataclass(frozen=True)
class Boundary:
    """Closed polylines at ``phi = 0`` (interior on the left), or the whole-box flag."""

    polylines: tuple[np.ndarray, ...]
    whole_box: bool = False

    @property
    def points(self) -> np.ndarray:
        if not self.polylines:
            return np.empty((0, 2))
        return np.vstack(self.polylines)

    def __bool__(self) -> bool:
        return bool(self.polylines)


@dataclass(frozen=True)
class LevelSetDomain:
    """``Omega = {phi > 0}`` with a Lipschitz bound and extracted boundary.

    ``phi_func`` evaluates the level-set function exactly at arbitrary points
    (closed form for the reference shapes, the trigonometric interpolant for
    mollified ones); ``band`` is the half-width of the boundary neighborhood.
    """

    phi: SpectralField
    lipschitz_bound: float
    boundary: Boundary
    phi_func: PhiFunc | None = field(default=None, compare=False)
    band: float = 0.2
    name: str = "domain"
    _dense: dict = field(default_factory=dict, compare=False, repr=False)

    def evaluate(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        if self.phi_func is not None:
            return self.phi_func(pts)
        return evaluate_at(self.phi, pts.reshape(-1, 2))[0].reshape(pts.shape[:-1])


@dataclass(frozen=True)
class DomainPair:
    original: LevelSetDomain
    approx: LevelSetDomain
    epsilon: float

    def __post_init__(self):
        if not self.original.boundary or not self.approx.boundary:
            raise ValueError("both boundaries must be nonempty")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")


# ---------------------------------------------------------------------------
# reference shapes


def _floor(phi: np.ndarray, floor: float = FLOOR, beta: float = SHARPNESS) -> np.ndarray:
    """Smooth lower clamp at ``floor`` that keeps the zero set exactly."""
    sp = lambda u: np.logaddexp(0.0, beta * u) / beta  # noqa: E731
    return floor + sp(phi - floor) - (floor + sp(-floor))


def disk_profile(rho: np.ndarray, radius: float = 1.0) -> np.ndarray:
    """Radial level-set profile of the disk: smooth at the origin, slope -1 near the rim, floored outside."""
    rho = np.asarray(rho, dtype=float) / radius
    g = np.sqrt(rho**2 + SOFT_A**2) - np.sqrt(1 + SOFT_A**2) + 1.0
    return _floor(1.0 - g)


def _from_exact(grid: Grid, func: PhiFunc, lipschitz: float, name: str) -> LevelSetDomain:
    x, y = grid.coords()
    vals = func(np.stack([x, y], axis=-1))
    phi = SpectralField.from_values(grid, vals[None])
    return LevelSetDomain(phi, lipschitz, extract_boundary(phi), func, name=name)


def disk_domain(grid: Grid, radius: float = 1.0) -> LevelSetDomain:
    def func(p):
        return disk_profile(np.hypot(p[..., 0], p[..., 1]), radius)

    return _from_exact(grid, func, 1.0 / radius, "disk")


def square_domain(grid: Grid, half: float = 1.0) -> LevelSetDomain:
    def func(p):
        return _floor(1.0 - np.maximum(np.abs(p[..., 0]), np.abs(p[..., 1])) / half)

    return _from_exact(grid, func, 1.0 / half, "square")


def star_domain(grid: Grid, amplitude: float = 0.15, lobes: int = 5) -> LevelSetDomain:
    """Star-shaped domain ``rho < 1 + amplitude cos(lobes theta)``."""

    def func(p):
        rho = np.hypot(p[..., 0], p[..., 1])
        th = np.arctan2(p[..., 1], p[..., 0])
        return disk_profile(rho / (1 + amplitude * np.cos(lobes * th)))

    # |grad| <= |d rho| / s + rho |s'| / s^2 on the relevant annulus
    s_min = 1 - amplitude
    lip = (1 + 1.9 * amplitude * lobes / s_min) / s_min
    return _from_exact(grid, func, lip, "star")


def domain_from_field(phi: SpectralField, lipschitz_bound: float | None = None, name: str = "file") -> LevelSetDomain:
    if lipschitz_bound is None:
        from .field_core import derivative

        gx = derivative(phi, 0).values()[0]
        gy = derivative(phi, 1).values()[0]
        lipschitz_bound = float(np.hypot(gx, gy).max())
    return LevelSetDomain(phi, lipschitz_bound, extract_boundary(phi), name=name)


def make_domain(shape: str, grid: Grid) -> LevelSetDomain:
    builders = {"disk": disk_domain, "square": square_domain, "star": star_domain}
    if shape not in builders:
        raise ValueError(f"unknown shape {shape!r}; choose from {sorted(builders)}")
    return builders[shape](grid)


# ---------------------------------------------------------------------------
# mollification and contouring


def mollify_levelset(dom: LevelSetDomain, eps: float) -> LevelSetDomain:
    """``Q = {Phi(eps) * phi > 0}``; the new level-set function is a Gaussian-damped Fourier sum."""
    if eps <= 0:
        raise ValueError("epsilon must be positive")
    phi_e = heat_mollify(dom.phi, eps)
    vals = phi_e.values()[0]
    if not np.any(vals > 0):
        raise EmptyApproximation("empty approximation: mollified level set has no interior cells")

    def func(p, _f=phi_e):
        p = np.asarray(p, dtype=float)
        return evaluate_at(_f, p.reshape(-1, 2))[0].reshape(p.shape[:-1])

    return LevelSetDomain(phi_e, dom.lipschitz_bound, extract_boundary(phi_e), func, dom.band,
                          f"{dom.name}@{eps:g}")


def extract_boundary(phi: SpectralField) -> Boundary:
    """Marching-squares zero contour with linear interpolation, oriented with the interior on the left."""
    g = phi.grid
    vals = phi.values()[0]
    if np.all(vals > 0):
        return Boundary((), whole_box=True)
    if np.all(vals <= 0):
        return Boundary(())
    small = np.abs(vals) <= 1e-14
    if np.any(small[:-1, :-1] & small[1:, :-1] & small[:-1, 1:] & small[1:, 1:]):
        raise DegenerateLevelSet("degenerate level set: a cell has all corners at zero")
    x, _ = g.coords()
    polylines = []
    gx, gy = np.gradient(vals, g.h)
    for c in find_contours(vals, 0.0):
        if len(c) < 4:
            continue
        closed = np.allclose(c[0], c[-1])
        if not closed:
            raise ValueError("open contour: the domain touches the box edge")
        c = c[:-1]
        pts = g.lower + c * g.h
        # grad phi points into the interior, which must sit on the left of the tangent
        t = np.roll(pts, -1, axis=0) - pts
        ij = np.clip(np.rint(c).astype(int), 0, g.n - 1)
        left = np.sum(-t[:, 1] * gx[ij[:, 0], ij[:, 1]] + t[:, 0] * gy[ij[:, 0], ij[:, 1]])
        polylines.append(pts if left > 0 else pts[::-1].copy())
    return Boundary(tuple(polylines))


def hausdorff_distance(a, b, spacing: float) -> float:
    """Symmetric Hausdorff distance of polyline sets, resampled at ``spacing / 2``."""
    pa = _as_points(a, spacing / 2)
    pb = _as_points(b, spacing / 2)
    if len(pa) == 0 or len(pb) == 0:
        raise ValueError("both boundaries must be nonempty")
    return float(max(directed_hausdorff(pa, pb)[0], directed_hausdorff(pb, pa)[0]))


def _as_points(b, spacing: float) -> np.ndarray:
    if isinstance(b, Boundary):
        b = b.polylines
    if isinstance(b, np.ndarray):
        b = (b,)
    return np.vstack([resample_closed(p, spacing) for p in b]) if len(b) else np.empty((0, 2))


def dense_boundary(dom: LevelSetDomain, count: int = 2048) -> np.ndarray:
    """Accurate boundary samples: ray root-finding on ``phi_func`` (star-shaped domains), else the polyline."""
    if count in dom._dense:
        return dom._dense[count].copy()
    if dom.phi_func is not None:
        try:
            dom._dense[count] = star_boundary(dom.phi_func, count)
            return dom._dense[count].copy()
        except ValueError:
            pass
    pts = dom.boundary.points
    return resample_closed(dom.boundary.polylines[0], dom.phi.grid.h / 4) if len(pts) else pts


# ---------------------------------------------------------------------------
# oracles and checks


def radial_oracle_value(rho: float, eps: float, profile=disk_profile) -> float:
    """2D heat flow of a radial profile at radius ``rho``, by 1D quadrature against the Bessel kernel."""
    far = float(profile(50.0))
    width = 12 * np.sqrt(eps)
    lo, hi = max(0.0, rho - width), rho + width

    def kern(s):
        return (s / (2 * eps)) * np.exp(-((rho - s) ** 2) / (4 * eps)) * ive(0, rho * s / (2 * eps))

    val, _ = quad(lambda s: (float(profile(s)) - far) * kern(s), lo, hi, limit=400, epsabs=1e-15, epsrel=1e-13)
    return val + far


def radial_oracle_radius(eps: float, profile=disk_profile, bracket=(0.5, 1.5)) -> float:
    """Radius of the mollified disk boundary, ``phi_eps(rho) = 0``."""
    return float(brentq(lambda r: radial_oracle_value(r, eps, profile), *bracket, xtol=1e-14))


def lipschitz_spot_check(dom: LevelSetDomain, pairs: int = 10_000, seed: int = 0) -> float:
    """Largest observed ``|phi(x) - phi(y)| / |x - y|`` over random pairs (near and far)."""
    g = dom.phi.grid
    rng = np.random.default_rng(seed)
    x = g.lower + g.length * rng.random((pairs, 2))
    step = np.where(rng.random((pairs, 1)) < 0.5, 0.05, 1.0) * rng.standard_normal((pairs, 2))
    y = np.clip(x + step, g.lower, g.lower + g.length)
    d = np.linalg.norm(x - y, axis=1)
    keep = d > 1e-12
    ratio = np.abs(dom.evaluate(x[keep]) - dom.evaluate(y[keep])) / d[keep]
    return float(ratio.max())


@dataclass(frozen=True)
class GraphReportRow:
    ball: int
    norms: tuple[float, ...]


WINDOW_BETA = 0.45


def _windowed_hs(values: np.ndarray, span: float, s_max: int, beta: float = WINDOW_BETA) -> tuple[float, ...]:
    """Sobolev norms ``s = 0..s_max`` of periodized, windowed samples on an interval of length ``span``."""
    n = len(values)
    u = np.linspace(-1, 1, n, endpoint=False)
    w = cutoff(u, beta)
    c = np.fft.fft(values * w) / n
    k = 2 * np.pi * np.fft.fftfreq(n, d=span / n)
    mass = np.sqrt(np.mean(w**2))
    return tuple(float(np.sqrt(np.sum((1 + k**2) ** s * np.abs(c) ** 2)) / mass) for s in range(s_max + 1))


def graph_convergence_report(pair: DomainPair, cover: BallCover, r: int = 4, samples: int = 256,
                             grad_floor: float = 0.1) -> list[GraphReportRow]:
    """Per ball, Sobolev norms of ``F - F0`` (graphs of the approximate and original boundaries)."""
    rows = []
    R = cover.radius
    span = (1 - cover.beta) * R
    xs = np.linspace(-span, span, samples, endpoint=False)
    for l in range(len(cover)):
        fr = cover.frame(l)
        f0 = graph_from_levelset(pair.original.evaluate, fr, xs, R)
        f1 = graph_from_levelset(pair.approx.evaluate, fr, xs, R)
        if not np.all(np.isfinite(f0) & np.isfinite(f1)):
            raise NotAGraph(f"not a graph: ball {l} has no crossing over part of its plateau")
        # implicit-function check on the approximate arc
        pts = fr.to_global(xs, f1)
        dy = 1e-5
        dphi = (pair.approx.evaluate(pts + dy * fr.normal) - pair.approx.evaluate(pts - dy * fr.normal)) / (2 * dy)
        if np.min(np.abs(dphi)) < grad_floor * pair.approx.lipschitz_bound:
            raise NotAGraph(f"not a graph: ball {l} fails the implicit-function slope test")
        rows.append(GraphReportRow(l, _windowed_hs(f1 - f0, 2 * span, r + 2)))
    return rows
