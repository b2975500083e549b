"""Heat-kernel mollification, disk-to-box extension and the tangent divergence-free approximation.

The approximation operator ``S_eps`` takes a divergence-free field tangent to
the unit disk boundary, extends it into a periodic box, runs the heat flow for
time ``eps`` and restores the constraints with a discrete Leray-Helmholtz
correction ``w = v_eps - grad q`` (Neumann problem on the disk).
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.polynomial import chebyshev as cheb
from scipy.special import erfc

from .field_core import Grid, SpectralField, evaluate_at, sobolev_norm
from .polar import DiskVector, PolarGrid

__all__ = [
    "HeatKernelParams",
    "DiskField",
    "InputNotInV",
    "MarginTooSmall",
    "heat_mollify",
    "extend",
    "extension_constant",
    "sample_on_disk",
    "leray_disk",
    "tangent_divfree_approx",
    "membership_residuals",
    "default_box",
    "SweepRow",
    "approximation_sweep",
    "monotone_threshold",
    "largest_passing_eps",
    "stream_corpus",
]

DiskField = DiskVector


class InputNotInV(ValueError):
    pass


class MarginTooSmall(ValueError):
    pass


@dataclass(frozen=True)
class HeatKernelParams:
    epsilon: float

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("mollification time must be nonnegative")


def heat_mollify(f: SpectralField, p: HeatKernelParams | float) -> SpectralField:
    """Periodic heat semigroup: multiply coefficients by ``exp(-eps |k|^2)``."""
    eps = p.epsilon if isinstance(p, HeatKernelParams) else float(p)
    if eps < 0:
        raise ValueError("mollification time must be nonnegative")
    if eps == 0:
        return f
    return f.with_coeffs(f.coeffs * np.exp(-eps * f.grid.k2))


def default_box(n: int = 256, length: float = 4.0) -> Grid:
    """Periodic box centered on the unit disk."""
    return Grid(2, n, length, -length / 2)


# ---------------------------------------------------------------------------
# extension


@lru_cache(maxsize=8)
def _reflection_weights(order: int, mu_max: float) -> tuple[np.ndarray, np.ndarray]:
    """Weights ``lam`` with ``sum_j lam_j (-mu_j)^p = 1`` for ``p = 0..order``."""
    mu = mu_max * np.arange(1, order + 2) / (order + 1)
    v = np.vander(-mu, order + 1, increasing=True).T
    lam = np.linalg.solve(v, np.ones(order + 1))
    return mu, lam


def _radial_fits(values: np.ndarray, design: np.ndarray) -> np.ndarray:
    """Least-squares Chebyshev coefficients in ``r`` of every angular Fourier mode."""
    vh = np.fft.rfft(values, axis=-1) / values.shape[-1]
    coef, *_ = np.linalg.lstsq(design, np.hstack([vh.real, vh.imag]), rcond=None)
    nm = vh.shape[1]
    return coef[:, :nm] + 1j * coef[:, nm:]


def _design(g: PolarGrid, degree: int) -> tuple[np.ndarray, np.ndarray]:
    """Chebyshev design matrices for point values on faces and radial cell averages."""
    R = g.radius
    faces = cheb.chebvander(2 * g.rf[1:] / R - 1, degree)
    radii, w = g.segment_quadrature()
    cells = np.tensordot(w, cheb.chebvander(2 * radii / R - 1, degree), axes=1)
    return faces, cells


def _eval_modes(coef: np.ndarray, rho: np.ndarray, theta: np.ndarray, radius: float) -> np.ndarray:
    x = 2 * rho / radius - 1
    radial = cheb.chebval(x, coef)  # (n_modes, npts)
    m = np.arange(coef.shape[1])[:, None]
    w = np.where(m == 0, 1.0, 2.0)
    return np.sum(w * (radial * np.exp(1j * m * theta[None, :])).real, axis=0)


def _extended_polar(coef, rho, theta, radius, mu, lam):
    out = np.empty_like(rho)
    inside = rho <= radius
    out[inside] = _eval_modes(coef, rho[inside], theta[inside], radius)
    if np.any(~inside):
        ro, to = rho[~inside], theta[~inside]
        acc = np.zeros_like(ro)
        for mj, lj in zip(mu, lam):
            acc += lj * _eval_modes(coef, radius - mj * (ro - radius), to, radius)
        out[~inside] = acc
    return out


def extend(f: DiskVector, box: Grid | None = None, margin: float = 0.8, order: int = 6,
           degree: int | None = None) -> SpectralField:
    """Periodic Cartesian extension of a disk vector field.

    Inside the disk each angular mode of each polar component is represented by
    a Chebyshev fit in the radius. Outside, a Hestenes-type reflection matching
    ``order`` radial derivatives continues it, and an erfc blend centered at
    ``radius + margin/2`` (width ``margin/12``) cuts it off before the box edge.
    """
    box = box or default_box()
    g = f.grid
    R = g.radius
    if 2 * box.lower + box.length > 1e-12:
        raise ValueError("box must be centered on the disk")
    if R + margin > 0.9 * box.length / 2:
        raise MarginTooSmall(f"disk plus margin {R + margin:.3g} leaves under 10% padding in the box")
    if margin < 8 * box.h:
        raise MarginTooSmall(f"blend margin {margin:.3g} is under-resolved by box spacing {box.h:.3g}")
    degree = degree if degree is not None else min(g.n_r - 1, 16)
    faces, cells = _design(g, degree)
    cr = _radial_fits(f.ur, faces)
    ct = _radial_fits(f.ut, cells)
    mu, lam = _reflection_weights(order, R / margin)

    x, y = box.coords()
    rho = np.hypot(x, y).ravel()
    th = np.arctan2(y, x).ravel()
    chi = 0.5 * erfc((rho - (R + margin / 2)) / (margin / 12))
    live = chi > 1e-18
    ur = np.zeros_like(rho)
    ut = np.zeros_like(rho)
    ur[live] = _extended_polar(cr, rho[live], th[live], R, mu, lam)
    ut[live] = _extended_polar(ct, rho[live], th[live], R, mu, lam)
    ux = (ur * np.cos(th) - ut * np.sin(th)) * chi
    uy = (ur * np.sin(th) + ut * np.cos(th)) * chi
    return SpectralField.from_values(box, np.stack([ux, uy]).reshape((2,) + box.shape))


def sample_on_disk(F: SpectralField, g: PolarGrid) -> DiskVector:
    """Polar components of a Cartesian box field in the disk's staggered layout."""
    fp = g.face_points().reshape(-1, 2)
    sp = g.segment_points()
    _, w = g.segment_quadrature()
    vf = evaluate_at(F, fp).reshape(2, g.n_r, g.n_theta)
    vs = evaluate_at(F, sp.reshape(-1, 2)).reshape((2,) + sp.shape[:3])
    t = g.theta[None, :]
    ur = vf[0] * np.cos(t) + vf[1] * np.sin(t)
    ut = np.tensordot(w, -vs[0] * np.sin(t) + vs[1] * np.cos(t), axes=1)
    return DiskVector(g, ur, ut)


def extension_constant(f: DiskVector, r: int, box: Grid | None = None, margin: float = 0.8) -> float:
    """Measured ``||E f||_{H^r(box)} / ||f||_{H^r(disk)}``."""
    den = f.hs_norm(r)
    if den == 0:
        return 0.0
    box = box or default_box()
    return sobolev_norm(extend(f, box, margin), r) * box.length / den


# ---------------------------------------------------------------------------
# projection


def membership_residuals(v: DiskVector) -> tuple[float, float]:
    """Max |div v| and max |v . n| on the boundary."""
    return float(np.abs(v.div()).max()), float(np.abs(v.normal_trace()).max())


def _require_in_v(v: DiskVector, tol: float = 1e-6) -> float:
    """Raise unless ``v`` is divergence-free and tangent; returns its max amplitude."""
    scale = max(float(np.abs(v.ur).max()), float(np.abs(v.ut).max()))
    div_res, n_res = membership_residuals(v)
    if div_res > tol * max(scale, 1.0) or n_res > tol * max(scale, 1.0):
        raise InputNotInV(f"input not in V: div residual {div_res:.2e}, normal residual {n_res:.2e}")
    return scale


def leray_disk(v: DiskVector) -> DiskVector:
    """Discrete Leray-Helmholtz projection onto divergence-free tangent fields."""
    g = v.grid
    f = v.div()
    b = v.normal_trace()
    q = g.solve_neumann(f, b)
    gr, gt = g.grad(q, b)
    return DiskVector(g, v.ur - gr, v.ut - gt)


def tangent_divfree_approx(v: DiskVector, eps: float, box: Grid | None = None, margin: float = 0.8,
                           tol: float = 1e-6) -> DiskVector:
    """Analytic divergence-free tangent approximation of ``v`` at mollification time ``eps``."""
    if _require_in_v(v, tol) == 0:
        return DiskVector.zeros(v.grid)
    ve = sample_on_disk(heat_mollify(extend(v, box, margin), eps), v.grid)
    return leray_disk(ve)


# ---------------------------------------------------------------------------
# sweeps


@dataclass(frozen=True)
class SweepRow:
    epsilon: float
    h_r_error: float
    div_residual: float
    normal_residual: float
    bound_constant: float


def approximation_sweep(v: DiskVector, eps_list, r: int = 4, box: Grid | None = None,
                        margin: float = 0.8) -> list[SweepRow]:
    """``S_eps v`` along a list of times, reusing one extension."""
    _require_in_v(v)
    F = extend(v, box, margin)
    vn = v.hs_norm(r)
    rows = []
    for eps in eps_list:
        w = leray_disk(sample_on_disk(heat_mollify(F, eps), v.grid))
        d, n = membership_residuals(w)
        rows.append(SweepRow(float(eps), (w - v).hs_norm(r), d, n, w.hs_norm(r) / vn if vn else 0.0))
    return rows


def monotone_threshold(eps_list, errors) -> float:
    """Largest ``eps*`` such that errors are nonincreasing for every ``eps <= eps*`` in the list."""
    order = np.argsort(eps_list)
    eps = np.asarray(eps_list, dtype=float)[order]
    err = np.asarray(errors, dtype=float)[order]
    star = eps[0]
    for k in range(1, len(eps)):
        if err[k] + 1e-15 < err[k - 1]:
            break
        star = eps[k]
    return float(star)


def largest_passing_eps(rows: list[SweepRow], div_tol: float = 1e-8, normal_tol: float = 1e-6,
                        scale: float = 1.0) -> float:
    """Largest swept ``eps`` whose output passes both residual checks (0 if none)."""
    ok = [r.epsilon for r in rows if r.div_residual <= div_tol * scale and r.normal_residual <= normal_tol * scale]
    return max(ok) if ok else 0.0


def stream_corpus(g: PolarGrid, count: int = 20, degree: int = 4, seed: int = 0, r: int = 4) -> list[DiskVector]:
    """Fields ``perp_grad((1 - |x|^2) p(x, y))`` for random polynomials ``p``, unit ``H^r`` norm."""
    rng = np.random.default_rng(seed)
    out = []
    powers = [(a, b) for a in range(degree + 1) for b in range(degree + 1 - a) if a + b > 0]
    for _ in range(count):
        c = rng.standard_normal(len(powers))

        def psi(x, y, c=c):
            p = sum(ci * x**a * y**b for ci, (a, b) in zip(c, powers))
            return (1 - x * x - y * y) * p

        v = DiskVector.from_stream(g, psi)
        out.append(v * (1.0 / v.hs_norm(r)))
    return out
