"""Staggered polar discretization of the unit disk.

Radial finite volumes, Fourier in the angle. Radial velocity lives on cell
faces ``r_f = f*dr`` (``f = 1..n_r``, the last face is the boundary), angular
velocity and scalars on centers ``r_i = (i + 1/2)*dr``. Curl-type scalars and
stream functions live on "curl nodes": the origin (row 0, angle independent)
and the interior faces ``f = 1..n_r-1``.

With this layout the discrete identities ``div(perp_grad psi) = 0`` and
``curl(grad q) = 0`` hold exactly, and the boundary normal trace is a stored
unknown, so projected fields are tangent by construction.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

__all__ = ["PolarGrid", "DiskVector", "polar_hs_norm", "boundary_hs_norm"]


@dataclass(frozen=True)
class PolarGrid:
    n_r: int = 32
    n_theta: int = 65
    radius: float = 1.0

    def __post_init__(self):
        if self.n_theta % 2 == 0:
            raise ValueError("n_theta must be odd (no Nyquist mode)")
        if self.n_r < 4:
            raise ValueError("n_r must be at least 4")

    @property
    def dr(self) -> float:
        return self.radius / self.n_r

    @cached_property
    def rc(self) -> np.ndarray:
        return (np.arange(self.n_r) + 0.5) * self.dr

    @cached_property
    def rf(self) -> np.ndarray:
        """Face radii 0..n_r (index 0 is the origin)."""
        return np.arange(self.n_r + 1) * self.dr

    @cached_property
    def theta(self) -> np.ndarray:
        return 2 * np.pi * np.arange(self.n_theta) / self.n_theta

    @cached_property
    def modes(self) -> np.ndarray:
        return np.arange(self.n_theta // 2 + 1)

    @property
    def dtheta(self) -> float:
        return 2 * np.pi / self.n_theta

    @property
    def h(self) -> float:
        """Representative spacing (the coarser of radial and boundary arc spacing)."""
        return max(self.dr, self.radius * self.dtheta)

    # node coordinates -------------------------------------------------

    def _points(self, radii: np.ndarray) -> np.ndarray:
        r, t = np.meshgrid(radii, self.theta, indexing="ij")
        return np.stack([r * np.cos(t), r * np.sin(t)], axis=-1)

    def face_points(self) -> np.ndarray:
        return self._points(self.rf[1:])

    def center_points(self) -> np.ndarray:
        return self._points(self.rc)

    def segment_quadrature(self, k: int = 5) -> tuple[np.ndarray, np.ndarray]:
        """Gauss-Legendre radii (k, n_r) and weights (k,) averaging over each radial cell.

        Angular components are stored as radial cell averages, which makes the
        discrete divergence of sampled divergence-free fields vanish exactly.
        """
        x, w = np.polynomial.legendre.leggauss(k)
        radii = self.rf[:-1][None, :] + 0.5 * (x[:, None] + 1.0) * self.dr
        return radii, 0.5 * w

    def segment_points(self, k: int = 5) -> np.ndarray:
        radii, _ = self.segment_quadrature(k)
        return np.stack([self._points(r) for r in radii])

    def boundary_points(self) -> np.ndarray:
        return self._points(np.array([self.radius]))[0]

    def boundary_normals(self) -> np.ndarray:
        return np.stack([np.cos(self.theta), np.sin(self.theta)], axis=-1)

    def cell_areas(self) -> np.ndarray:
        return np.broadcast_to((self.rc * self.dr * self.dtheta)[:, None], (self.n_r, self.n_theta))

    # spectral angle derivative -------------------------------------------

    def d_theta(self, a: np.ndarray) -> np.ndarray:
        ah = np.fft.rfft(a, axis=-1)
        return np.fft.irfft(1j * self.modes * ah, n=self.n_theta, axis=-1)

    # staggered operators -----------------------------------------------

    def div(self, ur: np.ndarray, ut: np.ndarray) -> np.ndarray:
        """Divergence at centers; ``ur`` on faces 1..n_r, ``ut`` on centers."""
        flux = self.rf[1:, None] * ur
        lower = np.vstack([np.zeros((1, self.n_theta)), flux[:-1]])
        return (flux - lower) / (self.rc[:, None] * self.dr) + self.d_theta(ut) / self.rc[:, None]

    def grad(self, q: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Gradient of a center scalar with prescribed boundary normal component ``b``."""
        ur = np.empty((self.n_r, self.n_theta))
        ur[:-1] = (q[1:] - q[:-1]) / self.dr
        ur[-1] = b
        ut = self.d_theta(q) / self.rc[:, None]
        return ur, ut

    def curl(self, ur: np.ndarray, ut: np.ndarray) -> np.ndarray:
        """Scalar curl on curl nodes (row 0 is the origin circulation cell)."""
        out = np.empty((self.n_r, self.n_theta))
        out[0] = 2.0 * np.mean(ut[0]) / self.rc[0]
        rf = self.rf[1:-1, None]
        circ = (self.rc[1:, None] * ut[1:] - self.rc[:-1, None] * ut[:-1]) / self.dr
        out[1:] = (circ - self.d_theta(ur[:-1])) / rf
        return out

    def perp_grad(self, psi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """``(-d_y psi, d_x psi)`` for ``psi`` on curl nodes with ``psi = 0`` on the boundary."""
        full = np.vstack([np.full((1, self.n_theta), np.mean(psi[0])), psi[1:], np.zeros((1, self.n_theta))])
        ur = np.empty((self.n_r, self.n_theta))
        ur[:-1] = -self.d_theta(full[1:-1]) / self.rf[1:-1, None]
        ur[-1] = 0.0
        ut = (full[1:] - full[:-1]) / self.dr
        return ur, ut

    # mode-wise solvers --------------------------------------------------

    def solve_neumann(self, f: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Solve ``div(grad(q, b)) = f`` with zero-mean gauge; data must be compatible."""
        n, dr, rc, rf = self.n_r, self.dr, self.rc, self.rf
        fh = np.fft.rfft(f, axis=-1)
        bh = np.fft.rfft(b)
        m2 = self.modes.astype(float) ** 2
        # symmetric form: rows multiplied by rc*dr^2
        lo = rf[1:n].copy()          # coupling i <-> i-1 at face i, i=1..n-1
        diag = np.empty((n, len(m2)))
        diag[:] = -(rf[:n] + np.r_[rf[1:n], 0.0])[:, None] - (m2[None, :] * dr**2 / rc[:, None])
        rhs = fh * (rc * dr**2)[:, None]
        rhs[-1] -= rf[n] * bh * dr
        q = np.empty_like(rhs)
        q[:, 1:] = _thomas_sym(lo, diag[:, 1:], rhs[:, 1:])
        a0 = np.diag(diag[:, 0]) + np.diag(lo, 1) + np.diag(lo, -1)
        a0 += np.abs(diag[:, 0]).max() / n  # constants span the kernel; compatible data stay orthogonal to it
        q[:, 0] = np.linalg.solve(a0, rhs[:, 0])
        out = np.fft.irfft(q, n=self.n_theta, axis=-1)
        return out - np.sum(out * self.cell_areas()) / np.sum(self.cell_areas())

    def solve_dirichlet(self, g: np.ndarray) -> np.ndarray:
        """Solve ``curl(perp_grad(psi)) = g`` on curl nodes with ``psi = 0`` on the boundary."""
        n, dr, rc, rf = self.n_r, self.dr, self.rc, self.rf
        gh = np.fft.rfft(g, axis=-1)
        gh[0, 1:] = 0.0
        m2 = self.modes.astype(float) ** 2
        nm = len(m2)
        # rows multiplied by rf*dr^2 (faces) and by rc0*dr/2 (origin) -> symmetric
        lo = rc[:n - 1].copy()
        diag = np.empty((n, nm))
        diag[0] = -rc[0]
        diag[1:] = -(rc[1:n] + rc[:n - 1])[:, None] - m2[None, :] * dr**2 / rf[1:n, None]
        rhs = np.empty((n, nm), dtype=complex)
        rhs[0] = gh[0] * rc[0] ** 2 * dr / 2.0
        rhs[1:] = gh[1:] * (rf[1:n] * dr**2)[:, None]
        # modes m != 0 pin the origin value to zero
        lo_m = np.broadcast_to(lo[:, None], (n - 1, nm)).copy()
        diag_m = diag.copy()
        lo_m[0, 1:] = 0.0
        diag_m[0, 1:] = 1.0
        rhs[0, 1:] = 0.0
        psi = _thomas(lo_m, diag_m, lo_m, rhs)
        return np.fft.irfft(psi, n=self.n_theta, axis=-1)


def _thomas(lower: np.ndarray, diag: np.ndarray, upper: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Batched tridiagonal solve; ``lower[i]`` couples row i+1 to i, ``upper[i]`` row i to i+1."""
    n = diag.shape[0]
    d = np.zeros_like(rhs)
    cp = np.zeros(rhs.shape, dtype=complex)
    denom = diag[0]
    cp[0] = upper[0] / denom if n > 1 else 0
    d[0] = rhs[0] / denom
    for i in range(1, n):
        denom = diag[i] - lower[i - 1] * cp[i - 1]
        if i < n - 1:
            cp[i] = upper[i] / denom
        d[i] = (rhs[i] - lower[i - 1] * d[i - 1]) / denom
    x = np.zeros_like(rhs)
    x[-1] = d[-1]
    for i in range(n - 2, -1, -1):
        x[i] = d[i] - cp[i] * x[i + 1]
    return x


def _thomas_sym(off: np.ndarray, diag: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    off2 = np.broadcast_to(off[:, None], (len(off), diag.shape[1]))
    return _thomas(off2, diag, off2, rhs)


@dataclass(frozen=True, eq=False)
class DiskVector:
    """Vector field on a :class:`PolarGrid`: radial part on faces 1..n_r, angular part on centers."""

    grid: PolarGrid
    ur: np.ndarray
    ut: np.ndarray

    @classmethod
    def zeros(cls, grid: PolarGrid) -> "DiskVector":
        z = np.zeros((grid.n_r, grid.n_theta))
        return cls(grid, z, z.copy())

    @classmethod
    def from_stream(cls, grid: PolarGrid, psi_func) -> "DiskVector":
        """``perp_grad`` of ``psi_func(x, y)`` sampled on curl nodes (must vanish on the boundary)."""
        fp = grid.face_points()[: grid.n_r - 1]
        nodes = np.vstack([np.full((1, grid.n_theta), float(psi_func(0.0, 0.0))),
                           np.broadcast_to(psi_func(fp[..., 0], fp[..., 1]), fp.shape[:2])])
        return cls(grid, *grid.perp_grad(nodes))

    @classmethod
    def from_cartesian(cls, grid: PolarGrid, func) -> "DiskVector":
        """Sample ``func(x, y) -> (u, v)``: radial part at faces, angular part as radial cell averages."""
        fp = grid.face_points()
        t = grid.theta[None, :]
        ux, uy = (np.broadcast_to(c, fp.shape[:2]) for c in func(fp[..., 0], fp[..., 1]))
        ur = ux * np.cos(t) + uy * np.sin(t)
        sp = grid.segment_points()
        _, w = grid.segment_quadrature()
        ux, uy = (np.broadcast_to(c, sp.shape[:3]) for c in func(sp[..., 0], sp[..., 1]))
        ut = np.tensordot(w, -ux * np.sin(t) + uy * np.cos(t), axes=1)
        return cls(grid, np.array(ur, dtype=float), np.array(ut, dtype=float))

    def __add__(self, o: "DiskVector") -> "DiskVector":
        return DiskVector(self.grid, self.ur + o.ur, self.ut + o.ut)

    def __sub__(self, o: "DiskVector") -> "DiskVector":
        return DiskVector(self.grid, self.ur - o.ur, self.ut - o.ut)

    def __mul__(self, s: float) -> "DiskVector":
        return DiskVector(self.grid, self.ur * s, self.ut * s)

    __rmul__ = __mul__

    def div(self) -> np.ndarray:
        return self.grid.div(self.ur, self.ut)

    def curl(self) -> np.ndarray:
        return self.grid.curl(self.ur, self.ut)

    def normal_trace(self) -> np.ndarray:
        return self.ur[-1]

    def flat(self) -> np.ndarray:
        return np.concatenate([self.ur.ravel(), self.ut.ravel()])

    @classmethod
    def from_flat(cls, grid: PolarGrid, x: np.ndarray) -> "DiskVector":
        n = grid.n_r * grid.n_theta
        return cls(grid, x[:n].reshape(grid.n_r, grid.n_theta).copy(), x[n:].reshape(grid.n_r, grid.n_theta).copy())

    # Cartesian components at the two node families ------------------------

    def ut_on_faces(self) -> np.ndarray:
        ut = self.ut
        out = np.empty_like(ut)
        out[:-1] = 0.5 * (ut[:-1] + ut[1:])
        out[-1] = 1.5 * ut[-1] - 0.5 * ut[-2]
        return out

    def ur_on_centers(self) -> np.ndarray:
        ur = self.ur
        out = np.empty_like(ur)
        out[1:] = 0.5 * (ur[:-1] + ur[1:])
        out[0] = 1.5 * ur[0] - 0.5 * ur[1]
        return out

    def cartesian_on_faces(self) -> np.ndarray:
        t = self.grid.theta[None, :]
        ur, ut = self.ur, self.ut_on_faces()
        return np.stack([ur * np.cos(t) - ut * np.sin(t), ur * np.sin(t) + ut * np.cos(t)], axis=-1)

    def cartesian_on_centers(self) -> np.ndarray:
        t = self.grid.theta[None, :]
        ur, ut = self.ur_on_centers(), self.ut
        return np.stack([ur * np.cos(t) - ut * np.sin(t), ur * np.sin(t) + ut * np.cos(t)], axis=-1)

    def hs_norm(self, s: int) -> float:
        g = self.grid
        return float(np.hypot(polar_hs_norm(self.ur, g.rf[1:], g, s), polar_hs_norm(self.ut, g.rc, g, s)))


def polar_hs_norm(a: np.ndarray, radii: np.ndarray, grid: PolarGrid, s: int) -> float:
    """Discrete ``sqrt(sum_{p+q<=s} ||d_r^p d_theta^q a||^2)`` with area weight ``r dr dtheta``.

    Radial derivatives are second-order differences on the node radii, angular
    derivatives spectral. This is a coordinate Sobolev norm, equivalent to the
    Cartesian one away from the origin.
    """
    a = np.asarray(a, dtype=float)
    w = (radii * grid.dr * grid.dtheta)[:, None]
    total = 0.0
    dr_stack = [a]
    for _ in range(s):
        dr_stack.append(np.gradient(dr_stack[-1], radii, axis=0, edge_order=2))
    for p in range(s + 1):
        b = dr_stack[p]
        for q in range(s + 1 - p):
            total += float(np.sum(w * b**2))
            if q < s - p:
                b = grid.d_theta(b)
    return float(np.sqrt(total))


def boundary_hs_norm(b: np.ndarray, s: float, radius: float = 1.0) -> float:
    """Fourier-multiplier norm ``sqrt(2 pi R sum_m (1+m^2)^s |b_m|^2)`` on the boundary circle."""
    n = len(b)
    bh = np.fft.fft(b) / n
    m = np.fft.fftfreq(n, d=1.0 / n)
    return float(np.sqrt(2 * np.pi * radius * np.sum((1 + m**2) ** s * np.abs(bh) ** 2)))
