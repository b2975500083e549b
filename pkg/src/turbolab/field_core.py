"""Periodic spectral field calculus on the flat torus.

Fields are stored as normalized Fourier coefficients, ``coeffs = fftn(values) / N**d``,
so the constant field 1 has a single unit coefficient and Parseval reads
``mean(|f|**2) == sum(|coeffs|**2)``. All L2-type norms in the package use this
volume-normalized measure.
"""
from __future__ import annotations

import os
import struct
import tempfile
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Grid",
    "SpectralField",
    "SobolevIndex",
    "sobolev_norm",
    "l2_norm",
    "leray_project",
    "derivative",
    "divergence",
    "curl2d",
    "dealias",
    "product",
    "evaluate_at",
    "write_snapshot",
    "read_snapshot",
    "write_csv_samples",
    "atomic_write_bytes",
    "atomic_write_text",
]


@dataclass(frozen=True)
class Grid:
    """Uniform periodic grid on ``[lower, lower + length)**dim``."""

    dim: int
    n: int
    length: float = 2 * np.pi
    lower: float = 0.0

    def __post_init__(self):
        if self.dim not in (1, 2, 3):
            raise ValueError(f"dim must be 1, 2 or 3, got {self.dim}")
        if self.n < 8 or self.n % 2:
            raise ValueError(f"n_per_axis must be an even integer >= 8, got {self.n}")
        if self.length <= 0:
            raise ValueError("length must be positive")

    @property
    def h(self) -> float:
        return self.length / self.n

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.dim

    @cached_property
    def k1d(self) -> np.ndarray:
        """Angular wavenumbers along one axis in FFT order."""
        return 2 * np.pi * np.fft.fftfreq(self.n, d=self.h)

    @cached_property
    def kvec(self) -> tuple[np.ndarray, ...]:
        """Broadcastable wavevector components, one array per axis."""
        out = []
        for ax in range(self.dim):
            shp = [1] * self.dim
            shp[ax] = self.n
            out.append(self.k1d.reshape(shp))
        return tuple(out)

    @cached_property
    def k2(self) -> np.ndarray:
        return sum(np.broadcast_to(k, self.shape) ** 2 for k in self.kvec)

    @cached_property
    def nyquist_mask(self) -> np.ndarray:
        """True off the Nyquist planes."""
        idx = np.fft.fftfreq(self.n, d=1.0 / self.n)
        keep = np.abs(idx) != self.n // 2
        m = np.ones(self.shape, dtype=bool)
        for ax in range(self.dim):
            shp = [1] * self.dim
            shp[ax] = self.n
            m &= keep.reshape(shp)
        return m

    @cached_property
    def dealias_mask(self) -> np.ndarray:
        """2/3-rule mask: keep integer modes with |m_i| <= n/3 on every axis."""
        idx = np.abs(np.fft.fftfreq(self.n, d=1.0 / self.n))
        keep = idx <= self.n // 3
        m = np.ones(self.shape, dtype=bool)
        for ax in range(self.dim):
            shp = [1] * self.dim
            shp[ax] = self.n
            m &= keep.reshape(shp)
        return m

    def coords(self) -> tuple[np.ndarray, ...]:
        x = self.lower + self.h * np.arange(self.n)
        return tuple(np.meshgrid(*([x] * self.dim), indexing="ij"))

    @property
    def kmax_shell(self) -> int:
        """Largest integer shell index fully contained on the grid."""
        return self.n // 2


@dataclass(frozen=True)
class SobolevIndex:
    r: int

    def __post_init__(self):
        if int(self.r) != self.r or self.r <= 3:
            raise ValueError(f"Sobolev index must be an integer > 3, got {self.r}")

    def __int__(self) -> int:
        return int(self.r)


@dataclass(frozen=True, eq=False)
class SpectralField:
    """Real periodic field with ``channels`` components stored in coefficient space.

    ``coeffs`` has shape ``(channels,) + grid.shape``. Use :meth:`from_values`
    to build one from grid samples; it enforces conjugate symmetry and zeroes
    the Nyquist planes.
    """

    grid: Grid
    coeffs: np.ndarray = field(repr=False)

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=complex)
        if c.ndim == self.grid.dim:
            c = c[None]
        if c.shape[1:] != self.grid.shape:
            raise ValueError(f"coefficient shape {c.shape} does not match grid {self.grid.shape}")
        c = c * self.grid.nyquist_mask
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def from_values(cls, grid: Grid, values) -> "SpectralField":
        v = np.asarray(values, dtype=float)
        if v.ndim == grid.dim:
            v = v[None]
        axes = tuple(range(1, grid.dim + 1))
        c = np.fft.fftn(v, axes=axes) / grid.n**grid.dim
        c = _symmetrize(c, grid)
        return cls(grid, c)

    @classmethod
    def from_function(cls, grid: Grid, func: Callable) -> "SpectralField":
        vals = func(*grid.coords())
        if isinstance(vals, (tuple, list)):
            vals = np.stack([np.broadcast_to(v, grid.shape) for v in vals])
        return cls.from_values(grid, np.broadcast_to(vals, np.shape(vals)))

    @classmethod
    def zeros(cls, grid: Grid, channels: int = 1) -> "SpectralField":
        return cls(grid, np.zeros((channels,) + grid.shape, dtype=complex))

    @property
    def channels(self) -> int:
        return self.coeffs.shape[0]

    def values(self) -> np.ndarray:
        axes = tuple(range(1, self.grid.dim + 1))
        return np.fft.ifftn(self.coeffs * self.grid.n**self.grid.dim, axes=axes).real

    def with_coeffs(self, coeffs) -> "SpectralField":
        return SpectralField(self.grid, coeffs)

    def channel(self, i: int) -> "SpectralField":
        return SpectralField(self.grid, self.coeffs[i : i + 1])

    def __add__(self, other: "SpectralField") -> "SpectralField":
        return self.with_coeffs(self.coeffs + other.coeffs)

    def __sub__(self, other: "SpectralField") -> "SpectralField":
        return self.with_coeffs(self.coeffs - other.coeffs)

    def __mul__(self, s: float) -> "SpectralField":
        return self.with_coeffs(self.coeffs * s)

    __rmul__ = __mul__

    def __neg__(self) -> "SpectralField":
        return self.with_coeffs(-self.coeffs)


def _symmetrize(c: np.ndarray, grid: Grid) -> np.ndarray:
    """Project onto conjugate-symmetric coefficient arrays (real fields)."""
    flipped = c.conj()
    for ax in range(1, grid.dim + 1):
        flipped = np.roll(np.flip(flipped, axis=ax), 1, axis=ax)
    return 0.5 * (c + flipped)


def stack(fields: Sequence[SpectralField]) -> SpectralField:
    return SpectralField(fields[0].grid, np.concatenate([f.coeffs for f in fields]))


def l2_norm(f: SpectralField) -> float:
    return float(np.sqrt(np.sum(np.abs(f.coeffs) ** 2)))


def sobolev_norm(f: SpectralField, r) -> float:
    """``sqrt(sum_k (1 + |k|^2)^r |f_k|^2)`` summed over channels."""
    w = (1.0 + f.grid.k2) ** float(int(r) if isinstance(r, SobolevIndex) else r)
    return float(np.sqrt(np.sum(w * np.abs(f.coeffs) ** 2)))


def derivative(f: SpectralField, axis: int, order: int = 1) -> SpectralField:
    k = f.grid.kvec[axis]
    return f.with_coeffs(f.coeffs * (1j * k) ** order)


def divergence(f: SpectralField) -> SpectralField:
    g = f.grid
    c = sum(1j * g.kvec[a] * f.coeffs[a] for a in range(g.dim))
    return SpectralField(g, c[None])


def curl2d(f: SpectralField) -> SpectralField:
    """Scalar vorticity ``d_x f_y - d_y f_x`` of a 2D vector field."""
    g = f.grid
    kx, ky = g.kvec
    return SpectralField(g, (1j * kx * f.coeffs[1] - 1j * ky * f.coeffs[0])[None])


def leray_project(f: SpectralField) -> SpectralField:
    g = f.grid
    if f.channels != g.dim or g.dim < 2:
        raise ValueError("leray_project needs a vector field with dim >= 2 channels")
    k2 = g.k2.copy()
    k2.flat[0] = 1.0
    kdotf = sum(g.kvec[a] * f.coeffs[a] for a in range(g.dim))
    out = np.stack([f.coeffs[a] - g.kvec[a] * kdotf / k2 for a in range(g.dim)])
    return f.with_coeffs(out)


def dealias(f: SpectralField) -> SpectralField:
    return f.with_coeffs(f.coeffs * f.grid.dealias_mask)


def product(f: SpectralField, g: SpectralField, dealiased: bool = True) -> SpectralField:
    """Pointwise product of scalar ``f`` with each channel of ``g``."""
    if dealiased:
        f, g = dealias(f), dealias(g)
    out = SpectralField.from_values(f.grid, f.values()[0] * g.values())
    return dealias(out) if dealiased else out


def evaluate_at(f: SpectralField, points: np.ndarray, chunk: int = 4096) -> np.ndarray:
    """Evaluate the trigonometric interpolant of a 2D field at arbitrary points.

    Returns an array of shape ``(channels, npoints)``.
    """
    g = f.grid
    if g.dim != 2:
        raise NotImplementedError("evaluate_at supports 2D grids only")
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    # Hermitian symmetry: keep ky >= 0 with doubled weight, and drop modes that are zero in every channel
    half = g.k1d >= 0
    c = f.coeffs.reshape((f.channels,) + g.shape)[:, :, half] * np.where(g.k1d[half] > 0, 2.0, 1.0)
    mag = np.abs(c).max(axis=0)
    cutoff = 1e-18 * max(float(mag.max()), 1e-300)
    kx_keep = mag.max(axis=1) > cutoff
    ky_keep = mag.max(axis=0) > cutoff
    c = c[:, kx_keep][:, :, ky_keep]
    kx = g.k1d[kx_keep]
    ky = g.k1d[half][ky_keep]
    out = np.empty((f.channels, len(pts)))
    for s in range(0, len(pts), chunk):
        p = pts[s : s + chunk]
        ex = np.exp(1j * np.outer(p[:, 0] - g.lower, kx))
        ey = np.exp(1j * np.outer(p[:, 1] - g.lower, ky))
        for ch in range(f.channels):
            out[ch, s : s + chunk] = np.einsum("pa,pa->p", ex @ c[ch], ey).real
    return out


# ---------------------------------------------------------------------------
# snapshot I/O

_MAGIC = b"TRBF"
_VERSION = 1


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def snapshot_bytes(values: np.ndarray, dim: int) -> bytes:
    v = np.asarray(values, dtype="<f8")
    if v.ndim == dim:
        v = v[None]
    channels, n = v.shape[0], v.shape[1]
    if v.shape[1:] != (n,) * dim:
        raise ValueError("snapshot samples must be cubic")
    header = _MAGIC + struct.pack("<BBBI", _VERSION, dim, channels, n)
    return header + np.ascontiguousarray(v).tobytes()


def write_snapshot(path, f: SpectralField | np.ndarray, dim: int | None = None) -> None:
    """Write channel-major, row-major little-endian float64 samples in TRBF format."""
    if isinstance(f, SpectralField):
        atomic_write_bytes(path, snapshot_bytes(f.values(), f.grid.dim))
    else:
        atomic_write_bytes(path, snapshot_bytes(f, dim))


def parse_snapshot(data: bytes) -> np.ndarray:
    if data[:4] != _MAGIC:
        raise ValueError("not a TRBF snapshot (bad magic)")
    version, dim, channels, n = struct.unpack("<BBBI", data[4:11])
    if version != _VERSION:
        raise ValueError(f"unsupported TRBF version {version}")
    count = channels * n**dim
    body = np.frombuffer(data, dtype="<f8", count=count, offset=11)
    if len(data) != 11 + 8 * count:
        raise ValueError("TRBF payload size mismatch")
    return body.reshape((channels,) + (n,) * dim).astype(float)


def read_snapshot(path, length: float = 2 * np.pi, lower: float = 0.0) -> SpectralField:
    samples = parse_snapshot(Path(path).read_bytes())
    dim = samples.ndim - 1
    grid = Grid(dim, samples.shape[1], length, lower)
    return SpectralField.from_values(grid, samples)


def write_csv_samples(path, f: SpectralField) -> None:
    """Index columns then one value column per channel."""
    vals = f.values()
    idx = np.indices(f.grid.shape).reshape(f.grid.dim, -1).T
    flat = vals.reshape(f.channels, -1).T
    names = [f"i{a}" for a in range(f.grid.dim)] + [f"c{c}" for c in range(f.channels)]
    lines = [",".join(names)]
    for ii, row in zip(idx, flat):
        lines.append(",".join([str(int(i)) for i in ii] + [repr(float(x)) for x in row]))
    atomic_write_text(path, "\n".join(lines) + "\n")
