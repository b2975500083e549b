"""Div-curl-normal boundary value problems on the disk and the Neumann-series fixed point.

The base operator ``S(f, g, b)`` returns ``w = grad q + perp_grad psi`` with
``div w = f``, ``curl w = g`` and ``w . n = b``. The fixed point

    U = S(div((I - a) U), 0, ((I - a) U) . n) + S(0, curl u0, 0)

is iterated directly; its limit satisfies ``div(aU) = 0``, ``curl U = curl u0``
and ``(aU) . n = 0``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .polar import DiskVector, PolarGrid, boundary_hs_norm, polar_hs_norm

__all__ = [
    "DivCurlData",
    "MatrixField",
    "FixedPointReport",
    "IncompatibleData",
    "NoContraction",
    "NeumannConditionWarning",
    "solve_base",
    "estimate_operator_norm",
    "neumann_fixed_point",
    "correction_map",
    "system_residuals",
    "dense_oracle",
    "PushforwardReport",
    "pushforward_check",
    "transpose_identity_residual",
    "ConvergenceRow",
    "data_convergence_check",
    "random_smooth_matrix_field",
    "curl_nodes_radii",
]


class IncompatibleData(ValueError):
    pass


class NoContraction(RuntimeError):
    pass


class NeumannConditionWarning(UserWarning):
    pass


def curl_nodes_radii(g: PolarGrid) -> np.ndarray:
    return g.rf[: g.n_r]


@dataclass(frozen=True)
class DivCurlData:
    """Divergence at centers, curl at curl nodes, normal trace on the boundary circle."""

    grid: PolarGrid
    f: np.ndarray
    g: np.ndarray
    b: np.ndarray

    def flux_mismatch(self) -> float:
        gr = self.grid
        inside = float(np.sum(self.f * gr.cell_areas()))
        edge = float(np.sum(self.b) * gr.radius * gr.dtheta)
        return inside - edge

    def check(self, tol: float = 1e-8) -> None:
        gr = self.grid
        scale = max(float(np.sum(np.abs(self.f) * gr.cell_areas())), float(np.sum(np.abs(self.b)) * gr.dtheta), 1.0)
        if abs(self.flux_mismatch()) > tol * scale:
            raise IncompatibleData(f"incompatible data: flux mismatch {self.flux_mismatch():.3e}")

    def norm(self, r: int) -> float:
        gr = self.grid
        return (polar_hs_norm(self.f, gr.rc, gr, r - 1) + polar_hs_norm(self.g, curl_nodes_radii(gr), gr, r - 1)
                + boundary_hs_norm(self.b, r - 0.5, gr.radius))


def solve_base(data: DivCurlData, check: bool = True) -> DiskVector:
    """The Hodge construction ``S(f, g, b) = grad q + perp_grad psi``."""
    if check:
        data.check()
    gr = data.grid
    q = gr.solve_neumann(data.f, data.b)
    pr, pt = gr.grad(q, data.b)
    psi = gr.solve_dirichlet(data.g)
    sr, st = gr.perp_grad(psi)
    return DiskVector(gr, pr + sr, pt + st)


# ---------------------------------------------------------------------------
# matrix fields


def _polar_basis(theta: np.ndarray) -> np.ndarray:
    """Columns e_r, e_theta, shape (n_theta, 2, 2)."""
    c, s = np.cos(theta), np.sin(theta)
    return np.stack([np.stack([c, s], -1), np.stack([-s, c], -1)], -1)


@dataclass(frozen=True)
class MatrixField:
    """A 2x2 matrix field at faces 1..n_r and centers, stored in the polar basis.

    ``faces[i, j] = Q^T a Q`` at face ``i``, angle ``j``; likewise ``centers``.
    """

    grid: PolarGrid
    faces: np.ndarray
    centers: np.ndarray
    cart_faces: np.ndarray = field(repr=False)
    cart_centers: np.ndarray = field(repr=False)

    @classmethod
    def from_function(cls, grid: PolarGrid, func) -> "MatrixField":
        """``func(points[..., 2]) -> matrices[..., 2, 2]`` in Cartesian components."""
        Q = _polar_basis(grid.theta)[None]
        cf = np.asarray(func(grid.face_points()), dtype=float)
        cc = np.asarray(func(grid.center_points()), dtype=float)
        to_polar = lambda m: np.einsum("...ki,...kl,...lj->...ij", Q, m, Q)  # noqa: E731
        return cls(grid, to_polar(cf), to_polar(cc), cf, cc)

    @classmethod
    def identity(cls, grid: PolarGrid) -> "MatrixField":
        return cls.from_function(grid, lambda p: np.broadcast_to(np.eye(2), p.shape[:-1] + (2, 2)).copy())

    @classmethod
    def from_diffeo(cls, grid: PolarGrid, dmap) -> "MatrixField":
        return cls.from_function(grid, dmap.a_at)

    def apply(self, U: DiskVector) -> DiskVector:
        """``aU`` in the staggered layout (radial part on faces, angular part on centers)."""
        ur_f, ut_f = U.ur, U.ut_on_faces()
        ur_c, ut_c = U.ur_on_centers(), U.ut
        F, C = self.faces, self.centers
        return DiskVector(U.grid, F[..., 0, 0] * ur_f + F[..., 0, 1] * ut_f, C[..., 1, 0] * ur_c + C[..., 1, 1] * ut_c)

    def sup_distance_to_identity(self) -> float:
        d = np.concatenate([(self.cart_faces - np.eye(2)).reshape(-1, 2, 2), (self.cart_centers - np.eye(2)).reshape(-1, 2, 2)])
        return float(np.linalg.norm(d, ord=2, axis=(1, 2)).max())

    def hs_distance_to_identity(self, r: int) -> float:
        """``||a - I||_{H^r}`` from the Cartesian entries at the cell centers."""
        g = self.grid
        d = self.cart_centers - np.eye(2)
        return float(np.sqrt(sum(polar_hs_norm(d[..., i, j], g.rc, g, r) ** 2 for i in range(2) for j in range(2))))

    @property
    def is_identity(self) -> bool:
        return bool(np.all(self.cart_faces == np.eye(2)) and np.all(self.cart_centers == np.eye(2)))


def random_smooth_matrix_field(grid: PolarGrid, delta: float, seed: int = 0, degree: int = 2) -> MatrixField:
    """``I + delta A`` with ``A`` a random polynomial matrix field of sup norm about one."""
    rng = np.random.default_rng(seed)
    powers = [(i, j) for i in range(degree + 1) for j in range(degree + 1 - i)]
    coef = rng.standard_normal((2, 2, len(powers)))
    probe = np.random.default_rng(seed + 1).uniform(-0.7, 0.7, (256, 2))

    def raw(p):
        x, y = p[..., 0], p[..., 1]
        basis = np.stack([x**i * y**j for i, j in powers], axis=-1)
        return np.einsum("...k,abk->...ab", basis, coef)

    scale = float(np.abs(raw(probe)).max())
    return MatrixField.from_function(grid, lambda p: np.eye(2) + delta * raw(p) / scale)


# ---------------------------------------------------------------------------
# fixed point


def correction_map(a: MatrixField, U: DiskVector) -> DiskVector:
    """``S(div Z, 0, Z . n)`` for ``Z = (I - a) U``: the gradient part of ``Z``."""
    g = U.grid
    aU = a.apply(U)
    Z = DiskVector(g, U.ur - aU.ur, U.ut - aU.ut)
    b = Z.normal_trace()
    q = g.solve_neumann(Z.div(), b)
    return DiskVector(g, *g.grad(q, b))


def _l2(v: DiskVector) -> float:
    g = v.grid
    w = g.cell_areas()
    return float(np.sqrt(np.sum(w * v.ur**2) + np.sum(w * v.ut**2)))


@dataclass(frozen=True)
class FixedPointReport:
    iterates: int
    ratios: tuple[float, ...]
    updates: tuple[float, ...]
    q_bound: float
    K: float
    ia_sup: float
    final_residual: float
    S_norm: float = float("nan")
    U_norm: float = float("nan")
    curl_norm: float = float("nan")

    @property
    def observed_ratio(self) -> float:
        """Largest measured contraction ratio of successive updates."""
        tail = [r for r in self.ratios if np.isfinite(r)]
        return float(max(tail)) if tail else 0.0

    @property
    def bound_holds(self) -> bool:
        return self.U_norm <= 2 * self.S_norm * self.curl_norm


def spectral_radius(a: MatrixField, iters: int = 40, seed: int = 0) -> float:
    """Power-iteration estimate of the spectral radius of the correction map."""
    g = a.grid
    if a.is_identity:
        return 0.0
    rng = np.random.default_rng(seed)
    v = DiskVector(g, rng.standard_normal((g.n_r, g.n_theta)), rng.standard_normal((g.n_r, g.n_theta)))
    v = v * (1.0 / _l2(v))
    est = 0.0
    prev = None
    for _ in range(iters):
        w = correction_map(a, v)
        n = _l2(w)
        if n == 0:
            return 0.0
        est = n
        v = w * (1.0 / n)
        if prev is not None and abs(est - prev) <= 1e-6 * est:
            break
        prev = est
    return float(est)


def neumann_fixed_point(a: MatrixField, u0: DiskVector, r: int = 4, tol: float = 1e-10, max_iter: int = 200,
                        S_norm: float | None = None) -> tuple[DiskVector, FixedPointReport]:
    """Iterate ``U <- S(div((I-a)U), 0, ((I-a)U).n) + S(0, curl u0, 0)`` to its limit."""
    g = u0.grid
    q = spectral_radius(a)
    ia = a.sup_distance_to_identity()
    if q >= 0.5:
        warnings.warn(f"measured contraction bound {q:.3f} is not below 1/2", NeumannConditionWarning, stacklevel=2)
    curl0 = u0.curl()
    base = DiskVector(g, *g.perp_grad(g.solve_dirichlet(curl0)))
    scale = max(_l2(base), 1e-300)
    U = base
    updates, ratios = [], []
    streak = 0
    it = 0
    for it in range(1, max_iter + 1):
        new = correction_map(a, U) + base
        upd = _l2(new - U)
        U = new
        ratios.append(upd / updates[-1] if updates and updates[-1] > 0 else float("nan"))
        updates.append(upd)
        if upd <= tol * scale or upd == 0:
            break
        streak = streak + 1 if len(ratios) > 1 and ratios[-1] > 0.95 else 0
        if streak >= 5:
            raise NoContraction(f"no contraction: update ratio above 0.95 for 5 iterations (last {ratios[-1]:.3f})")
    res = system_residuals(U, a, u0)
    curl_norm = polar_hs_norm(curl0, curl_nodes_radii(g), g, r - 1)
    if S_norm is None:
        S_norm = estimate_operator_norm(g, r, extra=[DivCurlData(g, np.zeros_like(curl0), curl0, np.zeros(g.n_theta))])
    rep = FixedPointReport(it, tuple(ratios), tuple(updates), q, q / ia if ia > 0 else 0.0, ia, max(res.values()),
                           S_norm, U.hs_norm(r), curl_norm)
    return U, rep


def system_residuals(U: DiskVector, a: MatrixField, u0: DiskVector) -> dict[str, float]:
    aU = a.apply(U)
    return {
        "div": float(np.abs(aU.div()).max()),
        "curl": float(np.abs(U.curl() - u0.curl())[1:].max(initial=0.0)),
        "curl_origin": float(abs(np.mean(U.curl()[0]) - np.mean(u0.curl()[0]))),
        "normal": float(np.abs(aU.normal_trace()).max()),
    }


def estimate_operator_norm(g: PolarGrid, r: int = 4, trials: int = 12, seed: int = 0, extra=()) -> float:
    """Largest observed ``||S(f,g,b)||_{H^r} / ||(f,g,b)||`` over random smooth compatible data."""
    rng = np.random.default_rng(seed)
    cp = g.center_points()
    kp = np.vstack([np.zeros((1, g.n_theta, 2)), g.face_points()[: g.n_r - 1]])
    best = 0.0
    datasets = list(extra)
    for _ in range(trials):
        cf, cg = rng.standard_normal(6), rng.standard_normal(6)
        poly = lambda c, p: (c[0] + c[1] * p[..., 0] + c[2] * p[..., 1] + c[3] * p[..., 0] ** 2  # noqa: E731
                             + c[4] * p[..., 0] * p[..., 1] + c[5] * p[..., 1] ** 2)
        f = poly(cf, cp)
        gg = poly(cg, kp)
        m = np.arange(1, 4)
        bm = rng.standard_normal((2, 3))
        b = (bm[0] @ np.cos(np.outer(m, g.theta)) + bm[1] @ np.sin(np.outer(m, g.theta)))
        b = b + np.sum(f * g.cell_areas()) / (2 * np.pi * g.radius)
        datasets.append(DivCurlData(g, f, gg, b))
    for d in datasets:
        den = d.norm(r)
        if den > 0:
            best = max(best, solve_base(d, check=False).hs_norm(r) / den)
    return float(best)


def dense_oracle(a: MatrixField, u0: DiskVector) -> DiskVector:
    """Direct least-squares solve of ``div(aU) = 0, curl U = curl u0, (aU).n = 0`` assembled column by column."""
    g = u0.grid
    n = 2 * g.n_r * g.n_theta

    def rows(U: DiskVector) -> np.ndarray:
        aU = a.apply(U)
        c = U.curl()
        return np.concatenate([aU.div().ravel(), [np.mean(c[0])], c[1:].ravel(), aU.normal_trace()])

    zero = rows(DiskVector.zeros(g))
    cols = np.empty((len(zero), n))
    e = np.zeros(n)
    for k in range(n):
        e[k] = 1.0
        cols[:, k] = rows(DiskVector.from_flat(g, e)) - zero
        e[k] = 0.0
    c0 = u0.curl()
    rhs = np.concatenate([np.zeros(g.n_r * g.n_theta), [np.mean(c0[0])], c0[1:].ravel(), np.zeros(g.n_theta)])
    sol = scipy.linalg.lstsq(cols, rhs, lapack_driver="gelsy", check_finite=False)[0]
    return DiskVector.from_flat(g, sol)


# ---------------------------------------------------------------------------
# pushforward


def transpose_identity_residual(a: np.ndarray, U: np.ndarray, n: np.ndarray) -> float:
    """``max |(aU).n - U.(a^T n)|`` over stacked matrices and vectors."""
    lhs = np.einsum("...ij,...j,...i->...", a, U, n)
    rhs = np.einsum("...j,...ij,...i->...", U, a, n)
    return float(np.abs(lhs - rhs).max())


@dataclass(frozen=True)
class PushforwardReport:
    identity_residual: float
    div_max: float
    div_l2: float
    div_predicted_gap: float
    normal_max: float


def _cartesian_gradients(v: DiskVector) -> tuple[np.ndarray, np.ndarray]:
    """Cartesian components at centers and their Cartesian gradients ``G[..., i, j] = d_j v_i``."""
    g = v.grid
    cart = v.cartesian_on_centers()
    rc = g.rc[:, None]
    t = g.theta[None, :]
    d_r = np.gradient(cart, g.rc, axis=0, edge_order=2)
    d_t = np.stack([g.d_theta(cart[..., i]) for i in range(2)], axis=-1)
    dx = np.cos(t)[..., None] * d_r - (np.sin(t) / rc)[..., None] * d_t
    dy = np.sin(t)[..., None] * d_r + (np.cos(t) / rc)[..., None] * d_t
    return cart, np.stack([dx, dy], axis=-1)


def _boundary_extrapolate(a: np.ndarray, rc: np.ndarray, radius: float, k: int = 4) -> np.ndarray:
    """Polynomial extrapolation of center values to the boundary from the outer ``k`` rows."""
    x = rc[-k:] - radius
    w = np.array([np.prod([(0 - x[m]) / (x[j] - x[m]) for m in range(k) if m != j]) for j in range(k)])
    return np.tensordot(w, a[-k:], axes=1)


def pushforward_check(U: DiskVector, a: MatrixField, dmap, approx_phi) -> PushforwardReport:
    """Audit ``v = U o eta^{-1}`` on ``Q``: divergence inside and ``v . N`` on the boundary.

    ``approx_phi`` evaluates the level-set function of ``Q``; its gradient gives
    the normal ``N`` at ``eta`` of the boundary nodes.
    """
    g = U.grid
    cart, G = _cartesian_gradients(U)
    A = a.cart_centers
    # div_y v at y = eta(x) is sum_ij a_ji d_j U_i
    div_v = np.einsum("...ji,...ij->...", A, G)
    # column divergence of a, the term separating div v from div(aU)
    dA = _matrix_divergence(A, g)
    gap = -np.einsum("...k,...k->...", cart, dA)
    interior = slice(2, g.n_r - 2)
    w = g.cell_areas()[interior]
    div_l2 = float(np.sqrt(np.sum(w * div_v[interior] ** 2)))
    # boundary: v . N with N from the level set of Q at eta(x)
    xb = g.boundary_points()
    ur_b = U.ur[-1]
    ut_b = _boundary_extrapolate(U.ut, g.rc, g.radius)
    t = g.theta
    vb = np.stack([ur_b * np.cos(t) - ut_b * np.sin(t), ur_b * np.sin(t) + ut_b * np.cos(t)], axis=-1)
    yb = dmap(xb)
    hstep = 1e-5
    grad = np.stack([(approx_phi(yb + hstep * e) - approx_phi(yb - hstep * e)) / (2 * hstep) for e in np.eye(2)], -1)
    N = -grad / np.linalg.norm(grad, axis=-1, keepdims=True)
    normal = float(np.abs(np.sum(vb * N, axis=-1)).max())
    ab = dmap.a_at(xb)
    nb = g.boundary_normals()
    ident = transpose_identity_residual(ab, vb, nb)
    return PushforwardReport(ident, float(np.abs(div_v[interior]).max()), div_l2,
                             float(np.abs((div_v - gap)[interior]).max()), normal)


def _matrix_divergence(A: np.ndarray, g: PolarGrid) -> np.ndarray:
    """``(d_j A_jk)_k`` at centers for a Cartesian matrix field sampled at centers."""
    rc = g.rc[:, None]
    t = g.theta[None, :]
    d_r = np.gradient(A, g.rc, axis=0, edge_order=2)
    d_t = np.stack([np.stack([g.d_theta(A[..., i, j]) for j in range(2)], -1) for i in range(2)], -2)
    dx = np.cos(t)[..., None, None] * d_r - (np.sin(t) / rc)[..., None, None] * d_t
    dy = np.sin(t)[..., None, None] * d_r + (np.cos(t) / rc)[..., None, None] * d_t
    return dx[..., 0, :] + dy[..., 1, :]


# ---------------------------------------------------------------------------
# convergence in the data


@dataclass(frozen=True)
class ConvergenceRow:
    epsilon: float
    ia_norm: float
    diff_norm: float
    U_norm: float
    bound: float


def data_convergence_check(u0: DiskVector, family, r: int = 4, S_norm: float | None = None) -> list[ConvergenceRow]:
    """``||U(eps) - u0||_{H^r}`` against ``||I - a(eps)||_{H^r}`` along a family ``[(eps, MatrixField)]``."""
    g = u0.grid
    if S_norm is None:
        S_norm = estimate_operator_norm(g, r)
    rows = []
    for eps, a in family:
        U, rep = neumann_fixed_point(a, u0, r, S_norm=S_norm)
        ia = a.hs_distance_to_identity(r)
        rows.append(ConvergenceRow(float(eps), ia, (U - u0).hs_norm(r), rep.U_norm, 2 * S_norm * ia * rep.U_norm))
    return rows
