"""Incompressible Euler on the 2D torus: Picard iteration, the shrinking radius schedule and a priori monitors.

The evolution works on half-spectrum coefficient arrays (``rfft2`` layout,
normalized like :class:`~turbolab.field_core.SpectralField`) so trajectories
stay compact. The nonlinear term is always computed pseudo-spectrally with the
2/3 rule and projected with Leray; there is no viscosity.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.integrate import solve_ivp

from .analytic_norms import (
    ENTIRE,
    AnalyticNormParams,
    InsufficientDecayData,
    TruncationWarning,
    compositions,
    estimate_radius,
    norm_X,
    norm_Xtilde,
    norm_Y,
    norm_Ytilde,
    _log_cij,
    _multinomial,
)
from .divcurl import NoContraction
from .field_core import Grid, SpectralField, l2_norm, sobolev_norm

__all__ = [
    "TauSchedule",
    "tau_schedule",
    "EvolutionTrace",
    "TRACE_COLUMNS",
    "PicardState",
    "Trajectory",
    "CFLViolation",
    "NoContraction",
    "EVOLUTION_PARAMS",
    "picard_evolve",
    "direct_evolve",
    "make_trace",
    "SobolevMonitor",
    "monitor_sobolev",
    "sobolev_fit",
    "fit_c0",
    "C0NotIdentifiable",
    "RadiusMonitor",
    "monitor_radius",
    "fit_c1",
    "apriori_ledger",
    "commutator_check",
    "pressure_check",
    "pressure_field",
    "transport_orthogonality",
    "uniqueness_stability",
    "random_analytic",
    "taylor_green",
    "energy",
    "energy_drift",
    "hr_series",
    "richardson_ratio",
    "cfl_limit",
]

# small (eps, eps_bar) keep ||u0||_X well below ||u0||_{H^r}, so the envelope G(0) = ||u0||_{H^r} is meaningful
EVOLUTION_PARAMS = AnalyticNormParams(r=4, tau=0.25, eps_bar=0.05, eps=0.05, max_order=24)

TRACE_COLUMNS = ("t", "h_r", "x_tilde", "y_term", "energy", "radius", "picard_n")


class CFLViolation(ValueError):
    pass


class C0NotIdentifiable(ValueError):
    """The Sobolev norm never grows on the pilot horizon (e.g. steady data)."""


# ---------------------------------------------------------------------------
# radius schedule


@dataclass(frozen=True)
class TauSchedule:
    """``tau' = -2 C1 tau G(t)``, ``G(t) = ||u0|| exp(2 C0 t ||u0||)``, in closed form."""

    tau0: float
    C0: float
    C1: float
    u0_norm: float
    samples: np.ndarray = field(repr=False)
    validation_error: float = 0.0

    @property
    def T0(self) -> float:
        return 1.0 / (8.0 * self.C0 * self.u0_norm)

    def G(self, t) -> np.ndarray:
        return self.u0_norm * np.exp(2 * self.C0 * np.asarray(t, dtype=float) * self.u0_norm)

    def tau(self, t) -> np.ndarray:
        """Closed form, floored at the smallest normal float so it stays positive far beyond ``T0``."""
        t = np.asarray(t, dtype=float)
        val = self.tau0 * np.exp(-(self.C1 / self.C0) * np.expm1(2 * self.C0 * t * self.u0_norm))
        return np.maximum(val, np.finfo(float).tiny)

    def tau_dot(self, t) -> np.ndarray:
        return -2 * self.C1 * self.tau(t) * self.G(t)


def tau_schedule(tau0: float, C0: float, C1: float, u0_norm: float, t_end: float,
                 n_samples: int = 65) -> TauSchedule:
    """Closed-form radius schedule, cross-checked against an adaptive integration of the ODE."""
    for name, v in (("tau0", tau0), ("C0", C0), ("C1", C1), ("u0_norm", u0_norm), ("t_end", t_end)):
        if not v > 0:
            raise ValueError(f"{name} must be positive")
    ts = np.linspace(0.0, t_end, n_samples)
    sched = TauSchedule(float(tau0), float(C0), float(C1), float(u0_norm), np.empty((0, 2)))
    closed = sched.tau(ts)

    # integrate log(tau): the same ODE, but relative errors stay meaningful when tau underflows
    def rhs(t, y):
        return -2 * C1 * sched.G(t)

    sol = solve_ivp(rhs, (0.0, t_end), [math.log(tau0)], method="DOP853", t_eval=ts, rtol=1e-13, atol=1e-13)
    log_closed = math.log(tau0) - (C1 / C0) * np.expm1(2 * C0 * ts * u0_norm)
    with np.errstate(over="ignore"):
        err = float(np.max(np.abs(np.expm1(sol.y[0] - log_closed))))
    return TauSchedule(sched.tau0, sched.C0, sched.C1, sched.u0_norm, np.column_stack([ts, closed]), err)


# ---------------------------------------------------------------------------
# spectral kernel on half-spectrum arrays


class _Kernel:
    """Dealiased, Leray-projected advection ``-P (a . grad) w`` on rfft2 arrays."""

    def __init__(self, grid: Grid):
        if grid.dim != 2:
            raise NotImplementedError("evolution runs on the 2D torus")
        n = grid.n
        self.grid = grid
        self.n = n
        scale = 2 * np.pi / grid.length
        ix = np.fft.fftfreq(n, 1.0 / n)
        iy = np.fft.rfftfreq(n, 1.0 / n)
        self.kx = (scale * ix)[:, None] * np.ones(len(iy))[None, :]
        self.ky = np.ones(n)[:, None] * (scale * iy)[None, :]
        self.k2 = self.kx**2 + self.ky**2
        keep = (np.abs(ix) <= n // 3)[:, None] & (np.abs(iy) <= n // 3)[None, :]
        self.mask = keep.astype(float)
        k2 = self.k2.copy()
        k2[0, 0] = 1.0
        self.k2safe = k2

    def to_values(self, c: np.ndarray) -> np.ndarray:
        return np.fft.irfft2(c * self.n**2, s=(self.n, self.n), axes=(-2, -1))

    def to_coeffs(self, v: np.ndarray) -> np.ndarray:
        return np.fft.rfft2(v, axes=(-2, -1)) / self.n**2

    def project(self, c: np.ndarray) -> np.ndarray:
        kd = (self.kx * c[0] + self.ky * c[1]) / self.k2safe
        return np.stack([c[0] - self.kx * kd, c[1] - self.ky * kd])

    def advect(self, a: np.ndarray, w: np.ndarray) -> np.ndarray:
        """``-P D[(a . grad) w]`` with ``D`` the 2/3 mask; ``a``, ``w`` are coefficient arrays."""
        av = self.to_values(a)
        gx = self.to_values(1j * self.kx * w)
        gy = self.to_values(1j * self.ky * w)
        prod = av[0] * gx + av[1] * gy
        return -self.project(self.to_coeffs(prod) * self.mask)

    def field(self, c: np.ndarray) -> SpectralField:
        return SpectralField.from_values(self.grid, self.to_values(c))

    def half(self, f: SpectralField) -> np.ndarray:
        return np.ascontiguousarray(f.coeffs[..., : self.n // 2 + 1])


def cfl_limit(u: SpectralField, courant: float = 0.5) -> float:
    """Largest admissible step ``courant * h / ||u||_inf`` (inf for a zero field)."""
    umax = float(np.abs(u.values()).max())
    return math.inf if umax == 0 else courant * u.grid.h / umax


def _check_cfl(u0: SpectralField, dt: float) -> None:
    lim = cfl_limit(u0)
    if dt > lim:
        raise CFLViolation(f"CFL violation: dt = {dt:.3g} exceeds 0.5 h / max|u0| = {lim:.3g}")


def _check_data(u0: SpectralField, tol: float = 1e-10) -> None:
    if u0.channels != 2 or u0.grid.dim != 2:
        raise ValueError("initial data must be a 2D vector field")
    g = u0.grid
    div = np.sqrt(np.sum(np.abs(sum(1j * g.kvec[a] * u0.coeffs[a] for a in range(2))) ** 2))
    scale = max(sobolev_norm(u0, 1), 1e-300)
    if div > tol * scale:
        raise ValueError(f"initial data not divergence-free (residual {div:.2e})")
    if np.abs(u0.coeffs[:, 0, 0]).max() > tol * scale:
        raise ValueError("initial data must have zero mean")


def _step_count(t_end: float, dt: float) -> int:
    n = int(round(t_end / dt))
    if n < 1 or abs(n * dt - t_end) > 1e-9 * max(t_end, 1.0):
        raise ValueError(f"t_end = {t_end} is not a whole number of steps dt = {dt}")
    return n


# ---------------------------------------------------------------------------
# trajectories


@dataclass
class Trajectory:
    """Half-spectrum states and time derivatives on a uniform time grid."""

    grid: Grid
    times: np.ndarray
    states: np.ndarray = field(repr=False)  # (steps + 1, 2, n, n//2 + 1)
    rates: np.ndarray = field(repr=False)

    @cached_property
    def _kernel(self) -> _Kernel:
        return _Kernel(self.grid)

    def __len__(self) -> int:
        return len(self.times)

    def field(self, k: int) -> SpectralField:
        return self._kernel.field(self.states[k])

    @property
    def final(self) -> SpectralField:
        return self.field(len(self.times) - 1)

    def midpoint(self, k: int) -> np.ndarray:
        """Cubic Hermite value at ``t_k + dt/2``."""
        dt = self.times[k + 1] - self.times[k]
        return 0.5 * (self.states[k] + self.states[k + 1]) + dt / 8 * (self.rates[k] - self.rates[k + 1])


def _rk4_linear(kernel: _Kernel, w0: np.ndarray, adv: Trajectory | None, times: np.ndarray) -> Trajectory:
    """Classical RK4 for ``w' = -P (a . grad) w`` with ``a`` a stored trajectory (Hermite in time)."""
    steps = len(times) - 1
    states = np.empty((steps + 1,) + w0.shape, dtype=complex)
    rates = np.empty_like(states)
    states[0] = w0
    a0 = w0 if adv is None else None
    for k in range(steps):
        dt = times[k + 1] - times[k]
        if adv is None:
            a_lo = a_mid = a_hi = a0
        else:
            a_lo, a_mid, a_hi = adv.states[k], adv.midpoint(k), adv.states[k + 1]
        w = states[k]
        k1 = kernel.advect(a_lo, w)
        k2 = kernel.advect(a_mid, w + 0.5 * dt * k1)
        k3 = kernel.advect(a_mid, w + 0.5 * dt * k2)
        k4 = kernel.advect(a_hi, w + dt * k3)
        rates[k] = k1
        states[k + 1] = w + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    a_end = a0 if adv is None else adv.states[-1]
    rates[-1] = kernel.advect(a_end, states[-1])
    return Trajectory(kernel.grid, times, states, rates)


def direct_evolve(u0: SpectralField, dt: float, t_end: float, check_cfl: bool = True) -> Trajectory:
    """Reference solver: RK4 on ``u' = -P (u . grad) u`` with the stage values themselves."""
    if check_cfl:
        _check_cfl(u0, dt)
    kernel = _Kernel(u0.grid)
    steps = _step_count(t_end, dt)
    times = dt * np.arange(steps + 1)
    states = np.empty((steps + 1, 2, kernel.n, kernel.n // 2 + 1), dtype=complex)
    rates = np.empty_like(states)
    states[0] = kernel.half(u0)
    f = lambda w: kernel.advect(w, w)  # noqa: E731
    for k in range(steps):
        w = states[k]
        k1 = f(w)
        k2 = f(w + 0.5 * dt * k1)
        k3 = f(w + 0.5 * dt * k2)
        k4 = f(w + dt * k3)
        rates[k] = k1
        states[k + 1] = w + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    rates[-1] = f(states[-1])
    return Trajectory(u0.grid, times, states, rates)


# ---------------------------------------------------------------------------
# Picard iteration


@dataclass(frozen=True)
class PicardState:
    """One Picard iterate: its final-time field and sup-in-time distance to the previous iterate."""

    n: int
    u_final: SpectralField = field(repr=False)
    distance: float
    ratio: float
    contracting: bool


def _sample_indices(steps: int, count: int) -> np.ndarray:
    return np.unique(np.rint(np.linspace(0, steps, count)).astype(int))


def _trajectory_distance(kernel: _Kernel, a: Trajectory, b: Trajectory, idx, p: AnalyticNormParams,
                         schedule: TauSchedule) -> float:
    best = 0.0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", TruncationWarning)
        for k in idx:
            d = kernel.field(a.states[k] - b.states[k])
            best = max(best, norm_Xtilde(d, p.with_tau(float(schedule.tau(a.times[k])))))
    return best


def picard_evolve(u0: SpectralField, p: AnalyticNormParams, schedule: TauSchedule, dt: float, n_max: int = 30,
                  t_end: float | None = None, tol: float = 1e-9, samples: int = 16,
                  stall: int = 3) -> tuple[Trajectory, list[PicardState]]:
    """Solve ``u_{n+1}' + P(u_n . grad u_{n+1}) = 0`` repeatedly, starting from ``u_0(t) = u0``.

    Distances between iterates are the sup over ``samples`` times of the
    ``X~(tau(t))`` norm. Stops once the distance is at most ``tol``. Raises
    :class:`NoContraction` when distances fail to decrease ``stall`` times in
    a row and :class:`CFLViolation` when ``dt > 0.5 h / max|u0|``.
    """
    _check_data(u0)
    _check_cfl(u0, dt)
    t_end = schedule.T0 if t_end is None else t_end
    kernel = _Kernel(u0.grid)
    steps = _step_count(t_end, dt)
    times = dt * np.arange(steps + 1)
    idx = _sample_indices(steps, samples)
    w0 = kernel.half(u0)
    if not np.any(w0):
        traj = Trajectory(u0.grid, times, np.zeros((steps + 1,) + w0.shape, complex),
                          np.zeros((steps + 1,) + w0.shape, complex))
        return traj, [PicardState(1, u0, 0.0, math.nan, False)]
    prev = _rk4_linear(kernel, w0, None, times)  # u_1 transported by the constant-in-time u_0
    history: list[PicardState] = []
    worse = 0
    for n in range(2, n_max + 2):
        cur = _rk4_linear(kernel, w0, prev, times)
        d = _trajectory_distance(kernel, cur, prev, idx, p, schedule)
        last = history[-1].distance if history else math.nan
        ratio = d / last if history and last > 0 else math.nan
        contracting = bool(history) and ratio < 1 and (len(history) < 2 or history[-1].ratio < 1)
        history.append(PicardState(n, kernel.field(cur.states[-1]), d, ratio, contracting))
        prev = cur
        if d <= tol:
            break
        worse = worse + 1 if history and not ratio < 1 else 0
        if worse >= stall:
            raise NoContraction(f"no contraction: Picard distances did not decrease for {stall} iterations")
    return prev, history


# ---------------------------------------------------------------------------
# traces


def energy(u: SpectralField) -> float:
    """``(1/2) mean |u|^2``."""
    return 0.5 * l2_norm(u) ** 2


def _radius(u: SpectralField) -> float:
    try:
        return estimate_radius(u)
    except InsufficientDecayData:
        return ENTIRE


@dataclass(frozen=True)
class EvolutionTrace:
    t: np.ndarray
    h_r: np.ndarray
    x_tilde: np.ndarray
    y_term: np.ndarray
    energy: np.ndarray
    radius: np.ndarray
    picard_n: np.ndarray

    def __post_init__(self):
        if len(self.t) > 1 and np.any(np.diff(self.t) <= 0):
            raise ValueError("trace times must be strictly increasing")
        if not np.all(np.isfinite(self.energy)):
            raise ValueError("trace energy must be finite")

    def __len__(self) -> int:
        return len(self.t)

    def rows(self) -> list[tuple]:
        return list(zip(*(getattr(self, c) for c in TRACE_COLUMNS)))


def make_trace(traj: Trajectory, p: AnalyticNormParams, schedule: TauSchedule | None = None,
               picard_n: int = 0, stride: int = 1) -> EvolutionTrace:
    """Per-step records of the a priori cascade along a trajectory.

    ``y_term`` is ``||u||_{Y(tau(t))}``; with no schedule ``tau`` stays at ``p.tau``.
    """
    idx = np.arange(0, len(traj), stride)
    if idx[-1] != len(traj) - 1:
        idx = np.r_[idx, len(traj) - 1]
    cols = {c: [] for c in TRACE_COLUMNS}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", TruncationWarning)
        for k in idx:
            t = float(traj.times[k])
            u = traj.field(k)
            pt = p.with_tau(float(schedule.tau(t))) if schedule is not None else p
            cols["t"].append(t)
            cols["h_r"].append(sobolev_norm(u, p.r))
            cols["x_tilde"].append(norm_Xtilde(u, pt))
            cols["y_term"].append(norm_Y(u, pt))
            cols["energy"].append(energy(u))
            cols["radius"].append(_radius(u))
            cols["picard_n"].append(picard_n)
    return EvolutionTrace(**{c: np.asarray(v, dtype=int if c == "picard_n" else float) for c, v in cols.items()})


def energy_drift(trace: EvolutionTrace) -> float:
    e0 = trace.energy[0]
    return float(np.max(np.abs(trace.energy - e0)) / e0) if e0 > 0 else 0.0


# ---------------------------------------------------------------------------
# monitors


@dataclass(frozen=True)
class SobolevMonitor:
    C0: float
    quotients: np.ndarray = field(repr=False)
    horizon: float
    violations: list


def monitor_sobolev(trace: EvolutionTrace) -> SobolevMonitor:
    """Fit ``C0`` as the largest quotient ``(d/dt ||u||_{H^r}) / ||u||^2`` and audit the doubling bound."""
    return sobolev_fit(trace.t, trace.h_r)


def sobolev_fit(t: np.ndarray, h: np.ndarray) -> SobolevMonitor:
    if len(t) < 10:
        raise ValueError("need at least 10 trace samples")
    dt = np.diff(t)
    mid = 0.5 * (h[1:] + h[:-1])
    with np.errstate(divide="ignore", invalid="ignore"):
        q = np.where(mid > 0, np.diff(h) / dt / mid**2, 0.0)
    C0 = float(max(q.max(), 0.0))
    h0 = h[0]
    horizon = math.inf if C0 == 0 or h0 == 0 else 1.0 / (4 * C0 * h0)
    bad = [float(tk) for tk, v in zip(t, h) if tk <= horizon and v > 2 * h0]
    return SobolevMonitor(C0, q, horizon, bad)


def hr_series(traj: Trajectory, r: int) -> np.ndarray:
    """``||u(t_k)||_{H^r}`` for every stored state, straight from the half spectrum."""
    k = traj._kernel
    w = np.full(k.kx.shape[-1], 2.0)
    w[0] = 1.0
    w[-1] = 1.0
    weight = w * (1 + k.k2) ** r
    return np.sqrt(np.einsum("yx,tcyx->t", weight, np.abs(traj.states) ** 2))


def fit_c0(u0: SpectralField, r: int = 4, dt: float = 1.0, horizon: float | None = None,
           max_rounds: int = 8, max_steps: int = 4096) -> tuple[float, float]:
    """Self-consistent ``C0``: the quotient fit over exactly its own doubling horizon ``1/(4 C0 ||u0||)``.

    A pilot run is lengthened until its full-window fit closes the loop; the
    smallest window ``W`` whose fitted constant has doubling horizon ``<= W`` is
    then located on the stored samples. Returns ``(C0, W)``.
    """
    h0 = sobolev_norm(u0, r)
    if h0 == 0:
        raise C0NotIdentifiable("zero data: C0 cannot be fitted")
    H = horizon or 1.0 / (4 * h0)
    for _ in range(max_rounds):
        steps = max(64, int(math.ceil(H / dt)))
        if steps > max_steps:
            break
        traj = direct_evolve(u0, H / steps, H, check_cfl=False)
        t, h = traj.times, hr_series(traj, r)
        C0 = sobolev_fit(t, h).C0
        if C0 > 0 and 1.0 / (4 * C0 * h0) <= H:
            return _closing_window(t, h, h0)
        H *= 4
    raise C0NotIdentifiable("C0 not identifiable: the H^r norm does not grow enough on the pilot horizon")


def _closing_window(t: np.ndarray, h: np.ndarray, h0: float) -> tuple[float, float]:
    def closes(m: int) -> tuple[bool, float]:
        c = sobolev_fit(t[: m + 1], h[: m + 1]).C0
        return c > 0 and 1.0 / (4 * c * h0) <= t[m], c

    lo, hi = 9, len(t) - 1  # closes(hi) is known to hold
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if closes(mid)[0]:
            hi = mid
        else:
            lo = mid
    ok, c = closes(lo)
    m = lo if ok else hi
    return closes(m)[1], float(t[m])


@dataclass(frozen=True)
class RadiusMonitor:
    table: np.ndarray  # columns t, tau_scheduled, tau_measured
    flags: list
    envelope: np.ndarray  # ||u||_{X~(tau(t))} / G(t)

    @property
    def envelope_max(self) -> float:
        return float(self.envelope.max())


def monitor_radius(trace: EvolutionTrace, schedule: TauSchedule) -> RadiusMonitor:
    """Compare measured radii with the schedule and the ``X~`` norm with the envelope ``G``."""
    tau = schedule.tau(trace.t)
    table = np.column_stack([trace.t, tau, trace.radius])
    flags = [float(t) for t, s, m in table if m < s]
    return RadiusMonitor(table, flags, trace.x_tilde / schedule.G(trace.t))


def fit_c1(trace: EvolutionTrace, schedule: TauSchedule) -> float:
    """Smallest ``C1`` with ``dX/dt - (tau'/2) Y <= 2 C1 X ||u0||_{H^r}`` along the trace."""
    q = _ledger_lhs(trace, schedule) / (2 * _mid(trace.x_tilde) * schedule.u0_norm)
    return float(max(np.max(q), 0.0))


def apriori_ledger(trace: EvolutionTrace, schedule: TauSchedule, C1: float, tol: float = 1e-10) -> np.ndarray:
    """Per-step excess of the analytic a priori inequality (nonpositive where it holds)."""
    rhs = 2 * C1 * _mid(trace.x_tilde) * schedule.u0_norm
    return _ledger_lhs(trace, schedule) - rhs - tol


def _mid(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a[1:] + a[:-1])


def _ledger_lhs(trace: EvolutionTrace, schedule: TauSchedule) -> np.ndarray:
    tm = _mid(trace.t)
    return np.diff(trace.x_tilde) / np.diff(trace.t) - 0.5 * schedule.tau_dot(tm) * _mid(trace.y_term)


# ---------------------------------------------------------------------------
# commutator and pressure estimates


def _komatsu_weights(p: AnalyticNormParams) -> np.ndarray:
    """``sum_{i+j=s} c_ij`` for every order ``s`` (the torus system makes ``d^i T^j = d^s``)."""
    w = np.zeros(p.max_order + 1)
    for s in range(p.r, p.max_order + 1):
        w[s] = sum(math.exp(_log_cij(i, s - i, p, 0)) for i in range(s + 1))
    return w


def _dmono(kernel: _Kernel, c: np.ndarray, a: int, b: int) -> np.ndarray:
    return c * (1j * kernel.kx) ** a * (1j * kernel.ky) ** b


def _l2_half(c: np.ndarray) -> float:
    """L2 norm (normalized measure) of a real field given by its half spectrum."""
    w = np.full(c.shape[-1], 2.0)
    w[0] = 1.0
    if c.shape[-1] > 1 and (c.shape[-2] % 2 == 0):
        w[-1] = 1.0
    return float(np.sqrt(np.sum(w * np.abs(c) ** 2)))


def _advective(kernel: _Kernel, a: np.ndarray, w: np.ndarray) -> np.ndarray:
    """``D[(a . grad) w]`` without projection."""
    av = kernel.to_values(a)
    prod = av[0] * kernel.to_values(1j * kernel.kx * w) + av[1] * kernel.to_values(1j * kernel.ky * w)
    return kernel.to_coeffs(prod) * kernel.mask


def commutator_check(u: SpectralField, v: SpectralField, p: AnalyticNormParams) -> tuple[float, float, float]:
    """``sum c_ij ||S_ij(u, v)||`` against ``||v||_Y~ ||u||_X~ + ||v||_X~ ||u||_Y~``.

    ``S_ij(u, v) = d^i T^j ((u . grad) v) - u . grad d^i T^j v``; identical
    Komatsu entries are grouped by their multinomial multiplicity.
    """
    kernel = _Kernel(u.grid)
    uc = kernel.half(u) * kernel.mask
    vc = kernel.half(v) * kernel.mask
    adv = _advective(kernel, uc, vc)
    weights = _komatsu_weights(p)
    lhs = 0.0
    for s in range(p.r, p.max_order + 1):
        shell = 0.0
        for a, b in compositions(s, 2):
            S = _dmono(kernel, adv, a, b) - _advective(kernel, uc, _dmono(kernel, vc, a, b))
            shell += _multinomial((a, b)) * _l2_half(S)
        lhs += weights[s] * shell
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", TruncationWarning)
        rhs = norm_Ytilde(v, p) * norm_Xtilde(u, p) + norm_Xtilde(v, p) * norm_Ytilde(u, p)
    return float(lhs), float(rhs), float(lhs / rhs) if rhs > 0 else 0.0


def pressure_field(u: SpectralField, v: SpectralField) -> SpectralField:
    """Mean-zero ``p`` with ``-Lap p = d_i u_j d_j v_i`` (dealiased products)."""
    g = u.grid
    kernel = _Kernel(g)
    uc = kernel.half(u) * kernel.mask
    vc = kernel.half(v) * kernel.mask
    k = (kernel.kx, kernel.ky)
    rhs = 0.0
    for i in range(2):
        for j in range(2):
            rhs = rhs + kernel.to_values(1j * k[i] * uc[j]) * kernel.to_values(1j * k[j] * vc[i])
    rc = kernel.to_coeffs(rhs) * kernel.mask
    pc = rc / kernel.k2safe
    pc[0, 0] = 0.0
    return kernel.field(pc)


def pressure_check(u: SpectralField, v: SpectralField, p: AnalyticNormParams) -> tuple[float, float, float]:
    """``||grad p||_X`` against ``2 ||u||_X~ ||v||_X~`` (the torus has no boundary term of its own)."""
    pr = pressure_field(u, v)
    g = u.grid
    grad = SpectralField(g, np.concatenate([1j * g.kvec[a] * pr.coeffs for a in range(2)]))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", TruncationWarning)
        lhs = norm_X(grad, p)
        rhs = 2 * norm_Xtilde(u, p) * norm_Xtilde(v, p)
    return float(lhs), float(rhs), float(lhs / rhs) if rhs > 0 else 0.0


# ---------------------------------------------------------------------------
# energy structure and stability


def transport_orthogonality(u: SpectralField, w: SpectralField) -> tuple[float, float]:
    """``|mean((u . grad) w . w)|`` by grid quadrature, and the scale ``max|u| ||grad w|| ||w||``.

    Dealiased inputs make the grid quadrature exact for the triple product.
    """
    kernel = _Kernel(u.grid)
    uc = kernel.half(u) * kernel.mask
    wc = kernel.half(w) * kernel.mask
    uv = kernel.to_values(uc)
    wv = kernel.to_values(wc)
    gx = kernel.to_values(1j * kernel.kx * wc)
    gy = kernel.to_values(1j * kernel.ky * wc)
    integrand = np.sum((uv[0] * gx + uv[1] * gy) * wv, axis=0)
    res = abs(float(np.mean(integrand)))
    grad_w = math.sqrt(float(np.mean(gx**2 + gy**2)))
    scale = float(np.abs(uv).max()) * grad_w * math.sqrt(float(np.mean(wv**2)))
    return res, scale


def uniqueness_stability(u0: SpectralField, delta: SpectralField, dt: float, t_end: float) -> float:
    """``sup_t ||u(t) - u~(t)||_{L2} / ||delta||`` for runs from ``u0`` and ``u0 + delta``."""
    if l2_norm(delta) > 1e-6 * l2_norm(u0) * (1 + 1e-9):
        raise ValueError("perturbation must satisfy ||delta|| <= 1e-6 ||u0||")
    dnorm = l2_norm(delta)
    a = direct_evolve(u0, dt, t_end)
    b = direct_evolve(u0 + delta, dt, t_end)
    if dnorm == 0:
        return 1.0
    diff = a.states - b.states
    w = np.full(diff.shape[-1], 2.0)
    w[0] = 1.0
    w[-1] = 1.0
    norms = np.sqrt(np.sum(w * np.abs(diff) ** 2, axis=(1, 2, 3)))
    return float(norms.max() / dnorm)


def richardson_ratio(u0: SpectralField, dt: float, t_end: float, solver=None) -> tuple[float, float]:
    """Ratio of successive step-halving differences at ``t_end`` and the finest difference (L2)."""
    solver = solver or (lambda u, h: direct_evolve(u, h, t_end).final)
    a, b, c = (solver(u0, dt / m) for m in (1, 2, 4))
    d1, d2 = l2_norm(a - b), l2_norm(b - c)
    return (d1 / d2 if d2 > 0 else math.inf), d2


# ---------------------------------------------------------------------------
# data


def taylor_green(grid: Grid) -> SpectralField:
    """Steady Taylor-Green vortex ``(sin x cos y, -cos x sin y)``."""
    return SpectralField.from_function(grid, lambda x, y: (np.sin(x) * np.cos(y), -np.cos(x) * np.sin(y)))


_REFERENCE_MODES = 64


def random_analytic(grid: Grid, seed: int, amplitude: float = 0.5, radius: float = 0.5, r: int = 4) -> SpectralField:
    """Divergence-free, mean-zero field with coefficients ``~ exp(-radius |k|)``, ``||u||_{H^r} = amplitude``.

    The random draw lives on a fixed reference lattice of integer modes, so the
    same seed gives the same field on every grid up to its dealiasing band.
    """
    if grid.dim != 2 or abs(grid.length - 2 * np.pi) > 1e-12:
        raise ValueError("random_analytic targets the 2D torus of side 2 pi")
    K = _REFERENCE_MODES
    rng = np.random.default_rng(seed)
    draw = rng.standard_normal((2, 2 * K + 1, 2 * K + 1)) + 1j * rng.standard_normal((2, 2 * K + 1, 2 * K + 1))
    n = grid.n
    band = min(n // 3, K)
    c = np.zeros((2, n, n), dtype=complex)
    m = np.arange(-band, band + 1)
    ii = np.mod(m, n)
    c[:, ii[:, None], ii[None, :]] = draw[:, (m + K)[:, None], (m + K)[None, :]]
    c *= np.exp(-radius * np.sqrt(grid.k2))
    c[:, 0, 0] = 0.0
    values = np.fft.ifftn(c * n * n, axes=(1, 2)).real
    u = SpectralField.from_values(grid, values)
    from .field_core import dealias, leray_project

    u = dealias(leray_project(u))
    return u * (amplitude / sobolev_norm(u, r))
