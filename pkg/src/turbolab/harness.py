"""Stage runners, the end-to-end approximation pipeline and deterministic CSV reports.

Every CSV starts with the full configuration (defaults filled in) as ``#``
comment lines, followed by a header and rows. Each row carries a
``provenance`` column saying whether its numbers were measured, fitted or
taken from the configuration. Floats are written with ``repr`` so reruns are
byte-identical.
"""
from __future__ import annotations

import csv
import io
import math
import os
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from . import divcurl, domain_approx, evolution, mollify
from .analytic_norms import (
    AnalyticNormParams,
    TruncationWarning,
    estimate_radius,
    norm_X,
    norm_Xtilde,
    norm_Y,
    norm_Ybar,
    norm_Ytilde,
)
from .config import ConfigError, ExperimentConfig, serialize_config
from .diffeo import build_eta, default_cover, diffeo_report
from .field_core import Grid, SpectralField, atomic_write_text, read_snapshot, sobolev_norm, write_snapshot
from .geometry import BallCover
from .polar import PolarGrid

__all__ = [
    "StageError",
    "Table",
    "StageResult",
    "PipelineRow",
    "PipelineReport",
    "load_field",
    "run_stage",
    "run_pipeline",
    "c0_proxy",
    "write_result",
    "output_root",
    "BOX_LENGTH",
]

BOX_LENGTH = 4.0


class StageError(RuntimeError):
    """A numerical failure, tagged with the stage that raised it."""

    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")


NUMERICAL_ERRORS = (ValueError, RuntimeError, ArithmeticError, np.linalg.LinAlgError)


def _tagged(stage: str, fn: Callable, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except ConfigError:
        raise
    except StageError:
        raise
    except NUMERICAL_ERRORS as exc:
        raise StageError(stage, exc) from exc


# ---------------------------------------------------------------------------
# tables


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


@dataclass
class Table:
    columns: tuple[str, ...]
    rows: list[tuple] = field(default_factory=list)

    def add(self, *row) -> None:
        if len(row) != len(self.columns):
            raise ValueError(f"row has {len(row)} fields, table has {len(self.columns)} columns")
        self.rows.append(tuple(row))

    def column(self, name: str) -> list:
        i = self.columns.index(name)
        return [r[i] for r in self.rows]

    def to_csv(self, header: str = "") -> str:
        buf = io.StringIO()
        for line in header.splitlines():
            buf.write(f"# {line}\n" if line else "#\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for r in self.rows:
            w.writerow([_fmt(v) for v in r])
        return buf.getvalue()


@dataclass
class StageResult:
    config: ExperimentConfig
    tables: dict[str, Table]
    snapshots: dict[str, SpectralField] = field(default_factory=dict)
    summary: dict = field(default_factory=dict)


def output_root() -> Path:
    return Path(os.environ.get("TURBO_OUT", "turbo_out"))


def write_result(result: StageResult, root: Path | None = None) -> Path:
    """Write every table (and snapshot) atomically under ``root / config.output_name``."""
    out = (root or output_root()) / result.config.output_name
    out.mkdir(parents=True, exist_ok=True)
    header = serialize_config(result.config)
    for name, table in result.tables.items():
        atomic_write_text(out / f"{name}.csv", table.to_csv(header))
    for name, snap in result.snapshots.items():
        write_snapshot(out / f"{name}.trbf", snap)
    return out


# ---------------------------------------------------------------------------
# inputs


def load_field(spec: str, grid_n: int, seed: int = 0) -> SpectralField:
    """``taylor-green``, ``random-analytic[:seed[:amplitude[:radius]]]`` or a snapshot path."""
    g = Grid(2, grid_n)
    if spec == "taylor-green":
        return evolution.taylor_green(g)
    if spec.startswith("random-analytic"):
        parts = spec.split(":")[1:]
        try:
            s = int(parts[0]) if len(parts) > 0 and parts[0] else seed
            amp = float(parts[1]) if len(parts) > 1 else 0.5
            rad = float(parts[2]) if len(parts) > 2 else 0.5
        except ValueError as exc:
            raise ConfigError([f"data: cannot parse {spec!r} as random-analytic:seed:amplitude:radius"]) from exc
        return evolution.random_analytic(g, s, amp, rad)
    path = Path(spec)
    if not path.exists():
        raise ConfigError([f"data: {spec!r} is neither a known field nor an existing snapshot file"])
    return read_snapshot(path)


def _box(n: int) -> Grid:
    return Grid(2, n, BOX_LENGTH, -BOX_LENGTH / 2)


def _shape(name: str, grid: Grid):
    try:
        return domain_approx.make_domain(name, grid)
    except ValueError as exc:
        raise ConfigError([f"shape: {exc}"]) from exc


# ---------------------------------------------------------------------------
# stages


def _run_norms(cfg: ExperimentConfig) -> StageResult:
    f = load_field(cfg["data"], cfg["grid"], cfg.seed)
    p = AnalyticNormParams(cfg["r"], cfg["tau"], cfg["eps_bar"], cfg["eps"], cfg["max_order"])
    t = Table(("quantity", "value", "provenance"))
    for name, fn in (("X", norm_X), ("Y", norm_Y), ("X_tilde", norm_Xtilde), ("Y_tilde", norm_Ytilde),
                     ("Y_bar", norm_Ybar)):
        t.add(name, fn(f, p), "measured")
    t.add("H_r", sobolev_norm(f, p.r), "measured")
    t.add("radius", estimate_radius(f), "fitted")
    return StageResult(cfg, {"norms": t})


def _run_mollify(cfg: ExperimentConfig) -> StageResult:
    g = PolarGrid(cfg["n_r"], cfg["n_theta"])
    box = mollify.default_box(cfg["box"])
    corpus = mollify.stream_corpus(g, cfg["corpus"], cfg["degree"], cfg.seed % 2**32, cfg["r"])
    sweep = Table(("field", "epsilon", "h_r_error", "div_residual", "normal_residual", "bound_constant", "provenance"))
    summary = Table(("field", "eps_star", "largest_passing_eps", "max_bound_constant", "provenance"))
    for i, v in enumerate(corpus):
        rows = mollify.approximation_sweep(v, cfg["eps_list"], cfg["r"], box, cfg["margin"])
        for row in rows:
            sweep.add(i, row.epsilon, row.h_r_error, row.div_residual, row.normal_residual, row.bound_constant,
                      "measured")
        star = mollify.monotone_threshold([r.epsilon for r in rows], [r.h_r_error for r in rows])
        summary.add(i, star, mollify.largest_passing_eps(rows), max(r.bound_constant for r in rows), "measured")
    return StageResult(cfg, {"sweep": sweep, "summary": summary})


def _domain_rows(cfg: ExperimentConfig):
    grid = _box(cfg["grid"])
    original = _shape(cfg["shape"], grid)
    for eps in cfg["eps_list"]:
        approx = domain_approx.mollify_levelset(original, eps)
        yield original, domain_approx.DomainPair(original, approx, eps)


def _run_domain(cfg: ExperimentConfig) -> StageResult:
    r = cfg["r"]
    cols = ("epsilon", "hausdorff", "oracle_offset") + tuple(f"graph_H{s}" for s in range(r + 3)) + ("provenance",)
    t = Table(cols)
    for original, pair in _domain_rows(cfg):
        h = pair.original.phi.grid.h
        haus = domain_approx.hausdorff_distance(original.boundary, pair.approx.boundary, h)
        oracle = abs(domain_approx.radial_oracle_radius(pair.epsilon) - 1.0) if cfg["shape"] == "disk" else math.nan
        cover = BallCover.on_curve(domain_approx.dense_boundary(original), cfg["balls"])
        report = domain_approx.graph_convergence_report(pair, cover, r)
        worst = np.max([row.norms for row in report], axis=0)
        t.add(pair.epsilon, haus, oracle, *worst, "measured")
    return StageResult(cfg, {"domain": t})


def _run_diffeo(cfg: ExperimentConfig) -> StageResult:
    t = Table(("epsilon", "steps", "eta_norm", "a_norm", "min_det", "inverse_error", "a_identity_error",
               "boundary_match", "grad_ratio", "provenance"))
    for _, pair in _domain_rows(cfg):
        m = build_eta(pair, default_cover(pair, cfg["balls"], cfg["ball_radius"], cfg["beta"]))
        rep = diffeo_report(m, cfg["r"], pair)
        t.add(pair.epsilon, len(m.steps), rep.eta_norm, rep.a_norm, rep.min_det, rep.inverse_error,
              rep.a_identity_error, rep.boundary_match, rep.grad_ratio, "measured")
    return StageResult(cfg, {"diffeo": t})


def _run_divcurl(cfg: ExperimentConfig) -> StageResult:
    g = PolarGrid(cfg["n_r"], cfg["n_theta"])
    seed = cfg.seed % 2**32
    a = divcurl.random_smooth_matrix_field(g, cfg["delta"], seed)
    u0 = mollify.stream_corpus(g, 1, seed=seed, r=cfg["r"])[0]
    S_norm = divcurl.estimate_operator_norm(g, cfg["r"], seed=seed)
    U, rep = divcurl.neumann_fixed_point(a, u0, cfg["r"], cfg["tol"], cfg["max_iter"], S_norm)
    it = Table(("iteration", "update", "ratio", "provenance"))
    for k, upd in enumerate(rep.updates):
        ratio = rep.ratios[k] if k < len(rep.ratios) else math.nan
        it.add(k + 1, upd, ratio, "measured")
    c = Table(("quantity", "value", "provenance"))
    c.add("delta", cfg["delta"], "config")
    c.add("S_norm", S_norm, "fitted")
    c.add("q_bound", rep.q_bound, "measured")
    c.add("K", rep.K, "fitted")
    c.add("ia_sup", rep.ia_sup, "measured")
    c.add("observed_ratio", rep.observed_ratio, "measured")
    c.add("iterations", rep.iterates, "measured")
    c.add("final_residual", rep.final_residual, "measured")
    c.add("U_norm", rep.U_norm, "measured")
    c.add("bound_rhs", 2 * S_norm * rep.curl_norm, "fitted")
    if cfg["dense_check"]:
        ref = divcurl.dense_oracle(a, u0)
        c.add("dense_difference", float(np.abs((U - ref).flat()).max()), "measured")
    return StageResult(cfg, {"iterations": it, "constants": c})


def _run_evolve(cfg: ExperimentConfig) -> StageResult:
    u0 = load_field(cfg["data"], cfg["grid"], cfg.seed)
    r = cfg["r"]
    p = AnalyticNormParams(r, cfg["tau0"], cfg["eps_bar"], cfg["eps"])
    h0 = sobolev_norm(u0, r)
    const = Table(("quantity", "value", "provenance"))
    c0_prov = "fitted" if cfg["C0"] is None else "config"
    if cfg["C0"] is None:
        C0, window = evolution.fit_c0(u0, r, cfg["dt"])
        const.add("C0", C0, c0_prov)
        const.add("C0_window", window, "measured")
    else:
        C0 = cfg["C0"]
        const.add("C0", C0, c0_prov)
    C1 = C0 if cfg["C1"] is None else cfg["C1"]
    const.add("C1", C1, c0_prov if cfg["C1"] is None else "config")
    T0 = 1.0 / (8 * C0 * h0)
    t_end = T0 if cfg["t_end"] is None else cfg["t_end"]
    steps = max(1, int(math.ceil(t_end / cfg["dt"] - 1e-9)))
    dt = t_end / steps
    sched = evolution.tau_schedule(cfg["tau0"], C0, C1, h0, t_end)
    traj, hist = evolution.picard_evolve(u0, p, sched, dt, cfg["picard_max"], t_end=t_end)
    trace = evolution.make_trace(traj, p, sched, hist[-1].n, stride=max(1, steps // 64))
    tt = Table(evolution.TRACE_COLUMNS + ("provenance",))
    for row in trace.rows():
        tt.add(*row, "measured")
    pic = Table(("n", "distance", "ratio", "contracting", "provenance"))
    for st in hist:
        pic.add(st.n, st.distance, st.ratio, st.contracting, "measured")
    sob = evolution.monitor_sobolev(trace) if len(trace) >= 10 else None
    rad = evolution.monitor_radius(trace, sched)
    for name, value, prov in (
        ("u0_h_r", h0, "measured"),
        ("T0", T0, "fitted" if cfg["C0"] is None else "config"),
        ("t_end", t_end, "config" if cfg["t_end"] is not None else "fitted"),
        ("dt", dt, "config"),
        ("tau0", cfg["tau0"], "config"),
        ("tau_end", float(sched.tau(t_end)), "fitted"),
        ("schedule_validation_error", sched.validation_error, "measured"),
        ("picard_iterations", hist[-1].n, "measured"),
        ("energy_drift", evolution.energy_drift(trace), "measured"),
        ("C0_trace", sob.C0 if sob else math.nan, "fitted"),
        ("doubling_violations", len(sob.violations) if sob else 0, "measured"),
        ("envelope_max", rad.envelope_max, "measured"),
        ("radius_flags", len(rad.flags), "measured"),
        ("C1_fit", evolution.fit_c1(trace, sched), "fitted"),
    ):
        const.add(name, value, prov)
    return StageResult(cfg, {"trace": tt, "picard": pic, "constants": const}, {"final": traj.final})


# ---------------------------------------------------------------------------
# pipeline


def c0_proxy(dom, amplitude: float = 1.0, n: int = 64, t_end: float = 0.5, steps: int = 40) -> float:
    """Fitted Sobolev constant of a short torus evolution seeded by the domain's level set.

    The data are ``amplitude * perp_grad(psi)`` with ``psi = exp(-1/phi) * (x + y^2/2 + xy/4)``
    inside ``{phi > 0}``, on the periodic box holding the domain. No
    domain-dependent normalization is applied, so the constant moves only
    through the shape of ``phi``. This is a proxy: bounded-domain evolution
    is out of scope.
    """
    g = _box(n)
    x, y = g.coords()
    phi = dom.evaluate(np.stack([x, y], axis=-1))
    bump = np.zeros_like(phi)
    inside = phi > 0
    bump[inside] = np.exp(-1.0 / phi[inside])
    psi = SpectralField.from_values(g, bump * (x + 0.5 * y * y + 0.25 * x * y))
    kx, ky = g.kvec
    u = SpectralField(g, np.stack([-1j * ky * psi.coeffs[0], 1j * kx * psi.coeffs[0]]) * g.dealias_mask)
    traj = evolution.direct_evolve(u * amplitude, t_end / steps, t_end, check_cfl=False)
    return evolution.sobolev_fit(traj.times, evolution.hr_series(traj, 4)).C0


@dataclass(frozen=True)
class PipelineRow:
    epsilon: float
    hausdorff: float
    eta_norm: float
    a_norm: float
    u_diff: float
    fp_iterations: int
    normal_trace: float
    c0_q: float
    c0_omega: float


PIPELINE_PROVENANCE = {
    "epsilon": "config",
    "hausdorff": "measured",
    "eta_norm": "measured",
    "a_norm": "measured",
    "u_diff": "measured",
    "fp_iterations": "measured",
    "normal_trace": "measured",
    "c0_q": "fitted (proxy)",
    "c0_omega": "fitted (proxy)",
}

# columns expected to shrink as epsilon decreases; the C0 column is compared through |C0(Q) - C0(Omega)|
MONOTONE_COLUMNS = ("hausdorff", "eta_norm", "a_norm", "u_diff", "fp_iterations", "c0_gap")


@dataclass(frozen=True)
class PipelineReport:
    rows: tuple[PipelineRow, ...]
    monotone: dict

    def column(self, name: str) -> np.ndarray:
        if name == "c0_gap":
            return np.array([abs(r.c0_q - r.c0_omega) for r in self.rows])
        return np.array([getattr(r, name) for r in self.rows], dtype=float)

    def table(self) -> Table:
        t = Table(("epsilon", "quantity", "value", "provenance"))
        for row in self.rows:
            for name, prov in PIPELINE_PROVENANCE.items():
                if name != "epsilon":
                    t.add(row.epsilon, name, getattr(row, name), prov)
        return t

    def monotone_table(self) -> Table:
        t = Table(("quantity", "nonincreasing", "provenance"))
        for name in MONOTONE_COLUMNS:
            t.add(name, self.monotone[name], "measured")
        return t


def _nonincreasing(values: Iterable[float], rel: float = 1e-12) -> bool:
    v = list(values)
    return all(b <= a * (1 + rel) + 1e-300 for a, b in zip(v, v[1:]))


def run_pipeline(cfg: ExperimentConfig) -> PipelineReport:
    """Domain approximation, diffeomorphism and div-curl fixed point along a decreasing epsilon sweep."""
    if cfg["shape"] != "disk":
        raise ConfigError([f"shape: the pipeline pulls data back through the unit-disk solver; got {cfg['shape']!r}"])
    grid = _box(cfg["grid"])
    original = _shape("disk", grid)
    g = PolarGrid(cfg["n_r"], cfg["n_theta"])
    seed = cfg.seed % 2**32
    r = cfg["r"]
    u0 = mollify.stream_corpus(g, 1, seed=seed, r=r)[0]
    S_norm = _tagged("divcurl", divcurl.estimate_operator_norm, g, r, seed=seed)
    c0_omega = _tagged("evolve", c0_proxy, original, 1.0, cfg["proxy_grid"], cfg["proxy_t"], cfg["proxy_steps"])
    rows = []
    for eps in sorted(cfg["eps_list"], reverse=True):
        approx = _tagged("domain-approx", domain_approx.mollify_levelset, original, eps)
        pair = _tagged("domain-approx", domain_approx.DomainPair, original, approx, eps)
        haus = domain_approx.hausdorff_distance(original.boundary, approx.boundary, grid.h)
        m = _tagged("diffeo", lambda: build_eta(pair, default_cover(pair, cfg["balls"], cfg["ball_radius"], cfg["beta"])))
        rep = _tagged("diffeo", diffeo_report, m, r, pair)
        a = _tagged("divcurl", divcurl.MatrixField.from_diffeo, g, m)
        U, fp = _tagged("divcurl", divcurl.neumann_fixed_point, a, u0, r, S_norm=S_norm)
        push = _tagged("divcurl", divcurl.pushforward_check, U, a, m, approx.evaluate)
        c0_q = _tagged("evolve", c0_proxy, approx, 1.0, cfg["proxy_grid"], cfg["proxy_t"], cfg["proxy_steps"])
        rows.append(PipelineRow(float(eps), haus, rep.eta_norm, rep.a_norm, (U - u0).hs_norm(r), fp.iterates,
                                push.normal_max, c0_q, c0_omega))
    report = PipelineReport(tuple(rows), {})
    flags = {name: _nonincreasing(report.column(name)) for name in MONOTONE_COLUMNS}
    return PipelineReport(report.rows, flags)


def _run_pipeline(cfg: ExperimentConfig) -> StageResult:
    rep = run_pipeline(cfg)
    return StageResult(cfg, {"pipeline": rep.table(), "monotone": rep.monotone_table()}, summary={"report": rep})


RUNNERS = {
    "norms": _run_norms,
    "mollify": _run_mollify,
    "domain-approx": _run_domain,
    "diffeo": _run_diffeo,
    "divcurl": _run_divcurl,
    "evolve": _run_evolve,
    "pipeline": _run_pipeline,
}


def run_stage(cfg: ExperimentConfig) -> StageResult:
    """Run one configured stage; numerical failures come back as :class:`StageError`."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", TruncationWarning)
        return _tagged(cfg.stage, RUNNERS[cfg.stage], cfg)
