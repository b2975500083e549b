"""Experiment configuration: a small ``key = value`` format with one section per stage.

Values are JSON literals. A file looks like::

    stage = "evolve"
    seed = 7

    [evolve]
    data = "random-analytic:0:0.5:0.5"
    dt = 1.0

Every problem found while parsing is collected with its line number and
reported together in a single :class:`ConfigError`.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any

__all__ = ["ConfigError", "Param", "SCHEMAS", "STAGES", "ExperimentConfig", "parse_config", "serialize_config"]

REQUIRED = object()


class ConfigError(ValueError):
    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


@dataclass(frozen=True)
class Param:
    kind: str  # int, float, str, bool, floats; a trailing "?" allows null
    default: Any = REQUIRED
    doc: str = ""

    @property
    def required(self) -> bool:
        return self.default is REQUIRED

    def coerce(self, value: Any) -> Any:
        """Return the checked value or raise ``TypeError`` with the expected kind."""
        kind = self.kind.rstrip("?")
        if value is None:
            if self.kind.endswith("?"):
                return None
            raise TypeError(f"expected {kind}, got null")
        if kind == "bool":
            if isinstance(value, bool):
                return value
        elif kind == "int":
            if isinstance(value, int) and not isinstance(value, bool):
                return value
        elif kind == "float":
            if isinstance(value, (int, float)) and not isinstance(value, bool):
                return float(value)
        elif kind == "str":
            if isinstance(value, str):
                return value
        elif kind == "floats":
            if isinstance(value, list) and value and all(
                    isinstance(v, (int, float)) and not isinstance(v, bool) for v in value):
                return [float(v) for v in value]
        else:  # pragma: no cover - schema bug
            raise AssertionError(kind)
        raise TypeError(f"expected {self.kind}, got {json.dumps(value)}")


DYADIC_EPS = [0.1 * 2.0**-k for k in range(7)]  # 1e-1 down to about 1.6e-3
# the ball-frame construction folds at eps = 0.1 on the disk, so the map sweeps start one step lower
DIFFEO_EPS = DYADIC_EPS[1:]
MOLLIFY_EPS = [2.0**-k for k in range(4, 14)]  # 2^-4 down to 2^-13 ~ 1.2e-4

SCHEMAS: dict[str, dict[str, Param]] = {
    "norms": {
        "data": Param("str", doc="taylor-green | random-analytic:seed:amplitude:radius | snapshot path"),
        "tau": Param("float", doc="analyticity radius of the norms"),
        "grid": Param("int", 64),
        "r": Param("int", 4),
        "eps": Param("float", 0.3),
        "eps_bar": Param("float", 0.05),
        "max_order": Param("int", 24),
    },
    "mollify": {
        "n_r": Param("int", 32),
        "n_theta": Param("int", 65),
        "corpus": Param("int", 20),
        "degree": Param("int", 4),
        "r": Param("int", 4),
        "box": Param("int", 256),
        "margin": Param("float", 0.8),
        "eps_list": Param("floats", MOLLIFY_EPS),
    },
    "domain-approx": {
        "shape": Param("str", doc="disk | square | star"),
        "grid": Param("int", 128),
        "r": Param("int", 4),
        "balls": Param("int", 16),
        "eps_list": Param("floats", DYADIC_EPS),
    },
    "diffeo": {
        "shape": Param("str", doc="disk | square | star"),
        "grid": Param("int", 128),
        "r": Param("int", 4),
        "balls": Param("int", 12),
        "ball_radius": Param("float", 0.85),
        "beta": Param("float", 0.45, "cutoff transition width as a fraction of the ball radius"),
        "eps_list": Param("floats", DIFFEO_EPS),
    },
    "divcurl": {
        "n_r": Param("int", 32),
        "n_theta": Param("int", 65),
        "delta": Param("float", 0.05),
        "r": Param("int", 4),
        "tol": Param("float", 1e-10),
        "max_iter": Param("int", 200),
        "dense_check": Param("bool", False),
    },
    "evolve": {
        "data": Param("str", doc="taylor-green | random-analytic:seed:amplitude:radius | snapshot path"),
        "grid": Param("int", 128),
        "dt": Param("float", 1.0),
        "r": Param("int", 4),
        "tau0": Param("float", 0.25),
        "eps": Param("float", 0.05),
        "eps_bar": Param("float", 0.05),
        "t_end": Param("float?", None, "null runs to T0 = 1/(8 C0 ||u0||)"),
        "picard_max": Param("int", 30),
        "C0": Param("float?", None, "null fits C0 from a pilot run"),
        "C1": Param("float?", None, "null freezes C1 to the C0 value"),
    },
    "pipeline": {
        "shape": Param("str", "disk"),
        "grid": Param("int", 128),
        "r": Param("int", 4),
        "balls": Param("int", 12),
        "ball_radius": Param("float", 0.85),
        "beta": Param("float", 0.45),
        "n_r": Param("int", 32),
        "n_theta": Param("int", 65),
        "eps_list": Param("floats", DIFFEO_EPS),
        "proxy_grid": Param("int", 128),
        "proxy_t": Param("float", 0.5),
        "proxy_steps": Param("int", 40),
    },
}
STAGES = tuple(SCHEMAS)

TOP = {"stage": Param("str"), "seed": Param("int", 0), "output": Param("str?", None)}


@dataclass(frozen=True)
class ExperimentConfig:
    stage: str
    params: dict = field(default_factory=dict)
    seed: int = 0
    output: str | None = None

    def __post_init__(self):
        if self.stage not in SCHEMAS:
            raise ConfigError([f"unknown stage {self.stage!r}; choose from {', '.join(STAGES)}"])
        if not 0 <= self.seed < 2**64:
            raise ConfigError(["seed must be a 64-bit unsigned integer"])

    def __getitem__(self, key: str):
        return self.params[key]

    @property
    def output_name(self) -> str:
        return self.output or self.stage


def _split(line: str) -> tuple[str, str] | None:
    if "=" not in line:
        return None
    key, value = line.split("=", 1)
    return key.strip(), value.strip()


def parse_config(text: str, stage: str | None = None, overrides: dict[str, Any] | None = None,
                 seed: int | None = None) -> ExperimentConfig:
    """Parse configuration text.

    ``stage`` comes from the command line when given and must then agree with
    any ``stage`` key in the file. ``overrides`` are stage parameters from the
    command line; they win over the file and count toward required keys.
    ``seed`` likewise replaces the file's seed.
    """
    seed_override = seed
    problems: list[str] = []
    top: dict[str, tuple[Any, int]] = {}
    sections: dict[str, dict[str, tuple[Any, int]]] = {}
    section_line: dict[str, int] = {}
    current = None
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                problems.append(f"line {no}: malformed section header {line!r}")
                continue
            current = line[1:-1].strip()
            if current in sections:
                problems.append(f"line {no}: duplicate section [{current}] (first on line {section_line[current]})")
            sections.setdefault(current, {})
            section_line.setdefault(current, no)
            continue
        kv = _split(line)
        if kv is None or not kv[0]:
            problems.append(f"line {no}: expected 'key = value', got {line!r}")
            continue
        key, text_value = kv
        try:
            value = json.loads(text_value)
        except json.JSONDecodeError:
            problems.append(f"line {no}: value of {key!r} is not a JSON literal: {text_value}")
            continue
        table = top if current is None else sections[current]
        if key in table:
            where = "" if current is None else f" in [{current}]"
            problems.append(f"line {no}: duplicate key {key!r}{where} (first defined on line {table[key][1]})")
            continue
        table[key] = (value, no)

    # top-level keys
    for key, (_, no) in top.items():
        if key not in TOP:
            problems.append(f"line {no}: unknown top-level key {key!r}")
    file_stage = top.get("stage", (None, 0))[0]
    if stage is None:
        stage = file_stage
    elif file_stage is not None and file_stage != stage:
        problems.append(f"line {top['stage'][1]}: stage {file_stage!r} does not match requested stage {stage!r}")
    if stage is None:
        problems.append("line 1: missing required key 'stage'")
        raise ConfigError(problems)
    if stage not in SCHEMAS:
        problems.append(f"unknown stage {stage!r}; choose from {', '.join(STAGES)}")
        raise ConfigError(problems)
    seed, output = 0, None
    for key in ("seed", "output"):
        if key in top:
            value, no = top[key]
            try:
                v = TOP[key].coerce(value)
            except TypeError as exc:
                problems.append(f"line {no}: {key}: {exc}")
                continue
            if key == "seed":
                if not 0 <= v < 2**64:
                    problems.append(f"line {no}: seed must be a 64-bit unsigned integer")
                seed = v
            else:
                output = v

    if seed_override is not None:
        if not 0 <= seed_override < 2**64:
            problems.append("command line: seed must be a 64-bit unsigned integer")
        seed = seed_override
    for name, no in section_line.items():
        if name != stage:
            problems.append(f"line {no}: unknown section [{name}] for stage {stage!r}")
    schema = SCHEMAS[stage]
    given = sections.get(stage, {})
    params: dict[str, Any] = {}
    for key, (value, no) in given.items():
        if key not in schema:
            problems.append(f"line {no}: unknown key {key!r} for stage {stage!r}")
            continue
        try:
            params[key] = schema[key].coerce(value)
        except TypeError as exc:
            problems.append(f"line {no}: {key}: {exc}")
    for key, value in (overrides or {}).items():
        if key not in schema:
            problems.append(f"command line: unknown key {key!r} for stage {stage!r}")
            continue
        try:
            params[key] = schema[key].coerce(value)
        except TypeError as exc:
            problems.append(f"command line: {key}: {exc}")
    missing = [k for k, p in schema.items() if p.required and k not in given and k not in (overrides or {})]
    if missing:
        where = f"section [{stage}] at line {section_line[stage]}" if stage in section_line else "end of file"
        problems.append(f"{where}: missing required key(s) for stage {stage!r}: {', '.join(missing)}")
    if problems:
        raise ConfigError(problems)
    for key, p in schema.items():
        if key not in params:
            params[key] = list(p.default) if isinstance(p.default, list) else p.default
    return ExperimentConfig(stage, {k: params[k] for k in schema}, seed, output)


def serialize_config(cfg: ExperimentConfig) -> str:
    """Canonical text form; ``parse_config(serialize_config(c)) == c``."""
    lines = [f"stage = {json.dumps(cfg.stage)}", f"seed = {cfg.seed}"]
    if cfg.output is not None:
        lines.append(f"output = {json.dumps(cfg.output)}")
    lines += ["", f"[{cfg.stage}]"]
    for key, p in SCHEMAS[cfg.stage].items():
        value = cfg.params[key]
        if p.kind.rstrip("?") == "float" and value is not None:
            value = float(value)
        lines.append(f"{key} = {json.dumps(value)}")
    return "\n".join(lines) + "\n"
