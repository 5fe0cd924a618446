"""Run configuration: YAML parsing, defaults, validation and canonical emission."""
import os
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Optional

import numpy as np
import yaml

from .dynamics import IntegratorConfig
from .errors import ConfigError, InvalidParameter
from .models import ClockParams

MODES = ("single", "sweep", "mc_validate", "fuzz")
MODELS = ("clock", "thermal_qubit", "random", "file")
INITIAL = ("steady", "model")

MODEL_PARAMS = {
    "clock": {f.name: f.default for f in fields(ClockParams)},
    "thermal_qubit": {"beta": 1.0, "energy_gap": 1.0, "gamma_down": 1.0},
    "random": {"dim": 3, "n_pairs": 2, "seed": 0, "feedback_kind": "unitary", "delta_s_max": 2.0},
    "file": {"path": None},
}


@dataclass(frozen=True)
class SweepConfig:
    param: str = "E1"
    start: float = -5.0
    stop: float = 5.0
    n_points: int = 51

    def values(self):
        return np.linspace(self.start, self.stop, self.n_points)


@dataclass(frozen=True)
class McConfig:
    n_traj: int = 100_000
    dt: Optional[float] = 1e-4
    base_seed: int = 0
    path: str = "auto"


@dataclass(frozen=True)
class FuzzConfig:
    n_models: int = 100
    dims: tuple = (2, 3)
    n_pairs: tuple = (1, 2)
    feedback_kinds: tuple = ("unitary", "general_unital", "identity")
    base_seed: int = 0
    second_law_dt: float = 1e-6


@dataclass(frozen=True)
class OutputConfig:
    dir: str = "results"
    formats: tuple = ("csv", "json")
    timeseries: bool = False
    trajectories: bool = False


@dataclass(frozen=True)
class RunConfig:
    mode: str = "single"
    model: str = "clock"
    params: dict = field(default_factory=dict)
    tau: float = 1.0
    initial_state: str = "steady"
    integrator: IntegratorConfig = field(default_factory=IntegratorConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    mc: McConfig = field(default_factory=McConfig)
    fuzz: FuzzConfig = field(default_factory=FuzzConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    threads: int = 1

    def to_dict(self):
        d = asdict(self)
        for key in ("fuzz", "output"):
            d[key] = {k: list(v) if isinstance(v, tuple) else v for k, v in d[key].items()}
        d["params"] = dict(self.params)
        return d

    def emit(self):
        """Canonical YAML form; ``parse_config(cfg.emit()) == cfg``."""
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    def with_seed(self, seed):
        return replace(
            self,
            mc=replace(self.mc, base_seed=int(seed)),
            fuzz=replace(self.fuzz, base_seed=int(seed)),
        )


_SECTIONS = {
    "integrator": IntegratorConfig,
    "sweep": SweepConfig,
    "mc": McConfig,
    "fuzz": FuzzConfig,
    "output": OutputConfig,
}
_TOP = {f.name for f in fields(RunConfig)}


def _key_lines(text):
    """Map dotted key paths to 1-based line numbers."""
    lines = {}
    try:
        root = yaml.compose(text)
    except yaml.YAMLError:
        return lines

    def walk(node, prefix):
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                path = f"{prefix}.{k.value}" if prefix else str(k.value)
                lines[path] = k.start_mark.line + 1
                walk(v, path)

    if root is not None:
        walk(root, "")
    return lines


def _coerce(cls, raw, section, lines):
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        raise ConfigError("expected a mapping", section, lines.get(section))
    known = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, value in raw.items():
        path = f"{section}.{key}"
        if key not in known:
            raise ConfigError(f"unknown key '{key}'", path, lines.get(path))
        default = known[key].default
        if isinstance(default, tuple):
            if not isinstance(value, (list, tuple)):
                value = [value]
            value = tuple(value)
        elif isinstance(default, bool):
            if not isinstance(value, bool):
                raise ConfigError("expected true or false", path, lines.get(path))
        elif isinstance(default, int) and not isinstance(default, bool):
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigError("expected an integer", path, lines.get(path))
        elif isinstance(default, float) or (default is None and key in ("h", "dt")):
            if value is not None:
                if isinstance(value, bool) or not isinstance(value, (int, float)):
                    raise ConfigError("expected a number", path, lines.get(path))
                value = float(value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except (InvalidParameter, TypeError, ValueError) as exc:
        raise ConfigError(str(exc), section, lines.get(section)) from exc


def parse_config(source):
    """Parse a run configuration from YAML text or a file path.

    Model parameters may be given under ``params:`` or directly at the top
    level (``{mode: single, model: clock, feedback_on: true}``).
    """
    text = source
    if isinstance(source, os.PathLike) or (isinstance(source, str) and "\n" not in source and os.path.isfile(source)):
        try:
            with open(source) as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"malformed YAML: {exc}", line=None if mark is None else mark.line + 1) from exc
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError("top level must be a mapping")
    lines = _key_lines(text)

    model = raw.get("model", "clock")
    if model not in MODELS:
        raise ConfigError(f"unknown model {model!r}; choose one of {', '.join(MODELS)}", "model", lines.get("model"))
    allowed = MODEL_PARAMS[model]

    params = dict(raw.get("params") or {})
    for key, value in raw.items():
        if key in _TOP:
            continue
        if key in allowed:
            params[key] = value
            continue
        raise ConfigError(f"unknown key '{key}'", key, lines.get(key))
    for key in params:
        if key not in allowed:
            path = f"params.{key}" if f"params.{key}" in lines else key
            raise ConfigError(f"'{key}' is not a parameter of model '{model}'", path, lines.get(path))
    if model == "file" and not params.get("path"):
        raise ConfigError("model 'file' needs a 'path'", "path", lines.get("path"))

    mode = raw.get("mode", "single")
    if mode not in MODES:
        raise ConfigError(f"unknown mode {mode!r}; choose one of {', '.join(MODES)}", "mode", lines.get("mode"))
    kwargs = {"mode": mode, "model": model, "params": params}
    for name, cls in _SECTIONS.items():
        if name in raw:
            kwargs[name] = _coerce(cls, raw[name], name, lines)

    tau = raw.get("tau", 1.0)
    if isinstance(tau, bool) or not isinstance(tau, (int, float)) or not tau > 0:
        raise ConfigError("tau must be a positive number", "tau", lines.get("tau"))
    kwargs["tau"] = float(tau)
    init = raw.get("initial_state", "steady")
    if init not in INITIAL:
        raise ConfigError(f"initial_state must be one of {', '.join(INITIAL)}", "initial_state", lines.get("initial_state"))
    kwargs["initial_state"] = init
    threads = raw.get("threads", 1)
    if isinstance(threads, bool) or not isinstance(threads, int) or threads < 1:
        raise ConfigError("threads must be a positive integer", "threads", lines.get("threads"))
    kwargs["threads"] = threads

    cfg = RunConfig(**kwargs)
    _check(cfg, lines, allowed)
    return cfg


def _check(cfg, lines, allowed):
    if cfg.mode == "sweep":
        if cfg.sweep.n_points < 2:
            raise ConfigError("sweep needs n_points >= 2", "sweep.n_points", lines.get("sweep.n_points"))
        default = allowed.get(cfg.sweep.param, "missing")
        if default == "missing" or isinstance(default, (bool, str)) or cfg.sweep.param in ("dim", "n_pairs", "seed"):
            raise ConfigError(
                f"'{cfg.sweep.param}' is not a continuous parameter of model '{cfg.model}'",
                "sweep.param",
                lines.get("sweep.param"),
            )
    if cfg.mode == "mc_validate":
        if cfg.mc.n_traj < 2:
            raise ConfigError("mc.n_traj must be at least 2", "mc.n_traj", lines.get("mc.n_traj"))
        if cfg.mc.dt is not None and not cfg.mc.dt > 0:
            raise ConfigError("mc.dt must be positive", "mc.dt", lines.get("mc.dt"))
        if cfg.mc.path not in ("auto", "pure", "mixed"):
            raise ConfigError("mc.path must be auto, pure or mixed", "mc.path", lines.get("mc.path"))
    if cfg.mode == "fuzz" and cfg.fuzz.n_models < 1:
        raise ConfigError("fuzz.n_models must be positive", "fuzz.n_models", lines.get("fuzz.n_models"))
    for fmt in cfg.output.formats:
        if fmt not in ("csv", "json"):
            raise ConfigError(f"unknown output format {fmt!r}", "output.formats", lines.get("output.formats"))
