"""Experiment configuration files.

The format is INI (``[section]`` headers, ``key = value`` lines, ``#``
comments).  Lists are comma-separated; multi-dimensional points are
separated by semicolons, e.g. ``points = 0.0, 0.04; 0.1, 0.04``.

Sections and keys::

    [model]    preset = <name>            built-in model, or
               dim = <d>                  inline model: one key per coefficient,
               a_2 = 0.5*(0.2+0.1*tanh(x0))**2    a_<alpha joined by _> in x0.., t
               ellipticity = <M>          optional for inline models
    [scheme]   kind = taylor | enhanced_taylor | time_taylor | hermite
               orders = 0, 1, 2           expansion orders N to run
               groups = 1, 2              grouping bounds (enhanced_taylor)
               weight_variance = 0.04     Hermite weight (scalar multiple of identity)
               frozen = diagonal | <point>
               time_integration = auto | exact | quadrature
               quadrature_order = 8
    [payoff]   kind = call | exp_call | digital | gaussian_bump | constant
               smoothness = 0 | 1 | 2     class k of the payoff
               strike, center, width, height, value
    [run]      t = 0
               points = 0.25              evaluation points
               horizons = 0.05, 0.1, ...  values of T - t
               steps = 1, 2, 4, 8, 16     bootstrap step counts m
               slope_tolerance = 0.3
               lattice = 9                density lattice points per axis
               lattice_span = 2           half-width of the lattice in standard deviations
               heat_rate = <M + eps>      dominating heat kernel (default from the preset)
    [oracle]   kind = fd | mc | exact
               cells, steps, levels, width_sd     finite differences
               paths, mc_steps, seed              Monte Carlo
    [output]   path = results.csv
"""

from __future__ import annotations

import configparser
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import ConfigError

SCHEMA: dict[str, set[str]] = {
    "model": {"preset", "dim", "ellipticity", "name"},
    "scheme": {"kind", "orders", "groups", "weight_variance", "frozen", "time_integration", "quadrature_order"},
    "payoff": {"kind", "smoothness", "strike", "center", "width", "height", "value"},
    "run": {"t", "points", "horizons", "steps", "slope_tolerance", "lattice", "lattice_span", "heat_rate"},
    "oracle": {"kind", "cells", "steps", "levels", "width_sd", "paths", "mc_steps", "seed"},
    "output": {"path"},
}
COEFF_KEY = re.compile(r"^a(_\d+)+$")
ORACLES = ("fd", "mc", "exact")
DEFAULT_SMOOTHNESS = {"call": 1, "exp_call": 1, "digital": 0, "gaussian_bump": 2, "constant": 2}


@dataclass
class ExperimentConfig:
    preset: str | None = None
    inline: dict = field(default_factory=dict)
    dim: int = 1
    ellipticity: float | None = None
    model_name: str = "inline"
    scheme: str = "taylor"
    orders: tuple[int, ...] = (0, 1, 2)
    groups: tuple[int, ...] | None = None
    weight_variance: float | None = None
    frozen: object = "diagonal"
    time_integration: str = "auto"
    quadrature_order: int = 8
    payoff: str = "gaussian_bump"
    payoff_params: dict = field(default_factory=dict)
    smoothness: int = 2
    t: float = 0.0
    points: tuple = ()
    horizons: tuple[float, ...] = (0.25,)
    steps: tuple[int, ...] = ()
    slope_tolerance: float = 0.3
    lattice: int = 9
    lattice_span: float = 2.0
    heat_rate: float | None = None
    oracle: str = "fd"
    fd_cells: int = 200
    fd_steps: int = 100
    fd_levels: int = 3
    fd_width_sd: float = 10.0
    mc_paths: int = 1_000_000
    mc_steps: int = 256
    seed: int = 0
    output: str | None = None
    source: dict = field(default_factory=dict)

    def validate(self) -> None:
        if self.smoothness not in (0, 1, 2):
            raise ConfigError("smoothness must be 0, 1 or 2", section="payoff", key="smoothness", line=self._line("payoff", "smoothness"))
        if self.steps and min(self.orders) < 1:
            raise ConfigError("bootstrap sweeps need every order N >= 1", section="scheme", key="orders", line=self._line("scheme", "orders"))
        if any(h <= 0 for h in self.horizons):
            raise ConfigError("horizons must be positive", section="run", key="horizons", line=self._line("run", "horizons"))
        if any(m < 1 for m in self.steps):
            raise ConfigError("bootstrap step counts must be >= 1", section="run", key="steps", line=self._line("run", "steps"))
        if any(n < 0 for n in self.orders):
            raise ConfigError("orders must be non-negative", section="scheme", key="orders", line=self._line("scheme", "orders"))
        if self.oracle not in ORACLES:
            raise ConfigError(f"oracle must be one of {ORACLES}", section="oracle", key="kind", line=self._line("oracle", "kind"))
        if self.preset is None and not self.inline:
            raise ConfigError("model needs a preset or inline coefficients", section="model")
        for p in self.points:
            if len(p) != self.dim and self.preset is None:
                raise ConfigError(f"point {p} does not have {self.dim} components", section="run", key="points", line=self._line("run", "points"))

    def _line(self, section: str, key: str) -> int | None:
        return self.source.get((section, key))

    def echo(self) -> dict:
        out = {}
        for k, v in self.__dict__.items():
            if k == "source":
                continue
            out[k] = list(v) if isinstance(v, tuple) else v
        out["inline"] = {"a_" + "_".join(map(str, a)): e for a, e in self.inline.items()}
        out["frozen"] = self.frozen if isinstance(self.frozen, str) else list(np.atleast_1d(self.frozen))
        return out


def _line_index(text: str) -> dict:
    """Map ``(section, key)`` to its 1-based line number."""
    out = {}
    section = None
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line[0] in "#;":
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip().lower()
            out[(section, None)] = no
            continue
        if "=" in line and section:
            out[(section, line.split("=", 1)[0].strip().lower())] = no
    return out


def _floats(value: str) -> tuple[float, ...]:
    return tuple(float(v) for v in value.replace(";", ",").split(",") if v.strip())


def _ints(value: str) -> tuple[int, ...]:
    return tuple(int(v) for v in value.split(",") if v.strip())


def _points(value: str) -> tuple[tuple[float, ...], ...]:
    return tuple(tuple(float(c) for c in chunk.split(",") if c.strip()) for chunk in value.split(";") if chunk.strip())


def parse_config(text: str, origin: str = "<string>") -> ExperimentConfig:
    lines = _line_index(text)
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",), interpolation=None)
    try:
        parser.read_string(text, source=origin)
    except configparser.Error as exc:
        raise ConfigError(str(exc).splitlines()[0], line=getattr(exc, "lineno", None)) from None
    cfg = ExperimentConfig(source={k: v for k, v in lines.items() if k[1] is not None})

    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"unknown section; expected one of {sorted(SCHEMA)}", section=section, line=lines.get((section, None)))
        for key in parser[section]:
            if key not in SCHEMA[section] and not (section == "model" and COEFF_KEY.match(key)):
                raise ConfigError("unknown key", section=section, key=key, line=lines.get((section, key)))

    def get(section, key, conv, default=None):
        if not parser.has_option(section, key):
            return default
        raw = parser.get(section, key)
        try:
            return conv(raw)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"cannot parse {raw!r}: {exc}", section=section, key=key, line=lines.get((section, key))) from None

    cfg.preset = get("model", "preset", str.strip)
    cfg.dim = get("model", "dim", int, 1)
    cfg.ellipticity = get("model", "ellipticity", float)
    cfg.model_name = get("model", "name", str.strip, cfg.preset or "inline")
    if parser.has_section("model"):
        for key in parser["model"]:
            if COEFF_KEY.match(key):
                alpha = tuple(int(e) for e in key.split("_")[1:])
                if len(alpha) != cfg.dim or sum(alpha) > 2:
                    raise ConfigError(f"coefficient index {alpha} invalid for dim {cfg.dim}", section="model", key=key, line=lines.get(("model", key)))
                cfg.inline[alpha] = parser.get("model", key)
    if cfg.preset and cfg.inline:
        raise ConfigError("give either a preset or inline coefficients, not both", section="model")

    cfg.scheme = get("scheme", "kind", str.strip, "taylor")
    cfg.orders = get("scheme", "orders", _ints, cfg.orders)
    cfg.groups = get("scheme", "groups", _ints)
    cfg.weight_variance = get("scheme", "weight_variance", float)
    frozen = get("scheme", "frozen", str.strip, "diagonal")
    if frozen != "diagonal":
        try:
            frozen = np.array(_floats(frozen))
        except ValueError:
            raise ConfigError(f"expected 'diagonal' or a point, got {frozen!r}", section="scheme", key="frozen", line=lines.get(("scheme", "frozen"))) from None
    cfg.frozen = frozen
    cfg.time_integration = get("scheme", "time_integration", str.strip, "auto")
    cfg.quadrature_order = get("scheme", "quadrature_order", int, 8)

    cfg.payoff = get("payoff", "kind", str.strip, "gaussian_bump")
    if cfg.payoff not in DEFAULT_SMOOTHNESS:
        raise ConfigError(f"unknown payoff; expected one of {sorted(DEFAULT_SMOOTHNESS)}", section="payoff", key="kind", line=lines.get(("payoff", "kind")))
    cfg.smoothness = get("payoff", "smoothness", int, DEFAULT_SMOOTHNESS[cfg.payoff])
    for key in ("strike", "width", "height", "value"):
        v = get("payoff", key, float)
        if v is not None:
            cfg.payoff_params[key] = v
    center = get("payoff", "center", _floats)
    if center is not None:
        cfg.payoff_params["center"] = center[0] if len(center) == 1 else center

    cfg.t = get("run", "t", float, 0.0)
    cfg.points = get("run", "points", _points, ())
    cfg.horizons = get("run", "horizons", _floats, cfg.horizons)
    cfg.steps = get("run", "steps", _ints, ())
    cfg.slope_tolerance = get("run", "slope_tolerance", float, 0.3)
    cfg.lattice = get("run", "lattice", int, 9)
    cfg.lattice_span = get("run", "lattice_span", float, 2.0)
    cfg.heat_rate = get("run", "heat_rate", float)

    cfg.oracle = get("oracle", "kind", str.strip, "fd")
    cfg.fd_cells = get("oracle", "cells", int, cfg.fd_cells)
    cfg.fd_steps = get("oracle", "steps", int, cfg.fd_steps)
    cfg.fd_levels = get("oracle", "levels", int, cfg.fd_levels)
    cfg.fd_width_sd = get("oracle", "width_sd", float, cfg.fd_width_sd)
    cfg.mc_paths = get("oracle", "paths", int, cfg.mc_paths)
    cfg.mc_steps = get("oracle", "mc_steps", int, cfg.mc_steps)
    cfg.seed = get("oracle", "seed", int, 0)
    cfg.output = get("output", "path", str.strip)
    cfg.validate()
    return cfg


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    return parse_config(text, str(path))
