"""Run configuration: TOML (or JSON) file -> validated, fully resolved dataclasses.

Schema::

    equation = "helmholtz"            # or "schrodinger"

    [scenario]
    name = "bent_waveguide"           # see SCENARIOS
    with_leads = false                # any scenario parameter may follow

    [numeric]
    h = 0.05                          # mesh size
    R = 3.0                           # cuts placed at R0 + R
    zeta = "auto"                     # or a positive number
    gamma = 8.0
    eps_thr = 1e-8
    tol_S = 1e-3
    tol_trap = "auto"                 # or a positive number
    cond_max = 1e8

    [run]
    x = 3.5                           # single k (helmholtz) or E (schrodinger)
    grid = { start = 3.2, stop = 6.2, num = 20 }   # or values = [...]
    inlet = 0
    outlet = 1
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import scenarios as sc
from .errors import ConfigError
from .modes import EPS_THR
from .scattering import COND_MAX, TOL_S


SCENARIOS = {
    "straight_strip": (sc.StripParams, lambda p, h: sc.make_straight_strip(p.d, p.L, p.wall)),
    "width_step": (sc.StepParams, lambda p, h: sc.make_width_step(p.d, p.ratio)),
    "indented_waveguide": (sc.IndentationParams, lambda p, h: sc.make_indented_waveguide(p)),
    "bent_waveguide": (sc.BentWaveguideParams, None),
    "trigger": (sc.TriggerParams, lambda p, h: sc.make_trigger_with_potential(p, h)[0]),
    "three_channel_hole": (sc.ThreeChannelHoleParams, lambda p, h: sc.make_three_channel_hole(p)),
    "lamellar_grating": (sc.GratingParams, lambda p, h: sc.make_lamellar_grating(p.width, p.depth, p.theta, p.wall)),
}


@dataclass
class ScenarioConfig:
    name: str
    params: dict = field(default_factory=dict)
    with_leads: bool = False

    def dataclass_params(self):
        cls = SCENARIOS[self.name][0]
        try:
            return cls(**self.params)
        except TypeError as exc:
            raise ConfigError(f"scenario.{self.name}: {exc}") from exc

    def build(self, h):
        p = self.dataclass_params()
        if self.name == "bent_waveguide":
            return sc.make_bent_waveguide(p, with_leads=self.with_leads)
        return SCENARIOS[self.name][1](p, h)


@dataclass
class NumericConfig:
    h: float = 0.05
    R: float = 3.0
    zeta: object = "auto"
    gamma: float = 8.0
    eps_thr: float = EPS_THR
    tol_S: float = TOL_S
    tol_trap: object = "auto"
    cond_max: float = COND_MAX


@dataclass
class RunBlock:
    x: Optional[float] = None
    grid: Optional[list] = None
    inlet: int = 0
    outlet: int = 1

    def xs(self):
        if self.grid is None:
            raise ConfigError("run.grid: a frequency grid is required for this command")
        return np.asarray(self.grid, dtype=float)


@dataclass
class RunConfig:
    scenario: ScenarioConfig
    equation: str = "helmholtz"
    numeric: NumericConfig = field(default_factory=NumericConfig)
    run: RunBlock = field(default_factory=RunBlock)

    def resolved(self) -> dict:
        """Plain dict with every default filled in; loading it reproduces this config."""
        out = {
            "equation": self.equation,
            "scenario": {"name": self.scenario.name, **dataclasses.asdict(self.scenario.dataclass_params())},
            "numeric": dataclasses.asdict(self.numeric),
            "run": {k: v for k, v in dataclasses.asdict(self.run).items() if v is not None},
        }
        if self.scenario.name == "bent_waveguide":
            out["scenario"]["with_leads"] = self.scenario.with_leads
        return out


def _positive(section, key, value):
    try:
        v = float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{section}.{key}: expected a number, got {value!r}") from None
    if not v > 0:
        raise ConfigError(f"{section}.{key}: must be positive, got {value!r}")
    return v


def _auto_or_positive(section, key, value):
    if value is None or value == "auto":
        return "auto"
    return _positive(section, key, value)


def _grid(spec):
    if spec is None:
        return None
    if isinstance(spec, dict):
        if "values" in spec:
            xs = [float(v) for v in spec["values"]]
        else:
            try:
                xs = np.linspace(float(spec["start"]), float(spec["stop"]), int(spec["num"])).tolist()
            except KeyError as exc:
                raise ConfigError(f"run.grid: missing key {exc.args[0]!r}") from None
    else:
        xs = [float(v) for v in spec]
    if len(xs) == 0:
        raise ConfigError("run.grid: empty grid")
    if len(xs) > 1 and not np.all(np.diff(xs) > 0):
        raise ConfigError("run.grid: values must be strictly increasing")
    return xs


def from_dict(data: dict) -> RunConfig:
    data = dict(data)
    scen_name = (data.get("scenario") or {}).get("name")
    equation = data.pop("equation", "schrodinger" if scen_name == "trigger" else "helmholtz")
    if equation not in ("helmholtz", "schrodinger"):
        raise ConfigError(f"equation: expected 'helmholtz' or 'schrodinger', got {equation!r}")
    scen = dict(data.pop("scenario", {}) or {})
    name = scen.pop("name", None)
    if name not in SCENARIOS:
        raise ConfigError(f"scenario.name: expected one of {sorted(SCENARIOS)}, got {name!r}")
    with_leads = bool(scen.pop("with_leads", False))
    scen_cfg = ScenarioConfig(name, scen, with_leads)
    scen_cfg.dataclass_params()

    num = dict(data.pop("numeric", {}) or {})
    known = {f.name for f in dataclasses.fields(NumericConfig)}
    extra = set(num) - known
    if extra:
        raise ConfigError(f"numeric: unknown keys {sorted(extra)}")
    nc = NumericConfig()
    for key in ("h", "R", "gamma", "eps_thr", "tol_S", "cond_max"):
        if key in num:
            setattr(nc, key, _positive("numeric", key, num[key]))
    nc.zeta = _auto_or_positive("numeric", "zeta", num.get("zeta", "auto"))
    nc.tol_trap = _auto_or_positive("numeric", "tol_trap", num.get("tol_trap", "auto"))

    run = dict(data.pop("run", {}) or {})
    extra = set(run) - {"x", "grid", "inlet", "outlet"}
    if extra:
        raise ConfigError(f"run: unknown keys {sorted(extra)}")
    rb = RunBlock(
        x=None if run.get("x") is None else float(run["x"]),
        grid=_grid(run.get("grid")),
        inlet=int(run.get("inlet", 0)),
        outlet=int(run.get("outlet", 1)),
    )
    if rb.inlet < 0:
        raise ConfigError(f"run.inlet: must be non-negative, got {rb.inlet}")
    if data:
        raise ConfigError(f"unknown top-level keys {sorted(data)}")
    return RunConfig(scen_cfg, equation, nc, rb)


def load(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if path.suffix == ".json":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    else:
        import tomli

        try:
            data = tomli.loads(text)
        except tomli.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    return from_dict(data)
