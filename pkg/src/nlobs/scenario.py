"""Scenario files: flat sectioned ``key = value`` text.

Grammar
-------
Sections ``[plant]``, ``[observer]``, ``[constraints]``, ``[integration]`` and
``[outputs]``; ``#`` or ``;`` start comments. Vectors are comma separated,
intervals are ``lo:hi`` and interval lists are comma separated intervals.
Booleans accept ``true/false/yes/no/on/off/1/0``. Every key is optional and
falls back to the documented default; unknown sections or keys are errors.

=====================  =========================================  ==================
key                    meaning                                    default
=====================  =========================================  ==================
plant.model            only ``rowat``                             rowat
plant.tau_m ... A_f    Rowat parameters                           0.1666, 5, 0.8, 2, 1
plant.V0, plant.q0     initial physical state                     1, 0
plant.theta_bounds     Omega_theta, four intervals                -12:-4, 2:10, -5:-0.5, 0.2:2
plant.lambda_bounds    Omega_lambda                               1:3
plant.disturbance      ``zero``, ``sine`` or ``noise``            zero
plant.disturbance_*    amplitude, freq, phase, seed, hold         0, 1, 0, 0, 0.1
observer.B, .l         gains                                      1, 1 / -2, -1
observer.gamma_theta   gradient gain                              4
observer.gamma         search gain                                0.002
observer.epsilon       gate dead-zone width                       0.01
observer.sigma_M/_D    gate bound and slope                       1 / 1
observer.omega         frequencies or ``auto``                    auto
observer.zeta0         initial zeta                               plant output, then zeros
observer.theta0        initial theta_hat                          box centre
observer.phase0        initial oscillator phases                  0
observer.renormalize   oscillator projection                      true
observer.search        run the lambda search                      true
constraints.enabled                                               true
constraints.eps_pi                                                0.0022
constraints.u1_literal                                            false
constraints.offchart_ceiling                                      1.0
integration.h                                                     0.001
integration.T_final                                               100
integration.record_every                                          10
outputs.directory      relative to the scenario file              results
outputs.stem           file name stem                             scenario file stem
=====================  =========================================  ==================
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import constraints as _c
from .observer import ObserverConfig, SigmaSpec, make_omegas
from .plant import NoiseDisturbance, RowatParams, SineDisturbance, rowat_plant_spec, rowat_truth, to_canonical

__all__ = [
    "ScenarioError",
    "PlantSection",
    "ObserverSection",
    "ConstraintSection",
    "IntegrationSection",
    "OutputSection",
    "Scenario",
    "parse_scenario",
    "load_scenario",
    "shipped_scenario",
    "SHIPPED",
]

DATA_DIR = Path(__file__).resolve().parent / "data"
SHIPPED = ("rowat_s5", "rowat_fig1a")


class ScenarioError(ValueError):
    """Parse or validation failure; ``key`` is the dotted path of the offending entry."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


def _vec(text: str) -> tuple:
    return tuple(float(v) for v in text.replace(" ", "").split(",") if v != "")


def _intervals(text: str) -> tuple:
    out = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        lo, hi = part.split(":")
        out.append((float(lo), float(hi)))
    return tuple(out)


_BOOL = {"true": True, "yes": True, "on": True, "1": True, "false": False, "no": False, "off": False, "0": False}


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t not in _BOOL:
        raise ValueError(f"not a boolean: {text!r}")
    return _BOOL[t]


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple) and v and isinstance(v[0], tuple):
        return ", ".join(f"{lo!r}:{hi!r}" for lo, hi in v)
    if isinstance(v, tuple):
        return ", ".join(repr(float(x)) for x in v)
    if v is None:
        return "auto"
    return str(v)


@dataclass(frozen=True)
class PlantSection:
    model: str = "rowat"
    tau_m: float = 0.1666
    tau_s: float = 5.0
    sigma_s: float = 0.8
    sigma_f: float = 2.0
    A_f: float = 1.0
    V0: float = 1.0
    q0: float = 0.0
    theta_bounds: tuple = ((-12.0, -4.0), (2.0, 10.0), (-5.0, -0.5), (0.2, 2.0))
    lambda_bounds: tuple = ((1.0, 3.0),)
    disturbance: str = "zero"
    disturbance_amplitude: float = 0.0
    disturbance_freq: float = 1.0
    disturbance_phase: float = 0.0
    disturbance_seed: int = 0
    disturbance_hold: float = 0.1

    @property
    def params(self) -> RowatParams:
        return RowatParams(self.tau_m, self.tau_s, self.sigma_s, self.sigma_f, self.A_f)


@dataclass(frozen=True)
class ObserverSection:
    B: tuple = (1.0, 1.0)
    l: tuple = (-2.0, -1.0)
    gamma_theta: float = 4.0
    gamma: float = 0.002
    epsilon: float = 0.01
    sigma_M: float = 1.0
    sigma_D: float = 1.0
    omega: Optional[tuple] = None
    zeta0: Optional[tuple] = None
    theta0: Optional[tuple] = None
    phase0: tuple = (0.0,)
    renormalize: bool = True
    search: bool = True


@dataclass(frozen=True)
class ConstraintSection:
    enabled: bool = True
    eps_pi: float = _c.DEFAULT_EPS_PI
    u1_literal: bool = False
    offchart_ceiling: float = 1.0


@dataclass(frozen=True)
class IntegrationSection:
    h: float = 1e-3
    T_final: float = 100.0
    record_every: int = 10

    @property
    def N(self) -> int:
        return int(round(self.T_final / self.h))


@dataclass(frozen=True)
class OutputSection:
    directory: str = "results"
    stem: str = ""


_SECTIONS = {
    "plant": PlantSection,
    "observer": ObserverSection,
    "constraints": ConstraintSection,
    "integration": IntegrationSection,
    "outputs": OutputSection,
}

_PARSERS = {
    "theta_bounds": _intervals,
    "lambda_bounds": _intervals,
    "B": _vec,
    "l": _vec,
    "phase0": _vec,
}

# vectors whose default is derived from other settings
_AUTO = {"omega", "zeta0", "theta0"}


def _parse_value(cls, key: str, raw: str):
    if key in _PARSERS:
        return _PARSERS[key](raw)
    if cls is ObserverSection and key in _AUTO:
        return None if raw.strip().lower() == "auto" else _vec(raw)
    default = getattr(cls(), key)
    if isinstance(default, bool):
        return _bool(raw)
    if isinstance(default, int):
        f = float(raw)
        if f != int(f):
            raise ValueError(f"not an integer: {raw!r}")
        return int(f)
    if isinstance(default, float):
        return float(raw)
    return raw.strip()


@dataclass(frozen=True)
class Scenario:
    plant: PlantSection
    observer: ObserverSection
    constraints: ConstraintSection
    integration: IntegrationSection
    outputs: OutputSection
    name: str = "scenario"
    base_dir: str = "."

    # -- derived objects ---------------------------------------------------

    def plant_spec(self):
        p = self.plant
        if p.disturbance == "zero":
            return rowat_plant_spec(p.theta_bounds, p.lambda_bounds)
        if p.disturbance == "sine":
            xi = SineDisturbance(2, p.disturbance_amplitude, p.disturbance_freq, p.disturbance_phase)
            return rowat_plant_spec(p.theta_bounds, p.lambda_bounds, xi=xi, delta_xi=xi.bound)
        xi = NoiseDisturbance(2, p.disturbance_amplitude, p.disturbance_seed, p.disturbance_hold)
        return rowat_plant_spec(p.theta_bounds, p.lambda_bounds, xi=xi, delta_xi=p.disturbance_amplitude)

    def truth(self):
        return rowat_truth(self.plant.params, self.plant_spec())

    def constraint(self):
        c = self.constraints
        if not c.enabled:
            return None
        return _c.rowat_constraint(eps_pi=c.eps_pi, u1_literal=c.u1_literal, offchart_ceiling=c.offchart_ceiling)

    def observer_config(self) -> ObserverConfig:
        o = self.observer
        p = len(self.plant.lambda_bounds)
        omega = make_omegas(p) if o.omega is None else np.array(o.omega)
        return ObserverConfig(
            B=np.array(o.B),
            l=np.array(o.l),
            gamma_theta=o.gamma_theta,
            gamma=o.gamma,
            eps=o.epsilon,
            sigma=SigmaSpec(o.sigma_M, o.sigma_D),
            omega=omega,
            lambda_bounds=np.array(self.plant.lambda_bounds),
            constraint=self.constraint(),
            renormalize=o.renormalize,
            search=o.search,
        )

    def initial_zeta(self) -> np.ndarray:
        if self.observer.zeta0 is not None:
            return np.array(self.observer.zeta0)
        return np.array([self.plant.V0, 0.0])

    def initial_theta(self) -> np.ndarray:
        if self.observer.theta0 is not None:
            return np.array(self.observer.theta0)
        return np.array([0.5 * (lo + hi) for lo, hi in self.plant.theta_bounds])

    def stem(self) -> str:
        return self.outputs.stem or self.name

    def output_dir(self) -> Path:
        d = Path(self.outputs.directory)
        return d if d.is_absolute() else Path(self.base_dir) / d

    def with_changes(self, section: str, **kw) -> "Scenario":
        sc = replace(self, **{section: replace(getattr(self, section), **kw)})
        sc.validate()
        return sc

    # -- validation and echo ----------------------------------------------

    def validate(self) -> None:
        p = self.plant
        if p.model != "rowat":
            raise ScenarioError("plant.model", f"unknown model {p.model!r}")
        for k in ("tau_m", "tau_s", "A_f"):
            if not getattr(p, k) > 0:
                raise ScenarioError(f"plant.{k}", "must be positive")
        if len(p.theta_bounds) != 4:
            raise ScenarioError("plant.theta_bounds", "need four intervals")
        if len(p.lambda_bounds) != 1:
            raise ScenarioError("plant.lambda_bounds", "need one interval")
        for key, box in (("theta_bounds", p.theta_bounds), ("lambda_bounds", p.lambda_bounds)):
            if any(lo >= hi for lo, hi in box):
                raise ScenarioError(f"plant.{key}", "intervals need lo < hi")
        lam = p.sigma_f / p.A_f
        lo, hi = p.lambda_bounds[0]
        if not lo <= lam <= hi:
            raise ScenarioError("plant.lambda_bounds", f"true lambda {lam:g} lies outside [{lo:g}, {hi:g}]")
        if p.disturbance not in ("zero", "sine", "noise"):
            raise ScenarioError("plant.disturbance", "must be zero, sine or noise")
        if p.disturbance != "zero" and not p.disturbance_amplitude >= 0:
            raise ScenarioError("plant.disturbance_amplitude", "must be non-negative")
        c = self.constraints
        if not 0.0 < c.eps_pi < _c.EPS_PI_MAX:
            raise ScenarioError("constraints.eps_pi", f"must lie in (0, {_c.EPS_PI_MAX:.7f})")
        if not c.offchart_ceiling >= 0:
            raise ScenarioError("constraints.offchart_ceiling", "must be non-negative")
        o = self.observer
        if o.zeta0 is not None and len(o.zeta0) != 2:
            raise ScenarioError("observer.zeta0", "need two entries")
        if o.theta0 is not None and len(o.theta0) != 4:
            raise ScenarioError("observer.theta0", "need four entries")
        if len(o.phase0) != 1:
            raise ScenarioError("observer.phase0", "need one phase per lambda coordinate")
        if o.omega is not None and len(o.omega) != 1:
            raise ScenarioError("observer.omega", "need one frequency per lambda coordinate")
        for k in ("gamma_theta", "gamma", "epsilon", "sigma_M", "sigma_D"):
            v = getattr(o, k)
            if not (math.isfinite(v) and v > 0):
                raise ScenarioError(f"observer.{k}", "must be positive")
        if len(o.B) != 2 or len(o.l) != 2:
            raise ScenarioError("observer.B", "B and l need two entries")
        try:
            self.observer_config()
        except ValueError as exc:
            msg = str(exc)
            key = "observer.B" if ("Hurwitz" in msg and "b =" in msg) or "first entry" in msg else "observer"
            if "A + l" in msg:
                key = "observer.l"
            elif "frequenc" in msg:
                key = "observer.omega"
            raise ScenarioError(key, msg) from None
        i = self.integration
        if not i.h > 0:
            raise ScenarioError("integration.h", "must be positive")
        if not i.T_final > 0:
            raise ScenarioError("integration.T_final", "must be positive")
        if i.record_every < 1:
            raise ScenarioError("integration.record_every", "must be >= 1")
        if abs(i.N * i.h - i.T_final) > 1e-9 * i.T_final:
            raise ScenarioError("integration.T_final", "must be a whole number of steps")

    def effective_config(self) -> str:
        """The full configuration including defaults, in the scenario grammar."""
        lines = [f"# effective configuration of {self.name}"]
        for sec in _SECTIONS:
            lines.append(f"[{sec}]")
            obj = getattr(self, sec)
            for f in fields(obj):
                lines.append(f"{f.name} = {_fmt(getattr(obj, f.name))}")
            lines.append("")
        return "\n".join(lines)

    def truth_canonical(self):
        return to_canonical(self.plant.params)


def parse_scenario(text: str, name: str = "scenario", base_dir: str = ".") -> Scenario:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ScenarioError("file", f"parse error: {exc}") from None
    values = {}
    for sec in cp.sections():
        if sec not in _SECTIONS:
            raise ScenarioError(sec, "unknown section")
        cls = _SECTIONS[sec]
        known = {f.name for f in fields(cls)}
        kw = {}
        for key, raw in cp.items(sec):
            if key not in known:
                raise ScenarioError(f"{sec}.{key}", "unknown key")
            try:
                kw[key] = _parse_value(cls, key, raw)
            except ValueError as exc:
                raise ScenarioError(f"{sec}.{key}", f"bad value {raw!r} ({exc})") from None
        values[sec] = cls(**kw)
    for sec, cls in _SECTIONS.items():
        values.setdefault(sec, cls())
    sc = Scenario(name=name, base_dir=base_dir, **values)
    sc.validate()
    return sc


def load_scenario(path) -> Scenario:
    path = Path(path)
    if not path.exists():
        if str(path) in SHIPPED:
            return shipped_scenario(str(path))
        raise ScenarioError("file", f"no such scenario file: {path}")
    return parse_scenario(path.read_text(), name=path.stem, base_dir=str(path.parent))


def shipped_scenario(name: str = "rowat_s5") -> Scenario:
    """A scenario bundled with the package; outputs default to ``./results``."""
    path = DATA_DIR / f"{name}.ini"
    if not path.exists():
        raise ScenarioError("file", f"no shipped scenario named {name!r}")
    return parse_scenario(path.read_text(), name=name, base_dir=".")
