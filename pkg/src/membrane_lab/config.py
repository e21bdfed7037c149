"""TOML experiment configuration.

Sections: ``[coefficients]``, ``[membranes]``, ``[scaling]``,
``[simulation]`` plus optional ``[exit]`` and ``[converge]``.  Every field is
addressable by dotted key, which is also how errors name them.
"""
from __future__ import annotations

import hashlib
import json
import math
import re
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError, NonPositiveDensity, StepTooLarge, ValidationError
from .model import (CoefficientField, Coupling, MembraneDensity, PowerLaw, PresetError,
                    ScalingRegime, make_field, parse_preset)

SCHEMES = ("euler", "stripwalk")
SOJOURN_MODES = ("mean", "exact")


@dataclass(frozen=True)
class SimConfig:
    """Run parameters shared by all samplers.

    ``step`` and ``rho`` left as ``None`` are filled in by :meth:`resolved`
    from the membrane spacing and the Sigma00 bound.
    """

    initial_x: float = 0.0
    initial_y: tuple = ()
    horizon: float = 1.0
    n_paths: int = 1000
    master_seed: int = 0
    scheme: str = "euler"
    step: float | None = None
    rho: float | None = None
    grid_points: int = 101
    sojourn: str = "exact"
    bridge: bool = False
    limit_steps: int = 2000

    def __post_init__(self):
        if not self.horizon > 0:
            raise ConfigError("simulation.horizon", "must be positive")
        if self.n_paths < 1:
            raise ConfigError("simulation.n_paths", "must be at least 1")
        if not 0 <= self.master_seed < 2**64:
            raise ConfigError("simulation.seed", "must fit in 64 unsigned bits")
        if self.scheme not in SCHEMES:
            raise ConfigError("simulation.scheme", f"choose one of {SCHEMES}")
        if self.sojourn not in SOJOURN_MODES:
            raise ConfigError("simulation.sojourn", f"choose one of {SOJOURN_MODES}")
        if self.step is not None and not self.step > 0:
            raise ConfigError("simulation.step", "must be positive")
        if self.rho is not None and not self.rho > 0:
            raise ConfigError("simulation.rho", "must be positive")
        if self.grid_points < 2:
            raise ConfigError("simulation.grid_points", "need at least 2 grid points")

    @property
    def grid(self) -> np.ndarray:
        return np.linspace(0.0, self.horizon, self.grid_points)

    def resolved(self, epsilon: float, d_min: float, sigma00_max: float) -> "SimConfig":
        """Fill default rho = eps*d_min/8 and h = rho^2/(10*|Sigma00|), then check h."""
        rho = self.rho if self.rho is not None else epsilon * d_min / 8.0
        step = self.step if self.step is not None else rho * rho / (10.0 * sigma00_max)
        out = replace(self, rho=rho, step=step)
        out.check_step(sigma00_max)
        return out

    def check_step(self, sigma00_max: float) -> None:
        if self.scheme == "euler" and math.sqrt(sigma00_max * self.step) > self.rho / 3.0 * (1 + 1e-12):
            raise StepTooLarge(f"sqrt(|Sigma00| h) = {math.sqrt(sigma00_max * self.step):g} exceeds "
                               f"rho/3 = {self.rho / 3.0:g}")

    def with_overrides(self, **kw) -> "SimConfig":
        kw = {k: v for k, v in kw.items() if v is not None}
        return replace(self, **kw) if kw else self


@dataclass(frozen=True, eq=False)
class Experiment:
    """A fully parsed config file."""

    name: str
    field: CoefficientField
    density: MembraneDensity
    regime: ScalingRegime
    coupling: Coupling
    sim: SimConfig
    rule: str
    raw: Mapping[str, Any]
    text: str
    source: str = "<string>"
    exit: Mapping[str, Any] = field(default_factory=dict)
    converge: Mapping[str, Any] = field(default_factory=dict)

    @property
    def config_hash(self) -> str:
        return config_hash(self.raw)


def config_hash(raw: Mapping[str, Any]) -> str:
    blob = json.dumps(raw, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _line_of(text: str, dotted: str) -> int | None:
    """Best-effort line number of a dotted key in TOML source."""
    parts = dotted.split(".")
    section, key = parts[:-1], parts[-1]
    key = re.sub(r"\[\d+\]$", "", key)
    current: list[str] = []
    found_section = None
    for no, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        m = re.match(r"^\[\s*([^\]]+?)\s*\]$", s)
        if m:
            current = [p.strip() for p in m.group(1).split(".")]
            if current == section:
                found_section = no
            continue
        if current == section and re.match(rf"^{re.escape(key)}\s*=", s):
            return no
        if current == section[:len(current)] and len(section) > len(current):
            tail = ".".join(section[len(current):] + [key])
            if re.match(rf"^{re.escape(tail)}\s*=", s) or re.match(
                    rf"^{re.escape(section[len(current)])}\s*=", s):
                return no
    return found_section


class _Reader:
    def __init__(self, raw: Mapping[str, Any], text: str):
        self.raw = raw
        self.text = text

    def error(self, dotted: str, msg: str) -> ConfigError:
        return ConfigError(dotted, msg, _line_of(self.text, dotted))

    def section(self, name: str, required: bool = True) -> Mapping[str, Any]:
        sec = self.raw.get(name)
        if sec is None:
            if required:
                raise ConfigError(name, "missing section")
            return {}
        if not isinstance(sec, Mapping):
            raise self.error(name, "must be a table")
        return sec

    def number(self, sec: str, key: str, default=None, lo=None, hi=None, integer=False):
        tab = self.raw.get(sec, {})
        if key not in tab:
            if default is None:
                raise self.error(f"{sec}.{key}", "missing")
            return default
        v = tab[key]
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise self.error(f"{sec}.{key}", f"expected a number, got {v!r}")
        if integer and (not isinstance(v, int)):
            raise self.error(f"{sec}.{key}", "expected an integer")
        if not math.isfinite(v):
            raise self.error(f"{sec}.{key}", "must be finite")
        if lo is not None and v < lo:
            raise self.error(f"{sec}.{key}", f"must be >= {lo}")
        if hi is not None and v > hi:
            raise self.error(f"{sec}.{key}", f"must be <= {hi}")
        return v


def _power_law(r: _Reader, sec: Mapping, key: str, value_key: str) -> PowerLaw | None:
    spec = sec.get(key)
    if spec is None:
        return None
    if not isinstance(spec, Mapping):
        raise r.error(f"scaling.{key}", "expected a table {coef = .., power = ..}")
    coef = spec.get("coef", 1.0)
    power = spec.get("power", 1.0)
    if not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in (coef, power)):
        raise r.error(f"scaling.{key}", "coef and power must be numbers")
    if coef < 0 or power <= 0:
        raise r.error(f"scaling.{key}", "need coef >= 0 and power > 0")
    return PowerLaw(float(coef), float(power))


def parse_experiment(text: str, source: str = "<string>") -> Experiment:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        m = re.search(r"line (\d+)", str(exc))
        raise ConfigError("<toml>", str(exc), int(m.group(1)) if m else None) from None
    r = _Reader(raw, text)
    known = {"scenario", "coefficients", "membranes", "scaling", "simulation", "exit", "converge"}
    for k in raw:
        if k not in known:
            raise r.error(k, f"unknown section; expected one of {sorted(known)}")
    name = str(raw.get("scenario", {}).get("name", Path(source).stem))

    co = r.section("coefficients")
    dim_y = co.get("dim_y", None)
    if dim_y is not None and (isinstance(dim_y, bool) or not isinstance(dim_y, int) or dim_y < 0):
        raise r.error("coefficients.dim_y", "must be a non-negative integer")
    for key in ("sigma", "beta"):
        if key not in co:
            raise r.error(f"coefficients.{key}", "missing")
    sigma = co["sigma"]
    if not isinstance(sigma, list) or not sigma or not all(isinstance(row, list) for row in sigma):
        raise r.error("coefficients.sigma", "expected a nested list with d+1 rows")
    dy = len(sigma) - 1 if dim_y is None else dim_y
    b = co.get("b", [0.0] * (dy + 1))
    theta = co.get("theta", [0.0] * dy)
    gamma = co.get("gamma", 0.0)
    # parse each component on its own so the error names the right key
    for key, val in (("beta", co.get("beta")), ("gamma", gamma)):
        try:
            parse_preset(val, dy)
        except PresetError as exc:
            raise r.error(f"coefficients.{key}", str(exc)) from None
    for key, vals in (("b", b), ("theta", theta)):
        for j, v in enumerate(vals if isinstance(vals, list) else [vals]):
            try:
                parse_preset(v, dy)
            except PresetError as exc:
                raise r.error(f"coefficients.{key}", f"entry {j}: {exc}") from None
    try:
        fld = make_field(sigma, b, co["beta"], theta, gamma, dim_y=dy, bounds=co.get("bounds"))
    except PresetError as exc:
        raise r.error("coefficients", str(exc)) from None
    glo, _ = fld.gamma_preset.value_range()
    if glo < 0.0:
        raise r.error("coefficients.gamma", f"stickiness must be non-negative; the preset reaches {glo:g}")
    if fld.bounds.sigma00_floor <= 0.0:
        raise r.error("coefficients.sigma", "row 0 can vanish: Sigma00 needs a positive floor "
                                            "(declare coefficients.bounds.sigma00_floor if it holds)")

    mem = r.section("membranes")
    try:
        density = MembraneDensity.from_spec(mem.get("density", 1.0), mem.get("d_min"),
                                            mem.get("d_max"), mem.get("lipschitz"))
    except NonPositiveDensity as exc:
        raise r.error("membranes.density", str(exc)) from None
    except (PresetError, ValueError) as exc:
        raise r.error("membranes.density", str(exc)) from None
    rule = mem.get("rule", "integral")
    if rule not in ("integral", "inverse"):
        raise r.error("membranes.rule", "choose 'integral' or 'inverse'")

    sc = r.section("scaling")
    eps = r.number("scaling", "epsilon", lo=0.0, hi=1.0)
    if eps <= 0:
        raise r.error("scaling.epsilon", "must be positive")
    delta_law = _power_law(r, sc, "delta_rule", "delta")
    lam_law = _power_law(r, sc, "lambda_rule", "lambda")
    delta = r.number("scaling", "delta", default=delta_law(eps) if delta_law else eps, lo=0.0, hi=1.0)
    lam = r.number("scaling", "lambda", default=lam_law(eps) if lam_law else 0.0, lo=0.0, hi=1.0)
    if delta <= 0:
        raise r.error("scaling.delta", "must be positive")
    coupling = Coupling(delta_law or PowerLaw(delta / eps, 1.0),
                        lam_law or PowerLaw(lam / eps, 1.0))
    try:
        regime = ScalingRegime(float(eps), float(delta), float(lam))
        regime.check_permeability(fld.bounds.beta)
    except ValidationError as exc:
        raise r.error("scaling.delta", str(exc)) from None

    si = r.section("simulation", required=False)
    iy = si.get("initial_y", [0.0] * dy)
    if not isinstance(iy, list) or len(iy) != dy:
        raise r.error("simulation.initial_y", f"expected a list of {dy} numbers")
    scheme = si.get("scheme", "euler")
    if scheme not in SCHEMES:
        raise r.error("simulation.scheme", f"choose one of {SCHEMES}")
    sojourn = si.get("sojourn", "exact")
    if sojourn not in SOJOURN_MODES:
        raise r.error("simulation.sojourn", f"choose one of {SOJOURN_MODES}")
    try:
        sim = SimConfig(
            initial_x=float(r.number("simulation", "initial_x", default=0.0)),
            initial_y=tuple(float(v) for v in iy),
            horizon=float(r.number("simulation", "horizon", default=1.0)),
            n_paths=int(r.number("simulation", "n_paths", default=1000, lo=1, integer=True)),
            master_seed=int(r.number("simulation", "seed", default=0, lo=0, integer=True)),
            scheme=scheme,
            step=si.get("step"),
            rho=si.get("rho"),
            grid_points=int(r.number("simulation", "grid_points", default=101, lo=2, integer=True)),
            sojourn=sojourn,
            bridge=bool(si.get("bridge", False)),
            limit_steps=int(r.number("simulation", "limit_steps", default=2000, lo=1, integer=True)),
        )
    except ConfigError as exc:
        raise ConfigError(exc.field, str(exc).split(": ", 1)[-1], _line_of(text, exc.field)) from None
    return Experiment(name, fld, density, regime, coupling, sim, rule, raw, text, source,
                      dict(raw.get("exit", {})), dict(raw.get("converge", {})))


def load_experiment(path: str | Path) -> Experiment:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError("--config", f"cannot read {p}: {exc.strerror}") from None
    return parse_experiment(text, str(p))


def scenario_dir() -> Path:
    return Path(__file__).resolve().parent / "scenarios"


def scenario_path(name: str) -> Path:
    p = scenario_dir() / f"{name}.toml"
    if not p.exists():
        known = sorted(q.stem for q in scenario_dir().glob("*.toml"))
        raise ConfigError("--scenario", f"unknown scenario {name!r}; built-ins: {known}")
    return p
