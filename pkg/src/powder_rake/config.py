"""Flat key-value run configuration with unit suffixes.

One ``key = value [unit]`` per line, ``#`` starts a comment::

    scenario = spread
    tool = roller        # blade | roller
    t0_ratio = 3
    gamma_multiplier = 4
    d50 = 30 um

Every key has a physical dimension; values are converted to SI.  A bare
number is taken as SI.  :func:`write_resolved` writes back every key,
defaults included, in SI so that the file reloads to the same run.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from pathlib import Path

from .core import MaterialParams, SimConfig, SizeDistribution, max_stable_dt
from .errors import ConfigError
from .scenarios import FunnelScene, SpreadScene

UNITS = {
    "length": {"m": 1.0, "mm": 1e-3, "um": 1e-6, "µm": 1e-6, "nm": 1e-9},
    "time": {"s": 1.0, "ms": 1e-3, "us": 1e-6, "µs": 1e-6},
    "speed": {"m/s": 1.0, "mm/s": 1e-3},
    "rate": {"rad/s": 1.0, "1/s": 1.0},
    "accel": {"m/s^2": 1.0, "m/s2": 1.0},
    "density": {"kg/m^3": 1.0, "kg/m3": 1.0, "g/cm^3": 1e3, "g/cm3": 1e3},
    "stiffness": {"N/m": 1.0},
    "surface_energy": {"J/m^2": 1.0, "J/m2": 1.0, "mJ/m^2": 1e-3, "mJ/m2": 1e-3},
    "energy": {"J": 1.0},
    "angle": {"deg": 1.0},
    "volume": {"m^3": 1.0, "m3": 1.0},
    "steps": {"steps": 1.0},
    "1": {},
}


@dataclass(frozen=True)
class Key:
    name: str
    kind: str  # float | int | str | list
    default: object
    dim: str = "1"
    doc: str = ""
    choices: tuple = ()
    required: bool = False


_SCENE = SpreadScene()
_FUNNEL = FunnelScene()
_MAT = MaterialParams()
_DIST = SizeDistribution()

KEYS = [
    Key("scenario", "str", None, doc="gen | spread | aor | calibrate | sweep",
        choices=("gen", "spread", "aor", "calibrate", "sweep"), required=True),
    Key("seed", "int", 0, doc="RNG seed for particle generation"),
    # material
    Key("density", "float", _MAT.density, "density", "particle density"),
    Key("k_n", "float", _MAT.k_n, "stiffness",
        "normal contact stiffness; see estimate_stiffness() for the overlap rule"),
    Key("restitution", "float", _MAT.restitution, doc="normal restitution coefficient"),
    Key("friction", "float", _MAT.friction, doc="Coulomb friction coefficient"),
    Key("rolling_friction", "float", _MAT.rolling_friction, doc="rolling resistance coefficient"),
    Key("gamma_ref", "float", 1.0e-4, "surface_energy", "reference surface energy"),
    Key("gamma_multiplier", "float", 1.0, doc="gamma = gamma_ref * gamma_multiplier"),
    Key("hamaker", "float", _MAT.hamaker, "energy", "Hamaker constant"),
    Key("c_fs0", "float", _MAT.c_fs0, doc="adhesion cut-off ratio F_S(g*)/F_S0"),
    # size distribution
    Key("d50", "float", _DIST.d50, "length", "median diameter of the truncated distribution"),
    Key("sigma_ln", "float", _DIST.sigma_ln, doc="log-normal shape parameter"),
    Key("d_min", "float", _DIST.d_min, "length", "smallest diameter"),
    Key("d_max", "float", _DIST.d_max, "length", "largest diameter"),
    # integration
    Key("dt", "float", None, "time", "time step; 'auto' = 0.2*sqrt(m_min/k_n)"),
    Key("gravity", "float", 9.81, "accel", "gravitational acceleration (acts along -z)"),
    Key("snapshot_interval", "int", 0, "steps", "snapshot cadence, 0 = final state only"),
    # spreading
    Key("tool", "str", _SCENE.tool, doc="blade | roller", choices=("blade", "roller")),
    Key("t0_ratio", "float", _SCENE.t0_ratio, doc="nominal layer thickness / d_max0"),
    Key("d_max0", "float", _SCENE.d_max0, "length", "nominal maximal particle diameter"),
    Key("traverse_speed", "float", _SCENE.traverse_speed, "speed", "tool speed along x"),
    Key("track_length", "float", _SCENE.track_length, "length", "spread length"),
    Key("track_width", "float", _SCENE.track_width, "length", "periodic width along y"),
    Key("reservoir_length", "float", _SCENE.reservoir_length, "length", "reservoir length"),
    Key("reservoir_particles", "int", _SCENE.reservoir_particles, doc="particles in the pile"),
    Key("blade_thickness", "float", _SCENE.blade_thickness, "length", "blade thickness"),
    Key("roller_radius", "float", _SCENE.roller_radius, "length", "roller radius"),
    Key("roller_rotation", "str", _SCENE.roller_rotation, doc="none | counter",
        choices=("none", "counter")),
    Key("roller_speed_ratio", "float", _SCENE.roller_speed_ratio,
        doc="counter-rotation surface speed / traverse speed"),
    Key("roller_omega", "float", None, "rate",
        "explicit roller spin (positive = counter-rotation); 'auto' = from roller_rotation"),
    Key("end_margin_ratio", "float", _SCENE.end_margin_ratio,
        doc="track-end margins excluded from metrics, in d_max0"),
    Key("settle_time_max", "float", _SCENE.settle_time_max, "time", "reservoir settling cap"),
    Key("relax_time", "float", _SCENE.relax_time, "time", "relaxation after the tool stops"),
    # funnel
    Key("n_particles", "int", _FUNNEL.n_particles, doc="particles in the funnel charge"),
    Key("outlet_diameter", "float", _FUNNEL.outlet_diameter, "length", "funnel outlet diameter"),
    Key("drop_height", "float", _FUNNEL.drop_height, "length", "outlet height above the plate"),
    Key("base_size", "float", _FUNNEL.base_size, "length", "collection box side length"),
    Key("aor_duration", "float", _FUNNEL.duration, "time", "funnel run time cap"),
    Key("aor_min_duration", "float", _FUNNEL.min_duration, "time",
        "earliest time the heap may be declared at rest"),
    # calibration
    Key("target_aor", "float", None, "angle", "angle of repose to match"),
    Key("gamma_lo", "float", 0.0, "surface_energy", "lower bracket end"),
    Key("gamma_hi", "float", 4.0e-4, "surface_energy", "upper bracket end"),
    Key("calib_tol", "float", 2.0, "angle", "accepted |AOR - target|"),
    Key("calib_max_iter", "int", 8, doc="bisection iterations cap"),
    # sweep
    Key("sweep_t0_ratios", "list", (2.0, 3.0, 4.0), doc="t0_ratio values for 'sweep'"),
    Key("sweep_gamma_multipliers", "list", (1.0,), doc="gamma_multiplier values for 'sweep'"),
]
KEY_INDEX = {k.name: k for k in KEYS}

_LINE = re.compile(r"^\s*([A-Za-z_][A-Za-z0-9_]*)\s*=\s*(.*?)\s*$")
_NUMBER = re.compile(r"^([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?|[-+]?inf)\s*(.*)$")


def _number(key: Key, text: str) -> float:
    m = _NUMBER.match(text)
    if not m:
        raise ConfigError(f"{key.name}: cannot parse number from {text!r}")
    value, unit = float(m.group(1)), m.group(2).strip()
    if not unit:
        return value
    units = UNITS[key.dim]
    if unit not in units:
        allowed = ", ".join(units) or "none (dimensionless)"
        raise ConfigError(f"{key.name}: unit {unit!r} does not match a {key.dim} quantity; "
                          f"allowed units: {allowed}")
    return value * units[unit]


def parse_value(key: Key, text: str):
    if key.kind == "str":
        if key.choices and text not in key.choices:
            raise ConfigError(f"{key.name} must be one of {key.choices}, got {text!r}")
        return text
    if key.default is None and text.lower() in ("auto", "none"):
        return None
    if key.kind == "list":
        items = [t for t in re.split(r"[,\s]+", text) if t]
        if not items:
            raise ConfigError(f"{key.name}: empty list")
        return tuple(_number(key, t) for t in items)
    v = _number(key, text)
    if key.kind == "int":
        if v != int(v):
            raise ConfigError(f"{key.name} must be an integer, got {text!r}")
        return int(v)
    return v


def parse_text(text: str, source: str = "<config>") -> dict:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        m = _LINE.match(line)
        if not m:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        name, value = m.group(1), m.group(2)
        if name not in KEY_INDEX:
            raise ConfigError(f"{source}:{lineno}: unknown key {name!r}; valid keys: "
                              + ", ".join(sorted(KEY_INDEX)))
        if name in values:
            raise ConfigError(f"{source}:{lineno}: duplicate key {name!r}")
        values[name] = parse_value(KEY_INDEX[name], value)
    return values


@dataclass(frozen=True)
class RunConfig:
    """A fully resolved configuration: every key has a value."""

    values: dict = field(default_factory=dict)

    def __getitem__(self, name):
        return self.values[name]

    @property
    def scenario(self) -> str:
        return self.values["scenario"]

    @property
    def seed(self) -> int:
        return self.values["seed"]

    @property
    def gamma(self) -> float:
        return self.values["gamma_ref"] * self.values["gamma_multiplier"]

    @property
    def material(self) -> MaterialParams:
        v = self.values
        return MaterialParams(density=v["density"], k_n=v["k_n"], restitution=v["restitution"],
                              friction=v["friction"], rolling_friction=v["rolling_friction"],
                              gamma=self.gamma, hamaker=v["hamaker"], c_fs0=v["c_fs0"])

    @property
    def distribution(self) -> SizeDistribution:
        v = self.values
        return SizeDistribution(d50=v["d50"], sigma_ln=v["sigma_ln"], d_min=v["d_min"],
                                d_max=v["d_max"])

    @property
    def sim_config(self) -> SimConfig:
        v = self.values
        return SimConfig(gravity=(0.0, 0.0, -v["gravity"]), dt=v["dt"], seed=v["seed"],
                         snapshot_interval=v["snapshot_interval"])

    @property
    def spread_scene(self) -> SpreadScene:
        v = self.values
        return SpreadScene(
            tool=v["tool"], t0_ratio=v["t0_ratio"], d_max0=v["d_max0"],
            traverse_speed=v["traverse_speed"], track_length=v["track_length"],
            track_width=v["track_width"], reservoir_length=v["reservoir_length"],
            reservoir_particles=v["reservoir_particles"], blade_thickness=v["blade_thickness"],
            roller_radius=v["roller_radius"], roller_rotation=v["roller_rotation"],
            roller_speed_ratio=v["roller_speed_ratio"], roller_omega=v["roller_omega"],
            end_margin_ratio=v["end_margin_ratio"], settle_time_max=v["settle_time_max"],
            relax_time=v["relax_time"])

    @property
    def funnel_scene(self) -> FunnelScene:
        v = self.values
        return FunnelScene(n_particles=v["n_particles"], outlet_diameter=v["outlet_diameter"],
                           drop_height=v["drop_height"], base_size=v["base_size"],
                           duration=v["aor_duration"], min_duration=v["aor_min_duration"])

    def with_values(self, **changes) -> "RunConfig":
        return resolve({**self.values, **changes})

    def admissible_dt(self) -> float:
        """Stability limit for the lightest particle the distribution allows."""
        m_min = self.material.mass(0.5 * self.distribution.d_min)
        return max_stable_dt(float(m_min), self.values["k_n"])


def resolve(values: dict) -> RunConfig:
    """Fill defaults and validate."""
    missing = [k.name for k in KEYS if k.required and k.name not in values]
    if missing:
        raise ConfigError("missing mandatory key(s): " + ", ".join(missing))
    full = {k.name: values.get(k.name, k.default) for k in KEYS}
    unknown = set(values) - set(full)
    if unknown:
        raise ConfigError(f"unknown key(s) {sorted(unknown)}; valid keys: "
                          + ", ".join(sorted(KEY_INDEX)))
    if full["gamma_ref"] < 0:
        raise ConfigError("gamma_ref must be >= 0 (surface energy cannot be negative)")
    if full["gamma_multiplier"] < 0:
        raise ConfigError("gamma_multiplier must be >= 0 (surface energy cannot be negative)")
    if full["gamma_lo"] < 0 or full["gamma_hi"] < 0:
        raise ConfigError("calibration bracket must satisfy gamma >= 0")
    if full["seed"] < 0:
        raise ConfigError("seed must be a non-negative integer")
    if full["scenario"] == "calibrate" and full["target_aor"] is None:
        raise ConfigError("scenario 'calibrate' needs target_aor")
    cfg = RunConfig(full)
    # construct every domain object once so their invariants are checked
    cfg.material
    cfg.distribution
    cfg.sim_config
    cfg.spread_scene
    cfg.funnel_scene
    dt = full["dt"]
    if dt is not None:
        limit = cfg.admissible_dt()
        if dt > limit * (1 + 1e-12):
            raise ConfigError(f"dt={dt:.4g} s violates the stability rule "
                              f"dt <= 0.2*sqrt(m_min/k_n); admissible dt <= {limit:.4g} s")
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return resolve(parse_text(text, str(path)))


def _format(key: Key, value) -> str:
    if value is None:
        return "auto"
    if key.kind == "str":
        return value
    if key.kind == "list":
        return ", ".join(repr(float(x)) for x in value)
    if key.kind == "int":
        return str(int(value))
    return repr(float(value)) if math.isfinite(value) else str(value)


def format_resolved(cfg: RunConfig) -> str:
    lines = ["# resolved configuration (SI units)"]
    for key in KEYS:
        unit = next(iter(UNITS[key.dim]), "")
        note = f"[{unit}] " if unit else ""
        lines.append(f"{key.name} = {_format(key, cfg.values[key.name])}  # {note}{key.doc}")
    return "\n".join(lines) + "\n"


def write_resolved(cfg: RunConfig, path) -> Path:
    path = Path(path)
    path.write_text(format_resolved(cfg))
    return path


def default_config(scenario: str = "spread", **overrides) -> RunConfig:
    return resolve({"scenario": scenario, **overrides})


def with_scene(cfg: RunConfig, scene: SpreadScene) -> RunConfig:
    """Overwrite the spreading keys from a scene object."""
    return cfg.with_values(**{k: getattr(scene, k) for k in (
        "tool", "t0_ratio", "d_max0", "traverse_speed", "track_length", "track_width",
        "reservoir_length", "reservoir_particles", "blade_thickness", "roller_radius",
        "roller_rotation", "roller_speed_ratio", "roller_omega", "end_margin_ratio",
        "settle_time_max", "relax_time")})


__all__ = ["KEYS", "Key", "RunConfig", "default_config", "format_resolved", "load_config",
           "parse_text", "resolve", "with_scene", "write_resolved"]
