"""Scene builders and drivers: blade/roller spreading and the funnel
angle-of-repose test, plus surface-energy calibration against a target
angle.

Spreading layout (x along the traverse, y periodic, z up)::

    | tool |  reservoir  |        build track         | pit
    0    x_res0      x_track0                  x_end = domain x_hi

The reservoir pile is generated and settled between two temporary gates,
then the tool sweeps from the back of the reservoir until the line where
it forms the layer (blade trailing face, roller axis) has passed ``x_end``.
The reservoir position does not depend on the tool, so blade and roller
runs can share one settled pile.
Particles pushed past ``x_end`` fall into the pit and are deactivated.
Layer metrics are evaluated on the build track minus end margins.
"""

from __future__ import annotations

import logging
import math
import time
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .core import (Box, Cylinder, MaterialParams, ParticleSet, SimConfig, SizeDistribution,
                   generate_pile)
from .errors import CalibrationError, MeasurementError
from .integrator import Simulation
from .metrics import LayerMetrics, Region, layer_metrics, surface_profile
from .walls import AxisymmetricWall, Plane, ToolKinematics

log = logging.getLogger(__name__)

FILL_FRACTION = 0.3  # solid fraction of the random insertion region


# ---------------------------------------------------------------- spreading


@dataclass(frozen=True)
class SpreadScene:
    tool: str = "blade"
    t0_ratio: float = 3.0
    d_max0: float = 50e-6
    traverse_speed: float = 0.05
    track_length: float = 1.0e-3
    track_width: float = 0.5e-3
    reservoir_length: float = 0.6e-3
    reservoir_particles: int = 6000
    blade_thickness: float = 100e-6
    roller_radius: float = 500e-6
    roller_rotation: str = "none"  # "none" | "counter"
    roller_speed_ratio: float = 1.0  # surface speed / traverse speed when counter-rotating
    roller_omega: float | None = None  # explicit spin [rad/s], overrides the two above
    end_margin_ratio: float = 5.0  # metrics skip this many d_max0 at each track end
    settle_time_max: float = 0.03
    relax_time: float = 0.002

    def __post_init__(self):
        from .errors import ConfigError
        if self.tool not in ("blade", "roller"):
            raise ConfigError(f"tool must be 'blade' or 'roller', got {self.tool!r}")
        if self.roller_rotation not in ("none", "counter"):
            raise ConfigError("roller_rotation must be 'none' or 'counter'")
        for name in ("t0_ratio", "d_max0", "traverse_speed", "track_length", "track_width",
                     "reservoir_length"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be > 0")
        if self.reservoir_particles < 0:
            raise ConfigError("reservoir_particles must be >= 0")
        if 2 * self.end_margin_ratio * self.d_max0 >= self.track_length:
            raise ConfigError("track too short for the end margins")

    @property
    def t0(self) -> float:
        return self.t0_ratio * self.d_max0

    @property
    def roller_omega_value(self) -> float:
        """Roller spin in rad/s, positive = counter-rotation."""
        if self.roller_omega is not None:
            return float(self.roller_omega)
        if self.roller_rotation == "counter":
            return self.roller_speed_ratio * self.traverse_speed / self.roller_radius
        return 0.0

    @property
    def tool_extent(self) -> float:
        return self.blade_thickness if self.tool == "blade" else 2.0 * self.roller_radius

    @property
    def x_res0(self) -> float:
        # room behind the pile for the largest tool
        return max(self.blade_thickness, 2.0 * self.roller_radius)

    @property
    def x_track0(self) -> float:
        return self.x_res0 + self.reservoir_length

    @property
    def x_end(self) -> float:
        return self.x_track0 + self.track_length

    @property
    def metric_region(self) -> Region:
        m = self.end_margin_ratio * self.d_max0
        return Region(self.x_track0 + m, self.x_end - m, 0.0, self.track_width)

    def domain_height(self) -> float:
        return max(4e-3, 2.0 * self.roller_radius + self.t0 + 1e-3)

    def sim_config(self, base: SimConfig) -> SimConfig:
        return replace(
            base,
            domain_lo=(0.0, 0.0, 0.0),
            domain_hi=(self.x_end, self.track_width, self.domain_height()),
            boundaries={"x_lo": "wall", "x_hi": "open", "y_lo": "periodic",
                        "y_hi": "periodic", "z_lo": "wall", "z_hi": "open"},
            adhesive_faces=("z_lo",))

    def tool_kinematics(self, t_start: float) -> ToolKinematics:
        half = 0.5 * self.tool_extent
        start = self.x_res0 - half
        # layer-forming line relative to the tool centre
        sweep = -half if self.tool == "blade" else 0.0
        travel = self.x_end + self.d_max0 - (start + sweep)
        omega = 0.0
        if self.tool == "roller":
            omega = self.roller_omega_value
        return ToolKinematics(
            kind=self.tool, gap=self.t0, speed=self.traverse_speed,
            start_x=start, t_start=t_start,
            t_stop=t_start + travel / self.traverse_speed,
            blade_thickness=self.blade_thickness, blade_height=self.domain_height(),
            roller_radius=self.roller_radius, omega=omega)


@dataclass
class SpreadResult:
    particles: ParticleSet
    metrics: LayerMetrics
    volumes: dict
    reservoir: ParticleSet
    flagged: bool = False
    runtime: float = 0.0
    steps: int = 0
    dt: float = 0.0


def _gates(scene: SpreadScene):
    return [Plane((scene.x_res0, 0, 0), (1, 0, 0), name="gate_back"),
            Plane((scene.x_track0, 0, 0), (-1, 0, 0), name="gate_front")]


def build_reservoir(scene: SpreadScene, dist: SizeDistribution, material: MaterialParams,
                    config: SimConfig, progress_every: int = 0) -> ParticleSet:
    """Generate the reservoir pile and settle it under gravity between gates."""
    cfg = scene.sim_config(config)
    n = scene.reservoir_particles
    if n == 0:
        return ParticleSet.empty()
    mean_vol = _mean_particle_volume(dist)
    height = n * mean_vol / (FILL_FRACTION * scene.reservoir_length * scene.track_width)
    region = Box((scene.x_res0, 0.0, 0.0),
                 (scene.x_track0, scene.track_width, height + dist.d_max))
    pile = generate_pile(dist, n, region, cfg, min_gap=0.02 * dist.d_min)
    sim = Simulation(pile, material, cfg, walls=_gates(scene), progress_every=progress_every)
    sim.run(duration=scene.settle_time_max, stop="quiescent", min_duration=0.0)
    return sim.particles


def _mean_particle_volume(dist: SizeDistribution, n: int = 20001) -> float:
    q = (np.arange(n) + 0.5) / n
    return float(np.mean(np.pi / 6.0 * dist.quantile(q) ** 3))


def run_spreading(scene: SpreadScene, material: MaterialParams, config: SimConfig,
                  reservoir: ParticleSet, progress_every: int = 0,
                  on_snapshot=None) -> SpreadResult:
    """Sweep the tool over the settled reservoir and measure the layer."""
    started = time.perf_counter()
    cfg = scene.sim_config(config)
    region = scene.metric_region
    v0 = float(np.sum(reservoir.volume()[reservoir.active])) if len(reservoir) else 0.0
    if len(reservoir) == 0 or not reservoir.active.any():
        m = layer_metrics(ParticleSet.empty(), region, scene.t0, scene.d_max0,
                          periodic_y=True)
        return SpreadResult(reservoir, m, {"initial": 0.0, "deposited": 0.0,
                                           "swept_out": 0.0, "remainder": 0.0},
                            reservoir, flagged=True)
    needed = 0.74 * scene.track_length * scene.track_width * scene.t0
    flagged = v0 < needed
    if flagged:
        warnings.warn(f"reservoir volume {v0:.3g} m^3 below the {needed:.3g} m^3 needed "
                      "to fill the track at phi=0.74; metrics flagged", RuntimeWarning)
    tool = scene.tool_kinematics(t_start=0.0)
    sim = Simulation(reservoir, material, cfg, walls=[tool], progress_every=progress_every)
    sim.run(duration=tool.t_stop + scene.relax_time, stop=None,
            snapshot_interval=config.snapshot_interval if on_snapshot else 0,
            on_snapshot=on_snapshot)
    final = sim.particles
    vol = final.volume()
    front = tool.front_x(sim.time)
    ahead = final.active & (final.position[:, 0] > front - scene.tool_extent)
    volumes = {
        "initial": v0,
        "swept_out": float(np.sum(vol[~final.active])),
        "remainder": float(np.sum(vol[ahead])),
        "deposited": float(np.sum(vol[final.active & ~ahead])),
    }
    metrics = layer_metrics(final, region, scene.t0, scene.d_max0, periodic_y=True)
    return SpreadResult(final, metrics, volumes, reservoir, flagged,
                        time.perf_counter() - started, sim.steps, sim.dt)


# ---------------------------------------------------------------- angle of repose


@dataclass(frozen=True)
class FunnelScene:
    """Funnel discharge onto a walled collection plate.

    The powder charge starts at rest, loosely inserted inside the funnel's
    outlet tube (diameter ``outlet_diameter``) whose mouth sits
    ``drop_height`` above the plate, and falls out under gravity.
    """

    n_particles: int = 3000
    outlet_diameter: float = 500e-6
    drop_height: float = 300e-6
    base_size: float = 2.5e-3
    duration: float = 0.08
    min_duration: float = 0.04
    band: tuple = (0.2, 0.8)
    surface_spacing: float | None = None  # default d50/2
    min_surface_points: int = 200

    def __post_init__(self):
        from .errors import ConfigError
        if self.n_particles < 1:
            raise ConfigError("n_particles must be >= 1")
        if not (0 <= self.band[0] < self.band[1] <= 1):
            raise ConfigError("band must satisfy 0 <= lo < hi <= 1")

    def charge_height(self, dist: SizeDistribution) -> float:
        area = math.pi * (0.5 * self.outlet_diameter) ** 2
        return self.n_particles * _mean_particle_volume(dist) / (FILL_FRACTION * area)

    def sim_config(self, base: SimConfig, dist: SizeDistribution) -> SimConfig:
        b = 0.5 * self.base_size
        top = self.drop_height + self.charge_height(dist) + 5 * dist.d_max
        return replace(
            base,
            domain_lo=(-b, -b, 0.0), domain_hi=(b, b, top),
            boundaries={"x_lo": "wall", "x_hi": "wall", "y_lo": "wall", "y_hi": "wall",
                        "z_lo": "wall", "z_hi": "open"},
            adhesive_faces=("z_lo",))


def check_funnel(scene: FunnelScene, dist: SizeDistribution) -> None:
    from .errors import ConfigError
    if scene.outlet_diameter < 5 * dist.d_max:
        raise ConfigError(
            f"outlet diameter {scene.outlet_diameter:.3g} m below 5*d_max = "
            f"{5 * dist.d_max:.3g} m")


def fit_cone_angle(points: np.ndarray, axis_xy=(0.0, 0.0), band=(0.2, 0.8),
                   min_points: int = 200) -> float:
    """Least-squares cone ``z = h - tan(a)*rho`` through surface points in
    the height band; returns ``a`` in degrees."""
    pts = np.asarray(points, float)
    if len(pts) == 0:
        raise MeasurementError("no heap surface points")
    h = pts[:, 2].max()
    sel = (pts[:, 2] >= band[0] * h) & (pts[:, 2] <= band[1] * h)
    if sel.sum() < min_points:
        raise MeasurementError(f"only {int(sel.sum())} surface points in the fit band "
                               f"(need {min_points})")
    rho = np.hypot(pts[sel, 0] - axis_xy[0], pts[sel, 1] - axis_xy[1])
    A = np.column_stack([np.ones_like(rho), -rho])
    (_, slope), *_ = np.linalg.lstsq(A, pts[sel, 2], rcond=None)
    return float(np.degrees(np.arctan(max(slope, 0.0))))


def heap_surface_points(particles: ParticleSet, scene: FunnelScene,
                        dist: SizeDistribution) -> np.ndarray:
    b = 0.5 * scene.base_size
    spacing = scene.surface_spacing or 0.5 * dist.d50
    z, xe, ye = surface_profile(particles, Region(-b, b, -b, b), spacing)
    xc = 0.5 * (xe[1:] + xe[:-1])
    yc = 0.5 * (ye[1:] + ye[:-1])
    X, Y = np.meshgrid(xc, yc, indexing="ij")
    keep = z > 0
    return np.column_stack([X[keep], Y[keep], z[keep]])


@dataclass
class AorResult:
    angle: float
    particles: ParticleSet
    points: np.ndarray
    steps: int
    runtime: float


def run_static_aor(scene: FunnelScene, material: MaterialParams, config: SimConfig,
                   dist: SizeDistribution | None = None, progress_every: int = 0,
                   on_snapshot=None) -> AorResult:
    """Discharge the funnel, let the heap come to rest, fit the cone angle."""
    dist = dist or SizeDistribution()
    check_funnel(scene, dist)
    started = time.perf_counter()
    cfg = scene.sim_config(config, dist)
    r_out = 0.5 * scene.outlet_diameter
    z0 = scene.drop_height
    z1 = z0 + scene.charge_height(dist)
    charge = generate_pile(dist, scene.n_particles, Cylinder((0.0, 0.0), r_out, z0, z1), cfg,
                           min_gap=0.02 * dist.d_min)
    tube = AxisymmetricWall((0.0, 0.0), r_out, z0, r_out, cfg.domain_hi[2], name="funnel")
    sim = Simulation(charge, material, cfg, walls=[tube], progress_every=progress_every)
    sim.run(duration=scene.duration, stop="quiescent", min_duration=scene.min_duration,
            snapshot_interval=config.snapshot_interval if on_snapshot else 0,
            on_snapshot=on_snapshot)
    final = sim.particles
    pts = heap_surface_points(final, scene, dist)
    angle = fit_cone_angle(pts, (0.0, 0.0), scene.band, scene.min_surface_points)
    return AorResult(angle, final, pts, sim.steps, time.perf_counter() - started)


@dataclass
class Calibration:
    gamma: float
    angle: float
    trace: list = field(default_factory=list)  # (gamma, angle) per evaluation
    iterations: int = 0
    bracket: tuple = (0.0, 0.0)


def calibrate_gamma(target_aor: float, bracket: tuple, measure, tol: float = 2.0,
                    max_iter: int = 8) -> Calibration:
    """Bisect the surface energy until the measured angle is within ``tol``.

    ``measure(gamma) -> angle`` runs one funnel test.  The bracket ends are
    measured first and must straddle the target.
    """
    lo, hi = map(float, bracket)
    if not hi > lo:
        raise CalibrationError(f"invalid bracket [{lo}, {hi}]: need gamma_lo < gamma_hi")
    trace = []
    a_lo = measure(lo)
    a_hi = measure(hi)
    trace += [(lo, a_lo), (hi, a_hi)]
    if not a_lo < target_aor < a_hi:
        raise CalibrationError(
            f"bracket does not straddle target {target_aor:.2f} deg: "
            f"AOR({lo:.3g})={a_lo:.2f} deg, AOR({hi:.3g})={a_hi:.2f} deg")
    best = min(trace, key=lambda ga: abs(ga[1] - target_aor))
    it = 0
    while it < max_iter and abs(best[1] - target_aor) > tol:
        mid = 0.5 * (lo + hi)
        a = measure(mid)
        it += 1
        trace.append((mid, a))
        if abs(a - target_aor) < abs(best[1] - target_aor):
            best = (mid, a)
        if abs(a - target_aor) <= tol:
            best = (mid, a)
            break
        if a < target_aor:
            lo = mid
        else:
            hi = mid
    return Calibration(best[0], best[1], trace, it, (lo, hi))


def aor_measure(scene: FunnelScene, material: MaterialParams, config: SimConfig,
                dist: SizeDistribution | None = None, cache: dict | None = None):
    """Build a ``measure(gamma)`` callable for :func:`calibrate_gamma`.

    Results are memoised per gamma (runs are deterministic).
    """
    cache = {} if cache is None else cache

    def measure(gamma: float) -> float:
        key = float(gamma)
        if key not in cache:
            cache[key] = run_static_aor(scene, material.with_gamma(gamma), config, dist).angle
            log.info("AOR(gamma=%.4g) = %.2f deg", gamma, cache[key])
        return cache[key]

    return measure
