"""Domain types and powder-sample generation.

All quantities are SI (m, kg, s, N, J).  Particles are spheres; the
rotation vector is not stored because no force law depends on
orientation, only the angular velocity is integrated.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from numba import njit
from scipy import optimize, stats

from .errors import CapacityError, ConfigError

FACES = ("x_lo", "x_hi", "y_lo", "y_hi", "z_lo", "z_hi")
BOUNDARY_KINDS = ("wall", "periodic", "open")

# Fraction of the critical time step used by the stability rule.
DT_SAFETY = 0.2

SNAPSHOT_HEADER = ["id", "x", "y", "z", "vx", "vy", "vz", "wx", "wy", "wz", "r"]


@dataclass(frozen=True)
class MaterialParams:
    """Material and contact-law constants.

    ``gamma`` is the surface energy entering the pull-off force
    ``4*pi*gamma*r_eff``; ``hamaker`` and ``c_fs0`` only set the range of
    the attraction.  ``gamma = 0`` switches adhesion off.
    """

    density: float = 4430.0
    k_n: float = 2.5
    restitution: float = 0.4
    friction: float = 0.4
    rolling_friction: float = 0.1
    gamma: float = 1.0e-4
    hamaker: float = 1.0e-19
    c_fs0: float = 0.01
    # tangential / normal stiffness ratio
    k_t_ratio: float = 2.0 / 7.0

    def __post_init__(self):
        checks = [
            (self.density > 0, "density must be > 0"),
            (self.k_n > 0, "k_n must be > 0"),
            (0.0 < self.restitution <= 1.0, "restitution must lie in (0, 1]"),
            (self.friction >= 0, "friction must be >= 0"),
            (self.rolling_friction >= 0, "rolling_friction must be >= 0"),
            (self.gamma >= 0, "gamma must be >= 0"),
            (self.hamaker > 0, "hamaker must be > 0"),
            (0.0 < self.c_fs0 < 1.0, "c_fs0 must lie in (0, 1)"),
            (self.k_t_ratio > 0, "k_t_ratio must be > 0"),
        ]
        for ok, msg in checks:
            if not (ok and all(math.isfinite(v) for v in self.as_tuple())):
                raise ConfigError(f"invalid MaterialParams: {msg}")

    def as_tuple(self):
        return (self.density, self.k_n, self.restitution, self.friction,
                self.rolling_friction, self.gamma, self.hamaker, self.c_fs0,
                self.k_t_ratio)

    def with_gamma(self, gamma: float) -> "MaterialParams":
        return replace(self, gamma=float(gamma))

    def mass(self, radius):
        return 4.0 / 3.0 * np.pi * np.asarray(radius) ** 3 * self.density

    def inertia(self, radius):
        return 0.4 * self.mass(radius) * np.asarray(radius) ** 2


@dataclass(frozen=True)
class SizeDistribution:
    """Truncated log-normal diameter distribution.

    ``d50`` is the median of the *truncated* distribution; the location of
    the underlying log-normal is shifted so that this holds for any bounds.
    """

    d50: float = 30e-6
    sigma_ln: float = math.log(44.0 / 30.0) / 1.2815515655446004
    d_min: float = 15e-6
    d_max: float = 50e-6

    def __post_init__(self):
        if not (0 < self.d_min < self.d50 < self.d_max):
            raise ConfigError(
                f"invalid SizeDistribution: need 0 < d_min < d50 < d_max, got "
                f"d_min={self.d_min}, d50={self.d50}, d_max={self.d_max}")
        if not self.sigma_ln > 0:
            raise ConfigError("invalid SizeDistribution: sigma_ln must be > 0")

    def _truncnorm(self, mu):
        """Standardised truncated normal of ln(d) for location ``mu``."""
        a = (math.log(self.d_min) - mu) / self.sigma_ln
        b = (math.log(self.d_max) - mu) / self.sigma_ln
        return stats.truncnorm(a, b, loc=mu, scale=self.sigma_ln)

    @property
    def log_location(self) -> float:
        """Location ``mu`` of the parent log-normal (ln of its median)."""
        target = math.log(self.d50)

        def median_gap(mu):
            return float(self._truncnorm(mu).median()) - target

        # the truncated median moves monotonically from d_min to d_max as mu grows
        width = math.log(self.d_max / self.d_min) + 10.0 * self.sigma_ln
        return optimize.brentq(median_gap, target - width, target + width,
                               xtol=1e-15, rtol=4 * np.finfo(float).eps)

    def cdf(self, d):
        """CDF of the truncated distribution."""
        d = np.clip(np.asarray(d, dtype=float), self.d_min, self.d_max)
        return self._truncnorm(self.log_location).cdf(np.log(d))

    def quantile(self, q):
        ln_d = self._truncnorm(self.log_location).ppf(np.asarray(q, dtype=float))
        return np.clip(np.exp(ln_d), self.d_min, self.d_max)


@dataclass(frozen=True)
class SimConfig:
    """Domain geometry, boundary kinds, time stepping and output cadence.

    ``boundaries`` maps each face name in :data:`FACES` to ``"wall"``,
    ``"periodic"`` or ``"open"``.  ``dt = None`` means "use the stability
    rule" once particle masses are known.
    """

    domain_lo: tuple = (0.0, 0.0, 0.0)
    domain_hi: tuple = (1e-3, 1e-3, 1e-3)
    boundaries: dict = field(default_factory=lambda: {
        "x_lo": "wall", "x_hi": "wall", "y_lo": "wall", "y_hi": "wall",
        "z_lo": "wall", "z_hi": "open"})
    gravity: tuple = (0.0, 0.0, -9.81)
    dt: float | None = None
    duration: float = 0.05
    seed: int = 0
    snapshot_interval: int = 0
    # adhesion of boundary walls: the substrate sticks like a particle,
    # every other wall is adhesion-free
    adhesive_faces: tuple = ("z_lo",)

    def __post_init__(self):
        lo = np.asarray(self.domain_lo, float)
        hi = np.asarray(self.domain_hi, float)
        if lo.shape != (3,) or hi.shape != (3,) or not np.all(hi > lo):
            raise ConfigError("domain extents must be positive 3-vectors")
        for face in FACES:
            kind = self.boundaries.get(face)
            if kind not in BOUNDARY_KINDS:
                raise ConfigError(
                    f"boundary {face!r} must be one of {BOUNDARY_KINDS}, got {kind!r}")
        for ax in "xyz":
            a, b = self.boundaries[ax + "_lo"], self.boundaries[ax + "_hi"]
            if (a == "periodic") != (b == "periodic"):
                raise ConfigError(f"periodic boundary on {ax} must apply to both faces")
        if self.dt is not None and not self.dt > 0:
            raise ConfigError("dt must be > 0")
        if self.duration < 0:
            raise ConfigError("duration must be >= 0")

    @property
    def extent(self) -> np.ndarray:
        return np.asarray(self.domain_hi, float) - np.asarray(self.domain_lo, float)

    @property
    def periodic(self) -> np.ndarray:
        return np.array([self.boundaries[a + "_lo"] == "periodic" for a in "xyz"])


def max_stable_dt(m_min: float, k_n: float) -> float:
    """Largest admissible time step, ``0.2*sqrt(m_min/k_n)``."""
    return DT_SAFETY * math.sqrt(m_min / k_n)


def check_timestep(dt: float, m_min: float, k_n: float) -> None:
    limit = max_stable_dt(m_min, k_n)
    if dt > limit * (1 + 1e-12):
        raise ConfigError(
            f"dt={dt:.4g} s violates the stability rule dt <= 0.2*sqrt(m_min/k_n); "
            f"admissible dt <= {limit:.4g} s")


def estimate_stiffness(dist: SizeDistribution, material: MaterialParams,
                       impact_speed: float, overlap_ratio: float = 0.025) -> float:
    """Normal stiffness keeping contact overlaps below ``overlap_ratio*d_min/2``.

    Two load cases are bounded: the adhesive pull-off of the largest pair
    (static) and a head-on impact of two median particles at
    ``impact_speed`` (dynamic, overlap ``v*sqrt(m_eff/k)``).
    """
    delta_max = overlap_ratio * 0.5 * dist.d_min
    r_eff_max = 0.25 * dist.d_max
    k_static = 4.0 * math.pi * material.gamma * r_eff_max / delta_max
    m_eff = 0.5 * float(material.mass(0.5 * dist.d50))
    k_dynamic = m_eff * (impact_speed / delta_max) ** 2
    return max(k_static, k_dynamic)


class ParticleSet:
    """Immutable snapshot of particle state.

    Arrays are copied on construction and flagged read-only.  Use
    :meth:`replace` to derive a modified set.
    """

    __slots__ = ("ids", "position", "velocity", "angular_velocity", "radius", "active")

    def __init__(self, ids, position, velocity, angular_velocity, radius, active=None):
        n = len(radius)
        arrays = {
            "ids": np.array(ids, dtype=np.int64).reshape(n),
            "position": np.array(position, dtype=float).reshape(n, 3),
            "velocity": np.array(velocity, dtype=float).reshape(n, 3),
            "angular_velocity": np.array(angular_velocity, dtype=float).reshape(n, 3),
            "radius": np.array(radius, dtype=float).reshape(n),
            "active": (np.ones(n, bool) if active is None
                       else np.array(active, dtype=bool).reshape(n)),
        }
        if n and not np.all(arrays["radius"] > 0):
            raise ConfigError("particle radii must be strictly positive")
        if len(np.unique(arrays["ids"])) != n:
            raise ConfigError("particle ids must be unique")
        for name, arr in arrays.items():
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def __setattr__(self, name, value):
        raise AttributeError("ParticleSet is immutable; use .replace()")

    def __len__(self):
        return len(self.radius)

    def __reduce__(self):
        return ParticleSet, tuple(getattr(self, f) for f in self.__slots__)

    @classmethod
    def empty(cls):
        z = np.zeros((0, 3))
        return cls(np.zeros(0, np.int64), z, z, z, np.zeros(0))

    @classmethod
    def at_rest(cls, position, radius, ids=None):
        position = np.asarray(position, float).reshape(-1, 3)
        n = len(position)
        ids = np.arange(n) if ids is None else ids
        return cls(ids, position, np.zeros((n, 3)), np.zeros((n, 3)), radius)

    def replace(self, **changes) -> "ParticleSet":
        kw = {name: getattr(self, name) for name in self.__slots__}
        kw.update(changes)
        return ParticleSet(**kw)

    def select(self, mask) -> "ParticleSet":
        mask = np.asarray(mask)
        return ParticleSet(self.ids[mask], self.position[mask], self.velocity[mask],
                           self.angular_velocity[mask], self.radius[mask],
                           self.active[mask])

    def only_active(self) -> "ParticleSet":
        return self.select(self.active)

    def volume(self) -> np.ndarray:
        return 4.0 / 3.0 * np.pi * self.radius ** 3

    def equals(self, other: "ParticleSet") -> bool:
        """Bit-exact comparison of every field."""
        return all(np.array_equal(getattr(self, f), getattr(other, f))
                   for f in self.__slots__)


def sample_radii(dist: SizeDistribution, n: int, seed: int) -> np.ndarray:
    """Draw ``n`` radii from the truncated log-normal by inverse-CDF sampling."""
    if n < 1:
        raise ConfigError(f"need n >= 1 particles, got {n}")
    rng = np.random.default_rng(seed)
    diameters = dist.quantile(rng.random(n))
    return 0.5 * diameters


@dataclass(frozen=True)
class Box:
    lo: tuple
    hi: tuple

    def center(self):
        return 0.5 * (np.asarray(self.lo, float) + np.asarray(self.hi, float))


@dataclass(frozen=True)
class Cylinder:
    """Vertical cylinder region (axis along z)."""

    center_xy: tuple
    radius: float
    z_lo: float
    z_hi: float

    def center(self):
        return np.array([self.center_xy[0], self.center_xy[1],
                         0.5 * (self.z_lo + self.z_hi)])


@njit(cache=True)
def _rsa_place(radii, shape, lo, hi, cyl, periodic_len, min_gap, max_attempts, seed):
    """Random sequential insertion with a linked-cell overlap check.

    shape 0 = box [lo, hi]; shape 1 = vertical cylinder (cyl = cx, cy, R)
    spanning z in [lo[2], hi[2]].  Returns positions and the count placed.
    """
    np.random.seed(seed)
    n = radii.shape[0]
    pos = np.zeros((n, 3))
    rmax = radii.max()
    cell = 2.0 * rmax + min_gap
    nc = np.empty(3, np.int64)
    for a in range(3):
        nc[a] = max(1, int((hi[a] - lo[a]) / cell))
    csize = np.empty(3)
    for a in range(3):
        csize[a] = (hi[a] - lo[a]) / nc[a]
    head = -np.ones(nc[0] * nc[1] * nc[2], np.int64)
    nxt = -np.ones(n, np.int64)
    trial = np.empty(3)
    for p in range(n):
        r = radii[p]
        placed = False
        for _ in range(max_attempts):
            if shape == 0:
                for a in range(3):
                    if periodic_len[a] > 0:
                        trial[a] = lo[a] + np.random.random() * (hi[a] - lo[a])
                    else:
                        span = hi[a] - lo[a] - 2.0 * r
                        if span < 0:
                            return pos, p
                        trial[a] = lo[a] + r + np.random.random() * span
            else:
                rr = cyl[2] - r
                if rr < 0 or hi[2] - lo[2] < 2 * r:
                    return pos, p
                rho = rr * np.sqrt(np.random.random())
                th = 2.0 * np.pi * np.random.random()
                trial[0] = cyl[0] + rho * np.cos(th)
                trial[1] = cyl[1] + rho * np.sin(th)
                trial[2] = lo[2] + r + np.random.random() * (hi[2] - lo[2] - 2 * r)
            ci = np.empty(3, np.int64)
            for a in range(3):
                ci[a] = min(nc[a] - 1, max(0, int((trial[a] - lo[a]) / csize[a])))
            ok = True
            for dx in range(-1, 2):
                for dy in range(-1, 2):
                    for dz in range(-1, 2):
                        c0 = ci[0] + dx
                        c1 = ci[1] + dy
                        c2 = ci[2] + dz
                        if periodic_len[0] > 0:
                            c0 = c0 % nc[0]
                        if periodic_len[1] > 0:
                            c1 = c1 % nc[1]
                        if periodic_len[2] > 0:
                            c2 = c2 % nc[2]
                        if c0 < 0 or c0 >= nc[0] or c1 < 0 or c1 >= nc[1] or c2 < 0 or c2 >= nc[2]:
                            continue
                        q = head[(c0 * nc[1] + c1) * nc[2] + c2]
                        while q >= 0:
                            d2 = 0.0
                            for a in range(3):
                                d = trial[a] - pos[q, a]
                                if periodic_len[a] > 0:
                                    d -= periodic_len[a] * np.round(d / periodic_len[a])
                                d2 += d * d
                            lim = r + radii[q] + min_gap
                            if d2 < lim * lim:
                                ok = False
                                break
                            q = nxt[q]
                        if not ok:
                            break
                    if not ok:
                        break
                if not ok:
                    break
            if ok:
                for a in range(3):
                    pos[p, a] = trial[a]
                c = (ci[0] * nc[1] + ci[1]) * nc[2] + ci[2]
                nxt[p] = head[c]
                head[c] = p
                placed = True
                break
        if not placed:
            return pos, p
    return pos, n


def generate_pile(dist: SizeDistribution, n: int, region, config: SimConfig,
                  min_gap: float = 0.0, max_attempts: int = 5000) -> ParticleSet:
    """Place ``n`` sampled particles at rest, non-overlapping, inside ``region``.

    Particles are inserted largest first, then numbered in spatial order
    (coarse cells, z-major) so neighbours sit close in memory.  ``min_gap``
    enforces an extra clearance between surfaces.  Raises
    :class:`CapacityError` when the region is too crowded.
    """
    radii = sample_radii(dist, n, config.seed)
    if n == 1:
        return ParticleSet.at_rest(region.center()[None, :], radii)
    order = np.argsort(-radii, kind="stable")
    radii = radii[order]
    periodic_len = np.where(config.periodic, config.extent, 0.0)
    if isinstance(region, Box):
        lo, hi = np.asarray(region.lo, float), np.asarray(region.hi, float)
        # periodic axes only wrap if the region spans the full domain
        span_full = np.isclose(hi - lo, config.extent)
        periodic_len = np.where(span_full, periodic_len, 0.0)
        shape, cyl = 0, np.zeros(3)
    elif isinstance(region, Cylinder):
        lo = np.array([region.center_xy[0] - region.radius,
                       region.center_xy[1] - region.radius, region.z_lo])
        hi = np.array([region.center_xy[0] + region.radius,
                       region.center_xy[1] + region.radius, region.z_hi])
        shape, cyl = 1, np.array([region.center_xy[0], region.center_xy[1], region.radius])
        periodic_len = np.zeros(3)
    else:
        raise ConfigError(f"unsupported region type {type(region).__name__}")
    pos, placed = _rsa_place(radii, shape, lo, hi, cyl, periodic_len,
                             float(min_gap), int(max_attempts), int(config.seed) % (2**32))
    if placed < n:
        raise CapacityError(
            f"placed only {placed} of {n} particles in the region after "
            f"{max_attempts} attempts for particle {placed}")
    cell = np.floor((pos - lo) / (2.0 * radii.max())).astype(np.int64)
    order = np.lexsort((cell[:, 0], cell[:, 1], cell[:, 2]))
    return ParticleSet.at_rest(pos[order], radii[order])


def write_snapshot_csv(particles: ParticleSet, path, active_only: bool = True) -> Path:
    path = Path(path)
    p = particles.only_active() if active_only else particles
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SNAPSHOT_HEADER)
        for k in range(len(p)):
            w.writerow([int(p.ids[k]), *map(repr, p.position[k].tolist()),
                        *map(repr, p.velocity[k].tolist()),
                        *map(repr, p.angular_velocity[k].tolist()),
                        repr(float(p.radius[k]))])
    return path


def read_snapshot_csv(path) -> ParticleSet:
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != SNAPSHOT_HEADER:
            raise ConfigError(f"{path}: expected header {','.join(SNAPSHOT_HEADER)}")
        rows = [list(map(float, row)) for row in reader if row]
    if not rows:
        return ParticleSet.empty()
    a = np.array(rows)
    return ParticleSet(a[:, 0].astype(np.int64), a[:, 1:4], a[:, 4:7], a[:, 7:10], a[:, 10])


def write_snapshot_vtk(particles: ParticleSet, path) -> Path:
    """Legacy-VTK ASCII point cloud with radius and velocity attributes."""
    path = Path(path)
    p = particles.only_active()
    n = len(p)
    lines = ["# vtk DataFile Version 3.0", "powder_rake particles", "ASCII",
             "DATASET POLYDATA", f"POINTS {n} double"]
    lines += [f"{x!r} {y!r} {z!r}" for x, y, z in p.position.tolist()]
    lines += [f"VERTICES {n} {2 * n}"] + [f"1 {k}" for k in range(n)]
    lines += [f"POINT_DATA {n}", "SCALARS radius double 1", "LOOKUP_TABLE default"]
    lines += [repr(r) for r in p.radius.tolist()]
    lines += ["SCALARS id int 1", "LOOKUP_TABLE default"] + [str(i) for i in p.ids.tolist()]
    lines += ["VECTORS velocity double"]
    lines += [f"{x!r} {y!r} {z!r}" for x, y, z in p.velocity.tolist()]
    path.write_text("\n".join(lines) + "\n")
    return path
