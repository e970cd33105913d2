"""Explicit time integration of the particle equations of motion.

Translation uses velocity Verlet; angular velocity an explicit Euler
update with the scalar inertia ``0.4 m r^2``.  Contacts are found with a
Verlet neighbour list (linked-cell build plus a skin) that is rebuilt when
any particle has moved more than half the skin.  Tangential spring
history lives on the list and is carried across rebuilds by key lookup.

All reductions run serially in sorted pair order, so a run is
bit-reproducible for a given input.
"""

from __future__ import annotations

import logging
import math
import sys
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .core import FACES, MaterialParams, ParticleSet, SimConfig, check_timestep, max_stable_dt
from .errors import InstabilityError
from .forces import _contact, _cutoff_gap, pack_material
from .neighbors import candidate_keys
from .walls import (BLADE, PLANE, ROLLER, W_ADH, W_D0, W_KIND, W_NX, W_NY, W_NZ, W_ON,
                    face_walls, wall_anchor, wall_geometry)

log = logging.getLogger(__name__)

SPEED_LIMIT = 1.0e3  # m/s, instability guard
QUIET_KE = 1.0e-12  # J, mean translational kinetic energy per particle
QUIET_SPEED = 1.0e-3  # m/s


@njit(cache=True)
def _min_image(d, periodic_len, a):
    if periodic_len[a] > 0.0:
        d -= periodic_len[a] * np.round(d / periodic_len[a])
    return d


@njit(cache=True)
def _compute_forces(t, dt, pos, vel, omg, rad, mass, inertia, active,
                    force, torque, pair_i, pair_j, pair_xi,
                    walls, wall_xi, mat, gamma, periodic_len, gcut):
    n = pos.shape[0]
    force[:, :] = 0.0
    torque[:, :] = 0.0
    out = np.empty(11)
    geo = np.empty(10)
    for k in range(pair_i.shape[0]):
        i = pair_i[k]
        j = pair_j[k]
        xi = pair_xi[k]
        if not (active[i] and active[j]):
            xi[:] = 0.0
            continue
        dx = _min_image(pos[j, 0] - pos[i, 0], periodic_len, 0)
        dy = _min_image(pos[j, 1] - pos[i, 1], periodic_len, 1)
        dz = _min_image(pos[j, 2] - pos[i, 2], periodic_len, 2)
        ri = rad[i]
        rj = rad[j]
        lim = ri + rj + gcut
        d2 = dx * dx + dy * dy + dz * dz
        if d2 > lim * lim:
            xi[:] = 0.0
            continue
        dist = np.sqrt(d2)
        nx, ny, nz = dx / dist, dy / dist, dz / dist
        gap = dist - ri - rj
        ci = ri + 0.5 * gap
        cj = rj + 0.5 * gap
        # contact arms: r_ci = ci*n, r_cj = -cj*n
        vcix = vel[i, 0] + ci * (omg[i, 1] * nz - omg[i, 2] * ny)
        vciy = vel[i, 1] + ci * (omg[i, 2] * nx - omg[i, 0] * nz)
        vciz = vel[i, 2] + ci * (omg[i, 0] * ny - omg[i, 1] * nx)
        vcjx = vel[j, 0] - cj * (omg[j, 1] * nz - omg[j, 2] * ny)
        vcjy = vel[j, 1] - cj * (omg[j, 2] * nx - omg[j, 0] * nz)
        vcjz = vel[j, 2] - cj * (omg[j, 0] * ny - omg[j, 1] * nx)
        m_eff = mass[i] * mass[j] / (mass[i] + mass[j])
        i_eff = inertia[i] * inertia[j] / (inertia[i] + inertia[j])
        _contact(nx, ny, nz, gap, ri * rj / (ri + rj),
                 vcjx - vcix, vcjy - vciy, vcjz - vciz,
                 omg[i, 0] - omg[j, 0], omg[i, 1] - omg[j, 1], omg[i, 2] - omg[j, 2],
                 m_eff, i_eff, xi, mat, gamma, dt, out)
        force[j, 0] += out[0]
        force[j, 1] += out[1]
        force[j, 2] += out[2]
        force[i, 0] -= out[0]
        force[i, 1] -= out[1]
        force[i, 2] -= out[2]
        ftx, fty, ftz = out[3], out[4], out[5]
        # torque_i = (ci n) x (-ft) + mR ; torque_j = (-cj n) x ft - mR
        cx = ny * ftz - nz * fty
        cy = nz * ftx - nx * ftz
        cz = nx * fty - ny * ftx
        torque[i, 0] += -ci * cx + out[6]
        torque[i, 1] += -ci * cy + out[7]
        torque[i, 2] += -ci * cz + out[8]
        torque[j, 0] += -cj * cx - out[6]
        torque[j, 1] += -cj * cy - out[7]
        torque[j, 2] += -cj * cz - out[8]
    nw = walls.shape[0]
    for w in range(nw):
        if walls[w, W_ON] == 0.0:
            continue
        g_w = gamma * walls[w, W_ADH]
        row = walls[w]
        kind = int(row[W_KIND])
        ax, ay, az, _ = wall_anchor(row, t)
        # half-width of the tool footprint along x for the cheap reject
        reach_x = row[W_D0]
        reach = 2.0 * gcut
        for i in range(n):
            if not active[i]:
                continue
            xi = wall_xi[w, i]
            r = rad[i]
            far = False
            if kind == PLANE:
                far = ((pos[i, 0] - ax) * row[W_NX] + (pos[i, 1] - ay) * row[W_NY]
                       + (pos[i, 2] - az) * row[W_NZ]) - r > reach
            elif kind == BLADE or kind == ROLLER:
                far = abs(pos[i, 0] - ax) - reach_x - r > reach
            if far:
                if xi[0] != 0.0 or xi[1] != 0.0 or xi[2] != 0.0:
                    xi[:] = 0.0
                continue
            wall_geometry(row, t, pos[i, 0], pos[i, 1], pos[i, 2], geo)
            gap = geo[3] - r
            if gap > reach:
                xi[:] = 0.0
                continue
            nx, ny, nz = geo[0], geo[1], geo[2]
            c = r + 0.5 * gap
            vcx = vel[i, 0] + c * (omg[i, 1] * nz - omg[i, 2] * ny)
            vcy = vel[i, 1] + c * (omg[i, 2] * nx - omg[i, 0] * nz)
            vcz = vel[i, 2] + c * (omg[i, 0] * ny - omg[i, 1] * nx)
            _contact(nx, ny, nz, gap, r,
                     geo[4] - vcx, geo[5] - vcy, geo[6] - vcz,
                     omg[i, 0] - geo[7], omg[i, 1] - geo[8], omg[i, 2] - geo[9],
                     mass[i], inertia[i], xi, mat, g_w, dt, out)
            force[i, 0] -= out[0]
            force[i, 1] -= out[1]
            force[i, 2] -= out[2]
            ftx, fty, ftz = out[3], out[4], out[5]
            torque[i, 0] += -c * (ny * ftz - nz * fty) + out[6]
            torque[i, 1] += -c * (nz * ftx - nx * ftz) + out[7]
            torque[i, 2] += -c * (nx * fty - ny * ftx) + out[8]


@njit(cache=True)
def _rebuild(pos, rad, active, lo, hi, periodic_len, extra, old_i, old_j, old_xi):
    n = pos.shape[0]
    keys = candidate_keys(pos, rad, active, lo, hi, periodic_len, extra)
    m = keys.shape[0]
    new_i = np.empty(m, np.int64)
    new_j = np.empty(m, np.int64)
    new_xi = np.zeros((m, 3))
    # both key lists are sorted: merge to carry spring history over
    p = 0
    n_old = old_i.shape[0]
    for k in range(m):
        key = keys[k]
        new_i[k] = key // n
        new_j[k] = key % n
        while p < n_old and old_i[p] * n + old_j[p] < key:
            p += 1
        if p < n_old and old_i[p] * n + old_j[p] == key:
            new_xi[k, 0] = old_xi[p, 0]
            new_xi[k, 1] = old_xi[p, 1]
            new_xi[k, 2] = old_xi[p, 2]
    return new_i, new_j, new_xi


@njit(cache=True)
def _advance(nsteps, t, dt, pos, vel, omg, acc, rad, mass, inertia, active,
             force, torque, ref_pos, pair_i, pair_j, pair_xi, walls, wall_xi,
             mat, gamma, gravity, lo, hi, periodic_len, open_faces, gcut, skin,
             speed_limit, vhalf):
    """Advance ``nsteps``.  Returns (t, steps_done, status, bad_particle,
    pair_i, pair_j, pair_xi, rebuilds); status 1 = speed guard tripped."""
    n = pos.shape[0]
    half = 0.5 * dt
    lim2 = (0.5 * skin) ** 2
    rebuilds = 0
    for s in range(nsteps):
        for i in range(n):
            if not active[i]:
                continue
            for a in range(3):
                vel[i, a] += half * acc[i, a]
                pos[i, a] += dt * vel[i, a]
                vhalf[i, a] = vel[i, a]
                # damping sees the predicted end-of-step velocity
                vel[i, a] += half * acc[i, a]
            for a in range(3):
                if periodic_len[a] > 0.0:
                    if pos[i, a] < lo[a]:
                        pos[i, a] += periodic_len[a]
                    elif pos[i, a] >= hi[a]:
                        pos[i, a] -= periodic_len[a]
                elif (open_faces[2 * a] and pos[i, a] < lo[a]) or \
                        (open_faces[2 * a + 1] and pos[i, a] > hi[a]):
                    active[i] = False
            if not active[i]:
                for a in range(3):
                    vel[i, a] = 0.0
                    omg[i, a] = 0.0
                    acc[i, a] = 0.0
        t += dt
        need = False
        for i in range(n):
            if not active[i]:
                continue
            d2 = 0.0
            for a in range(3):
                d = _min_image(pos[i, a] - ref_pos[i, a], periodic_len, a)
                d2 += d * d
            if d2 > lim2:
                need = True
                break
        if need:
            pair_i, pair_j, pair_xi = _rebuild(pos, rad, active, lo, hi, periodic_len,
                                               gcut + skin, pair_i, pair_j, pair_xi)
            ref_pos[:, :] = pos
            rebuilds += 1
        _compute_forces(t, dt, pos, vel, omg, rad, mass, inertia, active, force, torque,
                        pair_i, pair_j, pair_xi, walls, wall_xi, mat, gamma,
                        periodic_len, gcut)
        vmax2 = 0.0
        bad = -1
        for i in range(n):
            if not active[i]:
                continue
            v2 = 0.0
            for a in range(3):
                acc[i, a] = force[i, a] / mass[i] + gravity[a]
                vel[i, a] = vhalf[i, a] + half * acc[i, a]
                omg[i, a] += dt * torque[i, a] / inertia[i]
                v2 += vel[i, a] * vel[i, a]
            if v2 > vmax2:
                vmax2 = v2
                bad = i
        if vmax2 > speed_limit * speed_limit:
            return t, s + 1, 1, bad, pair_i, pair_j, pair_xi, rebuilds
    return t, nsteps, 0, -1, pair_i, pair_j, pair_xi, rebuilds


@njit(cache=True)
def _elastic_energy(pos, rad, active, pair_i, pair_j, pair_xi, walls, wall_xi, t,
                    k_n, k_t, periodic_len):
    e = 0.0
    for k in range(pair_i.shape[0]):
        i = pair_i[k]
        j = pair_j[k]
        if not (active[i] and active[j]):
            continue
        d2 = 0.0
        for a in range(3):
            d = _min_image(pos[j, a] - pos[i, a], periodic_len, a)
            d2 += d * d
        gap = np.sqrt(d2) - rad[i] - rad[j]
        if gap < 0.0:
            e += 0.5 * k_n * gap * gap
            x = pair_xi[k]
            e += 0.5 * k_t * (x[0] * x[0] + x[1] * x[1] + x[2] * x[2])
    geo = np.empty(10)
    for w in range(walls.shape[0]):
        if walls[w, W_ON] == 0.0:
            continue
        for i in range(pos.shape[0]):
            if not active[i]:
                continue
            wall_geometry(walls[w], t, pos[i, 0], pos[i, 1], pos[i, 2], geo)
            gap = geo[3] - rad[i]
            if gap < 0.0:
                e += 0.5 * k_n * gap * gap
                x = wall_xi[w, i]
                e += 0.5 * k_t * (x[0] * x[0] + x[1] * x[1] + x[2] * x[2])
    return e


@dataclass
class RunResult:
    particles: ParticleSet
    snapshots: list = field(default_factory=list)
    snapshot_times: list = field(default_factory=list)
    steps: int = 0
    time: float = 0.0
    reason: str = "duration"


class Simulation:
    """Mutable simulation state plus the compiled stepping kernel.

    Parameters
    ----------
    particles : ParticleSet
        Initial state (copied).
    material : MaterialParams
    config : SimConfig
        Domain, boundary kinds, gravity, time step.  Faces of kind
        ``"wall"`` become plane walls; the substrate face listed in
        ``config.adhesive_faces`` sticks with the particle surface energy.
    walls : sequence
        Extra walls / tools (objects with ``pack()``), e.g.
        :class:`~powder_rake.walls.ToolKinematics`.
    skin : float, optional
        Verlet skin; defaults to half the smallest radius.
    """

    def __init__(self, particles: ParticleSet, material: MaterialParams, config: SimConfig,
                 walls=(), skin: float | None = None, progress_every: int = 0):
        self.material = material
        self.config = config
        n = len(particles)
        self.ids = particles.ids.copy()
        self.pos = np.ascontiguousarray(particles.position, dtype=float).copy()
        self.vel = np.ascontiguousarray(particles.velocity, dtype=float).copy()
        self.omg = np.ascontiguousarray(particles.angular_velocity, dtype=float).copy()
        self.rad = np.ascontiguousarray(particles.radius, dtype=float).copy()
        self.active = particles.active.copy()
        self.mass = material.mass(self.rad)
        self.inertia = material.inertia(self.rad)
        self.acc = np.zeros((n, 3))
        self.force = np.zeros((n, 3))
        self.torque = np.zeros((n, 3))
        self._vhalf = np.zeros((n, 3))
        self.time = 0.0
        self.steps = 0
        self.rebuilds = 0
        self.progress_every = progress_every

        if n:
            m_min = float(self.mass.min())
            limit = max_stable_dt(m_min, material.k_n)
            self.dt = limit if config.dt is None else float(config.dt)
            check_timestep(self.dt, m_min, material.k_n)
        else:
            self.dt = config.dt or 1e-7

        self.lo = np.asarray(config.domain_lo, float)
        self.hi = np.asarray(config.domain_hi, float)
        self.periodic_len = np.where(config.periodic, config.extent, 0.0)
        self.open_faces = np.array([config.boundaries[f] == "open" for f in FACES])
        self.gravity = np.asarray(config.gravity, float)
        self._mat = pack_material(material)
        r_max = float(self.rad.max()) if n else 0.0
        r_min = float(self.rad.min()) if n else 0.0
        # cut-off of the most far-reaching interaction (particle-wall, r_eff = r_max)
        self.gcut = (float(_cutoff_gap(r_max, material.gamma, material.hamaker, material.c_fs0))
                     if n else 0.0)
        self.skin = 0.5 * r_min if skin is None else float(skin)

        self.wall_objects = list(face_walls(config)) + list(walls)
        self.walls = (np.stack([w.pack() for w in self.wall_objects])
                      if self.wall_objects else np.zeros((0, 22)))
        self.wall_xi = np.zeros((len(self.wall_objects), n, 3))

        self.pair_i = np.zeros(0, np.int64)
        self.pair_j = np.zeros(0, np.int64)
        self.pair_xi = np.zeros((0, 3))
        self.ref_pos = self.pos.copy()
        self._primed = False

    # ------------------------------------------------------------ helpers
    def wall_index(self, name: str) -> int:
        for k, w in enumerate(self.wall_objects):
            if getattr(w, "name", None) == name:
                return k
        raise KeyError(name)

    def set_wall_enabled(self, name: str, enabled: bool) -> None:
        k = self.wall_index(name)
        self.walls[k, W_ON] = 1.0 if enabled else 0.0
        self.wall_xi[k] = 0.0

    def _rebuild(self):
        self.pair_i, self.pair_j, self.pair_xi = _rebuild(
            self.pos, self.rad, self.active, self.lo, self.hi, self.periodic_len,
            self.gcut + self.skin, self.pair_i, self.pair_j, self.pair_xi)
        self.ref_pos[:] = self.pos

    def _prime(self):
        self._rebuild()
        _compute_forces(self.time, self.dt, self.pos, self.vel, self.omg, self.rad,
                        self.mass, self.inertia, self.active, self.force, self.torque,
                        self.pair_i, self.pair_j, self.pair_xi, self.walls, self.wall_xi,
                        self._mat, self.material.gamma, self.periodic_len, self.gcut)
        act = self.active[:, None]
        self.acc = np.where(act, self.force / self.mass[:, None] + self.gravity, 0.0)
        self._primed = True

    @property
    def particles(self) -> ParticleSet:
        return ParticleSet(self.ids, self.pos, self.vel, self.omg, self.rad, self.active)

    @property
    def n_active(self) -> int:
        return int(self.active.sum())

    def kinetic_energy(self) -> float:
        a = self.active
        return float(0.5 * np.sum(self.mass[a] * np.sum(self.vel[a] ** 2, axis=1)))

    def rotational_energy(self) -> float:
        a = self.active
        return float(0.5 * np.sum(self.inertia[a] * np.sum(self.omg[a] ** 2, axis=1)))

    def energy(self) -> dict:
        """Kinetic, rotational, gravitational and contact-spring energy.

        Adhesion potential is not included.
        """
        if not self._primed:
            self._prime()
        a = self.active
        pot = float(-np.sum(self.mass[a] * (self.pos[a] @ self.gravity)))
        el = _elastic_energy(self.pos, self.rad, self.active, self.pair_i, self.pair_j,
                             self.pair_xi, self.walls, self.wall_xi, self.time,
                             self.material.k_n, self.material.k_n * self.material.k_t_ratio,
                             self.periodic_len)
        out = {"kinetic": self.kinetic_energy(), "rotational": self.rotational_energy(),
               "potential": pot, "elastic": float(el)}
        out["total"] = sum(out.values())
        return out

    def momentum(self) -> np.ndarray:
        a = self.active
        return np.sum(self.mass[a, None] * self.vel[a], axis=0)

    def diagnostics(self) -> dict:
        a = self.active
        n = int(a.sum())
        speeds = np.linalg.norm(self.vel[a], axis=1) if n else np.zeros(1)
        return {"step": self.steps, "time": self.time,
                "ke_mean": self.kinetic_energy() / n if n else 0.0,
                "max_speed": float(speeds.max()) if n else 0.0}

    def is_quiescent(self) -> bool:
        d = self.diagnostics()
        return d["ke_mean"] < QUIET_KE and d["max_speed"] < QUIET_SPEED

    # ------------------------------------------------------------ stepping
    def step(self, nsteps: int = 1) -> None:
        """Advance ``nsteps`` velocity-Verlet steps."""
        if nsteps <= 0 or len(self.rad) == 0:
            self.time += max(nsteps, 0) * self.dt
            self.steps += max(nsteps, 0)
            return
        if not self._primed:
            self._prime()
        (t, done, status, bad, self.pair_i, self.pair_j, self.pair_xi, nreb) = _advance(
            int(nsteps), self.time, self.dt, self.pos, self.vel, self.omg, self.acc,
            self.rad, self.mass, self.inertia, self.active, self.force, self.torque,
            self.ref_pos, self.pair_i, self.pair_j, self.pair_xi, self.walls, self.wall_xi,
            self._mat, self.material.gamma, self.gravity, self.lo, self.hi,
            self.periodic_len, self.open_faces, self.gcut, self.skin, SPEED_LIMIT,
            self._vhalf)
        self.time = t
        self.steps += done
        self.rebuilds += nreb
        if status:
            speed = float(np.linalg.norm(self.vel[bad]))
            raise InstabilityError(
                f"particle id {int(self.ids[bad])} reached {speed:.3g} m/s at step "
                f"{self.steps} (t={self.time:.6g} s, dt={self.dt:.3g} s); reduce dt or stiffen contacts")

    def run(self, duration: float | None = None, stop: str | None = None,
            snapshot_interval: int | None = None, check_every: int = 500,
            min_duration: float = 0.0, callback=None, on_snapshot=None) -> RunResult:
        """Advance until ``duration`` elapses or the stop criterion holds.

        ``stop="quiescent"`` ends the run once mean kinetic energy per
        particle and maximum speed drop below :data:`QUIET_KE` and
        :data:`QUIET_SPEED` (checked every ``check_every`` steps, not before
        ``min_duration``).  Snapshots are kept every ``snapshot_interval``
        steps (default from the config; 0 disables).  With ``on_snapshot``
        each snapshot is handed to ``on_snapshot(particles, step, time)``
        instead of being kept in the result.
        """
        duration = self.config.duration if duration is None else duration
        every = self.config.snapshot_interval if snapshot_interval is None else snapshot_interval
        result = RunResult(self.particles)
        if len(self.rad) == 0 or self.n_active == 0:
            result.reason = "empty"
            return result
        n_total = int(math.ceil(duration / self.dt - 1e-9))
        t_min = self.time + min_duration
        done = 0
        chunk = check_every if not every else math.gcd(check_every, every) or check_every
        if self.progress_every:
            chunk = math.gcd(chunk, self.progress_every)
        while done < n_total:
            k = min(chunk, n_total - done)
            self.step(k)
            done += k
            if every and self.steps % every == 0:
                if on_snapshot is not None:
                    on_snapshot(self.particles, self.steps, self.time)
                else:
                    result.snapshots.append(self.particles)
                    result.snapshot_times.append(self.time)
            if self.progress_every and self.steps % self.progress_every == 0:
                d = self.diagnostics()
                print(f"{d['step']},{d['time']:.9g},{d['ke_mean']:.6g},{d['max_speed']:.6g}",
                      file=sys.stderr)
            if callback is not None and callback(self) is False:
                result.reason = "callback"
                break
            if (stop == "quiescent" and done % check_every == 0 and self.time >= t_min
                    and self.is_quiescent()):
                result.reason = "quiescent"
                break
            if self.n_active == 0:
                result.reason = "empty"
                break
        result.particles = self.particles
        result.steps = done
        result.time = self.time
        return result
