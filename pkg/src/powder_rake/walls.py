"""Rigid boundaries and prescribed-motion tools.

Every wall is packed into one float row so the integrator kernel can loop
over a plain 2-D array.  Motion is one-way: a wall moves with its
prescribed velocity between ``t_start`` and ``t_stop`` and never feels
the particles.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import ConfigError

PLANE, BLADE, ROLLER, AXISYM = 0, 1, 2, 3

ROW = 22
(W_KIND, W_ADH, W_TSTART, W_TSTOP, W_PX, W_PY, W_PZ, W_VX, W_VY, W_VZ,
 W_WX, W_WY, W_WZ, W_NX, W_NY, W_NZ, W_D0, W_D1, W_D2, W_D3, W_ON, W_SPARE) = range(ROW)


def _row(kind, anchor, adhesive, velocity=(0, 0, 0), omega=(0, 0, 0),
         t_start=0.0, t_stop=np.inf, normal=(0, 0, 0), dims=(0, 0, 0, 0)):
    row = np.zeros(ROW)
    row[W_KIND] = kind
    row[W_ADH] = 1.0 if adhesive else 0.0
    row[W_TSTART] = t_start
    row[W_TSTOP] = t_stop
    row[W_PX:W_PZ + 1] = anchor
    row[W_VX:W_VZ + 1] = velocity
    row[W_WX:W_WZ + 1] = omega
    row[W_NX:W_NZ + 1] = normal
    row[W_D0:W_D3 + 1] = dims
    row[W_ON] = 1.0
    return row


@dataclass(frozen=True)
class Plane:
    """Infinite plane through ``point``; ``normal`` points into the domain."""

    point: tuple
    normal: tuple
    adhesive: bool = False
    name: str = "plane"

    def pack(self):
        n = np.asarray(self.normal, float)
        return _row(PLANE, self.point, self.adhesive, normal=n / np.linalg.norm(n))


@dataclass(frozen=True)
class AxisymmetricWall:
    """Surface of revolution about the vertical line through ``axis_xy``.

    The generating segment runs from ``(rho1, z1)`` to ``(rho2, z2)`` in
    the (radius, height) half-plane; a cone or a cylinder section.
    """

    axis_xy: tuple
    rho1: float
    z1: float
    rho2: float
    z2: float
    adhesive: bool = False
    name: str = "funnel"

    def pack(self):
        return _row(AXISYM, (self.axis_xy[0], self.axis_xy[1], 0.0), self.adhesive,
                    dims=(self.rho1, self.z1, self.rho2, self.z2))


@dataclass(frozen=True)
class ToolKinematics:
    """Prescribed rigid-body motion of a blade or roller (infinite along y).

    ``gap`` is the clearance between the tool's lowest point and the
    substrate (the nominal layer thickness).  ``omega`` is the roller spin
    in rad/s, positive = counter-rotation (bottom surface moving along the
    traverse direction).  The tool translates along +x.
    """

    kind: str
    gap: float
    speed: float
    start_x: float
    t_start: float = 0.0
    t_stop: float = np.inf
    blade_thickness: float = 100e-6
    blade_height: float = 2e-3
    roller_radius: float = 500e-6
    omega: float = 0.0
    name: str = "tool"

    def __post_init__(self):
        if self.kind not in ("blade", "roller"):
            raise ConfigError(f"tool kind must be 'blade' or 'roller', got {self.kind!r}")
        if not self.gap > 0:
            raise ConfigError("tool gap height must be > 0")

    def pack(self):
        v = (self.speed, 0.0, 0.0)
        if self.kind == "blade":
            # anchor = (centre x, 0, bottom z)
            return _row(BLADE, (self.start_x, 0.0, self.gap), False, v,
                        t_start=self.t_start, t_stop=self.t_stop,
                        dims=(0.5 * self.blade_thickness, self.blade_height, 0, 0))
        # counter-rotation spins about -y for motion along +x
        return _row(ROLLER, (self.start_x, 0.0, self.gap + self.roller_radius), False, v,
                    omega=(0.0, -self.omega, 0.0), t_start=self.t_start, t_stop=self.t_stop,
                    dims=(self.roller_radius, 0, 0, 0))

    def front_x(self, t: float) -> float:
        """x of the tool's leading face at time ``t``."""
        x = self.start_x + self.speed * float(np.clip(t - self.t_start, 0.0,
                                                      self.t_stop - self.t_start))
        half = 0.5 * self.blade_thickness if self.kind == "blade" else self.roller_radius
        return x + half


@njit(cache=True)
def wall_anchor(w, t):
    tau = t - w[W_TSTART]
    span = w[W_TSTOP] - w[W_TSTART]
    if tau < 0.0:
        tau = 0.0
    if tau > span:
        tau = span
    moving = 1.0 if (t >= w[W_TSTART] and t < w[W_TSTOP]) else 0.0
    return (w[W_PX] + w[W_VX] * tau, w[W_PY] + w[W_VY] * tau,
            w[W_PZ] + w[W_VZ] * tau, moving)


@njit(cache=True)
def wall_geometry(w, t, x, y, z, out):
    """Closest-point query from a sphere centre to wall ``w``.

    Writes ``out[0:3]`` unit normal from the centre towards the wall,
    ``out[3]`` signed centre-to-surface distance (negative if the centre
    is inside a solid tool), ``out[4:7]`` wall surface velocity at the
    closest point, ``out[7:10]`` wall angular velocity.
    """
    kind = int(w[W_KIND])
    ax, ay, az, moving = wall_anchor(w, t)
    vx = w[W_VX] * moving
    vy = w[W_VY] * moving
    vz = w[W_VZ] * moving
    wx = w[W_WX]
    wy = w[W_WY]
    wz = w[W_WZ]
    if kind == PLANE:
        nx, ny, nz = w[W_NX], w[W_NY], w[W_NZ]
        d = (x - ax) * nx + (y - ay) * ny + (z - az) * nz
        out[0] = -nx
        out[1] = -ny
        out[2] = -nz
        out[3] = d
    elif kind == BLADE:
        h = w[W_D0]
        x0, x1 = ax - h, ax + h
        z0, z1 = az, az + w[W_D1]
        qx = min(max(x, x0), x1)
        qz = min(max(z, z0), z1)
        dx = qx - x
        dz = qz - z
        d = np.sqrt(dx * dx + dz * dz)
        if d > 0.0:
            out[0] = dx / d
            out[1] = 0.0
            out[2] = dz / d
            out[3] = d
        else:
            # centre inside the blade: leave through the nearest face
            pen = (x - x0, x1 - x, z - z0, z1 - z)
            k = 0
            for m in range(1, 4):
                if pen[m] < pen[k]:
                    k = m
            out[1] = 0.0
            out[0] = 0.0
            out[2] = 0.0
            if k == 0:
                out[0] = 1.0
            elif k == 1:
                out[0] = -1.0
            elif k == 2:
                out[2] = 1.0
            else:
                out[2] = -1.0
            out[3] = -pen[k]
    elif kind == ROLLER:
        R = w[W_D0]
        dx = x - ax
        dz = z - az
        d = np.sqrt(dx * dx + dz * dz)
        if d > 0.0:
            ex, ez = dx / d, dz / d
        else:
            ex, ez = 0.0, -1.0
        # surface point of the roller nearest to the centre
        qx, qz = ax + R * ex, az + R * ez
        out[0] = -ex
        out[1] = 0.0
        out[2] = -ez
        out[3] = d - R
        # surface velocity: translation + omega x (q - axis)
        rx, ry, rz = qx - ax, 0.0, qz - az
        vx += wy * rz - wz * ry
        vy += wz * rx - wx * rz
        vz += wx * ry - wy * rx
    else:
        rho1, z1, rho2, z2 = w[W_D0], w[W_D1], w[W_D2], w[W_D3]
        px = x - ax
        py = y - ay
        rho = np.sqrt(px * px + py * py)
        if rho > 0.0:
            ex, ey = px / rho, py / rho
        else:
            ex, ey = 1.0, 0.0
        sr, sz = rho2 - rho1, z2 - z1
        L2 = sr * sr + sz * sz
        s = 0.0
        if L2 > 0.0:
            s = ((rho - rho1) * sr + (z - z1) * sz) / L2
            s = min(max(s, 0.0), 1.0)
        qr, qz = rho1 + s * sr, z1 + s * sz
        dx = ax + qr * ex - x
        dy = ay + qr * ey - y
        dz = qz - z
        d = np.sqrt(dx * dx + dy * dy + dz * dz)
        if d > 0.0:
            out[0] = dx / d
            out[1] = dy / d
            out[2] = dz / d
        else:
            out[0] = 0.0
            out[1] = 0.0
            out[2] = -1.0
        out[3] = d
    out[4] = vx
    out[5] = vy
    out[6] = vz
    out[7] = wx
    out[8] = wy
    out[9] = wz


def face_walls(config) -> list:
    """Plane walls for every domain face declared ``"wall"``."""
    lo, hi = np.asarray(config.domain_lo, float), np.asarray(config.domain_hi, float)
    walls = []
    for a, ax in enumerate("xyz"):
        for side, point, sign in (("lo", lo, 1.0), ("hi", hi, -1.0)):
            face = f"{ax}_{side}"
            if config.boundaries[face] != "wall":
                continue
            p = np.zeros(3)
            p[a] = point[a]
            n = np.zeros(3)
            n[a] = sign
            walls.append(Plane(tuple(p), tuple(n), face in config.adhesive_faces, name=face))
    return walls
