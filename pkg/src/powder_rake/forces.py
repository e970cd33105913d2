"""Pairwise contact, friction, adhesion and rolling-resistance laws.

Sign conventions
----------------
For a pair (i, j) the unit normal ``n`` points from i towards j and the gap
``g_N`` is negative when the spheres overlap.  All force vectors returned
for a pair are the forces *acting on j*; particle i receives the negated
vectors (action = reaction).  With that convention the normal contact
force is parallel to ``n``, and the adhesive force ``F_S * n`` is
anti-parallel to ``n`` because ``F_S <= 0``.

Walls and tools are treated as a partner j of infinite mass and radius,
so ``r_eff = r_i`` and ``m_eff = m_i``.

The ``_``-prefixed functions are numba kernels used inside the
integrator; the public wrappers call the same kernels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .core import MaterialParams

OMEGA_TOL = 1e-8  # rad/s, below this no rolling torque is applied

# layout of the packed material vector handed to the kernels
M_KN, M_KT, M_DCOEF, M_MU, M_MUR, M_GAMMA, M_HAMAKER, M_CFS0, M_WTOL = range(9)


def damping_ratio_coefficient(restitution: float) -> float:
    """``-2 ln(e) / sqrt(pi^2 + ln^2 e)``; multiply by ``sqrt(m_eff k)``."""
    le = math.log(restitution)
    return -2.0 * le / math.sqrt(math.pi ** 2 + le * le)


def damping_coefficient(restitution: float, m_eff: float, k: float) -> float:
    """Viscous coefficient of a linear spring-dashpot with restitution ``e``."""
    return damping_ratio_coefficient(restitution) * math.sqrt(m_eff * k)


def pack_material(params: MaterialParams, omega_tol: float = OMEGA_TOL) -> np.ndarray:
    return np.array([
        params.k_n,
        params.k_n * params.k_t_ratio,
        damping_ratio_coefficient(params.restitution),
        params.friction,
        params.rolling_friction,
        params.gamma,
        params.hamaker,
        params.c_fs0,
        omega_tol,
    ])


@njit(cache=True)
def _adhesion(gap, r_eff, gamma, hamaker, c_fs0):
    if gamma <= 0.0:
        return 0.0
    f_s0 = 4.0 * np.pi * gamma * r_eff
    if gap <= 0.0:
        return -f_s0
    g0 = np.sqrt(hamaker * r_eff / (6.0 * f_s0))
    if gap <= g0:
        return -f_s0
    g_cut = g0 / np.sqrt(c_fs0)
    if gap <= g_cut:
        return -hamaker * r_eff / (6.0 * gap * gap)
    return 0.0


@njit(cache=True)
def _cutoff_gap(r_eff, gamma, hamaker, c_fs0):
    if gamma <= 0.0:
        return 0.0
    f_s0 = 4.0 * np.pi * gamma * r_eff
    return np.sqrt(hamaker * r_eff / (6.0 * f_s0 * c_fs0))


@njit(cache=True)
def _tangential(xi, vtx, vty, vtz, fn_abs, k_t, d_t, mu):
    """Coulomb-capped tangential spring-dashpot; updates ``xi`` in place."""
    fx = -k_t * xi[0] - d_t * vtx
    fy = -k_t * xi[1] - d_t * vty
    fz = -k_t * xi[2] - d_t * vtz
    fmag = np.sqrt(fx * fx + fy * fy + fz * fz)
    cap = mu * fn_abs
    if fmag > cap:
        if fmag > 0.0:
            s = cap / fmag
            fx *= s
            fy *= s
            fz *= s
        xi[0] = -fx / k_t
        xi[1] = -fy / k_t
        xi[2] = -fz / k_t
    return fx, fy, fz


@njit(cache=True)
def _rolling(wx, wy, wz, fn_abs, r_eff, mu_r, omega_tol, max_torque):
    w = np.sqrt(wx * wx + wy * wy + wz * wz)
    if w <= omega_tol or mu_r <= 0.0:
        return 0.0, 0.0, 0.0
    mag = mu_r * r_eff * fn_abs
    if mag > max_torque:
        mag = max_torque
    s = -mag / w
    return s * wx, s * wy, s * wz


@njit(cache=True)
def _contact(nx, ny, nz, gap, r_eff, vrx, vry, vrz, wrx, wry, wrz,
             m_eff, i_eff, xi, mat, gamma, dt, out):
    """Evaluate one interaction.

    ``vr`` is the velocity of j relative to i at the contact point,
    ``wr = omega_i - omega_j``.  ``xi`` (tangential spring, 3) is updated
    in place.  Writes into ``out``: [0:3] total force on j, [3:6]
    tangential force on j, [6:9] rolling torque on i, [9] normal contact
    force magnitude (signed), [10] adhesion magnitude F_S.
    """
    vn = vrx * nx + vry * ny + vrz * nz
    vtx = vrx - vn * nx
    vty = vry - vn * ny
    vtz = vrz - vn * nz
    fn = 0.0
    for k in range(6, 9):
        out[k] = 0.0
    out[3] = 0.0
    out[4] = 0.0
    out[5] = 0.0
    if gap < 0.0:
        k_n = mat[M_KN]
        k_t = mat[M_KT]
        dcoef = mat[M_DCOEF]
        # elastic part never tensile; damping may be
        fn = k_n * (-gap) - dcoef * np.sqrt(m_eff * k_n) * vn
        # keep the spring in the current tangent plane, preserving its length
        old = np.sqrt(xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2])
        if old > 0.0:
            xn = xi[0] * nx + xi[1] * ny + xi[2] * nz
            xi[0] -= xn * nx
            xi[1] -= xn * ny
            xi[2] -= xn * nz
            new = np.sqrt(xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2])
            if new > 0.0:
                s = old / new
                xi[0] *= s
                xi[1] *= s
                xi[2] *= s
        xi[0] += vtx * dt
        xi[1] += vty * dt
        xi[2] += vtz * dt
        d_t = dcoef * np.sqrt(m_eff * k_t)
        fabs = abs(fn)
        out[3], out[4], out[5] = _tangential(xi, vtx, vty, vtz, fabs, k_t, d_t, mat[M_MU])
        max_t = np.inf
        if dt > 0.0:
            wmag = np.sqrt(wrx * wrx + wry * wry + wrz * wrz)
            # the resistance may stop relative rolling but never reverse it
            max_t = i_eff * wmag / dt
        out[6], out[7], out[8] = _rolling(wrx, wry, wrz, fabs, r_eff, mat[M_MUR], mat[M_WTOL],
                                          max_t)
    else:
        xi[0] = 0.0
        xi[1] = 0.0
        xi[2] = 0.0
    fa = _adhesion(gap, r_eff, gamma, mat[M_HAMAKER], mat[M_CFS0])
    fnt = fn + fa
    out[0] = fnt * nx + out[3]
    out[1] = fnt * ny + out[4]
    out[2] = fnt * nz + out[5]
    out[9] = fn
    out[10] = fa


# ---------------------------------------------------------------- public API


def _scalar_or_array(fn, *args):
    arrs = np.broadcast_arrays(*[np.asarray(a, float) for a in args])
    if arrs[0].ndim == 0:
        return float(fn(*[float(a) for a in arrs]))
    flat = [a.ravel() for a in arrs]
    res = np.array([fn(*vals) for vals in zip(*flat)])
    return res.reshape(arrs[0].shape)


def adhesion_force(g_N, r_eff, params: MaterialParams):
    """Signed adhesive force ``F_S`` (negative = attractive).

    Constant pull-off force ``-4*pi*gamma*r_eff`` up to ``g0``, van der
    Waals decay ``A*r_eff/(6 g^2)`` up to the cut-off ``g*`` (where it has
    dropped to ``c_fs0`` of the pull-off force), zero beyond.
    """
    return _scalar_or_array(
        lambda g, r: _adhesion(g, r, params.gamma, params.hamaker, params.c_fs0),
        g_N, r_eff)


def pull_off_force(r_eff, params: MaterialParams) -> float:
    return 4.0 * math.pi * params.gamma * r_eff


def adhesion_gaps(r_eff, params: MaterialParams) -> tuple[float, float]:
    """Return ``(g0, g_star)`` for the given effective radius."""
    f_s0 = pull_off_force(r_eff, params)
    if f_s0 <= 0:
        return 0.0, 0.0
    g0 = math.sqrt(params.hamaker * r_eff / (6.0 * f_s0))
    return g0, g0 / math.sqrt(params.c_fs0)


def normal_contact_force(delta, v_n, m_eff, params: MaterialParams):
    """Linear spring-dashpot normal force ``k_n*delta - d_n*v_n``.

    ``v_n`` is the normal relative speed, positive when separating.
    """
    d_n = damping_coefficient(params.restitution, m_eff, params.k_n)
    delta = np.maximum(np.asarray(delta, float), 0.0)
    f = params.k_n * delta - d_n * np.asarray(v_n, float)
    return float(f) if np.ndim(f) == 0 else f


def tangential_force(xi_t, v_t, normal_force, params: MaterialParams, damping: float = 0.0):
    """Return ``(f_CT, xi_t_updated)`` for a touching pair.

    ``xi_t`` is the accumulated tangential spring displacement.  The force
    ``-k_t*xi_t - damping*v_t`` is capped at ``mu*|f_n|``; when the cap is
    active the spring is shortened to sit on the Coulomb cone.
    """
    xi = np.array(xi_t, dtype=float).reshape(3)
    v = np.asarray(v_t, dtype=float).reshape(3)
    f = _tangential(xi, v[0], v[1], v[2], abs(float(normal_force)),
                    params.k_n * params.k_t_ratio, float(damping), params.friction)
    return np.array(f), xi


def rolling_torque(omega_rel, normal_force, r_eff, params: MaterialParams,
                   omega_tol: float = OMEGA_TOL, max_torque: float = math.inf):
    """Constant-magnitude rolling resistance ``-mu_R*r_eff*|f_CN|*w/|w|``."""
    w = np.asarray(omega_rel, dtype=float).reshape(3)
    return np.array(_rolling(w[0], w[1], w[2], abs(float(normal_force)), float(r_eff),
                             params.rolling_friction, omega_tol, max_torque))


@dataclass(frozen=True)
class PairGeometry:
    normal: np.ndarray
    gap: float
    r_eff: float
    contact_point: np.ndarray
    # velocity of j relative to i at the contact point
    relative_velocity: np.ndarray
    # contact point relative to each centre
    r_ci: np.ndarray
    r_cj: np.ndarray


@dataclass(frozen=True)
class PairForces:
    """Forces on j (i receives the negatives) and rolling torque on i."""

    f_cn: np.ndarray
    f_ct: np.ndarray
    f_an: np.ndarray
    m_r: np.ndarray


def pair_geometry(x_i, x_j, r_i, r_j, v_i=(0, 0, 0), v_j=(0, 0, 0),
                  w_i=(0, 0, 0), w_j=(0, 0, 0)) -> PairGeometry:
    x_i, x_j = np.asarray(x_i, float), np.asarray(x_j, float)
    d = x_j - x_i
    dist = float(np.linalg.norm(d))
    n = d / dist
    gap = dist - r_i - r_j
    r_ci = (r_i + 0.5 * gap) * n
    r_cj = -(r_j + 0.5 * gap) * n
    vc_i = np.asarray(v_i, float) + np.cross(w_i, r_ci)
    vc_j = np.asarray(v_j, float) + np.cross(w_j, r_cj)
    return PairGeometry(n, gap, r_i * r_j / (r_i + r_j), x_i + r_ci, vc_j - vc_i, r_ci, r_cj)


def pair_forces(geom: PairGeometry, params: MaterialParams, m_eff: float, i_eff: float,
                w_rel=(0, 0, 0), xi_t=None, dt: float = 0.0):
    """Evaluate all laws for one pair.  Returns ``(PairForces, xi_t_updated)``."""
    xi = np.zeros(3) if xi_t is None else np.array(xi_t, float)
    out = np.zeros(11)
    n, vr, wr = geom.normal, geom.relative_velocity, np.asarray(w_rel, float)
    _contact(n[0], n[1], n[2], geom.gap, geom.r_eff, vr[0], vr[1], vr[2],
             wr[0], wr[1], wr[2], m_eff, i_eff, xi, pack_material(params),
             params.gamma, dt, out)
    forces = PairForces(f_cn=out[9] * n, f_ct=out[3:6].copy(), f_an=out[10] * n,
                        m_r=out[6:9].copy())
    return forces, xi


def accumulate_pair(i: int, j: int, particles, params: MaterialParams,
                    dt: float = 0.0, xi_t=None) -> dict:
    """Force and torque increments on both members of a pair.

    Returns a dict with ``force_i, force_j, torque_i, torque_j`` plus the
    underlying ``forces`` and updated tangential spring ``xi_t``.
    """
    x, v, w, r = (particles.position, particles.velocity,
                  particles.angular_velocity, particles.radius)
    geom = pair_geometry(x[i], x[j], r[i], r[j], v[i], v[j], w[i], w[j])
    m = params.mass(r[[i, j]])
    inertia = params.inertia(r[[i, j]])
    m_eff = m[0] * m[1] / (m[0] + m[1])
    i_eff = inertia[0] * inertia[1] / (inertia[0] + inertia[1])
    forces, xi = pair_forces(geom, params, m_eff, i_eff, w[i] - w[j], xi_t, dt)
    f_j = forces.f_cn + forces.f_ct + forces.f_an
    return {
        "force_i": -f_j,
        "force_j": f_j,
        "torque_i": np.cross(geom.r_ci, -forces.f_ct) + forces.m_r,
        "torque_j": np.cross(geom.r_cj, forces.f_ct) - forces.m_r,
        "forces": forces,
        "geometry": geom,
        "xi_t": xi,
    }
