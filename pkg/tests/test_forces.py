import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from powder_rake.core import MaterialParams, ParticleSet
from powder_rake.forces import (adhesion_force, adhesion_gaps, accumulate_pair,
                                damping_coefficient, normal_contact_force, pair_forces,
                                pair_geometry, pull_off_force, rolling_torque,
                                tangential_force)

MAT = MaterialParams()
radii = st.floats(5e-6, 30e-6)
gammas = st.floats(1e-6, 1e-3)


def test_pull_off_force_closed_form():
    r_eff = 15e-6 * 15e-6 / 30e-6
    assert r_eff == pytest.approx(7.5e-6, rel=1e-12, abs=0)
    f = adhesion_force(0.0, r_eff, MAT)
    assert f == pytest.approx(-4 * math.pi * 1e-4 * 7.5e-6, rel=1e-12, abs=0)
    assert abs(f) == pytest.approx(9.4248e-9, rel=1e-4, abs=0)


def test_adhesion_range_closed_form():
    g0, g_star = adhesion_gaps(7.5e-6, MAT)
    assert g0 == pytest.approx(math.sqrt(1e-19 * 7.5e-6 / (6 * 9.42477796e-9)), rel=1e-8, abs=0)
    assert g0 == pytest.approx(3.64e-9, rel=2e-3, abs=0)
    assert g_star == pytest.approx(10 * g0, rel=1e-12, abs=0)


def test_adhesion_at_and_beyond_cutoff():
    r_eff = 7.5e-6
    g0, g_star = adhesion_gaps(r_eff, MAT)
    f0 = adhesion_force(0.0, r_eff, MAT)
    assert adhesion_force(g_star, r_eff, MAT) == pytest.approx(0.01 * f0, rel=1e-12, abs=0)
    for g in (g_star * (1 + 1e-12), 2 * g_star, 1e-6):
        assert adhesion_force(g, r_eff, MAT) == 0.0


def test_adhesion_off_without_surface_energy():
    mat = MaterialParams(gamma=0.0)
    assert adhesion_force(-1e-7, 1e-5, mat) == 0.0
    assert adhesion_gaps(1e-5, mat) == (0.0, 0.0)


@given(radii, gammas)
def test_adhesion_continuous_at_g0(r_eff, gamma):
    mat = MaterialParams(gamma=gamma)
    g0, _ = adhesion_gaps(r_eff, mat)
    f0 = adhesion_force(g0, r_eff, mat)
    eps = 1e-15
    jump = abs(adhesion_force(g0 + eps, r_eff, mat) - f0) / abs(f0)
    # a continuous branch changes only by its slope, 2*eps/g0 to first order
    assert jump <= 2 * eps / g0 * (1 + 1e-3) + 1e-15


@given(radii, st.floats(1e-6, 2.5e-4))
def test_adhesion_jump_below_threshold(r_eff, gamma):
    mat = MaterialParams(gamma=gamma)
    g0, _ = adhesion_gaps(r_eff, mat)
    f0 = adhesion_force(g0, r_eff, mat)
    assert abs(adhesion_force(g0 + 1e-15, r_eff, mat) - f0) / abs(f0) < 1e-6


@given(radii, gammas, st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_adhesion_decay_monotone(r_eff, gamma, a, b):
    mat = MaterialParams(gamma=gamma)
    g0, g_star = adhesion_gaps(r_eff, mat)
    ga, gb = sorted((g0 + a * (g_star - g0), g0 + b * (g_star - g0)))
    assume(gb > ga * (1 + 1e-9) and ga > g0)
    fa, fb = adhesion_force(ga, r_eff, mat), adhesion_force(gb, r_eff, mat)
    assert abs(fa) > abs(fb)


def test_adhesion_vectorised():
    g = np.array([-1e-8, 0.0, 1e-8, 1.0])
    f = adhesion_force(g, 7.5e-6, MAT)
    assert f.shape == (4,)
    assert f[0] == f[1] == adhesion_force(0.0, 7.5e-6, MAT)
    assert f[3] == 0.0


def test_adhesion_dominates_gravity():
    r = 15e-6
    m = float(MAT.mass(r))
    ratio = pull_off_force(r * r / (2 * r), MAT) / (m * 9.81)
    assert m * 9.81 == pytest.approx(6.14e-10, rel=1e-2, abs=0)
    assert ratio >= 10


def test_normal_force_linear_law():
    mat = MaterialParams(k_n=100.0)
    assert normal_contact_force(1e-6, 0.0, 1e-10, mat) == pytest.approx(1e-4, rel=1e-12, abs=0)
    assert normal_contact_force(0.0, 0.0, 1e-10, mat) == 0.0


def test_damping_matches_restitution_formula():
    e, m, k = 0.4, 2e-11, 2.5
    le = math.log(e)
    assert damping_coefficient(e, m, k) == pytest.approx(
        -2 * le * math.sqrt(m * k / (math.pi ** 2 + le ** 2)), rel=1e-14, abs=0)
    assert damping_coefficient(1.0, m, k) == 0.0


@given(st.floats(0, 1e-6), st.floats(-1.0, 1.0))
def test_normal_elastic_part_never_tensile(delta, v_n):
    f = normal_contact_force(delta, v_n, 1e-10, MAT)
    d_n = damping_coefficient(MAT.restitution, 1e-10, MAT.k_n)
    assert f + d_n * v_n >= 0.0


def test_tangential_frictionless_is_zero():
    mat = MaterialParams(friction=0.0)
    f, _ = tangential_force([1e-7, 2e-7, 0], [0.1, 0.0, 0.0], 1e-6, mat, damping=1e-6)
    assert np.all(f == 0.0)


def test_tangential_saturates_on_cone():
    fn = 1e-6
    k_t = MAT.k_n * MAT.k_t_ratio
    xi = np.array([10 * MAT.friction * fn / k_t, 0.0, 0.0])
    f, xi_new = tangential_force(xi, np.zeros(3), fn, MAT)
    assert np.linalg.norm(f) == pytest.approx(MAT.friction * fn, rel=1e-14, abs=0)
    # spring shortened onto the cone
    assert np.allclose(-k_t * xi_new, f, rtol=1e-14, atol=0)


def test_tangential_elastic_below_cap():
    k_t = MAT.k_n * MAT.k_t_ratio
    f, xi = tangential_force([1e-9, 0, 0], np.zeros(3), 1e-6, MAT)
    assert f[0] == pytest.approx(-k_t * 1e-9, rel=1e-12, abs=0)
    assert xi[0] == 1e-9


vec3 = st.lists(st.floats(-1e-6, 1e-6), min_size=3, max_size=3)


@given(vec3, vec3, st.floats(0, 1e-5), st.floats(0, 1e-5))
def test_coulomb_cone_property(xi, v, fn, damping):
    f, _ = tangential_force(xi, np.array(v) * 1e5, fn, MAT, damping)
    assert np.linalg.norm(f) <= MAT.friction * fn * (1 + 1e-12) + 1e-300


def test_rolling_torque_cases():
    assert np.all(rolling_torque(np.zeros(3), 1e-8, 7.5e-6, MAT) == 0)
    assert np.all(rolling_torque([1, 0, 0], 1e-8, 7.5e-6,
                                 MaterialParams(rolling_friction=0.0)) == 0)
    w = np.array([0.6, 0.0, 0.8])
    m = rolling_torque(w, 1e-8, 7.5e-6, MAT)
    assert np.linalg.norm(m) == pytest.approx(7.5e-15, rel=1e-12, abs=0)
    assert np.allclose(m / np.linalg.norm(m), -w)


def test_rolling_torque_tolerance_and_cap():
    assert np.all(rolling_torque([1e-9, 0, 0], 1e-8, 7.5e-6, MAT) == 0)
    m = rolling_torque([1.0, 0, 0], 1e-8, 7.5e-6, MAT, max_torque=1e-16)
    assert m[0] == pytest.approx(-1e-16, rel=1e-12, abs=0)


def _pair(dist_gap=-2e-7, vi=(0, 0, 0), vj=(0, 0, 0), wi=(0, 0, 0), wj=(0, 0, 0),
          ri=12e-6, rj=9e-6, direction=(1, 2, 3)):
    n = np.asarray(direction, float)
    n /= np.linalg.norm(n)
    xi = np.array([1e-4, 2e-4, 3e-4])
    xj = xi + n * (ri + rj + dist_gap)
    return ParticleSet(np.arange(2), [xi, xj], [vi, vj], [wi, wj], [ri, rj])


def test_geometry_invariants():
    p = _pair()
    g = pair_geometry(p.position[0], p.position[1], p.radius[0], p.radius[1])
    assert np.linalg.norm(g.normal) == pytest.approx(1.0, abs=1e-12)
    assert g.r_eff <= min(p.radius)
    assert g.gap == pytest.approx(-2e-7, rel=1e-6, abs=0)


def test_force_directions():
    p = _pair(vi=(0.01, -0.02, 0.005), wi=(10.0, 0, 5.0), wj=(0, -3.0, 0))
    out = accumulate_pair(0, 1, p, MAT, dt=1e-7, xi_t=[1e-9, -1e-9, 0])
    f, n = out["forces"], out["geometry"].normal
    assert np.linalg.norm(np.cross(f.f_cn, n)) <= 1e-12 * np.linalg.norm(f.f_cn)
    assert abs(f.f_ct @ n) <= 1e-12 * np.linalg.norm(f.f_ct)
    assert f.f_an @ n < 0 and np.linalg.norm(np.cross(f.f_an, n)) <= 1e-12 * abs(f.f_an @ n)


@given(st.floats(-1e-6, 1e-7), st.lists(st.floats(-0.05, 0.05), min_size=12, max_size=12))
@settings(max_examples=200)
def test_action_reaction_and_angular_momentum(gap, kin):
    p = _pair(gap, kin[0:3], kin[3:6], np.array(kin[6:9]) * 1e3, np.array(kin[9:12]) * 1e3)
    out = accumulate_pair(0, 1, p, MAT, dt=1e-7)
    fi, fj = out["force_i"], out["force_j"]
    assert np.allclose(fi, -fj, rtol=1e-12, atol=0)
    # angular momentum balance about the contact point
    g = out["geometry"]
    total = (np.cross(-g.r_ci, fi) + np.cross(-g.r_cj, fj)
             + out["torque_i"] + out["torque_j"])
    scale = max(np.linalg.norm(fj) * 1e-5, 1e-30)
    assert np.linalg.norm(total) <= 1e-10 * scale


def test_pure_normal_contact_has_no_torque():
    mat = MaterialParams(friction=0.0, rolling_friction=0.0, gamma=0.0)
    p = _pair(vi=(0.01, 0.0, 0.0), wi=(3.0, 1.0, 0.0))
    out = accumulate_pair(0, 1, p, mat, dt=1e-7)
    assert np.all(out["torque_i"] == 0) and np.all(out["torque_j"] == 0)


def test_batch_force_increments_sum_to_zero():
    rng = np.random.default_rng(5)
    total = np.zeros(3)
    largest = 0.0
    for _ in range(100):
        p = _pair(rng.uniform(-5e-7, 3e-8), *(rng.normal(scale=0.02, size=(4, 3))
                                               * [[1], [1], [1e3], [1e3]]),
                  ri=rng.uniform(7.5e-6, 25e-6), rj=rng.uniform(7.5e-6, 25e-6),
                  direction=rng.normal(size=3))
        out = accumulate_pair(0, 1, p, MAT, dt=1e-7)
        total += out["force_i"] + out["force_j"]
        largest = max(largest, np.abs(out["force_j"]).max())
    assert np.abs(total).max() <= 1e-10 * largest


def test_pair_forces_resets_spring_when_apart():
    p = _pair(dist_gap=1e-6)
    g = pair_geometry(p.position[0], p.position[1], p.radius[0], p.radius[1])
    forces, xi = pair_forces(g, MAT, 1e-10, 1e-20, xi_t=[1e-8, 0, 0], dt=1e-7)
    assert np.all(xi == 0) and np.all(forces.f_ct == 0) and np.all(forces.f_cn == 0)
