import math
import warnings

import numpy as np
import pytest

from powder_rake.core import (Box, MaterialParams, ParticleSet, SimConfig, SizeDistribution,
                              generate_pile)
from powder_rake.errors import CalibrationError, ConfigError, MeasurementError
from powder_rake.integrator import Simulation
from powder_rake.metrics import slab_volume
from powder_rake.scenarios import (FunnelScene, SpreadScene, build_reservoir, calibrate_gamma,
                                   check_funnel, fit_cone_angle, run_spreading)

SMALL = dict(track_length=0.4e-3, track_width=0.2e-3, reservoir_length=0.3e-3,
             reservoir_particles=700, roller_radius=100e-6, end_margin_ratio=1.0)


@pytest.fixture(scope="module")
def small_spread():
    scene = SpreadScene(**SMALL)
    mat = MaterialParams()
    cfg = SimConfig(seed=11)
    res = build_reservoir(scene, SizeDistribution(), mat, cfg)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        out = run_spreading(scene, mat, cfg, res)
    return scene, out


def test_scene_geometry():
    s = SpreadScene()
    assert s.t0 == pytest.approx(150e-6, rel=1e-12, abs=0)
    assert s.x_track0 == pytest.approx(s.x_res0 + s.reservoir_length, rel=1e-12, abs=0)
    r = s.metric_region
    assert r.x_lo == pytest.approx(s.x_track0 + 250e-6, rel=1e-12, abs=0)
    assert r.x_hi == pytest.approx(s.x_end - 250e-6, rel=1e-12, abs=0)
    cfg = s.sim_config(SimConfig())
    assert cfg.boundaries["x_hi"] == "open" and cfg.adhesive_faces == ("z_lo",)


def test_tool_sweeps_past_the_track():
    for tool in ("blade", "roller"):
        s = SpreadScene(tool=tool)
        k = s.tool_kinematics(0.0)
        assert k.gap == pytest.approx(s.t0, rel=1e-12, abs=0)
        assert k.front_x(k.t_stop) > s.x_end
        assert k.front_x(0.0) <= s.x_res0 + 1e-12


def test_roller_spin_settings():
    assert SpreadScene(tool="roller").roller_omega_value == 0.0
    s = SpreadScene(tool="roller", roller_rotation="counter", roller_speed_ratio=2.0)
    assert s.roller_omega_value == pytest.approx(2.0 * 0.05 / 500e-6, rel=1e-12, abs=0)
    assert SpreadScene(tool="roller", roller_omega=7.0).roller_omega_value == 7.0


@pytest.mark.parametrize("bad", [dict(tool="brush"), dict(t0_ratio=0), dict(track_length=4e-4),
                                 dict(roller_rotation="co"), dict(reservoir_particles=-1)])
def test_scene_validation(bad):
    with pytest.raises(ConfigError):
        SpreadScene(**bad)


def test_empty_reservoir_gives_zero_layer():
    scene = SpreadScene(**SMALL)
    out = run_spreading(scene, MaterialParams(), SimConfig(), ParticleSet.empty())
    assert out.metrics.phi_mean == 0.0 and out.flagged
    assert not out.metrics.phi.any()


def test_small_reservoir_is_flagged(small_spread):
    scene, out = small_spread
    needed = 0.74 * scene.track_length * scene.track_width * scene.t0
    assert out.flagged == (out.volumes["initial"] < needed)


def test_spreading_mass_balance(small_spread):
    _, out = small_spread
    v = out.volumes
    assert v["swept_out"] > 0 and v["deposited"] > 0
    total = v["deposited"] + v["swept_out"] + v["remainder"]
    assert total == pytest.approx(v["initial"], rel=1e-12, abs=0)


def test_blade_clearance(small_spread):
    scene, out = small_spread
    p = out.particles.only_active()
    r = scene.metric_region
    inside = (p.position[:, 0] >= r.x_lo) & (p.position[:, 0] <= r.x_hi)
    assert inside.any()
    limit = scene.t0 + p.radius.max()
    assert np.all(p.position[inside, 2] <= limit + 0.01 * scene.t0)


def test_layer_metrics_in_range(small_spread):
    _, out = small_spread
    m = out.metrics
    assert 0.0 < m.phi_mean < 0.74
    assert np.all(m.z_int >= 0)


def test_funnel_outlet_rule():
    dist = SizeDistribution()
    check_funnel(FunnelScene(outlet_diameter=5 * dist.d_max), dist)
    with pytest.raises(ConfigError, match="5\\*d_max"):
        check_funnel(FunnelScene(outlet_diameter=4 * dist.d_max), dist)


def _cone(alpha_deg, h=1e-3, n=4000, noise=0.0, seed=0):
    rng = np.random.default_rng(seed)
    rho_max = h / math.tan(math.radians(alpha_deg))
    rho = rho_max * np.sqrt(rng.random(n))
    th = 2 * math.pi * rng.random(n)
    z = h - math.tan(math.radians(alpha_deg)) * rho + noise * rng.standard_normal(n)
    return np.column_stack([rho * np.cos(th) + 1e-4, rho * np.sin(th) - 2e-4, z])


@pytest.mark.parametrize("alpha", [3.0, 15.0, 30.0, 45.0])
def test_cone_fit_recovers_synthetic_angle(alpha):
    pts = _cone(alpha)
    assert fit_cone_angle(pts, (1e-4, -2e-4)) == pytest.approx(alpha, abs=1e-9)


def test_cone_fit_with_noise():
    pts = _cone(30.0, noise=10e-6)
    assert fit_cone_angle(pts, (1e-4, -2e-4)) == pytest.approx(30.0, abs=0.5)


def test_cone_fit_needs_enough_points():
    with pytest.raises(MeasurementError, match="surface points"):
        fit_cone_angle(_cone(30.0, n=150), (1e-4, -2e-4))
    with pytest.raises(MeasurementError):
        fit_cone_angle(np.zeros((0, 3)))


def _synthetic_aor(gamma):
    # smooth monotone response, about 1 deg at 0 and 31 deg at 4e-4
    return 1.0 + 30.0 * math.sqrt(gamma / 4e-4)


@pytest.mark.parametrize("gamma_mid", [1e-4, 0.37e-4, 2.9e-4, 3.3e-4])
def test_calibration_recovers_gamma(gamma_mid):
    calls = []

    def measure(g):
        calls.append(g)
        return _synthetic_aor(g)

    target = _synthetic_aor(gamma_mid)
    cal = calibrate_gamma(target, (0.0, 4e-4), measure)
    assert abs(cal.angle - target) <= 2.0
    assert cal.iterations <= 8
    assert abs(cal.gamma - gamma_mid) <= cal.bracket[1] - cal.bracket[0]
    assert len(cal.trace) == len(calls) == cal.iterations + 2


def test_calibration_tight_tolerance_uses_all_iterations():
    cal = calibrate_gamma(_synthetic_aor(1.234e-4), (0.0, 4e-4), _synthetic_aor, tol=1e-6)
    assert cal.iterations == 8
    width = 4e-4 / 2 ** 8
    assert abs(cal.gamma - 1.234e-4) <= width


def test_calibration_rejects_bad_brackets():
    with pytest.raises(CalibrationError, match="gamma_lo < gamma_hi"):
        calibrate_gamma(10.0, (1e-4, 1e-4), _synthetic_aor)
    with pytest.raises(CalibrationError, match="AOR"):
        calibrate_gamma(50.0, (0.0, 4e-4), _synthetic_aor)
    with pytest.raises(CalibrationError, match="straddle"):
        calibrate_gamma(10.0, (0.0, 4e-4), lambda g: 12.0)


@pytest.mark.slow
def test_settled_cohesionless_pile_density():
    dist = SizeDistribution()
    side = 0.4e-3
    cfg = SimConfig(domain_hi=(side, side, 3e-3), seed=5, adhesive_faces=(),
                    boundaries={"x_lo": "periodic", "x_hi": "periodic", "y_lo": "periodic",
                                "y_hi": "periodic", "z_lo": "wall", "z_hi": "open"})
    pile = generate_pile(dist, 2000, Box((0, 0, 0), (side, side, 1.2e-3)), cfg)
    sim = Simulation(pile, MaterialParams(gamma=0.0), cfg)
    sim.run(duration=0.05, stop="quiescent", min_duration=0.01)
    top = np.percentile(sim.pos[:, 2] + sim.rad, 98)
    # interior slab away from the substrate and the free surface; x and y are periodic,
    # so the solid volume in the slab is the plain sum of sphere slab volumes
    z_lo, z_hi = 2 * dist.d_max, top - 2 * dist.d_max
    solid = sum(slab_volume(z, r, z_lo, z_hi) for z, r in zip(sim.pos[:, 2], sim.rad))
    phi = solid / (side * side * (z_hi - z_lo))
    assert 0.55 <= phi <= 0.64
