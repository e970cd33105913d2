import csv
import math

import pytest

from powder_rake.cli import MANIFEST_FIELDS, OUT_ENV, Manifest, main
from powder_rake.config import (KEYS, format_resolved, load_config, parse_text, resolve,
                                write_resolved)
from powder_rake.core import ParticleSet, write_snapshot_csv
from powder_rake.errors import ConfigError


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_minimal_config_materializes_every_default(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("scenario = spread\n")
    cfg = load_config(path)
    assert set(cfg.values) == {k.name for k in KEYS}
    text = format_resolved(cfg)
    for k in KEYS:
        assert f"\n{k.name} = " in text


def test_t0_ratio_sets_layer_thickness():
    cfg = resolve(parse_text("scenario = spread\nt0_ratio = 3\n"))
    assert cfg.spread_scene.t0 == pytest.approx(150e-6, rel=1e-15, abs=0)


def test_units_are_converted_to_si():
    cfg = resolve(parse_text("scenario = spread\nd_max0 = 50 um\ntraverse_speed = 50 mm/s\n"
                             "gamma_ref = 0.1 mJ/m^2  # reference\n"))
    assert cfg["d_max0"] == pytest.approx(50e-6, rel=1e-12, abs=0)
    assert cfg["traverse_speed"] == pytest.approx(0.05, rel=1e-12, abs=0)
    assert cfg.gamma == pytest.approx(1e-4, rel=1e-12, abs=0)


def test_unit_mismatch_is_rejected():
    with pytest.raises(ConfigError, match="unit 'ms' does not match a length"):
        parse_text("scenario = spread\nd_max0 = 50 ms\n")


def test_unknown_key_lists_alternatives():
    with pytest.raises(ConfigError, match="unknown key 'blade_speed'.*traverse_speed"):
        parse_text("scenario = spread\nblade_speed = 1\n")


def test_duplicate_and_malformed_lines():
    with pytest.raises(ConfigError, match="duplicate"):
        parse_text("scenario = spread\nseed = 1\nseed = 2\n")
    with pytest.raises(ConfigError, match="expected 'key = value'"):
        parse_text("scenario spread\n")


def test_missing_scenario():
    with pytest.raises(ConfigError, match="missing mandatory key.*scenario"):
        resolve({})


@pytest.mark.parametrize("key", ["gamma_ref", "gamma_multiplier", "gamma_lo"])
def test_negative_gamma_names_the_invariant(key):
    with pytest.raises(ConfigError, match=">= 0"):
        resolve({"scenario": "spread", key: -1e-5})


def test_calibrate_requires_target():
    with pytest.raises(ConfigError, match="target_aor"):
        resolve({"scenario": "calibrate"})


def test_resolved_config_round_trip(tmp_path):
    cfg = resolve(parse_text("scenario = spread\ntool = roller\nroller_rotation = counter\n"
                             "t0_ratio = 2.5\nseed = 42\ndt = 1e-8\n"
                             "sweep_t0_ratios = 2, 3.5\n"))
    path = write_resolved(cfg, tmp_path / "resolved_config.txt")
    back = load_config(path)
    assert back.values == cfg.values
    assert back.spread_scene == cfg.spread_scene
    assert back.material == cfg.material
    assert back.funnel_scene == cfg.funnel_scene


def test_manifest_is_append_only(tmp_path):
    m = Manifest(tmp_path / "manifest.csv")
    m.append({"scenario": "aor", "seed": 1})
    Manifest(tmp_path / "manifest.csv").append({"scenario": "spread", "seed": 2})
    with open(tmp_path / "manifest.csv") as fh:
        header = fh.readline().strip().split(",")
    assert header == MANIFEST_FIELDS
    assert [r["scenario"] for r in m.rows()] == ["aor", "spread"]


def test_metrics_on_empty_snapshot(tmp_path):
    snap = write_snapshot_csv(ParticleSet.empty(), tmp_path / "empty.csv")
    out = tmp_path / "out"
    assert main(["metrics", "--snapshot", str(snap), "--out", str(out)]) == 0
    rows = _rows(out / "manifest.csv")
    assert len(rows) == 1 and float(rows[0]["phi_mean"]) == 0.0
    assert (out / "resolved_config.txt").exists()
    assert (out / "phi_field.csv").exists() and (out / "zint_field.csv").exists()


def test_unstable_dt_exits_with_admissible_value(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("scenario = spread\ndt = 1e-6 s\n")
    assert main(["spread", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1
    err = capsys.readouterr().err
    limit = resolve({"scenario": "spread"}).admissible_dt()
    assert "admissible dt" in err and f"{limit:.4g}" in err


def test_bad_threads_is_config_error(tmp_path):
    assert main(["metrics", "--threads", "0", "--out", str(tmp_path)]) == 1


def test_metrics_without_snapshot_is_config_error(tmp_path):
    assert main(["metrics", "--out", str(tmp_path)]) == 1
    assert _rows(tmp_path / "manifest.csv")[0]["status"] == "config_error"


def test_output_dir_from_environment(tmp_path, monkeypatch):
    snap = write_snapshot_csv(ParticleSet.empty(), tmp_path / "empty.csv")
    monkeypatch.setenv(OUT_ENV, str(tmp_path / "env_out"))
    assert main(["metrics", "--snapshot", str(snap), "--seed", "7"]) == 0
    rows = _rows(tmp_path / "env_out" / "manifest.csv")
    assert rows[0]["seed"] == "7"


SMALL_SWEEP = """\
scenario = sweep
seed = 3
track_length = 0.4 mm
track_width = 0.2 mm
reservoir_length = 0.3 mm
reservoir_particles = 700
roller_radius = 100 um
end_margin_ratio = 1
sweep_t0_ratios = 2, 3, 4
"""


@pytest.mark.slow
def test_sweep_writes_one_row_per_run(tmp_path):
    cfg = tmp_path / "sweep.cfg"
    cfg.write_text(SMALL_SWEEP)
    out = tmp_path / "sweep"
    code = main(["sweep", "--config", str(cfg), "--out", str(out)])
    rows = _rows(out / "manifest.csv")
    assert code == 0
    assert [float(r["t0_ratio"]) for r in rows] == [2.0, 3.0, 4.0]
    assert all(r["status"] in ("ok", "flagged") for r in rows)
    assert all(0.0 < float(r["phi_mean"]) < 0.74 for r in rows)
    for k in range(3):
        assert (out / f"run_{k:03d}" / "final.csv").exists()
    assert math.isclose(float(rows[0]["gamma"]), 1e-4)
