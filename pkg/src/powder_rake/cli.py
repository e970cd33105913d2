"""``powder-rake`` command line.

Subcommands: ``gen``, ``spread``, ``aor``, ``calibrate``, ``metrics``,
``sweep``.  Exit status 0 on success, 1 on a configuration error, 2 on a
numerical abort.  Every attempted run appends one row to
``<out>/manifest.csv``.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig, default_config, load_config, write_resolved
from .core import read_snapshot_csv, write_snapshot_csv, write_snapshot_vtk
from .errors import (CalibrationError, ConfigError, InstabilityError, MeasurementError,
                     PowderRakeError)
from .metrics import layer_metrics, write_field_csv
from .scenarios import (aor_measure, build_reservoir, calibrate_gamma, run_spreading,
                        run_static_aor)

log = logging.getLogger("powder_rake")

OUT_ENV = "POWDER_RAKE_OUT"
MANIFEST_FIELDS = ["scenario", "seed", "gamma", "t0_ratio", "phi_mean", "phi_std",
                   "zint_mean", "zint_std", "aor_deg", "tool", "params", "dt",
                   "runtime_s", "status"]
PARAM_KEYS = ["density", "k_n", "restitution", "friction", "rolling_friction", "gamma_ref",
              "gamma_multiplier", "hamaker", "c_fs0", "d50", "sigma_ln", "d_min", "d_max",
              "traverse_speed", "roller_rotation", "roller_omega", "d_max0"]

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 1, 2


class Manifest:
    """Append-only run manifest; one writer per process."""

    def __init__(self, path):
        self.path = Path(path)

    def append(self, row: dict) -> None:
        new = not self.path.exists() or self.path.stat().st_size == 0
        with self.path.open("a", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=MANIFEST_FIELDS)
            if new:
                w.writeheader()
            w.writerow({k: _cell(row.get(k, "")) for k in MANIFEST_FIELDS})

    def rows(self) -> list[dict]:
        if not self.path.exists():
            return []
        with self.path.open(newline="") as fh:
            return list(csv.DictReader(fh))


def _cell(v):
    if isinstance(v, float):
        return repr(v)
    return v


def _row(cfg: RunConfig, scenario: str, **extra) -> dict:
    params = ";".join(f"{k}={cfg[k]!r}" for k in PARAM_KEYS)
    row = {"scenario": scenario, "seed": cfg.seed, "gamma": cfg.gamma,
           "t0_ratio": cfg["t0_ratio"], "tool": cfg["tool"], "params": params}
    row.update(extra)
    return row


def _metric_cells(m) -> dict:
    return {"phi_mean": m.phi_mean, "phi_std": m.phi_std,
            "zint_mean": m.zint_mean_rel, "zint_std": m.zint_std_rel}


def _snapshot_writer(out: Path, every: int):
    if not every:
        return None
    d = out / "snapshots"
    d.mkdir(parents=True, exist_ok=True)

    def write(particles, step, t):
        write_snapshot_csv(particles, d / f"step_{step:09d}.csv")

    return write


def _write_layer(out: Path, result, scene) -> None:
    write_snapshot_csv(result.particles, out / "final.csv")
    write_snapshot_vtk(result.particles, out / "final.vtk")
    m = result.metrics
    write_field_csv(m.phi, out / "phi_field.csv", spacing=m.spacing, region=m.region,
                    t0=m.t0, name="phi")
    write_field_csv(m.z_int, out / "zint_field.csv", spacing=m.spacing, region=m.region,
                    t0=m.t0, name="z_int")


def _reservoir(cfg: RunConfig, args, out: Path):
    if getattr(args, "reservoir", None):
        return read_snapshot_csv(args.reservoir)
    pile = build_reservoir(cfg.spread_scene, cfg.distribution, cfg.material, cfg.sim_config,
                           progress_every=args.progress)
    write_snapshot_csv(pile, out / "reservoir.csv")
    return pile


# ---------------------------------------------------------------- commands


def cmd_gen(cfg, args, out, manifest):
    started = time.perf_counter()
    pile = _reservoir(cfg, argparse.Namespace(reservoir=None, progress=args.progress), out)
    manifest.append(_row(cfg, "gen", runtime_s=time.perf_counter() - started, status="ok"))
    print(f"settled {len(pile)} particles -> {out / 'reservoir.csv'}")


def _spread_once(cfg, args, out, manifest, pile=None, label="spread"):
    started = time.perf_counter()
    scene = cfg.spread_scene
    if pile is None:
        pile = _reservoir(cfg, args, out)
    res = run_spreading(scene, cfg.material, cfg.sim_config, pile,
                        progress_every=args.progress,
                        on_snapshot=_snapshot_writer(out, cfg["snapshot_interval"]))
    _write_layer(out, res, scene)
    status = "flagged" if res.flagged else "ok"
    manifest.append(_row(cfg, label, dt=res.dt, runtime_s=time.perf_counter() - started,
                         status=status, **_metric_cells(res.metrics)))
    print(f"{label} t0_ratio={scene.t0_ratio:g} tool={scene.tool} gamma={cfg.gamma:.4g}: "
          f"phi_mean={res.metrics.phi_mean:.4f} phi_std={res.metrics.phi_std:.4f} "
          f"zint_mean={res.metrics.zint_mean_rel:.4f} zint_std={res.metrics.zint_std_rel:.4f}")
    return res


def cmd_spread(cfg, args, out, manifest):
    _spread_once(cfg, args, out, manifest)


def cmd_aor(cfg, args, out, manifest):
    started = time.perf_counter()
    res = run_static_aor(cfg.funnel_scene, cfg.material, cfg.sim_config, cfg.distribution,
                         progress_every=args.progress,
                         on_snapshot=_snapshot_writer(out, cfg["snapshot_interval"]))
    write_snapshot_csv(res.particles, out / "heap.csv")
    np.savetxt(out / "heap_surface.csv", res.points, delimiter=",", header="x,y,z",
               comments="")
    manifest.append(_row(cfg, "aor", aor_deg=res.angle, runtime_s=time.perf_counter() - started,
                         status="ok"))
    print(f"aor gamma={cfg.gamma:.4g}: {res.angle:.3f} deg")


def cmd_calibrate(cfg, args, out, manifest):
    started = time.perf_counter()
    measure = aor_measure(cfg.funnel_scene, cfg.material, cfg.sim_config, cfg.distribution)
    cal = calibrate_gamma(cfg["target_aor"], (cfg["gamma_lo"], cfg["gamma_hi"]), measure,
                          tol=cfg["calib_tol"], max_iter=cfg["calib_max_iter"])
    with (out / "calibration_trace.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["evaluation", "gamma", "aor_deg"])
        for k, (g, a) in enumerate(cal.trace):
            w.writerow([k, repr(g), repr(a)])
    row = _row(cfg, "calibrate", aor_deg=cal.angle, runtime_s=time.perf_counter() - started,
               status="ok")
    row["gamma"] = cal.gamma
    manifest.append(row)
    print(f"calibrated gamma={cal.gamma:.6g} J/m^2 (AOR {cal.angle:.3f} deg, "
          f"{cal.iterations} bisection steps)")


def cmd_metrics(cfg, args, out, manifest):
    if not args.snapshot:
        raise ConfigError("metrics needs --snapshot <file.csv>")
    started = time.perf_counter()
    particles = read_snapshot_csv(args.snapshot)
    scene = cfg.spread_scene
    m = layer_metrics(particles, scene.metric_region, scene.t0, scene.d_max0, periodic_y=True)
    for name, field_ in (("phi", m.phi), ("z_int", m.z_int)):
        write_field_csv(field_, out / f"{name.replace('_', '')}_field.csv", spacing=m.spacing,
                        region=m.region, t0=m.t0, name=name)
    manifest.append(_row(cfg, "metrics", runtime_s=time.perf_counter() - started, status="ok",
                         **_metric_cells(m)))
    print(f"phi_mean={m.phi_mean:.4f} phi_std={m.phi_std:.4f} "
          f"zint_mean={m.zint_mean_rel:.4f} zint_std={m.zint_std_rel:.4f}")


def cmd_sweep(cfg, args, out, manifest):
    """Spreading runs over every (gamma multiplier, t0 ratio) combination.

    Runs at the same gamma share one settled reservoir.  A failed run is
    recorded and the sweep continues; the exit status reports the worst
    outcome.
    """
    worst = EXIT_OK
    k = 0
    for gm in cfg["sweep_gamma_multipliers"]:
        pile = None
        for ratio in cfg["sweep_t0_ratios"]:
            run_cfg = cfg.with_values(gamma_multiplier=gm, t0_ratio=ratio)
            run_out = out / f"run_{k:03d}"
            run_out.mkdir(parents=True, exist_ok=True)
            write_resolved(run_cfg, run_out / "resolved_config.txt")
            k += 1
            try:
                if pile is None:
                    pile = _reservoir(run_cfg, args, run_out)
                _spread_once(run_cfg, args, run_out, manifest, pile=pile, label="sweep")
            except InstabilityError as exc:
                worst = max(worst, EXIT_NUMERICAL)
                print(f"error: {exc}", file=sys.stderr)
                manifest.append(_row(run_cfg, "sweep", status="numerical_abort"))
    return worst


COMMANDS = {"gen": cmd_gen, "spread": cmd_spread, "aor": cmd_aor, "calibrate": cmd_calibrate,
            "metrics": cmd_metrics, "sweep": cmd_sweep}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="key = value config file")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--out", type=Path,
                        help=f"output directory (default ${OUT_ENV} or ./powder_rake_out)")
    common.add_argument("--snapshots", type=int, metavar="N",
                        help="write a snapshot every N steps")
    common.add_argument("--threads", type=int, default=1,
                        help="worker threads (kernels run serially; recorded only)")
    common.add_argument("--progress", type=int, default=0, metavar="N",
                        help="diagnostic line on stderr every N steps")
    p = argparse.ArgumentParser(prog="powder-rake", description="DEM powder spreading and angle-of-repose runs.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("gen", parents=[common], help="generate and settle a reservoir pile")
    sp = sub.add_parser("spread", parents=[common], help="run one spreading pass")
    sp.add_argument("--reservoir", type=Path, help="settled pile snapshot to start from")
    sub.add_parser("aor", parents=[common], help="funnel angle-of-repose test")
    sub.add_parser("calibrate", parents=[common], help="fit gamma to a target angle of repose")
    mp = sub.add_parser("metrics", parents=[common], help="layer metrics of a snapshot")
    mp.add_argument("--snapshot", type=Path, help="snapshot CSV to evaluate")
    sw = sub.add_parser("sweep", parents=[common], help="batch of spreading runs")
    sw.add_argument("--reservoir", type=Path, help="settled pile snapshot for every run")
    return p


def _resolve(args) -> RunConfig:
    scenario = "spread" if args.command == "metrics" else args.command
    cfg = load_config(args.config) if args.config else default_config(scenario)
    changes = {"scenario": scenario}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.snapshots is not None:
        changes["snapshot_interval"] = args.snapshots
    if args.threads < 1:
        raise ConfigError("--threads must be >= 1")
    return cfg.with_values(**changes)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s",
                        stream=sys.stderr)
    out = args.out or Path(os.environ.get(OUT_ENV, "powder_rake_out"))
    try:
        cfg = _resolve(args)
        out.mkdir(parents=True, exist_ok=True)
        write_resolved(cfg, out / "resolved_config.txt")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    manifest = Manifest(out / "manifest.csv")
    try:
        code = COMMANDS[args.command](cfg, args, out, manifest)
    except (ConfigError, CalibrationError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        manifest.append(_row(cfg, args.command, status="config_error"))
        return EXIT_CONFIG
    except (InstabilityError, MeasurementError) as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        manifest.append(_row(cfg, args.command, status="numerical_abort"))
        return EXIT_NUMERICAL
    except PowderRakeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        manifest.append(_row(cfg, args.command, status="error"))
        return EXIT_NUMERICAL
    return code or EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
