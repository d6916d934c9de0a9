"""Command-line front end.

Every command reads an optional configuration file (built-in defaults
otherwise), writes its tables into ``--out`` and finishes with a
``manifest.json`` naming the outputs and holding a re-loadable snapshot of the
resolved configuration. On failure the partial outputs are removed.

Exit codes: 0 success, 2 configuration error, 3 numerical failure, 4 I/O error.
The thread count for sweeps is read from ``TRIPODLEV_THREADS``.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from . import budgets, dynamics, modes, traps
from .model import (ConfigError, ValidationError, default_config,
                    dumps_config, load_config)
from .optics import DegenerateGeometryError, circulating_power, cavity_lengths
from .potential import NumericalStepError, potential_grid
from .tables import atomic_write, csv_text, json_text

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4
THREADS_ENV = "TRIPODLEV_THREADS"

NUMERICAL_ERRORS = (traps.NoConvergenceError, traps.InfeasibleError, traps.RegionTooLargeError,
                    traps.InvalidSiteError, modes.UnstableSiteError, dynamics.IntegrationError,
                    NumericalStepError, DegenerateGeometryError, budgets.QuadratureError,
                    budgets.NonPhysicalInputError, FloatingPointError)


class OutputSet:
    """Files written by one command; removed again if the command fails."""

    def __init__(self, root):
        self.root = Path(root)
        self.written = []

    def write(self, name, text):
        path = self.root / name
        atomic_write(path, text)
        self.written.append(path)
        return path

    def discard(self):
        for path in self.written:
            try:
                path.unlink()
            except FileNotFoundError:
                pass


def thread_count():
    raw = os.environ.get(THREADS_ENV, "")
    try:
        n = int(raw)
    except ValueError:
        return 1
    return max(n, 1)


def parallel_map(fn, items):
    """Ordered map over items, threaded when ``TRIPODLEV_THREADS`` > 1."""
    items = list(items)
    n = thread_count()
    if n == 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


def parse_floats(text):
    return [float(v) for v in text.split(",") if v.strip()]


def parse_grid(text):
    """``start:stop:count`` (inclusive linspace) or a comma-separated list."""
    if ":" in text:
        start, stop, count = text.split(":")
        return list(np.linspace(float(start), float(stop), int(count)))
    return parse_floats(text)


def _load(args):
    cfg = default_config() if args.config is None else load_config(args.config)
    return cfg.validate()


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


SITE_HEADER = ["x", "y", "z", "detuning_1", "detuning_2", "detuning_3", "omega_m_vertical",
               "omega_m_h1", "omega_m_h2", "extent_h1", "extent_h2", "extent_vertical"]


def _site_row(site, mass):
    ms = modes.mode_frequencies(site, mass)
    h1, h2 = ms.horizontal
    ext = site.extents if site.extents is not None else [math.nan] * 3
    return [*site.position, *site.detunings, ms.vertical, h1, h2, *ext]


def cmd_trap_scan(args, cfg, out):
    geom, drive, mass = cfg.geometry, cfg.drive, cfg.mirror.mass
    centre = traps.central_site(geom, drive, mass)
    if args.region is not None:
        vals = parse_floats(args.region)
        if len(vals) != 6:
            raise ConfigError("--region needs six values xlo,xhi,ylo,yhi,zlo,zhi (m)")
        region = traps.Box(np.array(vals[0::2]), np.array(vals[1::2]))
    else:
        half = (args.half_width_xy * 1e-6, args.half_width_xy * 1e-6, args.half_width_z * 1e-9)
        region = traps.Box.around(centre.position, half)

    if np.any(region.hi <= region.lo):
        warnings.warn("scan region is empty; catalog has no sites")
        sites = []
    else:
        sites = traps.scan_lattice(region, geom, drive, mass, cap=args.cap).sites
    if not args.no_extents:
        sites = [traps.with_extents(s, geom, drive, mass) for s in sites]
    out.write("sites.csv", csv_text(SITE_HEADER, [_site_row(s, mass) for s in sites]))

    positions = [s.position for s in sites]
    stats = traps.spacing_statistics(positions)
    stats["triangular"] = bool(traps.is_triangular(positions)) if len(positions) >= 3 else False
    out.write("spacing.json", json_text(stats))

    c = centre.position
    n = args.grid_points
    w, h = args.grid_span_xy * 1e-9, args.grid_span_z * 1e-9
    xy = potential_grid(geom, drive, mass, c[0] + np.linspace(-w, w, n), c[1] + np.linspace(-w, w, n), [c[2]])
    yz = potential_grid(geom, drive, mass, [c[0]], c[1] + np.linspace(-w, w, n), c[2] + np.linspace(-h, h, n))
    out.write("potential_xy.csv", csv_text(["x", "y", "z", "U"], xy))
    out.write("potential_yz.csv", csv_text(["x", "y", "z", "U"], yz))
    print(f"{len(sites)} stable sites; mean spacing {stats.get('mean', math.nan):.6g} m")


MODES_HEADER = ["finesse", "detuning_over_kappa", "omega_m_vertical", "omega_m_h1", "omega_m_h2",
                "input_power_total", "feasible"]


def cmd_modes(args, cfg, out):
    geom, mass = cfg.geometry, cfg.mirror.mass
    finesses = parse_floats(args.finesse) if args.finesse else [cfg.drive.finesse]
    grid = parse_grid(args.detuning_grid)
    bracket = (1e-3, args.power_cap)

    def one(finesse):
        return modes.frequency_vs_detuning([finesse], grid, geom, mass, cfg.drive.wavelength, bracket)

    rows = [r for chunk in parallel_map(one, finesses) for r in chunk]
    table = [[r.finesse, r.detuning_over_kappa, r.omega_m_vertical, r.omega_m_h1, r.omega_m_h2,
              r.input_power_total, r.feasible] for r in rows]
    out.write("modes.csv", csv_text(MODES_HEADER, table))
    bad = sum(not r.feasible for r in rows)
    print(f"{len(rows)} rows, {bad} infeasible")


PHONON_HEADER = ["finesse", "omega_m", "trap_power_total", "cool_power_total", "photons_trap",
                 "photons_cool", "min_phonons", "feasible"]


def cmd_budget(args, cfg, out):
    geom, mirror = cfg.geometry, cfg.mirror
    site = traps.central_site(geom, cfg.drive, mirror.mass)
    report = budgets.budget_report(cfg, site)
    report["site"] = list(site.position)
    out.write("budget.json", json_text(report))

    finesses = parse_floats(args.finesse)

    def one(f):
        return budgets.min_phonon_vs_finesse([f], geom, mirror, args.power_ratio,
                                             wavelength=cfg.drive.wavelength)[0]

    rows = parallel_map(one, finesses)
    out.write("phonons.csv", csv_text(PHONON_HEADER, [
        [r.finesse, r.omega_m, r.trap_power_total, r.cool_power_total, r.photons_trap,
         r.photons_cool, r.min_phonons, r.feasible] for r in rows]))
    gas = report["gas"]
    print(f"gamma_m {gas['damping_rate']:.6g} 1/s, n_th {gas['thermal_phonons']:.6g}, "
          f"tau_e {report['laser_noise']['efold_time']:.6g} s")


TRAJECTORY_HEADER = ["t", "x", "y", "z", "vx", "vy", "vz", "photons_1", "photons_2", "photons_3"]


def cmd_dynamics(args, cfg, out):
    geom, drive, mass = cfg.geometry, cfg.drive, cfg.mirror.mass
    has_cooling = any(p > 0 for p in drive.input_power_cool)
    if args.model == "dynamic" and has_cooling:
        r0 = dynamics.operating_point(geom, drive, mass)
        k_zz = dynamics.static_vertical_stiffness(r0, geom, drive, mass,
                                                  dynamics.cooling_offsets(r0, geom, drive))
    else:
        site = traps.central_site(geom, drive, mass)
        r0 = site.position
        k_zz = site.stiffness[2, 2]
    if k_zz <= 0:
        raise modes.UnstableSiteError(k_zz)
    omega = math.sqrt(k_zz / mass)
    period = 2 * math.pi / omega
    duration = args.periods * period if args.duration is None else args.duration
    output_dt = period / args.samples_per_period

    if duration <= 0:
        out.write("trajectory.csv", csv_text(TRAJECTORY_HEADER, []))
        out.write("summary.json", json_text({"model": args.model, "omega_m_vertical": omega,
                                             "samples": 0}))
        print("zero duration; header-only trajectory")
        return

    start = dynamics.MechState(r0 + np.array([0.0, 0.0, args.displace * 1e-9]), np.zeros(3))
    if args.model == "quasistatic":
        traj = dynamics.simulate_quasistatic(start, geom, drive, mass, duration,
                                             extra_damping=args.damping, output_dt=output_dt,
                                             omega_scale=omega)
        lengths = cavity_lengths(traj.position, geom)
        photons = dynamics.photon_number(
            circulating_power(np.asarray(drive.input_power_trap), drive.finesse, drive.k, lengths),
            lengths, drive.omega_c)
    else:
        traj = dynamics.simulate_dynamic(start, geom, drive, mass, duration, output_dt=output_dt,
                                         reference=r0, omega_scale=omega,
                                         escape_distance=args.escape * 1e-9)
        photons = traj.photons
    rows = np.column_stack([traj.t, traj.position, traj.velocity, photons])
    out.write("trajectory.csv", csv_text(TRAJECTORY_HEADER, rows))

    dz = traj.position[:, 2] - r0[2]
    rate = dynamics.envelope_rate(traj.t, dz, period, max_amplitude=args.escape * 1e-9 / 2)
    summary = {
        "model": args.model,
        "omega_m_vertical": omega,
        "samples": int(traj.t.size),
        "max_excursion": float(np.max(np.linalg.norm(traj.position - r0, axis=1))),
        "zero_crossing_omega": dynamics.zero_crossing_frequency(traj.t, dz),
        "envelope_rate": rate,
        "envelope_growing": bool(rate > 0) if math.isfinite(rate) else None,
        "escaped": bool(traj.t[-1] < traj.t[0] + duration * (1 - 1e-9)),
    }
    out.write("summary.json", json_text(summary))
    print(f"envelope rate {rate:.6g} 1/s ({'growing' if rate > 0 else 'decaying'})")


COMMANDS = {"trap-scan": cmd_trap_scan, "modes": cmd_modes, "budget": cmd_budget,
            "dynamics": cmd_dynamics}


def build_parser():
    p = argparse.ArgumentParser(
        prog="tripodlev",
        description="Mirror levitated on three optical springs: trap scans, mode sweeps, "
                    "noise budgets and trajectories.",
        epilog=f"Set {THREADS_ENV}=N to run sweeps on N threads. Exit codes: 0 ok, "
               "2 config error, 3 numerical failure, 4 I/O error.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("config", nargs="?", help="INI configuration file (defaults if omitted)")
        sp.add_argument("--out", default="out", help="output directory (default: out)")

    sp = sub.add_parser("trap-scan", help="catalog trap sites and dump potential maps")
    common(sp)
    sp.add_argument("--region", help="absolute box xlo,xhi,ylo,yhi,zlo,zhi in metres")
    sp.add_argument("--half-width-xy", type=float, default=30.0,
                    help="horizontal half-width around the central trap, um (default 30)")
    sp.add_argument("--half-width-z", type=float, default=20.0,
                    help="vertical half-width around the central trap, nm (default 20)")
    sp.add_argument("--cap", type=int, default=100_000, help="maximum number of seeds")
    sp.add_argument("--no-extents", action="store_true", help="skip isopotential extents")
    sp.add_argument("--grid-points", type=int, default=41, help="points per grid axis")
    sp.add_argument("--grid-span-xy", type=float, default=100.0,
                    help="horizontal half-span of the potential maps, nm")
    sp.add_argument("--grid-span-z", type=float, default=3.0,
                    help="vertical half-span of the yz potential map, nm")

    sp = sub.add_parser("modes", help="mechanical frequencies versus trap-beam detuning")
    common(sp)
    sp.add_argument("--finesse", default="1000,3000,5000,10000", help="comma-separated finesse list")
    sp.add_argument("--detuning-grid", default="0.05:0.95:19",
                    help="delta/kappa values: start:stop:count or a comma list")
    sp.add_argument("--power-cap", type=float, default=1e3,
                    help="largest total input power tried by the support solve, W")

    sp = sub.add_parser("budget", help="gas, laser-noise, thermal and cooling budgets")
    common(sp)
    sp.add_argument("--finesse", default="1000,2000,3000,5000,10000,20000,50000",
                    help="finesse grid for the minimum-phonon table")
    sp.add_argument("--power-ratio", type=float, default=0.1,
                    help="trap/cooling input power ratio for the phonon table")

    sp = sub.add_parser("dynamics", help="trajectory after a vertical displacement")
    common(sp)
    sp.add_argument("--model", choices=("quasistatic", "dynamic"), default="quasistatic")
    sp.add_argument("--displace", type=float, default=0.1, help="initial vertical offset, nm")
    sp.add_argument("--duration", type=float, help="seconds (default: --periods vertical periods)")
    sp.add_argument("--periods", type=float, default=100.0)
    sp.add_argument("--samples-per-period", type=int, default=20)
    sp.add_argument("--damping", type=float, default=0.0, help="extra viscous damping, 1/s")
    sp.add_argument("--escape", type=float, default=2.0,
                    help="stop the dynamic model when the mirror is this far out, nm")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    started = time.perf_counter()
    out = OutputSet(args.out)
    try:
        cfg = _load(args)
    except (ConfigError, ValidationError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return EXIT_IO
    try:
        out.root.mkdir(parents=True, exist_ok=True)
        with warnings.catch_warnings():
            warnings.simplefilter("always")
            warnings.showwarning = _show_warning
            COMMANDS[args.command](args, cfg, out)
        manifest = {
            "command": args.command,
            "arguments": {k: v for k, v in sorted(vars(args).items()) if k not in ("command",)},
            "config": dumps_config(cfg),
            "outputs": [p.name for p in out.written],
            "version": __version__,
            "wall_clock_seconds": time.perf_counter() - started,
        }
        atomic_write(out.root / "manifest.json", json_text(manifest))
    except (ConfigError, ValidationError) as e:
        out.discard()
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except NUMERICAL_ERRORS as e:
        out.discard()
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as e:
        out.discard()
        print(f"I/O error: {e}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


def _show_warning(message, category, filename, lineno, file=None, line=None):
    print(f"warning: {message}", file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
