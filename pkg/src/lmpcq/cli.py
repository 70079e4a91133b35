"""Command-line harness for the learning controller.

Four subcommands:

  run        bootstrap + learn, writing a self-describing output directory
  bootstrap  just the initial feasible lap (equivalent to ``run --iterations 0``)
  replay     re-derive plot data from a stored lap and re-check its invariants
  report     lap-time matrix and convergence-band statistics across runs

Configuration comes from a TOML or JSON file (``--config``); command-line
flags override individual entries.  Set LMPCQ_LOG=DEBUG|INFO|WARNING for
log verbosity.
"""

import json
import logging
import os
import sys

import click
import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from lmpcq import __version__
from lmpcq.safety_set import compute_cost_to_go, load_record, record_filename, save_store
from lmpcq.solver import LmpcConfig
from lmpcq.task import TaskConfig, Track, make_goal_indicator, run_task

log = logging.getLogger(__name__)

CORRIDOR_TOL = 1e-3  # metres of excursion tolerated before replay flags a lap
TELESCOPE_TOL = 1e-9


def _fmt(x):
    return "%.17g" % float(x)


def _fail(message, code=2):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


# ---------------------------------------------------------------------------
# configuration files


def _read_config(path):
    if not os.path.exists(path):
        _fail(f"config file not found: {path}")
    try:
        if path.endswith(".json"):
            with open(path) as fh:
                return json.load(fh)
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except (tomllib.TOMLDecodeError, json.JSONDecodeError) as exc:
        _fail(f"cannot parse {path}: {exc}")


def _build_task_config(raw, seed, iterations, noise):
    """Merge a config dict with command-line overrides into a TaskConfig."""
    track = raw.get("track", {})
    lmpc = raw.get("lmpc", {})
    plant = raw.get("plant", {})
    task = raw.get("task", {})
    defaults = TaskConfig()

    lmpc_kwargs = {}
    for key in ("N", "dt", "n_neighbors", "p_lookback", "Ru"):
        if key in lmpc:
            lmpc_kwargs[key] = lmpc[key]
    try:
        cfg = TaskConfig(
            waypoints=tuple(tuple(w) for w in track.get("waypoints", defaults.waypoints)),
            delta=track.get("delta", defaults.delta),
            lmpc=LmpcConfig(**lmpc_kwargs),
            iterations=int(task.get("iterations", defaults.iterations)),
            eps_pos=float(task.get("eps_pos", defaults.eps_pos)),
            eps_vel=float(task.get("eps_vel", defaults.eps_vel)),
            noise_sigma=float(plant.get("noise_sigma", defaults.noise_sigma)),
        )
    except (ValueError, TypeError) as exc:
        _fail(f"bad configuration: {exc}")
    if seed is not None:
        cfg.seed = int(seed)
    if iterations is not None:
        if iterations < 0:
            _fail("--iterations must be >= 0")
        cfg.iterations = int(iterations)
    if noise is not None:
        if noise < 0:
            _fail("--noise must be >= 0")
        cfg.noise_sigma = float(noise)
    return cfg


def _config_snapshot(cfg):
    return {
        "track": {
            "waypoints": [list(map(float, w)) for w in cfg.waypoints],
            "delta": cfg.delta,
        },
        "lmpc": {
            "N": cfg.lmpc.N,
            "dt": cfg.lmpc.dt,
            "n_neighbors": cfg.lmpc.n_neighbors,
            "p_lookback": cfg.lmpc.p_lookback,
            "Ru": [float(r) for r in cfg.lmpc.Ru],
        },
        "plant": {"noise_sigma": cfg.noise_sigma},
        "task": {
            "iterations": cfg.iterations,
            "eps_pos": cfg.eps_pos,
            "eps_vel": cfg.eps_vel,
        },
    }


# ---------------------------------------------------------------------------
# run outputs


def _plot_names(iteration_id):
    return (f"traj_iter_{iteration_id:03d}.csv", f"speed_iter_{iteration_id:03d}.csv")


def _write_plot_files(record, track, plots_dir):
    """Trajectory (x, y, z) and speed-vs-arc-length CSVs for one lap."""
    traj_name, speed_name = _plot_names(record.iteration_id)
    with open(os.path.join(plots_dir, traj_name), "w") as fh:
        fh.write("x, y, z\n")
        for p in record.states[:, 0:3]:
            fh.write(", ".join(_fmt(c) for c in p) + "\n")
    with open(os.path.join(plots_dir, speed_name), "w") as fh:
        fh.write("s, speed\n")
        for x in record.states:
            s = track.progress(x[0:3])
            fh.write(f"{_fmt(s)}, {_fmt(np.linalg.norm(x[3:6]))}\n")
    return traj_name, speed_name


def _write_lap_tables(out_dir, lap_times):
    csv_path = os.path.join(out_dir, "laptimes.csv")
    with open(csv_path, "w") as fh:
        fh.write("iteration, lap_time_s\n")
        for j, t in enumerate(lap_times):
            fh.write(f"{j}, {_fmt(t)}\n")
    txt_path = os.path.join(out_dir, "laptimes.txt")
    with open(txt_path, "w") as fh:
        fh.write("iteration   lap time (s)\n")
        for j, t in enumerate(lap_times):
            label = "init" if j == 0 else str(j)
            fh.write(f"{label:>9}   {t:12.2f}\n")
        band = _band(lap_times)
        if band is not None:
            fh.write(f"\nband over last 3 learned laps: {100.0 * band:.1f}%\n")
    return csv_path, txt_path


def _write_solver_stats(out_dir, reports):
    path = os.path.join(out_dir, "solver_stats.csv")
    with open(path, "w") as fh:
        fh.write("iteration, t, sqp_iters, qp_iters, kkt, solve_ms, status\n")
        for rep in reports:
            for t, st in enumerate(rep.stats):
                fh.write(
                    f"{rep.iteration_id}, {t}, {st.sqp_iters}, {st.qp_iters}, "
                    f"{_fmt(st.kkt_residual)}, {_fmt(1e3 * st.solve_time)}, {st.status}\n"
                )
    return path


def _latency_summary(reports):
    times = [st.solve_time for rep in reports for st in rep.stats]
    if not times:
        return {"count": 0, "median_ms": None, "p95_ms": None, "max_ms": None}
    ms = 1e3 * np.asarray(times)
    return {
        "count": len(times),
        "median_ms": float(np.median(ms)),
        "p95_ms": float(np.percentile(ms, 95)),
        "max_ms": float(ms.max()),
    }


def _band(lap_times):
    """(max - min) / mean over the last three learned laps (None if no laps)."""
    learned = lap_times[1:]
    if not learned:
        return None
    tail = learned[-3:]
    return (max(tail) - min(tail)) / (sum(tail) / len(tail))


def _write_run_outputs(res, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    plots_dir = os.path.join(out_dir, "plots")
    os.makedirs(plots_dir, exist_ok=True)

    store_dir = "safety_set"
    save_store(
        res.store,
        os.path.join(out_dir, store_dir),
        extra_manifest={
            "track_waypoints": [list(map(float, w)) for w in res.config.waypoints],
            "track_delta": res.config.delta,
            "eps_pos": res.config.eps_pos,
            "eps_vel": res.config.eps_vel,
            "Ru": [float(r) for r in res.config.lmpc.Ru],
        },
    )

    plots = {}
    layout = {
        "waypoints": [list(map(float, w)) for w in res.config.waypoints],
        "delta": res.config.delta,
        "trajectory": {"xlabel": "x (m)", "ylabel": "y (m)", "files": {}},
        "speed": {"xlabel": "arc length (m)", "ylabel": "speed (m/s)", "files": {}},
    }
    for rep in res.reports:
        traj, speed = _write_plot_files(rep.record, res.track, plots_dir)
        layout["trajectory"]["files"][str(rep.iteration_id)] = traj
        layout["speed"]["files"][str(rep.iteration_id)] = speed
        plots[str(rep.iteration_id)] = {
            "trajectory": f"plots/{traj}",
            "speed": f"plots/{speed}",
        }
    with open(os.path.join(plots_dir, "layout.json"), "w") as fh:
        json.dump(layout, fh, indent=2, sort_keys=True)
        fh.write("\n")

    _write_lap_tables(out_dir, res.lap_times)
    _write_solver_stats(out_dir, res.reports)

    manifest = {
        "artifact_version": __version__,
        "seed": res.config.seed,
        "config": _config_snapshot(res.config),
        "completed_iterations": len(res.reports) - 1,
        "lap_times": [float(t) for t in res.lap_times],
        "records": {
            str(rep.iteration_id): f"{store_dir}/{record_filename(rep.iteration_id)}"
            for rep in res.reports
        },
        "safety_set_manifest": f"{store_dir}/manifest.json",
        "lap_table_csv": "laptimes.csv",
        "lap_table_txt": "laptimes.txt",
        "solver_stats": "solver_stats.csv",
        "plots": plots,
        "plot_layout": "plots/layout.json",
        "solver_latency": _latency_summary(res.reports),
    }
    assert len(manifest["lap_times"]) == manifest["completed_iterations"] + 1

    # the manifest must only ever name files that are actually on disk
    referenced = [manifest["safety_set_manifest"], manifest["lap_table_csv"],
                  manifest["lap_table_txt"], manifest["solver_stats"],
                  manifest["plot_layout"]]
    referenced += list(manifest["records"].values())
    referenced += [p for entry in plots.values() for p in entry.values()]
    for rel in referenced:
        assert os.path.exists(os.path.join(out_dir, rel)), rel

    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _execute(cfg, out):
    def progress(rep):
        label = "bootstrap" if rep.iteration_id == 0 else f"iteration {rep.iteration_id}"
        click.echo(f"{label}: {rep.lap_time:.2f} s ({rep.steps} steps)")

    try:
        res = run_task(cfg, progress=progress)
    except Exception as exc:  # surfaced as a diagnostic, not a traceback
        log.debug("run failed", exc_info=True)
        _fail(str(exc), code=1)
    manifest = _write_run_outputs(res, out)
    click.echo(f"wrote {manifest}")


# ---------------------------------------------------------------------------
# commands


@click.group()
def main():
    """Minimum-time quadrotor learning harness."""
    level = os.environ.get("LMPCQ_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


@main.command()
@click.option("--config", "config_path", type=str, default=None,
              help="TOML or JSON configuration file.")
@click.option("--out", required=True, type=str, help="Output directory.")
@click.option("--seed", type=int, default=None, help="RNG seed override.")
@click.option("--iterations", type=int, default=None,
              help="Override the number of learning iterations.")
@click.option("--noise", type=float, default=None,
              help="Override the plant noise level (sigma).")
def run(config_path, out, seed, iterations, noise):
    """Bootstrap, then learn for the configured number of laps."""
    raw = _read_config(config_path) if config_path else {}
    cfg = _build_task_config(raw, seed, iterations, noise)
    _execute(cfg, out)


@main.command()
@click.option("--config", "config_path", type=str, default=None)
@click.option("--out", required=True, type=str)
@click.option("--seed", type=int, default=None)
@click.option("--noise", type=float, default=None)
def bootstrap(config_path, out, seed, noise):
    """Run only the initial feasible lap and store it."""
    raw = _read_config(config_path) if config_path else {}
    cfg = _build_task_config(raw, seed, 0, noise)
    _execute(cfg, out)


@main.command()
@click.argument("store_dir", type=str)
@click.option("--iteration", type=int, required=True, help="Stored lap to replay.")
@click.option("--out", type=str, default=None,
              help="Directory for re-derived plot data (default: STORE_DIR/plots).")
def replay(store_dir, iteration, out):
    """Re-derive plot data for a stored lap and re-check its invariants."""
    manifest_path = os.path.join(store_dir, "manifest.json")
    if not os.path.exists(manifest_path):
        _fail(f"no manifest in {store_dir}")
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    name = manifest.get("records", {}).get(str(iteration))
    if name is None:
        _fail(f"iteration {iteration} not in store (have {manifest.get('iterations')})")
    record = load_record(os.path.join(store_dir, name), iteration, manifest["dt"])

    track = Track(manifest.get("track_waypoints", Track().waypoints),
                  manifest.get("track_delta", 0.8))
    running_cost = make_goal_indicator(
        track.goal,
        eps_pos=manifest.get("eps_pos", 0.1),
        eps_vel=manifest.get("eps_vel", 0.1),
        Ru=np.asarray(manifest["Ru"]) if "Ru" in manifest else None,
    )

    ok = True
    expected = compute_cost_to_go(record.states, record.inputs, running_cost)
    bad = np.nonzero(np.abs(expected - record.costs) > TELESCOPE_TOL)[0]
    if bad.size:
        t = int(bad[0])
        ok = False
        click.echo(f"cost-to-go telescoping FAILS first at index {t}: "
                   f"stored {float(record.costs[t])!r}, recomputed {float(expected[t])!r}")
    else:
        click.echo(f"cost-to-go telescoping ok ({record.steps + 1} states)")

    viol = np.array([track.corridor_violation(p) for p in record.states[:, 0:3]])
    if viol.max() > CORRIDOR_TOL:
        t = int(np.nonzero(viol > CORRIDOR_TOL)[0][0])
        ok = False
        click.echo(f"corridor violated first at index {t}: {viol[t]:.6f} m outside")
    else:
        click.echo(f"corridor ok (max excursion {viol.max():.3e} m)")

    out = out or os.path.join(store_dir, "plots")
    os.makedirs(out, exist_ok=True)
    traj, speed = _write_plot_files(record, track, out)
    click.echo(f"wrote {os.path.join(out, traj)} and {os.path.join(out, speed)}")
    if not ok:
        sys.exit(1)


@main.command()
@click.argument("run_dirs", type=str, nargs=-1, required=True)
@click.option("--out", type=str, default="report.csv",
              help="Where to write the CSV twin of the table.")
def report(run_dirs, out):
    """Lap-time matrix (runs x iterations) with convergence-band statistics."""
    rows = []
    for d in run_dirs:
        path = os.path.join(d, "manifest.json")
        if not os.path.exists(path):
            _fail(f"no manifest in {d}")
        with open(path) as fh:
            manifest = json.load(fh)
        rows.append((d, manifest["lap_times"]))

    width = max(len(times) for _, times in rows)
    name_w = max(len(d) for d, _ in rows)
    header = ["init"] + [f"iter {j}" for j in range(1, width)]
    click.echo(" " * name_w + "  " + "".join(f"{h:>10}" for h in header)
               + f"{'band':>10}")
    for d, times in rows:
        band = _band(times)
        cells = "".join(f"{t:>10.2f}" for t in times)
        cells += " " * 10 * (width - len(times))
        band_s = f"{100.0 * band:>9.1f}%" if band is not None else f"{'-':>10}"
        click.echo(f"{d:<{name_w}}  {cells}{band_s}")

    with open(out, "w") as fh:
        fh.write("run, " + ", ".join(["init"] + [f"iter_{j}" for j in range(1, width)])
                 + ", band_last3\n")
        for d, times in rows:
            band = _band(times)
            cells = [_fmt(t) for t in times] + [""] * (width - len(times))
            fh.write(f"{d}, " + ", ".join(cells)
                     + f", {_fmt(band) if band is not None else ''}\n")
    click.echo(f"wrote {out}")


if __name__ == "__main__":
    main()
