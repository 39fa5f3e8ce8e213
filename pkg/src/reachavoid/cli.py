"""Command-line entry point: ``reachavoid {validate,solve,play,bench,plot}``.

Exit codes: 0 ok, 1 validation error, 2 unsolvable, 3 play failure,
4 timeout, 5 invariant violation. Every command that writes files also
writes a ``manifest.json`` describing the run next to them.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import json
import logging
import math
import os
import statistics
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

from . import __version__
from .model import (
    ZERO,
    Box,
    GameParams,
    HybridState,
    Mode,
    Scope,
    StateVec,
    Task,
    build_modal_game,
)
from .player import (
    Outcome,
    PlayConfig,
    format_summary,
    play,
    read_csv,
    write_csv,
)
from .plot import max_deviation, plot_play
from .scenarios import (
    BUILTINS,
    TaskFile,
    TaskFileError,
    TaskValidationError,
    builtin_note,
    builtin_params,
    builtin_scenario,
    check_perforation,
    read_task_file,
    validate_route,
)
from .solver import SolveCache, Unsolvable, dump_value_table, solve_ddp, solve_with_extension

log = logging.getLogger("reachavoid")

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_UNSOLVABLE = 2
EXIT_FAILURE = 3
EXIT_TIMEOUT = 4
EXIT_INVARIANT = 5

OUTCOME_EXIT = {
    Outcome.TERMINATED: EXIT_OK,
    Outcome.FAILURE: EXIT_FAILURE,
    Outcome.TIMEOUT: EXIT_TIMEOUT,
    Outcome.INVARIANT: EXIT_INVARIANT,
}

OUT_ENV = "REACHAVOID_OUT"
DIST_ALIASES = {"none": "none", "wind": "random-wind", "worst": "worst-case"}
POLICY_ALIASES = {"nonstat": "non-stationary", "quasi": "quasi-stationary"}


@dataclass
class RunManifest:
    command: str
    task_path: Optional[str]
    params: dict
    seeds: list
    output_dir: str
    tool_version: str = __version__
    timestamp: str = field(default_factory=lambda: _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"))
    extra: dict = field(default_factory=dict)

    def write(self, out_dir: Path) -> Path:
        path = Path(out_dir) / "manifest.json"
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")
        return path


def params_dict(params: GameParams) -> dict:
    return {
        "controls": len(params.controls),
        "disturbances": [list(d) for d in params.disturbances],
        "v_max": params.v_max,
        "horizon": params.horizon,
        "pos_pad": {q.value: v for q, v in params.pos_pad.items()},
        "vel_pad": {q.value: v for q, v in params.vel_pad.items()},
        "P": [list(r) for r in params.P],
        "Q": [list(r) for r in params.Q],
        "R": [list(r) for r in params.R],
        "ext_pad": params.ext_pad,
        "time_ext": params.time_ext,
        "max_retries": params.max_retries,
    }


class UsageError(Exception):
    pass


def load(path: str, validate: bool = True) -> TaskFile:
    """Task file from disk, or a built-in scene written as ``builtin:NAME``."""
    if path.startswith("builtin:"):
        name = path.split(":", 1)[1]
        if name not in BUILTINS:
            raise TaskFileError(f"unknown built-in scenario {name!r}")
        task = builtin_scenario(name)
        if validate:
            bad = validate_route(task.route, task.grid, task.z_min)
            if bad:
                raise TaskValidationError(bad)
            if not check_perforation(task):
                raise TaskValidationError(["not δ-perforated"])
        return TaskFile(task, builtin_params(name), name, builtin_note(name))
    if not Path(path).is_file():
        raise TaskFileError(f"{path}: no such file")
    return read_task_file(path, validate=validate)


def out_dir(arg: Optional[str], command: str) -> Path:
    base = arg or os.environ.get(OUT_ENV) or "reachavoid-out"
    path = Path(base)
    path.mkdir(parents=True, exist_ok=True)
    return path


# --------------------------------------------------------------------------
# validate


def cmd_validate(args) -> int:
    try:
        tf = load(args.task, validate=False)
    except TaskFileError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    task = tf.task
    violations = validate_route(task.route, task.grid, task.z_min)
    for v in violations:
        print(f"violated: {v}")
    if violations:
        return EXIT_INVALID
    perf = check_perforation(task)
    if not perf:
        print(f"not δ-perforated (no tube reaches waypoint {perf.failed_segment})")
        return EXIT_INVALID
    print(f"ok: {len(task.route)} waypoints, {len(task.obstacles)} obstacle cells, δ-perforated")
    return EXIT_OK


# --------------------------------------------------------------------------
# solve


def segment_state(task: Task, j: int, mode: Optional[str]) -> HybridState:
    """Jump target ``(q, (p_j, 0, j+1))`` opening the modal game of segment ``j``."""
    n = len(task.route)
    if not 1 <= j <= n - 1:
        raise UsageError(f"segment must be in 1..{n - 1}")
    if mode is None:
        q = Mode.DEPART if j == 1 else Mode.ARRIVE if j == n - 1 else Mode.CRUISE
    else:
        q = Mode(mode)
    return HybridState(q, StateVec(task.waypoint(j), ZERO, j + 1))


def cmd_solve(args) -> int:
    try:
        tf = load(args.task, validate=False)
        s = segment_state(tf.task, args.segment, args.mode)
    except (TaskFileError, UsageError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    params = tf.params if args.horizon is None else tf.params.replace(horizon=args.horizon)
    out = out_dir(args.out, "solve")
    code = EXIT_OK
    try:
        sol = solve_with_extension(s, tf.task, params)
        stats = sol.stats.as_dict()
    except Unsolvable as exc:
        code = EXIT_UNSOLVABLE
        stats = exc.solution.stats.as_dict() if exc.solution is not None else {}
        stats["error"] = str(exc)
        sol = None
        print(f"unsolvable: {exc}")
        sizes = stats.get("winning_sizes", {})
        print("winning region per stage: " + ", ".join(f"k={k}:{v}" for k, v in sizes.items()))
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    stats.update({"segment": args.segment, "mode": s.q.value, "horizon": params.horizon})
    (out / "stats.json").write_text(json.dumps(stats, indent=2, sort_keys=True) + "\n")
    files = ["stats.json"]
    if sol is not None:
        print(
            f"solved {s.q.value} segment {args.segment}: {stats['states']} states, "
            f"{stats['backups']} backups in {stats['wall_time']:.3f} s "
            f"({stats['backups_per_second']} backups/s), k_fp={stats['k_fp']}, "
            f"extensions={stats['extensions']}"
        )
        if args.dump_table:
            dump_value_table(sol, out / "value_table.bin")
            files.append("value_table.bin")
    RunManifest("solve", args.task, params_dict(params), [], str(out), extra={"files": files}).write(out)
    return code


# --------------------------------------------------------------------------
# play


def _play_once(tf: TaskFile, seed: int, dist: str, flavor: str, cache=None):
    return play(tf.task, tf.params, PlayConfig(seed=seed, disturbance=dist, flavor=flavor), cache=cache)


def _sweep_chunk(job):
    task_arg, seeds, dist, flavor = job
    tf = load(task_arg, validate=False)
    cache = SolveCache()
    out = []
    for seed in seeds:
        rec = _play_once(tf, seed, dist, flavor, cache)
        out.append((seed, rec.outcome.value, rec.steps, rec.total_cost))
    return out


def cmd_play(args) -> int:
    try:
        tf = load(args.task)
    except TaskValidationError as exc:
        print(f"invalid task: {', '.join(exc.violations)}", file=sys.stderr)
        return EXIT_INVALID
    except TaskFileError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    dist = DIST_ALIASES[args.dist]
    flavor = POLICY_ALIASES[args.policy]
    out = out_dir(args.out, "play")
    if args.sweep:
        return _cmd_sweep(args, tf, dist, flavor, out)

    cache = SolveCache()
    rec = _play_once(tf, args.seed, dist, flavor, cache)
    write_csv(rec, out / "trajectory.csv")
    files = ["trajectory.csv", "summary.txt"]
    summary = dict(rec.summary())
    summary["seed"] = args.seed
    summary["disturbance"] = dist
    summary["policy"] = flavor
    ref_csv = out / "trajectory.csv"
    if dist != "none":
        ref = _play_once(tf, args.seed, "none", flavor, cache)
        write_csv(ref, out / "reference.csv")
        files.append("reference.csv")
        ref_csv = out / "reference.csv"
        dev = max_deviation([r.x.p for r in read_csv(ref_csv)], [r.x.p for r in read_csv(out / "trajectory.csv")])
        summary["max_deviation"] = dev
        summary["within_tube"] = dev <= tf.task.delta_tube
    (out / "summary.txt").write_text(format_summary(summary))
    disturbed = out / "trajectory.csv" if dist != "none" else None
    for p in plot_play(tf.task, out, ref_csv, disturbed, tf.params):
        files.append(p.name)
    RunManifest(
        "play", args.task, params_dict(tf.params), [args.seed], str(out),
        extra={"disturbance": dist, "policy": flavor, "files": files},
    ).write(out)
    print(format_summary(summary), end="")
    return OUTCOME_EXIT[rec.outcome]


def _cmd_sweep(args, tf: TaskFile, dist: str, flavor: str, out: Path) -> int:
    seeds = list(range(args.seed, args.seed + args.sweep))
    workers = max(1, min(args.workers, len(seeds)))
    chunks = [seeds[j::workers] for j in range(workers)]
    jobs = [(args.task, c, dist, flavor) for c in chunks]
    t0 = time.perf_counter()
    if workers == 1:
        results = _sweep_chunk(jobs[0])
    else:
        with ProcessPoolExecutor(workers) as pool:
            results = [r for part in pool.map(_sweep_chunk, jobs) for r in part]
    results.sort()
    counts: dict = {}
    for _, outcome, _, _ in results:
        counts[outcome] = counts.get(outcome, 0) + 1
    n = len(results)
    done = counts.get(Outcome.TERMINATED.value, 0)
    summary = {
        "plays": n,
        "terminated": done,
        "terminated_percent": round(100.0 * done / n, 2) if n else 0.0,
    }
    for o in Outcome:
        summary[o.value] = counts.get(o.value, 0)
    summary["wall_time"] = round(time.perf_counter() - t0, 3)
    (out / "sweep_summary.txt").write_text(format_summary(summary))
    with open(out / "sweep.csv", "w") as fh:
        fh.write("seed,outcome,steps,total_cost\n")
        for row in results:
            fh.write(",".join(str(v) for v in row) + "\n")
    RunManifest(
        "play", args.task, params_dict(tf.params), seeds, str(out),
        extra={"disturbance": dist, "policy": flavor, "workers": workers, "files": ["sweep_summary.txt", "sweep.csv"]},
    ).write(out)
    print(format_summary(summary), end="")
    for seed, outcome, _, _ in results:
        if outcome != Outcome.TERMINATED.value:
            return OUTCOME_EXIT[Outcome(outcome)]
    return EXIT_OK


# --------------------------------------------------------------------------
# bench


def synthetic_game(cells: int, stages: int, params: Optional[GameParams] = None):
    """Obstacle-free cruise game with roughly ``cells`` states."""
    params = params or GameParams()
    vs = 2 * params.v_max + 1
    n_pos = max(1, math.ceil(cells / vs**3))
    a = max(1, round(n_pos ** (1 / 3)))
    b = a
    c = max(1, math.ceil(n_pos / (a * b)))
    grid = Box((0, 0, 0), (a + 5, b + 5, c + 5))
    # the last leg ends inside the scope so the landing column meets it
    z = min(c - 1, 4)
    route = [(0, 0, 0), (0, 0, z), (a - 1, 0, z), (a - 1, 0, 0)]
    task = Task(grid, route, frozenset())
    pos = Box((0, 0, 0), (a - 1, b - 1, c - 1))
    scope = Scope(pos.product(Box((-params.v_max,) * 3, (params.v_max,) * 3)), 3)
    s = HybridState(Mode.CRUISE, StateVec(task.waypoint(2), ZERO, 3))
    return build_modal_game(s, task, params, scope=scope, horizon=stages)


def run_bench(cells: int, stages: int = 1, reps: int = 1) -> dict:
    if cells <= 0:
        return {"cells": 0, "stages": stages, "reps": reps, "times": []}
    game = synthetic_game(cells, stages)
    times = []
    stats = None
    for _ in range(reps):
        sol = solve_ddp(game, early_stop=False)
        stats = sol.stats
        times.append(stats.wall_time)
    backups = stats.backups
    return {
        "cells": game.scope.size,
        "stages": stages,
        "reps": reps,
        "controls": len(game.params.controls),
        "disturbances": len(game.params.disturbances),
        "backups": backups,
        "times": [round(t, 6) for t in times],
        "min": round(min(times), 6),
        "median": round(statistics.median(times), 6),
        "backups_per_second": round(backups / min(times), 1),
        "peak_cells": stats.peak_cells,
    }


def cmd_bench(args) -> int:
    res = run_bench(args.cells, args.stages, args.reps)
    if not res["times"]:
        print("nothing to benchmark (0 cells)")
        return EXIT_OK
    print(
        f"{res['cells']} cells x {res['stages']} stages, |U|={res['controls']} |D|={res['disturbances']}: "
        f"min {res['min']:.3f} s, median {res['median']:.3f} s, "
        f"{res['backups_per_second']:.0f} backups/s, peak live cells {res['peak_cells']}"
    )
    if args.json:
        print(json.dumps(res, sort_keys=True))
    return EXIT_OK


# --------------------------------------------------------------------------
# plot


def cmd_plot(args) -> int:
    try:
        tf = load(args.task, validate=False)
    except TaskFileError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    out = out_dir(args.out, "plot")
    paths = plot_play(tf.task, out, args.reference, args.disturbed, tf.params, stem=args.stem)
    for p in paths:
        print(p)
    return EXIT_OK


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="reachavoid", description="Robust reach-avoid control on a 3D grid.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check route validity and tube perforation")
    p.add_argument("task", help="task YAML file or builtin:NAME")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("solve", help="solve the modal game of one route segment")
    p.add_argument("task")
    p.add_argument("--segment", type=int, default=1, help="segment j = (p_j, p_j+1), 1-based")
    p.add_argument("--mode", choices=[m.value for m in Mode if m != Mode.STANDBY])
    p.add_argument("--horizon", type=int)
    p.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./reachavoid-out)")
    p.add_argument("--dump-table", action="store_true", help="also write the value table")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("play", help="play the hybrid game (or sweep seeds)")
    p.add_argument("task")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dist", choices=sorted(DIST_ALIASES), default="wind")
    p.add_argument("--policy", choices=sorted(POLICY_ALIASES), default="nonstat")
    p.add_argument("--sweep", type=int, default=0, metavar="N", help="play seeds seed..seed+N-1")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out")
    p.set_defaults(func=cmd_play)

    p = sub.add_parser("bench", help="time Bellman backups on an obstacle-free scope")
    p.add_argument("--cells", type=int, default=1_000_000)
    p.add_argument("--stages", type=int, default=1)
    p.add_argument("--reps", type=int, default=1)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("plot", help="render SVG views from trajectory CSVs")
    p.add_argument("task")
    p.add_argument("--reference", help="undisturbed trajectory CSV")
    p.add_argument("--disturbed", help="disturbed trajectory CSV")
    p.add_argument("--stem", default="play")
    p.add_argument("--out")
    p.set_defaults(func=cmd_plot)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
