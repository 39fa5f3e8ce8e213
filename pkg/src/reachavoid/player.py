"""Hybrid game player.

Runs a task from the ground: fires the first enabled jump whenever a guard is
met, synthesises a modal controller on entry into a flying mode, and steps the
isolated dynamics under a disturbance source until an exit condition holds.
"""

from __future__ import annotations

import csv
import enum
import io
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from .model import (
    ZERO,
    GameParams,
    GridVec,
    HybridState,
    Mode,
    StateVec,
    Task,
    apply_jump,
    enabled_events,
    initial_state,
    invariant,
    stage_cost,
    step_dynamics,
    vec,
)
from .solver import (
    OutOfDomain,
    Policy,
    Solution,
    SolveCache,
    Unsolvable,
    quasi_stationary,
    solve_with_extension,
    winning_region,
)


class Outcome(str, enum.Enum):
    TERMINATED = "terminated"
    FAILURE = "failure"
    TIMEOUT = "timeout"
    INVARIANT = "invariant-violation"


# --------------------------------------------------------------------------
# Wind


COMPASS = {
    "N": GridVec(0, 1, 0),
    "E": GridVec(1, 0, 0),
    "S": GridVec(0, -1, 0),
    "W": GridVec(-1, 0, 0),
    "calm": ZERO,
}
_RING = ["N", "E", "S", "W"]


def default_wind_weights(same=4, adjacent=2, opposite=1, calm=2) -> dict:
    weights = {}
    for j, a in enumerate(_RING):
        row = {a: same, _RING[(j + 1) % 4]: adjacent, _RING[(j - 1) % 4]: adjacent}
        row[_RING[(j + 2) % 4]] = opposite
        row["calm"] = calm
        weights[a] = row
    weights["calm"] = {"calm": same, **{a: adjacent for a in _RING}}
    return weights


@dataclass(frozen=True)
class WindState:
    direction: str = "calm"
    remaining: int = 0
    weights: Mapping = field(default_factory=default_wind_weights, compare=False)
    dwell: tuple = (3, 8)
    magnitude: int = 1

    def __post_init__(self):
        if self.remaining < 0 or self.dwell[0] < 1 or self.dwell[0] > self.dwell[1]:
            raise ValueError("bad dwell configuration")
        for row in self.weights.values():
            if sum(row.values()) <= 0 or min(row.values()) < 0:
                raise ValueError("wind weight rows must be non-negative with positive sum")

    def vector(self) -> GridVec:
        c = COMPASS[self.direction]
        return GridVec(c.x * self.magnitude, c.y * self.magnitude, 0)


def gen_dist(w: WindState, rng: np.random.Generator, D: Optional[Sequence] = None) -> tuple[GridVec, WindState]:
    """Draw the next wind vector.

    The current direction persists for its dwell time; afterwards a new
    direction is drawn from the weight row of the old one together with a
    fresh dwell. Vectors outside ``D`` (when given) are replaced by calm.
    """
    if w.remaining > 0:
        nxt = WindState(w.direction, w.remaining - 1, w.weights, w.dwell, w.magnitude)
    else:
        row = w.weights[w.direction]
        names = sorted(row)
        p = np.array([row[a] for a in names], dtype=float)
        direction = names[int(rng.choice(len(names), p=p / p.sum()))]
        dwell = int(rng.integers(w.dwell[0], w.dwell[1] + 1))
        nxt = WindState(direction, dwell - 1, w.weights, w.dwell, w.magnitude)
    d = nxt.vector()
    if D is not None and d not in D:
        d = ZERO
    return d, nxt


def no_moving_obstacles(s: HybridState, k: int) -> bool:
    """Moving-obstacle predicate; the scene is static, so never unsafe."""
    return False


# --------------------------------------------------------------------------
# Task updates


class TaskUpdateRejected(ValueError):
    def __init__(self, predicate: str, detail: str = ""):
        super().__init__(f"task update rejected: {predicate}" + (f" ({detail})" if detail else ""))
        self.predicate = predicate
        self.detail = detail


@dataclass(frozen=True)
class TaskUpdate:
    new_obstacles: frozenset = frozenset()
    new_route_suffix: Optional[tuple] = None
    new_route: Optional[tuple] = None


def upd_task(
    task: Task,
    at_waypoint: int,
    new_obstacles=(),
    new_route_suffix: Optional[Sequence] = None,
    *,
    new_route: Optional[Sequence] = None,
) -> Task:
    """Apply a restricted update at waypoint ``p_{at_waypoint}``.

    Obstacles may be added anywhere; waypoints may only change after
    ``p_{at_waypoint}``. Either pass the replacement ``new_route_suffix`` or a
    full ``new_route`` whose prefix must be untouched. Raises
    :class:`TaskUpdateRejected` naming the violated predicate.
    """
    from .scenarios import check_perforation, validate_route

    keep = task.route[:at_waypoint]
    route = task.route
    if new_route is not None:
        new_route = tuple(vec(p) for p in new_route)
        if new_route[:at_waypoint] != keep:
            raise TaskUpdateRejected("prefix", f"waypoints up to p_{at_waypoint} are fixed")
        route = new_route
    elif new_route_suffix is not None:
        route = keep + tuple(vec(p) for p in new_route_suffix)
    updated = task.replace(route=route, obstacles=task.obstacles | {vec(o) for o in new_obstacles})
    violations = validate_route(updated.route, updated.grid, updated.z_min)
    if violations:
        raise TaskUpdateRejected("valid-route", ", ".join(violations))
    if not check_perforation(updated):
        raise TaskUpdateRejected("perforation", f"not delta-perforated for delta_tube={task.delta_tube}")
    return updated


# --------------------------------------------------------------------------
# Records


@dataclass(frozen=True)
class PlayStep:
    step: int
    mode: Mode
    k: Optional[int]
    x: StateVec
    u: Optional[GridVec] = None
    d: Optional[GridVec] = None
    event: str = ""


@dataclass
class SegmentRecord:
    mode: Mode
    i: int
    x0: StateVec
    k_first: int = 0
    k_fp: Optional[int] = None
    horizon: int = 0
    flavor: str = "non-stationary"
    solve_time: float = 0.0
    scope_cells: int = 0
    extensions: int = 0
    winning_size: int = 0
    steps: int = 0
    cost: int = 0
    reached: bool = False
    error: str = ""


@dataclass
class PlayRecord:
    rows: list = field(default_factory=list)
    events: list = field(default_factory=list)  # (step, Event)
    outcome: Optional[Outcome] = None
    segments: list = field(default_factory=list)
    rejected_updates: list = field(default_factory=list)
    final: Optional[HybridState] = None
    task: Optional[Task] = None

    @property
    def steps(self) -> int:
        return sum(1 for r in self.rows if r.u is not None)

    @property
    def positions(self) -> list[GridVec]:
        return [r.x.p for r in self.rows]

    @property
    def total_cost(self) -> int:
        return sum(s.cost for s in self.segments)

    def summary(self) -> dict:
        out = {
            "outcome": self.outcome.value if self.outcome else "running",
            "steps": self.steps,
            "segments": len(self.segments),
            "total_cost": self.total_cost,
            "max_scope_cells": max((s.scope_cells for s in self.segments), default=0),
            "solve_time_total": round(sum(s.solve_time for s in self.segments), 6),
        }
        for j, s in enumerate(self.segments, 1):
            out[f"segment_{j}"] = (
                f"{s.mode.value}:i={s.i}:steps={s.steps}:cost={s.cost}:k_first={s.k_first}"
                f":k_fp={s.k_fp}:ext={s.extensions}:solve_time={s.solve_time:.6f}"
            )
            if s.error:
                out[f"segment_{j}_error"] = s.error
        if self.rejected_updates:
            out["rejected_updates"] = ";".join(self.rejected_updates)
        return out


CSV_COLUMNS = [
    "step", "mode", "k", "p_x", "p_y", "p_z", "v_x", "v_y", "v_z", "i",
    "u_x", "u_y", "u_z", "d_x", "d_y", "d_z", "event",
]


def record_to_csv(record: PlayRecord) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in record.rows:
        u = list(r.u) if r.u is not None else ["", "", ""]
        d = list(r.d) if r.d is not None else ["", "", ""]
        k = "" if r.k is None else r.k
        w.writerow([r.step, r.mode.value, k, *r.x.p, *r.x.v, r.x.i, *u, *d, r.event])
    return buf.getvalue()


def write_csv(record: PlayRecord, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(record_to_csv(record))


def read_csv(path) -> list[PlayStep]:
    """Parse a trajectory CSV back into :class:`PlayStep` rows."""

    def opt(row, keys):
        vals = [row[k] for k in keys]
        return None if vals[0] == "" else GridVec(*(int(v) for v in vals))

    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            x = StateVec(
                GridVec(int(row["p_x"]), int(row["p_y"]), int(row["p_z"])),
                GridVec(int(row["v_x"]), int(row["v_y"]), int(row["v_z"])),
                int(row["i"]),
            )
            out.append(
                PlayStep(
                    int(row["step"]),
                    Mode(row["mode"]),
                    None if row["k"] == "" else int(row["k"]),
                    x,
                    opt(row, ("u_x", "u_y", "u_z")),
                    opt(row, ("d_x", "d_y", "d_z")),
                    row["event"],
                )
            )
    return out


def format_summary(summary: Mapping) -> str:
    return "".join(f"{k}={v}\n" for k, v in summary.items())


def parse_summary(text: str) -> dict:
    out = {}
    for line in text.splitlines():
        if line.strip():
            key, _, val = line.partition("=")
            out[key] = val
    return out


# --------------------------------------------------------------------------
# Play


DIST_MODES = ("none", "random-wind", "worst-case")
FLAVORS = ("non-stationary", "quasi-stationary")


@dataclass
class PlayConfig:
    seed: int = 0
    disturbance: str = "random-wind"
    flavor: str = "non-stationary"
    omega: Callable[[HybridState], bool] = lambda s: s.q == Mode.STANDBY
    moving_obstacle: Callable[[HybridState, int], bool] = no_moving_obstacles
    updates: Mapping[int, TaskUpdate] = field(default_factory=dict)
    wind: WindState = field(default_factory=WindState)
    max_steps: int = 100_000

    def __post_init__(self):
        if self.disturbance not in DIST_MODES:
            raise ValueError(f"disturbance must be one of {DIST_MODES}")
        if self.flavor not in FLAVORS:
            raise ValueError(f"flavor must be one of {FLAVORS}")


def classify(
    s: HybridState,
    k: int,
    sol: Optional[Solution],
    params: GameParams,
    task: Optional[Task] = None,
    policy: Optional[Policy] = None,
    omega: Optional[Callable[[HybridState], bool]] = None,
) -> Optional[Outcome]:
    """Exit condition at ``(s, k)``, or ``None`` while the play is running.

    Precedence: termination, failure (``x`` outside the winning region),
    timeout (stage past the horizon, or step budget used up for a
    quasi-stationary policy), invariant violation.
    """
    omega = omega or (lambda st: st.q == Mode.STANDBY)
    if omega(s):
        return Outcome.TERMINATED
    quasi = policy is not None and policy.flavor == "quasi-stationary"
    if sol is not None:
        N = sol.horizon
        if not sol.game.in_scope(s.x):
            return Outcome.FAILURE
        if quasi:
            if not sol.winning(s.x, sol.k_fp):
                return Outcome.FAILURE
            if k >= sol.k_first + N:
                return Outcome.TIMEOUT
        else:
            if k <= N and not sol.winning(s.x, k):
                return Outcome.FAILURE
            if k > N:
                return Outcome.TIMEOUT
    if task is not None and not invariant(s, task, params):
        return Outcome.INVARIANT
    return None


def segment_anchor(s: HybridState, task: Task) -> HybridState:
    """Jump target ``(q, (p_{i-1}, 0, i))`` through which the modal game at
    ``s`` was entered; its scope is the goal the previous game aimed for."""
    i = s.x.i
    if i < 2:
        return s
    return HybridState(s.q, StateVec(task.waypoint(i - 1), ZERO, i))


def play(
    task: Task,
    params: GameParams,
    cfg: Optional[PlayConfig] = None,
    cache=None,
) -> PlayRecord:
    """Play the hybrid game once from the ground state at ``p_1``."""
    cfg = cfg or PlayConfig()
    rng = np.random.default_rng(cfg.seed)
    wind = cfg.wind
    rec = PlayRecord(task=task)
    s = initial_state(task)
    sol: Optional[Solution] = None
    policy: Optional[Policy] = None
    seg: Optional[SegmentRecord] = None
    k = 0
    step = 0
    D = params.disturbances

    def finish(outcome: Outcome):
        rec.outcome = outcome
        rec.final = s
        rec.rows.append(PlayStep(step, s.q, k if sol is not None else None, s.x))
        return rec

    while True:
        if rec.events and cfg.omega(s):
            return finish(Outcome.TERMINATED)
        events = enabled_events(s, task, params)
        if events:
            e = events[0]
            rec.rows.append(PlayStep(step, s.q, k if sol is not None else None, s.x, event=e.value))
            rec.events.append((step, e))
            s = apply_jump(s, e, task, params)
            if seg is not None:
                seg.reached = True
            sol = policy = seg = None
            upd = cfg.updates.get(s.x.i - 1)
            if upd is not None:
                try:
                    task = upd_task(
                        task, s.x.i - 1, upd.new_obstacles, upd.new_route_suffix, new_route=upd.new_route
                    )
                    rec.task = task
                except TaskUpdateRejected as exc:
                    rec.rejected_updates.append(f"p{s.x.i - 1}:{exc.predicate}")
            continue
        if s.q == Mode.STANDBY:
            # standby without an enabled start: nothing left to fly
            return finish(Outcome.TERMINATED)

        if sol is None:
            seg = SegmentRecord(s.q, s.x.i, s.x, flavor=cfg.flavor)
            rec.segments.append(seg)
            try:
                sol = solve_with_extension(s, task, params, cache=cache, anchor=segment_anchor(s, task))
            except Unsolvable as exc:
                seg.error = str(exc)
                seg.winning_size = exc.winning_size
                seg.extensions = exc.attempts
                return finish(Outcome.FAILURE)
            except ValueError as exc:  # degenerate scope or empty goal
                seg.error = str(exc)
                return finish(Outcome.FAILURE)
            seg.k_first, seg.k_fp, seg.horizon = sol.k_first, sol.k_fp, sol.horizon
            seg.solve_time = sol.stats.wall_time
            seg.scope_cells = sol.stats.states
            seg.extensions = sol.stats.extensions
            seg.winning_size = int(winning_region(sol.value, sol.k_first).sum())
            policy = sol.policy
            if cfg.flavor == "quasi-stationary":
                if sol.k_fp is not None:
                    policy = quasi_stationary(sol)
                else:
                    seg.flavor = "non-stationary"
            k = sol.k_first

        out = classify(s, k, sol, params, task, policy, cfg.omega)
        if out is None and cfg.moving_obstacle(s, k):
            rec.events.append((step, "interrupt"))
            out = Outcome.FAILURE
        if out is None and step >= cfg.max_steps:
            out = Outcome.TIMEOUT
        if out is not None:
            return finish(out)

        try:
            u = policy.action(s.x, k)
        except OutOfDomain as exc:
            seg.error = str(exc)
            return finish(Outcome.FAILURE)
        if cfg.disturbance == "none":
            d = ZERO
        elif cfg.disturbance == "worst-case":
            d = policy.worst_disturbance(s.x, k)
        else:
            d, wind = gen_dist(wind, rng, D)
        c = stage_cost(u, d, s, k, sol.game)
        seg.cost += c
        seg.steps += 1
        rec.rows.append(PlayStep(step, s.q, k, s.x, u, d))
        s = HybridState(s.q, step_dynamics(s.x, u, d))
        step += 1
        k += 1


@dataclass
class SweepResult:
    outcomes: dict
    unsafe_visits: int
    plays: int
    records: list

    @property
    def all_terminated(self) -> bool:
        return self.outcomes.get(Outcome.TERMINATED.value, 0) == self.plays


def sweep(task: Task, params: GameParams, seeds: Sequence[int], base: Optional[PlayConfig] = None, keep=False):
    """Many seeded plays sharing one solution cache."""
    from .model import unsafe_static

    base = base or PlayConfig()
    cache = SolveCache()
    outcomes: dict = {}
    unsafe = 0
    kept = []
    for seed in seeds:
        cfg = PlayConfig(
            seed=seed,
            disturbance=base.disturbance,
            flavor=base.flavor,
            omega=base.omega,
            moving_obstacle=base.moving_obstacle,
            updates=base.updates,
            wind=base.wind,
            max_steps=base.max_steps,
        )
        rec = play(task, params, cfg, cache=cache)
        name = rec.outcome.value
        outcomes[name] = outcomes.get(name, 0) + 1
        unsafe += sum(1 for r in rec.rows if r.mode != Mode.STANDBY and unsafe_static(r.x.p, rec.task))
        if keep:
            kept.append(rec)
    return SweepResult(outcomes, unsafe, len(seeds), kept)
