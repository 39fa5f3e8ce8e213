"""Parametric hybrid game model of a grid-bound aerial vehicle.

Holds the domain types (grid vectors, hybrid states, boxes, tasks, game
parameters), the isolated point-mass dynamics, the scope function that cuts
a transition cuboid out of the state space, the reach/avoid predicates and
cost terms of a modal game, and the mode-transition logic
(standby -> depart -> cruise* -> arrive -> standby).

Everything here is a pure function of immutable inputs.
"""

from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from typing import Iterator, NamedTuple, Optional, Sequence, Union

import numpy as np


class GridVec(NamedTuple):
    """Integer 3-vector in grid units (1 unit is roughly 1 m)."""

    x: int
    y: int
    z: int

    def __add__(self, other):  # type: ignore[override]
        return GridVec(self.x + other[0], self.y + other[1], self.z + other[2])

    def __sub__(self, other):
        return GridVec(self.x - other[0], self.y - other[1], self.z - other[2])

    def __neg__(self):
        return GridVec(-self.x, -self.y, -self.z)

    def norm2(self) -> int:
        return self.x * self.x + self.y * self.y + self.z * self.z


ZERO = GridVec(0, 0, 0)

#: Gravitational acceleration. Kept as a model constant only: the isolated
#: dynamics used for synthesis leave it to lower-level stability control.
GRAVITY = GridVec(0, 0, -10)


def vec(v: Sequence[int]) -> GridVec:
    return GridVec(int(v[0]), int(v[1]), int(v[2]))


class StateVec(NamedTuple):
    p: GridVec
    v: GridVec
    i: int

    @property
    def pv(self) -> tuple[int, int, int, int, int, int]:
        return (*self.p, *self.v)


class Mode(str, enum.Enum):
    STANDBY = "standby"
    DEPART = "depart"
    CRUISE = "cruise"
    ARRIVE = "arrive"


FLYING = (Mode.DEPART, Mode.CRUISE, Mode.ARRIVE)


class HybridState(NamedTuple):
    q: Mode
    x: StateVec


class Event(str, enum.Enum):
    START = "start"
    TO_CRUISE = "to_cruise"
    ADVANCE = "advance"
    TO_ARRIVE = "to_arrive"
    LAND = "land"


EVENT_TARGET = {
    Event.START: Mode.DEPART,
    Event.TO_CRUISE: Mode.CRUISE,
    Event.ADVANCE: Mode.CRUISE,
    Event.TO_ARRIVE: Mode.ARRIVE,
    Event.LAND: Mode.STANDBY,
}


# --------------------------------------------------------------------------
# Costs


class _Top:
    """Saturating infeasibility sentinel: maximal, absorbing under ``+``."""

    __slots__ = ()
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "TOP"

    def __reduce__(self):
        return (_Top, ())

    def __add__(self, other):
        return self

    __radd__ = __add__

    def __eq__(self, other):
        return other is self

    def __hash__(self):
        return hash("TOP")

    def __lt__(self, other):
        return False

    def __le__(self, other):
        return other is self

    def __gt__(self, other):
        return other is not self

    def __ge__(self, other):
        return True


TOP = _Top()
Cost = Union[int, _Top]


# --------------------------------------------------------------------------
# Boxes


@dataclass(frozen=True)
class Box:
    """Closed, non-empty, axis-aligned integer box of any dimension."""

    lower: tuple[int, ...]
    upper: tuple[int, ...]

    def __post_init__(self):
        lo = tuple(int(a) for a in self.lower)
        hi = tuple(int(b) for b in self.upper)
        if len(lo) != len(hi):
            raise ValueError("box bounds differ in dimension")
        if any(a > b for a, b in zip(lo, hi)):
            raise DegenerateScope(f"empty box {lo}..{hi}")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return len(self.lower)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(b - a + 1 for a, b in zip(self.lower, self.upper))

    @property
    def size(self) -> int:
        return math.prod(self.shape)

    def __contains__(self, point) -> bool:
        return all(a <= c <= b for a, c, b in zip(self.lower, point, self.upper))

    def intersect(self, other: "Box") -> Optional["Box"]:
        lo = tuple(max(a, b) for a, b in zip(self.lower, other.lower))
        hi = tuple(min(a, b) for a, b in zip(self.upper, other.upper))
        if any(a > b for a, b in zip(lo, hi)):
            return None
        return Box(lo, hi)

    def pad(self, amounts: Sequence[int]) -> "Box":
        return Box(
            tuple(a - d for a, d in zip(self.lower, amounts)),
            tuple(b + d for b, d in zip(self.upper, amounts)),
        )

    def project(self, start: int, stop: int) -> "Box":
        return Box(self.lower[start:stop], self.upper[start:stop])

    def product(self, other: "Box") -> "Box":
        return Box(self.lower + other.lower, self.upper + other.upper)

    def points(self) -> Iterator[tuple[int, ...]]:
        return itertools.product(*(range(a, b + 1) for a, b in zip(self.lower, self.upper)))


class DegenerateScope(ValueError):
    """A scope or box came out empty."""


@dataclass(frozen=True)
class Scope:
    box: Box  # over (p_x, p_y, p_z, v_x, v_y, v_z)
    i: int

    def __post_init__(self):
        if self.box.dim != 6:
            raise ValueError("scope box must be 6-dimensional")

    @property
    def positions(self) -> Box:
        return self.box.project(0, 3)

    @property
    def velocities(self) -> Box:
        return self.box.project(3, 6)

    def __contains__(self, x: StateVec) -> bool:
        return x.i == self.i and x.pv in self.box

    @property
    def size(self) -> int:
        return self.box.size


# --------------------------------------------------------------------------
# Task and parameters


def _ball_offsets(delta: Fraction) -> list[GridVec]:
    r2 = math.floor(delta * delta)
    r = math.isqrt(r2)
    rng = range(-r, r + 1)
    return [GridVec(a, b, c) for a, b, c in itertools.product(rng, rng, rng) if a * a + b * b + c * c <= r2]


@dataclass(frozen=True)
class Task:
    """Problem instance: scenery grid, waypoint route, fixed obstacle cloud."""

    grid: Box
    route: tuple[GridVec, ...]
    obstacles: frozenset = frozenset()
    z_min: int = 3
    delta_safe: Fraction = Fraction(3, 2)
    delta_tube: int = 1

    def __post_init__(self):
        object.__setattr__(self, "route", tuple(vec(p) for p in self.route))
        object.__setattr__(self, "obstacles", frozenset(vec(o) for o in self.obstacles))
        object.__setattr__(self, "delta_safe", Fraction(str(self.delta_safe)))
        if self.delta_safe < 0 or self.delta_tube < 0:
            raise ValueError("robustness radii must be non-negative")
        if self.grid.dim != 3:
            raise ValueError("grid must be a 3-dimensional box")

    @property
    def n(self) -> int:
        return len(self.route)

    def waypoint(self, i: int) -> GridVec:
        """1-based waypoint access, ``p_1 .. p_n``."""
        if not 1 <= i <= self.n:
            raise IndexError(f"waypoint index {i} outside 1..{self.n}")
        return self.route[i - 1]

    @cached_property
    def safety_offsets(self) -> list[GridVec]:
        return _ball_offsets(self.delta_safe)

    @cached_property
    def unsafe_grid(self) -> np.ndarray:
        """Boolean array over the grid box marking statically unsafe cells."""
        shape = self.grid.shape
        r = max((max(abs(c) for c in o) for o in self.safety_offsets), default=0)
        occ = np.zeros(tuple(s + 2 * r for s in shape), dtype=bool)
        lo = np.array(self.grid.lower)
        if self.obstacles:
            cells = np.array(sorted(self.obstacles), dtype=np.int64) - lo + r
            keep = np.all((cells >= 0) & (cells < np.array(occ.shape)), axis=1)
            cells = cells[keep]
            occ[cells[:, 0], cells[:, 1], cells[:, 2]] = True
        out = np.zeros(shape, dtype=bool)
        sx, sy, sz = shape
        for o in self.safety_offsets:
            out |= occ[r + o.x : r + o.x + sx, r + o.y : r + o.y + sy, r + o.z : r + o.z + sz]
        return out

    def replace(self, **changes) -> "Task":
        fields = dict(
            grid=self.grid,
            route=self.route,
            obstacles=self.obstacles,
            z_min=self.z_min,
            delta_safe=self.delta_safe,
            delta_tube=self.delta_tube,
        )
        fields.update(changes)
        return Task(**fields)


def _lex_sorted(vectors) -> tuple[GridVec, ...]:
    return tuple(sorted({vec(v) for v in vectors}))


def cube_vectors(magnitude: int = 1) -> tuple[GridVec, ...]:
    rng = range(-magnitude, magnitude + 1)
    return tuple(GridVec(*t) for t in itertools.product(rng, rng, rng))


def horizontal_wind(magnitude: int = 1) -> tuple[GridVec, ...]:
    out = [ZERO]
    for m in range(1, magnitude + 1):
        out += [GridVec(m, 0, 0), GridVec(-m, 0, 0), GridVec(0, m, 0), GridVec(0, -m, 0)]
    return _lex_sorted(out)


def _identity(n: int) -> tuple[tuple[int, ...], ...]:
    return tuple(tuple(int(r == c) for c in range(n)) for r in range(n))


def _zeros(n: int) -> tuple[tuple[int, ...], ...]:
    return tuple((0,) * n for _ in range(n))


def _check_weight(name: str, m, n: int):
    a = np.asarray(m)
    if a.shape != (n, n):
        raise ValueError(f"{name} must be {n}x{n}")
    if not np.issubdtype(a.dtype, np.integer):
        raise ValueError(f"{name} must be integer")
    if (a < 0).any() or (a != a.T).any():
        raise ValueError(f"{name} must be symmetric and non-negative")
    return tuple(tuple(int(v) for v in row) for row in a)


@dataclass(frozen=True)
class GameParams:
    """Alphabets, horizon, paddings and weights shared by all modal games."""

    controls: tuple = field(default_factory=cube_vectors)
    disturbances: tuple = field(default_factory=horizontal_wind)
    v_max: int = 2
    horizon: int = 30
    pos_pad: Optional[dict] = None
    vel_pad: Optional[dict] = None
    P: tuple = field(default_factory=lambda: _identity(6))
    Q: tuple = field(default_factory=lambda: _identity(3))
    R: tuple = field(default_factory=lambda: _zeros(3))
    ext_pad: int = 2
    time_ext: int = 0
    max_retries: int = 3

    def __post_init__(self):
        U = _lex_sorted(self.controls)
        D = _lex_sorted(self.disturbances)
        if ZERO not in U or ZERO not in D:
            raise ValueError("control and disturbance ranges must include 0")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.v_max < 0 or self.ext_pad < 0 or self.time_ext < 0:
            raise ValueError("v_max, ext_pad and time_ext must be non-negative")
        if self.max_retries < 1:
            raise ValueError("max_retries must be positive")
        pos_pad = {q: 2 for q in Mode}
        pos_pad.update({Mode(k): int(v) for k, v in (self.pos_pad or {}).items()})
        vel_pad = {q: min(2, self.v_max) for q in Mode}
        vel_pad[Mode.CRUISE] = self.v_max
        vel_pad.update({Mode(k): int(v) for k, v in (self.vel_pad or {}).items()})
        if min(pos_pad.values()) < 0 or min(vel_pad.values()) < 0:
            raise ValueError("paddings must be non-negative")
        object.__setattr__(self, "controls", U)
        object.__setattr__(self, "disturbances", D)
        object.__setattr__(self, "pos_pad", pos_pad)
        object.__setattr__(self, "vel_pad", vel_pad)
        object.__setattr__(self, "P", _check_weight("P", self.P, 6))
        object.__setattr__(self, "Q", _check_weight("Q", self.Q, 3))
        object.__setattr__(self, "R", _check_weight("R", self.R, 3))

    def replace(self, **changes) -> "GameParams":
        fields = {f: getattr(self, f) for f in self.__dataclass_fields__}
        fields.update(changes)
        return GameParams(**fields)


# --------------------------------------------------------------------------
# Dynamics, scopes, predicates


def step_dynamics(x: StateVec, u: Sequence[int], d: Sequence[int]) -> StateVec:
    """Forward-Euler successor of the isolated dynamics with unit time step."""
    return StateVec(x.p + x.v, x.v + u + d, x.i)


def velocity_limits(v_max: int) -> Box:
    return Box((-v_max,) * 3, (v_max,) * 3)


def compute_scope(s: HybridState, task: Task, params: GameParams) -> Scope:
    """Transition cuboid for the modal game played from ``s``.

    Column modes (depart, arrive, standby) get a vertical column over the
    footprint of ``p_i`` from the ground to the higher of ``p`` and ``p_i``;
    cruise gets the bounding box of ``p`` and ``p_i``. Both are padded by the
    mode's position/velocity paddings and clipped to the grid and ``v_max``.
    """
    q, x = s
    target = task.waypoint(x.i)
    dp, dv = params.pos_pad[q], params.vel_pad[q]
    if q == Mode.CRUISE:
        lo = [min(a, b) - dp for a, b in zip(x.p, target)]
        hi = [max(a, b) + dp for a, b in zip(x.p, target)]
    else:
        lo = [target.x - dp, target.y - dp, 0]
        hi = [target.x + dp, target.y + dp, max(x.p.z, target.z) + dp]
    pos = Box(lo, hi).intersect(task.grid)
    vel = Box((-dv,) * 3, (dv,) * 3).intersect(velocity_limits(params.v_max))
    if pos is None or vel is None:
        raise DegenerateScope(f"scope of {s} is empty after clipping to the grid")
    return Scope(pos.product(vel), x.i)


def unsafe_static(p: Sequence[int], task: Task) -> bool:
    """True iff some obstacle lies within ``delta_safe`` (2-norm) of ``p``."""
    if not task.obstacles:
        return False
    r2 = math.floor(task.delta_safe * task.delta_safe)
    px, py, pz = p
    if len(task.obstacles) < len(task.safety_offsets):
        return any((o[0] - px) ** 2 + (o[1] - py) ** 2 + (o[2] - pz) ** 2 <= r2 for o in task.obstacles)
    obs = task.obstacles
    return any((px + o.x, py + o.y, pz + o.z) in obs for o in task.safety_offsets)


def unsafe_mask(positions: Box, task: Task) -> np.ndarray:
    """Vectorised :func:`unsafe_static` over a box of positions."""
    out = np.zeros(positions.shape, dtype=bool)
    inner = positions.intersect(task.grid)
    if inner is not None:
        g0 = np.subtract(inner.lower, task.grid.lower)
        g1 = np.subtract(inner.upper, task.grid.lower) + 1
        o0 = np.subtract(inner.lower, positions.lower)
        o1 = np.subtract(inner.upper, positions.lower) + 1
        out[o0[0] : o1[0], o0[1] : o1[1], o0[2] : o1[2]] = task.unsafe_grid[
            g0[0] : g1[0], g0[1] : g1[1], g0[2] : g1[2]
        ]
    if inner != positions:
        # cells outside the grid fall back to the scalar predicate
        for p in positions.points():
            if p not in task.grid:
                out[tuple(np.subtract(p, positions.lower))] = unsafe_static(p, task)
    return out


def successor_mode(s: HybridState, task: Task) -> Optional[Mode]:
    q, x = s
    if q == Mode.DEPART:
        return Mode.CRUISE
    if q == Mode.CRUISE:
        return Mode.CRUISE if x.i < task.n - 1 else Mode.ARRIVE
    return None


def jump_target(s: HybridState, task: Task) -> HybridState:
    """``s++`` for the successor mode: ``(q', (p_i, 0, i+1))``."""
    q2 = successor_mode(s, task)
    if q2 is None:
        raise ValueError(f"mode {s.q.value} has no successor modal game")
    i = s.x.i
    return HybridState(q2, StateVec(task.waypoint(i), ZERO, i + 1))


def goal_region(s: HybridState, task: Task, params: GameParams) -> Box:
    """Position box the modal game from ``s`` has to reach.

    The goal is the position projection of the successor's scope, i.e. the
    cuboid around the next segment ``(p_i, p_{i+1})``.
    """
    return compute_scope(jump_target(s, task), task, params).positions


def modal_goal(s: HybridState, task: Task, params: GameParams, scope: Scope) -> Box:
    """6-D goal box of the modal game (position goal times velocity range).

    For ``arrive`` the goal is the landing predicate: on the ground with zero
    vertical speed, horizontal speed free (wind cannot be cancelled exactly).
    """
    if s.q == Mode.ARRIVE:
        pos = scope.positions
        ground = Box(pos.lower[:2] + (0,), pos.upper[:2] + (0,))
        vel = scope.velocities
        vel = Box(vel.lower[:2] + (0,), vel.upper[:2] + (0,))
        box = ground.product(vel).intersect(scope.box)
    else:
        box = goal_region(s, task, params).product(scope.velocities).intersect(scope.box)
    if box is None:
        raise ValueError(f"goal region of {s} does not meet its scope")
    return box


def landed(x: StateVec) -> bool:
    return x.p.z == 0 and x.v.z == 0


def invariant(s: HybridState, task: Task, params: GameParams) -> bool:
    """Inv(q): inside the scenery grid with bounded velocity; standby rests."""
    q, x = s
    if q == Mode.STANDBY:
        return x.v == ZERO and x.p in task.grid
    return x.p in task.grid and x.v in velocity_limits(params.v_max) and 1 <= x.i <= task.n


# --------------------------------------------------------------------------
# Modal games


@dataclass
class ModalGame:
    """Reach-avoid integer difference game induced at a hybrid state."""

    scope: Scope
    mode: Mode
    task: Task
    params: GameParams
    goal: Box
    origin: GridVec
    horizon: int

    def __post_init__(self):
        if self.mode != Mode.STANDBY and unsafe_mask(self.goal_positions, self.task).all():
            raise ValueError("goal region minus unsafe set is empty")

    @property
    def goal_positions(self) -> Box:
        return self.goal.project(0, 3)

    def in_scope(self, x: StateVec) -> bool:
        return x in self.scope

    def reached(self, x: StateVec) -> bool:
        """rho: the goal predicate."""
        return x.pv in self.goal

    def unsafe(self, x: StateVec) -> bool:
        """alpha: static collision predicate (never true in standby)."""
        return self.mode != Mode.STANDBY and unsafe_static(x.p, self.task)

    def weight(self, u: Sequence[int], d: Sequence[int], x: StateVec) -> int:
        """lambda = x_iso' P x_iso + u' Q u + d' R d, with x_iso = x - (p_i, 0)."""
        xi = (*(x.p - self.origin), *x.v)
        return _quad(self.params.P, xi) + _quad(self.params.Q, u) + _quad(self.params.R, d)

    @cached_property
    def key(self) -> tuple:
        return (self.mode, self.scope, self.goal, self.origin, self.horizon)


def _quad(m, x) -> int:
    return sum(w * x[r] * x[c] for r, c, w in _nonzeros(m))


_NZ_CACHE: dict = {}


def _nonzeros(m):
    nz = _NZ_CACHE.get(m)
    if nz is None:
        nz = _NZ_CACHE[m] = [(r, c, w) for r, row in enumerate(m) for c, w in enumerate(row) if w]
    return nz


def build_modal_game(
    s: HybridState,
    task: Task,
    params: GameParams,
    scope: Optional[Scope] = None,
    horizon: Optional[int] = None,
) -> ModalGame:
    if s.q not in FLYING:
        raise ValueError("modal games are only played in flying modes")
    scope = scope if scope is not None else compute_scope(s, task, params)
    return ModalGame(
        scope=scope,
        mode=s.q,
        task=task,
        params=params,
        goal=modal_goal(s, task, params, scope),
        origin=task.waypoint(s.x.i),
        horizon=horizon if horizon is not None else params.horizon,
    )


def stage_cost(u, d, s: HybridState, k: int, game: ModalGame) -> Cost:
    x = s.x
    unsafe = game.unsafe(x)
    if game.reached(x) and not unsafe:
        return 0
    if unsafe:
        return TOP
    return game.weight(u, d, x)


def terminal_cost(s: HybridState, game: ModalGame) -> Cost:
    return 0 if game.reached(s.x) and not game.unsafe(s.x) else TOP


# --------------------------------------------------------------------------
# Mode transitions


def enabled_events(s: HybridState, task: Task, params: Optional[GameParams] = None) -> list[Event]:
    """Guard-satisfied events at ``s``, in the order they would be taken."""
    params = params or GameParams()
    q, x = s
    if q == Mode.STANDBY:
        return [Event.START] if x.i < task.n else []
    if q == Mode.ARRIVE:
        return [Event.LAND] if landed(x) else []
    if x.p not in goal_region(s, task, params):
        return []
    if q == Mode.DEPART:
        return [Event.TO_CRUISE]
    return [Event.ADVANCE] if x.i < task.n - 1 else [Event.TO_ARRIVE]


def apply_jump(s: HybridState, e: Event, task: Task, params: Optional[GameParams] = None) -> HybridState:
    """Fire ``e`` at ``s``.

    Updates increment the waypoint index and keep the continuous state;
    landing brings the vehicle to rest.
    """
    if e not in enabled_events(s, task, params):
        raise ValueError(f"event {e.value} not enabled in {s.q.value}")
    x = s.x
    if e == Event.LAND:
        return HybridState(Mode.STANDBY, StateVec(x.p, ZERO, x.i))
    return HybridState(EVENT_TARGET[e], StateVec(x.p, x.v, x.i + 1))


def initial_state(task: Task) -> HybridState:
    return HybridState(Mode.STANDBY, StateVec(task.route[0], ZERO, 1))
