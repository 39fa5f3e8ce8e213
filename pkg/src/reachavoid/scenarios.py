"""Task construction, validation and persistence.

Route validity, tube perforation with a witness path, the built-in scenes,
a seeded random scene generator and a YAML task-file format.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import yaml
from scipy import ndimage

from .model import (
    ZERO,
    Box,
    GameParams,
    GridVec,
    Mode,
    Task,
    cube_vectors,
    horizontal_wind,
    vec,
)

SCHEMA_VERSION = 1


# --------------------------------------------------------------------------
# Route validity


def validate_route(route: Sequence, grid: Box, z_min: int) -> list[str]:
    """Names of the violated route clauses (empty list: valid)."""
    route = [vec(p) for p in route]
    out = []
    if len(route) < 4:
        out.append("n ≥ 4")
    if len(set(route)) != len(route):
        out.append("distinct waypoints")
    if any(p not in grid for p in route):
        out.append("waypoints in grid")
    if not route:
        return out
    if route[0].z != 0 or route[-1].z != 0:
        out.append("endpoint on ground")
    if len(route) >= 2 and route[1][:2] != route[0][:2]:
        out.append("takeoff column")
    if len(route) >= 2 and route[-2][:2] != route[-1][:2]:
        out.append("landing column")
    if any(p.z < z_min for p in route[1:-1]):
        out.append("altitude ≥ z_min")
    return out


# --------------------------------------------------------------------------
# Perforation


@dataclass
class Perforation:
    ok: bool
    witness: list = field(default_factory=list)
    failed_segment: Optional[int] = None  # 1-based index of the first unreachable waypoint

    def __bool__(self):
        return self.ok


_NEIGHBOURS = np.array([o for o in cube_vectors(1) if o != ZERO], dtype=np.int64)


def clear_cells(task: Task) -> np.ndarray:
    """Grid cells whose whole ``delta_tube`` cube is obstacle-free."""
    d = task.delta_tube
    shape = tuple(s + 2 * d for s in task.grid.shape)
    occ = np.zeros(shape, dtype=bool)
    if task.obstacles:
        cells = np.array(sorted(task.obstacles), dtype=np.int64) - np.array(task.grid.lower) + d
        keep = np.all((cells >= 0) & (cells < np.array(shape)), axis=1)
        cells = cells[keep]
        occ[cells[:, 0], cells[:, 1], cells[:, 2]] = True
    if d > 0:
        occ = ndimage.maximum_filter(occ, size=2 * d + 1, mode="constant", cval=False)
    inner = tuple(slice(d, d + s) for s in task.grid.shape)
    return ~occ[inner]


def _staircase(a: Sequence[int], b: Sequence[int]) -> list[GridVec]:
    cur = list(a)
    out = [vec(cur)]
    while tuple(cur) != tuple(b):
        cur = [c + (t > c) - (t < c) for c, t in zip(cur, b)]
        out.append(vec(cur))
    return out


def _bfs_path(mask: np.ndarray, src: tuple, dst: tuple) -> list[tuple]:
    """Shortest 26-connected path inside ``mask`` (local coordinates)."""
    padded = np.pad(mask, 1, constant_values=False)
    shape = padded.shape
    strides = np.array([shape[1] * shape[2], shape[2], 1], dtype=np.int64)
    offs = _NEIGHBOURS @ strides
    s = int(np.dot(np.add(src, 1), strides))
    t = int(np.dot(np.add(dst, 1), strides))
    flat = padded.reshape(-1)
    parent = np.full(flat.size, -1, dtype=np.int64)
    parent[s] = s
    frontier = np.array([s], dtype=np.int64)
    while frontier.size and parent[t] < 0:
        cand = (frontier[:, None] + offs[None, :]).reshape(-1)
        src_of = np.repeat(frontier, offs.size)
        ok = flat[cand] & (parent[cand] < 0)
        cand, src_of = cand[ok], src_of[ok]
        cand, first = np.unique(cand, return_index=True)
        parent[cand] = src_of[first]
        frontier = cand
    if parent[t] < 0:
        raise ValueError("no path inside mask")
    path = [t]
    while path[-1] != s:
        path.append(int(parent[path[-1]]))
    return [tuple(int(c) - 1 for c in np.unravel_index(j, shape)) for j in reversed(path)]


def check_perforation(task: Task) -> Perforation:
    """Search a unit-step path through tube-clear cells visiting the
    ``delta_tube`` neighbourhoods of all waypoints in order.

    A single unit-step path never leaves a 26-connected component of clear
    cells, so the route is perforated iff one component touches every
    waypoint neighbourhood. The witness joins closest-to-waypoint cells of
    that component, by staircase where it is clear and by BFS otherwise.
    """
    clear = clear_cells(task)
    labels, _ = ndimage.label(clear, structure=np.ones((3, 3, 3), dtype=bool))
    lo = np.array(task.grid.lower)
    d = task.delta_tube
    shape = np.array(task.grid.shape)

    def hood(p):
        a = np.maximum(np.array(p) - lo - d, 0)
        b = np.minimum(np.array(p) - lo + d, shape - 1)
        if (a > b).any():
            return None
        return tuple(slice(int(x), int(y) + 1) for x, y in zip(a, b)), a

    alive = None
    for j, p in enumerate(task.route, 1):
        h = hood(p)
        here = set() if h is None else set(np.unique(labels[h[0]]).tolist()) - {0}
        alive = here if alive is None else alive & here
        if not alive:
            return Perforation(False, [], j)
    comp = min(alive)
    inside = labels == comp

    def anchor(p):
        sl, a = hood(p)
        cells = np.argwhere(inside[sl]) + a
        dist = ((cells + lo - np.array(p)) ** 2).sum(axis=1)
        order = np.lexsort((cells[:, 2], cells[:, 1], cells[:, 0], dist))
        return tuple(int(c) for c in cells[order[0]])

    anchors = [anchor(p) for p in task.route]
    witness = [anchors[0]]
    for a, b in zip(anchors, anchors[1:]):
        stair = _staircase(a, b)
        if all(inside[c] for c in stair):
            seg = [tuple(c) for c in stair]
        else:
            seg = _bfs_path(inside, a, b)
        witness.extend(seg[1:])
    return Perforation(True, [vec(np.add(c, lo)) for c in witness])


def verify_witness(task: Task, witness: Sequence) -> bool:
    """Replay a witness: unit steps, every cube obstacle-free, every
    waypoint within ``delta_tube`` (Chebyshev) of some witness cell, in order."""
    d = task.delta_tube
    cube = cube_vectors(d)
    for a, b in zip(witness, witness[1:]):
        if max(abs(x - y) for x, y in zip(a, b)) > 1:
            return False
    for c in witness:
        if c not in task.grid or any(c + o in task.obstacles for o in cube):
            return False
    j = 0
    for c in witness:
        while j < task.n and max(abs(x - y) for x, y in zip(c, task.route[j])) <= d:
            j += 1
    return j == task.n


# --------------------------------------------------------------------------
# Parameters


def directional_controls(magnitudes: Sequence[int] = (1, 2)) -> tuple[GridVec, ...]:
    """Hover plus the 26 compass directions scaled by each magnitude."""
    out = {ZERO}
    for m in magnitudes:
        out |= {GridVec(m * a, m * b, m * c) for a, b, c in cube_vectors(1)}
    return tuple(sorted(out))


def desk_params(**changes) -> GameParams:
    """Desk-scale defaults used by the built-in fixtures.

    Unit controls cannot robustly beat a unit wind (the adversary cancels
    every horizontal input), so the fixtures accelerate with magnitude up
    to 2 and allow speeds up to 3 in every mode, so a segment can be
    entered at full speed. Speed is weighted 4x in the state cost to keep
    those entries rare, and one extra scope extension absorbs the rest.
    """
    base = dict(
        controls=directional_controls((1, 2)),
        disturbances=horizontal_wind(1),
        v_max=3,
        horizon=12,
        vel_pad={q: 3 for q in Mode},
        P=DESK_P,
        max_retries=4,
    )
    base.update(changes)
    return GameParams(**base)


DESK_P = tuple(tuple((1 if r < 3 else 4) if r == c else 0 for c in range(6)) for r in range(6))


# --------------------------------------------------------------------------
# Built-in scenes


def box_cells(lower, upper) -> set:
    return {vec(p) for p in Box(tuple(lower), tuple(upper)).points()}


def shell_cells(lower, upper) -> set:
    """Surface cells of a box (interiors are unreachable anyway)."""
    lo, hi = tuple(lower), tuple(upper)
    out = set()
    for axis in range(3):
        for side in (lo[axis], hi[axis]):
            a, b = list(lo), list(hi)
            a[axis] = b[axis] = side
            out |= box_cells(a, b)
    return out


def _grid(nx, ny, nz) -> Box:
    return Box((0, 0, 0), (nx - 1, ny - 1, nz - 1))


def _mini_yard() -> Task:
    obstacles = set()
    obstacles |= box_cells((11, 1, 0), (14, 1, 6))  # hedge along the first leg
    obstacles |= box_cells((25, 11, 0), (25, 12, 7))  # tree east of the second leg
    obstacles |= box_cells((23, 22, 0), (27, 27, 4))  # shed
    obstacles |= box_cells((3, 15, 0), (4, 16, 8))  # pole
    route = [(9, 9, 0), (9, 9, 5), (14, 9, 5), (14, 14, 5), (14, 14, 0)]
    return Task(_grid(30, 30, 12), route, frozenset(obstacles))


def _yard() -> Task:
    # p5 is a spike: the goal of its segment reaches back to the p4 leg, so
    # undisturbed plays cut the corner and never fly out to p5.
    obstacles = set()
    obstacles |= box_cells((6, 8, 0), (11, 14, 5))  # house
    obstacles |= box_cells((22, 2, 0), (23, 3, 8))  # tree
    obstacles |= box_cells((0, 24, 0), (31, 24, 2))  # fence
    route = [(3, 3, 0), (3, 3, 6), (15, 3, 6), (15, 12, 6), (28, 12, 6), (18, 20, 6), (18, 20, 0)]
    return Task(_grid(32, 26, 12), route, frozenset(obstacles))


def _industrial() -> Task:
    obstacles = set()
    halls = [
        ((20, 30, 0), (60, 80, 14)),
        ((90, 20, 0), (130, 60, 18)),
        ((140, 100, 0), (180, 160, 12)),
        ((40, 130, 0), (90, 170, 16)),
        ((100, 190, 0), (150, 230, 20)),
    ]
    for lo, hi in halls:
        obstacles |= shell_cells(lo, hi)
    obstacles |= box_cells((75, 100, 0), (77, 102, 28))  # chimney
    route = [
        (10, 10, 0), (10, 10, 22), (75, 15, 22), (140, 15, 24), (185, 40, 24), (185, 90, 22),
        (120, 95, 22), (100, 120, 22), (100, 175, 24), (60, 185, 24), (25, 200, 22),
        (30, 235, 22), (180, 240, 24), (180, 240, 0),
    ]
    return Task(_grid(200, 250, 30), route, frozenset(obstacles))


def _streets() -> Task:
    obstacles = set()
    # 3 x 3 blocks separated by 30 m wide streets
    xs = [(20, 120), (150, 250), (280, 380)]
    ys = [(20, 130), (160, 280), (310, 430)]
    heights = [14, 18, 12, 20, 16, 15, 13, 19, 17]
    j = 0
    for x0, x1 in xs:
        for y0, y1 in ys:
            obstacles |= shell_cells((x0, y0, 0), (x1, y1, heights[j]))
            j += 1
    route = [
        (5, 5, 0), (5, 5, 8), (135, 5, 8), (135, 145, 8), (265, 145, 8), (265, 295, 8),
        (395, 295, 8), (395, 440, 8), (265, 440, 8), (135, 440, 8), (135, 295, 8), (135, 295, 0),
    ]
    return Task(_grid(400, 450, 25), route, frozenset(obstacles))


def _detour() -> Task:
    # wall across the whole width below z = 7: the cruise cuboid ends at
    # z = 7, one extension by 2 opens the pass at z = 9
    obstacles = box_cells((10, 0, 0), (10, 15, 7))
    route = [(4, 8, 0), (4, 8, 5), (16, 8, 5), (16, 8, 0)]
    return Task(_grid(21, 16, 14), route, frozenset(obstacles))


def _walled() -> Task:
    obstacles = box_cells((10, 0, 0), (10, 15, 13))
    route = [(4, 8, 0), (4, 8, 5), (16, 8, 5), (16, 8, 0)]
    return Task(_grid(21, 16, 14), route, frozenset(obstacles))


BUILTINS = {
    "mini-yard": (_mini_yard, "desk-scale fixture for the acceptance suite"),
    "yard": (_yard, "small domestic yard with a shortcut spike at p5"),
    "industrial": (_industrial, "200x250 m industrial area, route p0..p13 (n = 13)"),
    "streets": (_streets, "400x450 m neighbourhood with street canyons, route p0..p11 (n = 11)"),
    "random-fixture": (None, "gen_random_scenario(seed=7, dims=(24, 24, 10), density=0.05, n_waypoints=5)"),
    "detour": (_detour, "cruise segment blocked below the pass; needs one scope extension"),
    "walled": (_walled, "cruise segment sealed by a full wall; unsolvable and not perforated"),
}
_CACHE: dict = {}


def builtin_scenario(name: str) -> Task:
    """Built-in task by name.

    The large scenes index their route from ``p_0``, so ``n`` segments
    come with ``n + 1`` points.
    """
    if name not in BUILTINS:
        raise KeyError(f"unknown scenario {name!r}; choose from {sorted(BUILTINS)}")
    if name not in _CACHE:
        make = BUILTINS[name][0]
        _CACHE[name] = make() if make else gen_random_scenario(7, (24, 24, 10), 0.05, 5)
    return _CACHE[name]


def builtin_params(name: str) -> GameParams:
    if name in ("industrial", "streets"):
        return desk_params(horizon=60)
    if name == "detour":
        return desk_params(horizon=16)
    if name == "random-fixture":
        return desk_params(horizon=20)
    return desk_params()


def builtin_note(name: str) -> str:
    return BUILTINS[name][1]


# --------------------------------------------------------------------------
# Random scenes


def gen_random_scenario(
    seed: int,
    dims: Sequence[int] = (20, 20, 10),
    obstacle_density: float = 0.1,
    n_waypoints: int = 4,
    z_min: int = 3,
    delta_tube: int = 1,
    carve: bool = True,
    clearance: int = 1,
) -> Task:
    """Seeded random task: a valid route, then Bernoulli obstacle cells.

    With ``carve`` the cube of radius ``delta_tube + clearance`` around the
    staircase path through the route is cleared afterwards, so the result is
    always perforated. The extra ``clearance`` keeps the robustness cube
    around every path cell out of the unsafe margin of the obstacles.
    """
    if not 0 <= obstacle_density < 1:
        raise ValueError("density must lie in [0, 1)")
    if n_waypoints < 4:
        raise ValueError("routes need at least 4 waypoints")
    rng = np.random.default_rng(seed)
    nx, ny, nz = dims
    m = delta_tube + 1
    if nz - 1 - m < z_min or nx - 1 - m < m or ny - 1 - m < m:
        raise ValueError(f"cannot place a valid route in {tuple(dims)}")

    def xy():
        return int(rng.integers(m, nx - m)), int(rng.integers(m, ny - m))

    def alt():
        return int(rng.integers(z_min, nz - m))

    for _ in range(1000):
        x1, y1 = xy()
        xn, yn = xy()
        route = [GridVec(x1, y1, 0), GridVec(x1, y1, alt())]
        for _ in range(n_waypoints - 4):
            route.append(GridVec(*xy(), alt()))
        route += [GridVec(xn, yn, alt()), GridVec(xn, yn, 0)]
        if len(set(route)) == len(route):
            break
    else:
        raise ValueError(f"cannot place a valid route in {tuple(dims)}")

    occ = rng.random(tuple(dims)) < obstacle_density
    if carve:
        cube = cube_vectors(delta_tube + clearance)
        path = [route[0]]
        for a, b in zip(route, route[1:]):
            path.extend(_staircase(a, b)[1:])
        for c in path:
            for o in cube:
                q = c + o
                if 0 <= q.x < nx and 0 <= q.y < ny and 0 <= q.z < nz:
                    occ[q] = False
    obstacles = frozenset(GridVec(*map(int, c)) for c in np.argwhere(occ))
    return Task(_grid(nx, ny, nz), tuple(route), obstacles, z_min=z_min, delta_tube=delta_tube)


# --------------------------------------------------------------------------
# Task files


class TaskFileError(ValueError):
    """Malformed task file; the message names the offending field."""


class TaskValidationError(ValueError):
    def __init__(self, violations: list[str]):
        super().__init__("invalid task: " + ", ".join(violations))
        self.violations = violations


@dataclass
class TaskFile:
    task: Task
    params: GameParams
    name: str = ""
    note: str = ""


def _merge_boxes(cells) -> list[tuple[tuple, tuple]]:
    """Greedy decomposition of a cell set into boxes (z runs, then y, then x)."""
    runs: dict = {}
    for x, y, z in sorted(cells):
        key = (x, y)
        lst = runs.setdefault(key, [])
        if lst and lst[-1][1] == z - 1:
            lst[-1][1] = z
        else:
            lst.append([z, z])
    rows: dict = {}
    for (x, y), lst in sorted(runs.items()):
        for z0, z1 in lst:
            seq = rows.setdefault((x, z0, z1), [])
            if seq and seq[-1][1] == y - 1:
                seq[-1][1] = y
            else:
                seq.append([y, y])
    slabs: dict = {}
    for (x, z0, z1), seq in sorted(rows.items()):
        for y0, y1 in seq:
            seq2 = slabs.setdefault((y0, y1, z0, z1), [])
            if seq2 and seq2[-1][1] == x - 1:
                seq2[-1][1] = x
            else:
                seq2.append([x, x])
    out = []
    for (y0, y1, z0, z1), seq in slabs.items():
        for x0, x1 in seq:
            out.append(((x0, y0, z0), (x1, y1, z1)))
    return sorted(out)


def _vectors_spec(vs: tuple, kind: str):
    vs = tuple(sorted(vs))
    if kind == "controls":
        for m in (1, 2):
            if vs == tuple(sorted(cube_vectors(m))):
                return {"kind": "cube", "magnitude": m}
        for mags in ([1], [2], [1, 2]):
            if vs == directional_controls(mags):
                return {"kind": "directional", "magnitudes": mags}
    else:
        if vs == (ZERO,):
            return {"kind": "none"}
        for m in (1, 2):
            if vs == horizontal_wind(m):
                return {"kind": "horizontal", "magnitude": m}
    return {"kind": "list", "vectors": [list(v) for v in vs]}


def _vectors_from(spec, kind: str):
    if not isinstance(spec, dict) or "kind" not in spec:
        raise TaskFileError(f"params.{kind}: expected a mapping with 'kind'")
    k = spec["kind"]
    if k == "cube":
        return cube_vectors(int(spec.get("magnitude", 1)))
    if k == "directional":
        return directional_controls(spec.get("magnitudes", [1]))
    if k == "horizontal":
        return horizontal_wind(int(spec.get("magnitude", 1)))
    if k == "none":
        return (ZERO,)
    if k == "list":
        return tuple(vec(v) for v in spec["vectors"])
    raise TaskFileError(f"params.{kind}.kind: unknown kind {k!r}")


def _mode_map(d: dict) -> dict:
    return {Mode(k).value if isinstance(k, Mode) else str(k): int(v) for k, v in d.items()}


def task_to_dict(task: Task, params: Optional[GameParams] = None, name: str = "", note: str = "") -> dict:
    params = params or GameParams()
    doc = {
        "schema": SCHEMA_VERSION,
        "name": name,
        "note": note,
        "grid": {"lower": list(task.grid.lower), "upper": list(task.grid.upper)},
        "route": [list(p) for p in task.route],
        "obstacles": {"boxes": [{"lower": list(a), "upper": list(b)} for a, b in _merge_boxes(task.obstacles)]},
        "robustness": {
            "delta_safe": str(task.delta_safe),
            "delta_tube": task.delta_tube,
            "z_min": task.z_min,
        },
        "params": {
            "controls": _vectors_spec(params.controls, "controls"),
            "disturbances": _vectors_spec(params.disturbances, "disturbances"),
            "v_max": params.v_max,
            "horizon": params.horizon,
            "pos_pad": _mode_map(params.pos_pad),
            "vel_pad": _mode_map(params.vel_pad),
            "P": [list(r) for r in params.P],
            "Q": [list(r) for r in params.Q],
            "R": [list(r) for r in params.R],
            "ext_pad": params.ext_pad,
            "time_ext": params.time_ext,
            "max_retries": params.max_retries,
        },
    }
    return doc


def _triple(v, where: str) -> GridVec:
    if not isinstance(v, (list, tuple)) or len(v) != 3:
        raise TaskFileError(f"{where}: expected [x, y, z], got {v!r}")
    try:
        return GridVec(*(int(c) for c in v))
    except (TypeError, ValueError) as exc:
        raise TaskFileError(f"{where}: {exc}") from None


def task_from_dict(doc: dict, validate: bool = True) -> TaskFile:
    if not isinstance(doc, dict):
        raise TaskFileError("top level: expected a mapping")
    schema = doc.get("schema")
    if schema != SCHEMA_VERSION:
        raise TaskFileError(f"schema: expected {SCHEMA_VERSION}, got {schema!r}")
    try:
        g = doc["grid"]
        grid = Box(tuple(_triple(g["lower"], "grid.lower")), tuple(_triple(g["upper"], "grid.upper")))
        route = [_triple(p, f"route[{j}]") for j, p in enumerate(doc["route"])]
    except KeyError as exc:
        raise TaskFileError(f"missing field {exc}") from None
    obs = set()
    o = doc.get("obstacles") or {}
    for j, c in enumerate(o.get("cells") or []):
        obs.add(_triple(c, f"obstacles.cells[{j}]"))
    for j, b in enumerate(o.get("boxes") or []):
        try:
            lo = _triple(b["lower"], f"obstacles.boxes[{j}].lower")
            hi = _triple(b["upper"], f"obstacles.boxes[{j}].upper")
        except (KeyError, TypeError):
            raise TaskFileError(f"obstacles.boxes[{j}]: needs lower and upper") from None
        try:
            obs |= box_cells(lo, hi)
        except ValueError as exc:
            raise TaskFileError(f"obstacles.boxes[{j}]: {exc}") from None
    rob = doc.get("robustness") or {}
    try:
        task = Task(
            grid,
            tuple(route),
            frozenset(obs),
            z_min=int(rob.get("z_min", 3)),
            delta_safe=Fraction(str(rob.get("delta_safe", "3/2"))),
            delta_tube=int(rob.get("delta_tube", 1)),
        )
    except ValueError as exc:
        raise TaskFileError(f"robustness: {exc}") from None
    p = doc.get("params") or {}
    kw = {}
    if "controls" in p:
        kw["controls"] = _vectors_from(p["controls"], "controls")
    if "disturbances" in p:
        kw["disturbances"] = _vectors_from(p["disturbances"], "disturbances")
    for key in ("v_max", "horizon", "ext_pad", "time_ext", "max_retries"):
        if key in p:
            kw[key] = int(p[key])
    for key in ("pos_pad", "vel_pad"):
        if key in p:
            kw[key] = dict(p[key])
    for key in ("P", "Q", "R"):
        if key in p:
            kw[key] = p[key]
    try:
        params = GameParams(**kw)
    except (ValueError, TypeError) as exc:
        raise TaskFileError(f"params: {exc}") from None
    if validate:
        violations = validate_route(task.route, task.grid, task.z_min)
        if violations:
            raise TaskValidationError(violations)
        if not check_perforation(task):
            raise TaskValidationError(["not δ-perforated"])
    return TaskFile(task, params, str(doc.get("name") or ""), str(doc.get("note") or ""))


def read_task_file(path, validate: bool = True) -> TaskFile:
    text = Path(path).read_text()
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"line {mark.line + 1}, column {mark.column + 1}" if mark else "unknown position"
        raise TaskFileError(f"{path}: YAML error at {where}") from None
    return task_from_dict(doc, validate=validate)


def load_task(path, validate: bool = True) -> Task:
    return read_task_file(path, validate=validate).task


def save_task(task: Task, path, params: Optional[GameParams] = None, name: str = "", note: str = "") -> None:
    doc = task_to_dict(task, params, name, note)
    Path(path).write_text(yaml.safe_dump(doc, sort_keys=False, default_flow_style=None))
