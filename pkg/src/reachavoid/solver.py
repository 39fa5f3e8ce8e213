"""Step-pre-shielded discrete dynamic programming for modal games.

Value tables are dense arrays over the scope box, laid out row-major in
``(p_x, p_y, p_z, v_x, v_y, v_z)``. Backups run in int64 where infeasibility
is the saturating cell value :data:`TOP_CELL`; finished tables are stored as
int32 (sentinel :data:`TOP_CELL32`) whenever every finite cost fits.
Scalar accessors translate the sentinel back to :data:`reachavoid.model.TOP`.

Backups compute ``V(x,k) = min_u max_d [lambda(u,d;x) + V(x^{ud}, k+1)]``
where any successor leaving the scope counts as ``TOP``. A control that
admits a single losing disturbance is therefore never chosen, which is the
step-pre-shield. Goal states are absorbing with value 0, unsafe states are
``TOP``.
"""

from __future__ import annotations

import logging
import struct
import time
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .model import (
    TOP,
    ZERO,
    Box,
    Cost,
    GameParams,
    GridVec,
    HybridState,
    ModalGame,
    Scope,
    StateVec,
    Task,
    build_modal_game,
    compute_scope,
    unsafe_mask,
)

log = logging.getLogger(__name__)

TOP_CELL = np.int64(1) << np.int64(62)
TOP_CELL32 = np.int32(np.iinfo(np.int32).max)
NO_ACTION = -1

# callables invoked with every Solution that solve_ddp returns (audit hooks)
SOLVE_OBSERVERS: list = []


class Unsolvable(RuntimeError):
    """Scope extension ran out of retries without a robustly winning start."""

    def __init__(self, message: str, winning_size: int = 0, attempts: int = 0, solution=None):
        super().__init__(message)
        self.winning_size = winning_size
        self.attempts = attempts
        self.solution = solution


class OutOfDomain(LookupError):
    """Policy queried outside its winning region."""


# --------------------------------------------------------------------------
# Per-game precomputation


class Index:
    """Light per-game geometry: scope layout, goal and unsafe masks."""

    def __init__(self, game: ModalGame):
        box = game.scope.box
        self.shape = box.shape
        self.size = box.size
        self.lower = np.array(box.lower, dtype=np.int64)
        self.zero_u = game.params.controls.index(ZERO)
        self.zero_d = game.params.disturbances.index(ZERO)
        pos_box = game.scope.positions
        if game.mode.value == "standby":
            unsafe_pos = np.zeros(pos_box.shape, dtype=bool)
        else:
            unsafe_pos = unsafe_mask(pos_box, game.task)
        nv = int(np.prod(self.shape[3:]))
        self.unsafe = np.repeat(unsafe_pos.reshape(-1), nv)
        goal = np.zeros(self.shape, dtype=bool)
        g0 = np.subtract(game.goal.lower, box.lower)
        g1 = np.subtract(game.goal.upper, box.lower) + 1
        goal[tuple(slice(s, e) for s, e in zip(g0, g1))] = True
        self.goal = goal.reshape(-1) & ~self.unsafe

    @property
    def terminal(self) -> np.ndarray:
        return np.where(self.goal, np.int64(0), TOP_CELL)

    def index(self, x: StateVec) -> int:
        local = np.subtract(x.pv, self.lower)
        return int(np.ravel_multi_index(tuple(local), self.shape))

    def state(self, idx: int, i: int) -> StateVec:
        local = np.unravel_index(idx, self.shape)
        pv = [int(c) + int(lo) for c, lo in zip(local, self.lower)]
        return StateVec(GridVec(*pv[:3]), GridVec(*pv[3:]), i)


class Kernel:
    """Index arithmetic and weights for vectorised backups of one game.

    Holds padded scratch buffers several times the scope size, so it lives
    only for the duration of a solve.
    """

    def __init__(self, game: ModalGame):
        ix = index_of(game)
        self.ix = ix
        box = game.scope.box
        params = game.params
        self.shape, self.size, self.lower = ix.shape, ix.size, ix.lower
        self.goal, self.unsafe, self.zero_u, self.zero_d = ix.goal, ix.unsafe, ix.zero_u, ix.zero_d
        lower = ix.lower
        U = np.array(params.controls, dtype=np.int64)
        D = np.array(params.disturbances, dtype=np.int64)
        self.U, self.D = U, D

        vel_lo = np.array(box.lower[3:])
        vel_hi = np.array(box.upper[3:])
        a = np.maximum(np.abs(vel_lo), np.abs(vel_hi))  # position shift per step
        bu = np.abs(U).max(axis=0)
        bd = np.abs(D).max(axis=0)
        self.a, self.bu, self.bd = a, bu, bd
        sp = np.array(self.shape[:3])
        sv = np.array(self.shape[3:])
        self.vpad_shape = tuple(np.concatenate([sp + 2 * a, sv + 2 * (bu + bd)]))
        self.wpad_shape = tuple(np.concatenate([sp + 2 * a, sv + 2 * bu]))
        vstr = _strides(self.vpad_shape)
        wstr = _strides(self.wpad_shape)

        grids = np.indices(self.shape, dtype=np.int64).reshape(6, -1)
        pos_idx, vel_idx = grids[:3], grids[3:]
        vel = vel_idx + vel_lo[:, None]
        succ_pos = pos_idx + vel + a[:, None]
        self.base_w = (succ_pos * wstr[:3, None]).sum(0) + ((vel_idx + bu[:, None]) * wstr[3:, None]).sum(0)
        self.base_v = (succ_pos * vstr[:3, None]).sum(0) + (
            (vel_idx + (bu + bd)[:, None]) * vstr[3:, None]
        ).sum(0)
        self.off_u = U @ wstr[3:]
        self.off_vu = U @ vstr[3:]
        self.off_vd = D @ vstr[3:]

        Pm = np.array(params.P, dtype=np.int64)
        xi = grids + lower[:, None]
        xi[:3] -= np.array(game.origin, dtype=np.int64)[:, None]
        self.lam_x = np.einsum("im,ij,jm->m", xi, Pm, xi)
        self.uQu = np.einsum("ui,ij,uj->u", U, np.array(params.Q, dtype=np.int64), U)
        self.dRd = np.einsum("ui,ij,uj->u", D, np.array(params.R, dtype=np.int64), D)
        self.interior = tuple(
            slice(int(p), int(p) + int(s))
            for p, s in zip(np.concatenate([a, bu + bd]), self.shape)
        )
        self._vpad = None
        self._idx = np.empty(self.size, dtype=np.int64)

    @property
    def terminal(self) -> np.ndarray:
        return self.ix.terminal

    def padded(self, v_next: np.ndarray) -> np.ndarray:
        """``v_next`` embedded in a TOP border (reused buffer; the border
        is never written)."""
        vpad = self._vpad
        if vpad is None:
            vpad = self._vpad = np.full(self.vpad_shape, TOP_CELL, dtype=np.int64)
        vpad[self.interior] = v_next.reshape(self.shape)
        return vpad

    def worst_over_d(self, vpad: np.ndarray) -> np.ndarray:
        """``max_d (d'Rd + V[p', v''+d])`` over the (p', v'') grid."""
        sv = np.array(self.shape[3:])
        out = None
        for d, c in zip(self.D, self.dRd):
            sl = (slice(None),) * 3 + tuple(
                slice(int(b + dd), int(b + dd + s + 2 * u)) for b, dd, s, u in zip(self.bd, d, sv, self.bu)
            )
            view = vpad[sl]
            if out is None:
                out = view + c if c else view.copy()
            else:
                np.maximum(out, view + c if c else view, out=out)
        return out


def _strides(shape) -> np.ndarray:
    shape = np.asarray(shape, dtype=np.int64)
    return np.concatenate([np.cumprod(shape[::-1])[::-1][1:], [1]]).astype(np.int64)


def index_of(game: ModalGame) -> Index:
    ix = game.__dict__.get("_index")
    if ix is None:
        ix = game.__dict__["_index"] = Index(game)
    return ix


# --------------------------------------------------------------------------
# Backup


def bellman_backup(
    v_next: np.ndarray, game: ModalGame, k: int = 0, with_worst: bool = True, kernel: Optional[Kernel] = None
):
    """One shielded min-max backup.

    Returns ``(values, actions, worst)``: the stage-``k`` value slice, the
    index into ``params.controls`` of the chosen control (``-1`` where the
    value is ``TOP``) and the index of a maximising disturbance for it.
    Ties between controls go to the lexicographically smallest one.
    """
    kern = kernel if kernel is not None else Kernel(game)
    vpad = kern.padded(v_next)
    wflat = kern.worst_over_d(vpad).reshape(-1)
    best = None
    arg = np.zeros(kern.size, dtype=np.int8 if len(kern.U) < 128 else np.int16)
    idx = kern._idx
    for j, (off, cu) in enumerate(zip(kern.off_u, kern.uQu)):
        np.add(kern.base_w, off, out=idx)
        q = wflat.take(idx)
        if cu:
            q += cu
        if best is None:
            best = q
        else:
            better = q < best
            np.copyto(best, q, where=better)
            arg[better] = j
    best += kern.lam_x
    np.minimum(best, TOP_CELL, out=best)
    best[kern.unsafe] = TOP_CELL
    best[kern.goal] = 0
    feasible = best < TOP_CELL
    arg[kern.goal] = kern.zero_u
    arg[~feasible] = NO_ACTION

    worst = None
    if with_worst:
        worst = np.zeros(kern.size, dtype=np.int8)
        vflat = vpad.reshape(-1)
        live = np.nonzero(feasible & ~kern.goal)[0]
        if live.size:
            idx = kern.base_v[live] + kern.off_vu[arg[live]]
            vals = np.stack([vflat.take(idx + off) + c for off, c in zip(kern.off_vd, kern.dRd)])
            worst[live] = vals.argmax(axis=0)
        worst[kern.goal] = kern.zero_d
        worst[~feasible] = NO_ACTION
    return best, arg, worst


# --------------------------------------------------------------------------
# Tables, policies, solutions


@dataclass
class ValueTable:
    """Value slices for the realized stages ``k_first .. N+1``."""

    scope: Scope
    horizon: int
    k_first: int
    values: np.ndarray  # (N + 2 - k_first, |scope|)

    def __post_init__(self):
        v = self.values
        if v.dtype == np.int64:
            finite = v < TOP_CELL
            if not finite.any() or int(v[finite].max()) < TOP_CELL32:
                self.values = np.where(finite, v, TOP_CELL32).astype(np.int32)

    @property
    def top(self):
        return TOP_CELL32 if self.values.dtype == np.int32 else TOP_CELL

    def row(self, k: int) -> np.ndarray:
        """Stored slice for stage ``k`` (infeasible cells hold :attr:`top`)."""
        if not self.k_first <= k <= self.horizon + 1:
            raise IndexError(f"stage {k} not realized ({self.k_first}..{self.horizon + 1})")
        return self.values[k - self.k_first]

    def slice(self, k: int) -> np.ndarray:
        """Stage ``k`` as int64 with infeasible cells at :data:`TOP_CELL`."""
        r = self.row(k)
        if r.dtype == np.int64:
            return r
        return np.where(r < TOP_CELL32, r.astype(np.int64), TOP_CELL)

    def finite(self, k: int) -> np.ndarray:
        return self.row(k) < self.top

    def cost(self, k: int, idx: int) -> Cost:
        v = self.row(k)[idx]
        return TOP if v >= self.top else int(v)

    @property
    def stages(self) -> range:
        return range(self.k_first, self.horizon + 2)


@dataclass
class Policy:
    """Control table over realized stages; quasi-stationary reuses one slice."""

    game: ModalGame
    actions: np.ndarray  # (N + 1 - k_first, |scope|) indices into controls
    worst: np.ndarray
    k_first: int
    flavor: str = "non-stationary"
    k_fp: Optional[int] = None

    def _row(self, k: int) -> int:
        if self.flavor == "quasi-stationary":
            return self.k_fp - self.k_first
        return max(k, self.k_first) - self.k_first

    def _lookup(self, table: np.ndarray, x: StateVec, k: int) -> int:
        game = self.game
        if not game.in_scope(x):
            raise OutOfDomain(f"{x} outside scope")
        kern = index_of(game)
        idx = kern.index(x)
        if self.flavor != "quasi-stationary" and k > game.horizon:
            if kern.goal[idx]:
                return -2
            raise OutOfDomain(f"stage {k} beyond horizon {game.horizon}")
        a = int(table[self._row(k), idx])
        if a == NO_ACTION:
            raise OutOfDomain(f"{x} not winning at stage {k}")
        return a

    def action(self, x: StateVec, k: int) -> GridVec:
        a = self._lookup(self.actions, x, k)
        return ZERO if a == -2 else self.game.params.controls[a]

    def worst_disturbance(self, x: StateVec, k: int) -> GridVec:
        a = self._lookup(self.worst, x, k)
        return ZERO if a == -2 else self.game.params.disturbances[a]

    def domain(self, k: int) -> np.ndarray:
        return self.actions[self._row(k)] != NO_ACTION


@dataclass
class SolveStats:
    states: int = 0
    backups: int = 0
    wall_time: float = 0.0
    peak_cells: int = 0
    winning_sizes: dict = field(default_factory=dict)
    k_fp: Optional[int] = None
    unsolvable: bool = False
    x0_winning: Optional[bool] = None
    extensions: int = 0

    @property
    def throughput(self) -> float:
        return self.backups / self.wall_time if self.wall_time > 0 else float("inf")

    def as_dict(self) -> dict:
        return {
            "states": self.states,
            "backups": self.backups,
            "wall_time": round(self.wall_time, 6),
            "backups_per_second": round(self.throughput, 1) if self.wall_time > 0 else None,
            "peak_cells": self.peak_cells,
            "k_fp": self.k_fp,
            "unsolvable": self.unsolvable,
            "x0_winning": self.x0_winning,
            "extensions": self.extensions,
            "winning_sizes": {str(k): v for k, v in sorted(self.winning_sizes.items())},
        }


@dataclass
class Solution:
    game: ModalGame
    value: ValueTable
    policy: Policy
    k_fp: Optional[int]
    stats: SolveStats

    @property
    def k_first(self) -> int:
        return self.value.k_first

    @property
    def horizon(self) -> int:
        return self.game.horizon

    def cost(self, x: StateVec, k: int) -> Cost:
        return self.value.cost(k, index_of(self.game).index(x))

    def winning(self, x: StateVec, k: int) -> bool:
        if not self.game.in_scope(x):
            return False
        k = min(max(k, self.k_first), self.horizon + 1)
        return self.value.cost(k, index_of(self.game).index(x)) is not TOP


# --------------------------------------------------------------------------
# Winning regions and fixpoint checks


def winning_region(value: ValueTable, k: int) -> np.ndarray:
    """Boolean mask over the scope: ``V(x, k) < TOP``."""
    return value.finite(k)


def winning_states(sol: Solution, k: int) -> list[StateVec]:
    kern = index_of(sol.game)
    return [kern.state(int(j), sol.game.scope.i) for j in np.nonzero(winning_region(sol.value, k))[0]]


def fp_u(value: ValueTable, game: ModalGame, x: StateVec, k: int) -> bool:
    """``x`` is delta-robustly winning at some realized stage ``k' >= k``.

    The cube ``p + [-delta, delta]^3`` (same velocity) must lie in the scope
    and be winning throughout. Cube cells outside the scenery grid (below
    ground, say) are not states and are skipped.
    """
    cells = _cube_cells(game, x)
    if cells is None:
        return False
    k0 = max(k, value.k_first)
    return any(bool((value.row(kk)[cells] < value.top).all()) for kk in range(k0, value.horizon + 2))


def fp_ddp(value: ValueTable, game: ModalGame, k: int, x0: Optional[StateVec]) -> bool:
    """Premature-termination test: winning region stopped growing, or the
    start state already sits robustly inside it."""
    same = int(winning_region(value, k).sum()) == int(winning_region(value, k + 1).sum())
    return same or (x0 is not None and fp_u(value, game, x0, k))


# --------------------------------------------------------------------------
# Solvers


def solve_ddp(game: ModalGame, x0: Optional[StateVec] = None, early_stop: bool = True) -> Solution:
    """Backward DDP over stages ``N .. 1`` with optional fixpoint stop."""
    t0 = time.perf_counter()
    kern = Kernel(game)
    N = game.horizon
    slices = [kern.terminal]
    actions, worst = [], []
    stats = SolveStats(states=kern.size)
    stats.winning_sizes[N + 1] = int((slices[0] < TOP_CELL).sum())
    k_fp = None
    x0_cells = None
    if x0 is not None and early_stop:
        x0_cells = _cube_cells(game, x0)
    for k in range(N, 0, -1):
        v, a, w = bellman_backup(slices[-1], game, k, kernel=kern)
        slices.append(v)
        actions.append(a)
        worst.append(w)
        stats.backups += kern.size
        size = int((v < TOP_CELL).sum())
        stats.winning_sizes[k] = size
        if early_stop:
            stop = size == stats.winning_sizes[k + 1]
            if not stop and x0_cells is not None:
                stop = bool((v[x0_cells] < TOP_CELL).all())
            if stop:
                k_fp = k
                break
    k_first = N + 1 - len(actions)
    value = ValueTable(game.scope, N, k_first, np.stack(slices[::-1]))
    policy = Policy(
        game,
        np.stack(actions[::-1]) if actions else np.zeros((0, kern.size), np.int16),
        np.stack(worst[::-1]) if worst else np.zeros((0, kern.size), np.int8),
        k_first,
        k_fp=k_fp,
    )
    stats.k_fp = k_fp
    stats.wall_time = time.perf_counter() - t0
    stats.peak_cells = int(value.values.size + policy.actions.size + np.prod(kern.vpad_shape) + np.prod(kern.wpad_shape))
    stats.unsolvable = stats.winning_sizes[k_first] == 0
    if x0 is not None:
        stats.x0_winning = game.in_scope(x0) and value.cost(k_first, kern.ix.index(x0)) is not TOP
    sol = Solution(game, value, policy, k_fp, stats)
    for fn in SOLVE_OBSERVERS:
        fn(sol)
    return sol


def _cube_cells(game: ModalGame, x0: StateVec) -> Optional[np.ndarray]:
    """Scope indices of the robustness cube around ``x0`` (``None`` if the
    cube pokes out of the scope, in which case it can never be winning)."""
    kern = index_of(game)
    d = game.task.delta_tube
    out = []
    for ox in range(-d, d + 1):
        for oy in range(-d, d + 1):
            for oz in range(-d, d + 1):
                p = x0.p + (ox, oy, oz)
                if p not in game.task.grid:
                    continue
                y = StateVec(p, x0.v, x0.i)
                if not game.in_scope(y):
                    return None
                out.append(kern.index(y))
    return np.array(out) if out else None


def _truncate(full: Solution, x0: StateVec) -> Solution:
    """Equivalent of ``solve_ddp(game, x0)`` carved out of a run without a
    start state: the backups agree, only the stop stage can come earlier."""
    game = full.game
    N = game.horizon
    cells = _cube_cells(game, x0)
    k_stop = full.k_fp
    if cells is not None:
        for k in range(N, full.k_first - 1, -1):
            if bool((full.value.row(k)[cells] < full.value.top).all()):
                k_stop = k if k_stop is None else max(k_stop, k)
                break
    cut = 0 if k_stop is None else k_stop - full.k_first
    kern = index_of(game)
    value = ValueTable(game.scope, N, full.k_first + cut, full.value.values[cut:])
    policy = Policy(game, full.policy.actions[cut:], full.policy.worst[cut:], value.k_first, k_fp=k_stop)
    rows = N + 1 - value.k_first
    src = full.stats
    stats = SolveStats(
        states=src.states,
        backups=kern.size * rows,
        wall_time=src.wall_time * rows / max(1, N + 1 - full.k_first),
        peak_cells=src.peak_cells,
        winning_sizes={k: v for k, v in src.winning_sizes.items() if k >= value.k_first},
        k_fp=k_stop,
    )
    stats.unsolvable = stats.winning_sizes[value.k_first] == 0
    stats.x0_winning = game.in_scope(x0) and value.cost(value.k_first, kern.index(x0)) is not TOP
    return Solution(game, value, policy, k_stop, stats)


class SolveCache:
    """LRU store of start-free solves, bounded by the bytes of their tables."""

    def __init__(self, max_bytes: int = 1 << 30):
        self.max_bytes = max_bytes
        self.bytes = 0
        self.hits = 0
        self.misses = 0
        self._store: OrderedDict = OrderedDict()

    @staticmethod
    def _size(sol: Solution) -> int:
        return sol.value.values.nbytes + sol.policy.actions.nbytes + sol.policy.worst.nbytes

    def get(self, key):
        sol = self._store.get(key)
        if sol is None:
            self.misses += 1
            return None
        self.hits += 1
        self._store.move_to_end(key)
        return sol

    def __setitem__(self, key, sol: Solution):
        if key in self._store:
            self.bytes -= self._size(self._store.pop(key))
        self._store[key] = sol
        self.bytes += self._size(sol)
        while self.bytes > self.max_bytes and len(self._store) > 1:
            _, old = self._store.popitem(last=False)
            self.bytes -= self._size(old)

    def __len__(self):
        return len(self._store)


def solve_cached(game: ModalGame, x0: StateVec, cache) -> Solution:
    """``solve_ddp(game, x0)`` memoised on the game (not on ``x0``).

    ``cache`` is a :class:`SolveCache`, a plain dict, or ``None``.
    """
    if cache is None:
        return solve_ddp(game, x0=x0)
    key = (game.task, game.key)
    full = cache.get(key)
    if full is None:
        full = solve_ddp(game)
        cache[key] = full
    return _truncate(full, x0)


def solve_with_extension(
    s: HybridState,
    task: Task,
    params: GameParams,
    horizon: Optional[int] = None,
    cache=None,
    anchor: Optional[HybridState] = None,
) -> Solution:
    """Solve the modal game at ``s``, widening its scope until ``s.x`` is
    robustly winning or the retry cap is hit.

    The scope is computed from ``anchor`` when given (the player passes the
    jump target ``(p_{i-1}, 0, i)`` so a segment's game does not depend on
    where exactly its predecessor ended). ``cache`` memoises solves across
    calls sharing the same ``params``.
    """
    scope = compute_scope(anchor if anchor is not None else s, task, params)
    N = horizon if horizon is not None else params.horizon
    last = None
    for attempt in range(params.max_retries + 1):
        game = build_modal_game(s, task, params, scope=scope, horizon=N)
        sol = solve_cached(game, s.x, cache)
        last = sol
        if game.in_scope(s.x) and fp_u(sol.value, game, s.x, sol.k_first):
            sol.stats.extensions = attempt
            return sol
        log.debug("scope extension %d for %s", attempt + 1, s)
        pos = scope.positions.pad((params.ext_pad,) * 3).intersect(task.grid)
        scope = Scope(pos.product(scope.velocities), scope.i)
        N += params.time_ext
    size = int(winning_region(last.value, last.k_first).sum())
    raise Unsolvable(
        f"no robustly winning start after {params.max_retries} extensions (|W| = {size})",
        winning_size=size,
        attempts=params.max_retries + 1,
        solution=last,
    )


def quasi_stationary(sol: Solution) -> Policy:
    """Reuse the fixpoint-stage slice of ``sol`` at every stage."""
    if sol.k_fp is None:
        raise ValueError("solution has no fixpoint stage")
    p = sol.policy
    return Policy(p.game, p.actions, p.worst, p.k_first, flavor="quasi-stationary", k_fp=sol.k_fp)


def policy_action(sol, x: StateVec, k: int) -> GridVec:
    policy = sol.policy if isinstance(sol, Solution) else sol
    return policy.action(x, k)


# --------------------------------------------------------------------------
# Binary dump

_MAGIC = b"RAVT"
_HEADER = struct.Struct("<4sI6i6iIIiI")
_TOP32 = 0xFFFFFFFF


def dump_value_table(sol: Solution, path) -> None:
    """Write the value table: header then row-major uint32 cells per stage
    (ascending ``k``), ``TOP`` stored as ``0xFFFFFFFF``."""
    v = sol.value.values
    finite = v < sol.value.top
    if finite.any() and int(v[finite].max()) >= _TOP32:
        raise OverflowError("finite cost does not fit 32 bits")
    cells = np.where(finite, v, _TOP32).astype("<u4")
    box = sol.value.scope.box
    header = _HEADER.pack(
        _MAGIC, 1, *box.lower, *box.upper, sol.horizon, sol.k_first,
        -1 if sol.k_fp is None else sol.k_fp, v.shape[0],
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(cells.tobytes())


def load_value_table(path) -> tuple[Box, int, int, Optional[int], np.ndarray]:
    """Inverse of :func:`dump_value_table`; ``TOP`` cells come back as
    :data:`TOP_CELL`."""
    data = Path(path).read_bytes()
    fields = _HEADER.unpack_from(data)
    if fields[0] != _MAGIC:
        raise ValueError("not a value-table dump")
    lower, upper = fields[2:8], fields[8:14]
    horizon, k_first, k_fp, n = fields[14:18]
    box = Box(lower, upper)
    cells = np.frombuffer(data, dtype="<u4", offset=_HEADER.size).reshape(n, box.size)
    values = np.where(cells == _TOP32, TOP_CELL, cells.astype(np.int64))
    return box, horizon, k_first, (None if k_fp < 0 else k_fp), values
