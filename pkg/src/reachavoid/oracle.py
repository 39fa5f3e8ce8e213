"""Slow, obviously-correct reference computations for cross-checking.

Nothing in here touches solver internals: values are re-derived by plain
recursion over the scalar predicates of :mod:`reachavoid.model`, policies are
checked by enumerating disturbance sequences, and tube reachability is a
dictionary flood fill.
"""

from __future__ import annotations

import heapq
import itertools
import sys
from collections import deque
from dataclasses import dataclass
from typing import Optional

from .model import (
    TOP,
    Cost,
    GridVec,
    HybridState,
    ModalGame,
    StateVec,
    Task,
    stage_cost,
    step_dynamics,
    terminal_cost,
)

DEFAULT_CAP = 50_000


class OracleCapExceeded(ValueError):
    pass


@dataclass
class OracleResult:
    values: dict  # (pv tuple, k) -> Cost
    horizon: int
    counterexample: Optional[list] = None

    def value(self, x: StateVec, k: int) -> Cost:
        return self.values[(x.pv, k)]


def _states(game: ModalGame):
    i = game.scope.i
    for pv in game.scope.box.points():
        yield StateVec(GridVec(*pv[:3]), GridVec(*pv[3:]), i)


def oracle_value(game: ModalGame, horizon: Optional[int] = None, cap: int = DEFAULT_CAP) -> OracleResult:
    """Exact finite-horizon min-max values by memoised recursion."""
    N = horizon if horizon is not None else game.horizon
    if game.scope.size * N > cap:
        raise OracleCapExceeded(f"{game.scope.size} states x {N} stages exceeds cap {cap}")
    U, D = game.params.controls, game.params.disturbances
    memo: dict = {}
    sys.setrecursionlimit(max(sys.getrecursionlimit(), 10 * N + 1000))

    def V(x: StateVec, k: int) -> Cost:
        if not game.in_scope(x):
            return TOP
        key = (x, k)
        if key in memo:
            return memo[key]
        s = HybridState(game.mode, x)
        if k == N + 1:
            val = terminal_cost(s, game)
        elif game.reached(x) and not game.unsafe(x):
            val = 0
        else:
            val = TOP
            for u in U:
                worst = None
                for d in D:
                    c = stage_cost(u, d, s, k, game) + V(step_dynamics(x, u, d), k + 1)
                    if worst is None or c > worst:
                        worst = c
                    if worst is TOP:
                        break
                if worst < val:
                    val = worst
        memo[key] = val
        return val

    table = {}
    for k in range(N + 1, 0, -1):
        for x in _states(game):
            table[(x.pv, k)] = V(x, k)
    return OracleResult(table, N)


def oracle_value_at(game: ModalGame, x0: StateVec, k0: int = 1, horizon: Optional[int] = None, cap: int = 2_000_000) -> Cost:
    """``V(x0, k0)`` by memoised recursion over the states reachable from it.

    Controls whose running worst case already exceeds the best control found
    so far are abandoned early; this cannot change the min-max value.
    """
    N = horizon if horizon is not None else game.horizon
    U, D = game.params.controls, game.params.disturbances
    memo: dict = {}
    sys.setrecursionlimit(max(sys.getrecursionlimit(), 10 * N + 1000))

    def V(x: StateVec, k: int) -> Cost:
        if not game.in_scope(x):
            return TOP
        key = (x, k)
        if key in memo:
            return memo[key]
        if len(memo) >= cap:
            raise OracleCapExceeded(f"more than {cap} reachable state-stage pairs")
        s = HybridState(game.mode, x)
        if k == N + 1:
            val = terminal_cost(s, game)
        elif game.reached(x) and not game.unsafe(x):
            val = 0
        elif game.unsafe(x):
            val = TOP
        else:
            val = TOP
            for u in U:
                worst = None
                for d in D:
                    c = stage_cost(u, d, s, k, game) + V(step_dynamics(x, u, d), k + 1)
                    if worst is None or c > worst:
                        worst = c
                    if not worst < val:
                        break
                if worst < val:
                    val = worst
        memo[key] = val
        return val

    return V(x0, k0)


def shortest_cost(game: ModalGame, x0: StateVec, steps: int) -> Cost:
    """Single-player minimum accumulated cost to the goal within ``steps``.

    Uniform-cost search over ``(state, steps used)``; stage costs are
    non-negative, so the first goal popped is optimal. Only meaningful when
    the disturbance range is ``{0}``.
    """
    if tuple(game.params.disturbances) != (GridVec(0, 0, 0),):
        raise ValueError("shortest_cost needs D = {0}")
    if not game.in_scope(x0):
        return TOP
    zero = GridVec(0, 0, 0)
    # fewest steps with which each state has been expanded; a later pop of
    # the same state costs at least as much, so it only helps with fewer steps
    expanded: dict = {}
    tie = itertools.count()
    heap = [(0, 0, next(tie), x0)]
    while heap:
        c, t, _, x = heapq.heappop(heap)
        if game.reached(x) and not game.unsafe(x):
            return c
        if t >= steps or expanded.get(x, steps + 1) <= t:
            continue
        expanded[x] = t
        s = HybridState(game.mode, x)
        for u in game.params.controls:
            w = stage_cost(u, zero, s, 0, game)
            if w is TOP:
                continue
            y = step_dynamics(x, u, zero)
            if game.in_scope(y) and expanded.get(y, steps + 1) > t + 1:
                heapq.heappush(heap, (c + w, t + 1, next(tie), y))
    return TOP


@dataclass
class Verdict:
    ok: bool
    counterexample: Optional[list] = None
    explored: int = 0

    def __bool__(self):
        return self.ok


def adversarial_verify(policy, game: ModalGame, x0: StateVec, k0: int, max_steps: Optional[int] = None) -> Verdict:
    """Play ``policy`` against every disturbance sequence from ``(x0, k0)``.

    OK iff every playout stays in the scope, never visits an unsafe state and
    reaches the goal within ``max_steps`` (default: up to stage ``N + 1``).
    Otherwise the returned counterexample is a losing disturbance sequence.
    Revisited ``(x, k)`` pairs are pruned, which is exact because the policy is
    a function of ``(x, k)`` only.
    """
    if max_steps is None:
        max_steps = game.horizon + 1 - k0
    D = game.params.disturbances
    memo: dict = {}

    def explore(x: StateVec, t: int):
        key = (x, t)
        if key in memo:
            return memo[key]
        if not game.in_scope(x) or game.unsafe(x):
            res: Optional[list] = []
        elif game.reached(x):
            res = None
        elif t >= max_steps:
            res = []
        else:
            try:
                u = policy.action(x, k0 + t)
            except LookupError:
                u = None
            if u is None:
                res = []
            else:
                res = None
                for d in D:
                    sub = explore(step_dynamics(x, u, d), t + 1)
                    if sub is not None:
                        res = [d] + sub
                        break
        memo[key] = res
        return res

    cex = explore(x0, 0)
    return Verdict(cex is None, cex, len(memo))


# --------------------------------------------------------------------------
# Tube reachability


def _cube(delta: int):
    r = range(-delta, delta + 1)
    return list(itertools.product(r, r, r))


def tube_oracle(task: Task) -> bool:
    """Naive check that a delta-tube through clear cells threads the route."""
    cube = _cube(task.delta_tube)
    obs = task.obstacles
    grid = task.grid
    if grid.size > 1_000_000:
        raise ValueError("tube_oracle is limited to 10^6 cells")

    def clear(c) -> bool:
        return not any((c[0] + a, c[1] + b, c[2] + e) in obs for a, b, e in cube)

    clear_cells = {c for c in grid.points() if clear(c)}
    steps = [o for o in _cube(1) if o != (0, 0, 0)]

    def near(p):
        return {(p[0] + a, p[1] + b, p[2] + e) for a, b, e in cube} & clear_cells

    # cells of N(p_j) reachable by a clear path that has visited N(p_1..p_j) in order
    reach = near(task.route[0])
    for p in task.route[1:]:
        if not reach:
            return False
        seen = set(reach)
        queue = deque(reach)
        while queue:
            c = queue.popleft()
            for a, b, e in steps:
                nb = (c[0] + a, c[1] + b, c[2] + e)
                if nb in clear_cells and nb not in seen:
                    seen.add(nb)
                    queue.append(nb)
        reach = seen & near(p)
    return bool(reach)
