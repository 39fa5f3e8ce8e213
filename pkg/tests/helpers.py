"""Shared builders and checks for the test-suite."""

from __future__ import annotations

import random

import numpy as np

from reachavoid.model import (
    TOP,
    Box,
    GameParams,
    GridVec,
    HybridState,
    Mode,
    StateVec,
    Task,
    build_modal_game,
    cube_vectors,
    horizontal_wind,
    step_dynamics,
    ZERO,
)
from reachavoid.solver import Solution, winning_region


def random_small_game(seed: int, max_pairs: int = 12_000, wind=None):
    """A random modal game small enough for the exhaustive oracle.

    Returns ``(game, start_state)``.
    """
    rng = random.Random(seed)
    while True:
        nx, ny, nz = rng.randint(6, 9), rng.randint(5, 8), rng.randint(5, 7)
        z = rng.randint(3, nz - 2)
        x1, y1 = rng.randrange(nx), rng.randrange(ny)
        x3, y3 = rng.randrange(nx), rng.randrange(ny)
        if (x1, y1) == (x3, y3):
            continue
        route = [(x1, y1, 0), (x1, y1, z), (x3, y3, z), (x3, y3, 0)]
        density = rng.choice([0.0, 0.03, 0.08, 0.15])
        obstacles = {
            (a, b, c)
            for a in range(nx)
            for b in range(ny)
            for c in range(nz)
            if rng.random() < density and (a, b, c) not in route
        }
        task = Task(Box((0, 0, 0), (nx - 1, ny - 1, nz - 1)), route, frozenset(obstacles))
        use_wind = rng.random() < 0.5 if wind is None else wind
        controls = cube_vectors()
        if rng.random() < 0.3:
            keep = [u for u in controls if u == ZERO or rng.random() < 0.5]
            controls = tuple(keep)
        params = GameParams(
            controls=controls,
            disturbances=horizontal_wind() if use_wind else (ZERO,),
            v_max=1,
            horizon=rng.randint(2, 5),
            pos_pad={q: rng.randint(1, 2) for q in Mode},
            vel_pad={q: 1 for q in Mode},
            R=((1, 0, 0), (0, 1, 0), (0, 0, 0)) if rng.random() < 0.3 else ((0, 0, 0),) * 3,
        )
        mode, j = rng.choice([(Mode.DEPART, 1), (Mode.CRUISE, 2), (Mode.ARRIVE, 3)])
        s = HybridState(mode, StateVec(task.waypoint(j), ZERO, j + 1))
        try:
            game = build_modal_game(s, task, params)
        except ValueError:
            continue
        if game.scope.size * params.horizon > max_pairs:
            continue
        return game, s


def scope_states(game):
    i = game.scope.i
    for pv in game.scope.box.points():
        yield StateVec(GridVec(*pv[:3]), GridVec(*pv[3:]), i)


def monotonicity_violations(sol: Solution) -> list[str]:
    """Winning-region and finiteness monotonicity over the realized stages."""
    out = []
    stages = list(sol.value.stages)
    for k in stages[:-1]:
        wk, wk1 = winning_region(sol.value, k), winning_region(sol.value, k + 1)
        if wk.sum() < wk1.sum():
            out.append(f"|W({k})| = {wk.sum()} < |W({k + 1})| = {wk1.sum()}")
        lost = int((wk1 & ~wk).sum())
        if lost:
            out.append(f"{lost} states finite at {k + 1} but TOP at {k}")
    return out


def robust_invariance_violations(sol: Solution, stages=None, limit: int = 5) -> list[str]:
    """Enumerate ``W(k)`` and every disturbance: the policy successor must be
    safe, in scope and in ``W(k+1)`` (or in the goal)."""
    game = sol.game
    bad = []
    D = game.params.disturbances
    N = game.horizon
    stages = stages if stages is not None else range(sol.k_first, N + 1)
    for k in stages:
        for x in scope_states(game):
            if not sol.winning(x, k) or (game.reached(x) and not game.unsafe(x)):
                continue
            u = sol.policy.action(x, k)
            for d in D:
                y = step_dynamics(x, u, d)
                ok = game.in_scope(y) and not game.unsafe(y) and sol.winning(y, k + 1)
                if not ok:
                    bad.append(f"k={k} x={x} u={u} d={d} -> {y}")
                    if len(bad) >= limit:
                        return bad
    return bad


def undisturbed_cost(policy, game, x: StateVec, k: int, max_steps: int = 1000):
    """Total stage cost of following ``policy`` with zero disturbance."""
    from reachavoid.model import stage_cost

    total = 0
    for _ in range(max_steps):
        if game.reached(x):
            return total
        u = policy.action(x, k)
        total += stage_cost(u, ZERO, HybridState(game.mode, x), k, game)
        x = step_dynamics(x, u, ZERO)
        k += 1
    return TOP


def table_as_dict(sol: Solution) -> dict:
    return {k: np.array(sol.value.slice(k)) for k in sol.value.stages}
