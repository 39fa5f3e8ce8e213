"""End-to-end acceptance checks, one test per criterion.

Each test records a one-line verdict; the lines are repeated in the pytest
terminal summary so a plain ``pytest`` run shows all nine at a glance.
"""

import math
import time
from pathlib import Path

import pytest

from helpers import random_small_game, scope_states, undisturbed_cost
from reachavoid.cli import run_bench
from reachavoid.model import ZERO, HybridState, Mode, StateVec, goal_region, unsafe_static
from reachavoid.oracle import adversarial_verify, oracle_value, shortest_cost, tube_oracle
from reachavoid.player import Outcome, PlayConfig, play, record_to_csv, segment_anchor, sweep
from reachavoid.scenarios import builtin_params, builtin_scenario, check_perforation, gen_random_scenario
from reachavoid.solver import (
    SolveCache,
    Unsolvable,
    quasi_stationary,
    solve_ddp,
    solve_with_extension,
)

DATA = Path(__file__).parent / "data"
RESULTS: dict = {}


def verdict(n: int, ok: bool, detail: str):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'} - {detail}"
    RESULTS[n] = line
    print(line)
    assert ok, line


# ---------------------------------------------------------------- 1


def test_criterion_1_oracle_equivalence():
    t0 = time.perf_counter()
    games = 0
    mismatches = []
    winds = set()
    for seed in range(24):
        game, s = random_small_game(1000 + seed, max_pairs=12_000, wind=seed % 2 == 0)
        assert game.scope.size * game.horizon <= 50_000
        winds.add(len(game.params.disturbances))
        sol = solve_ddp(game, early_stop=False)
        ref = oracle_value(game)
        for k in range(1, game.horizon + 2):
            for x in scope_states(game):
                if sol.cost(x, k) != ref.value(x, k):
                    mismatches.append((seed, x, k))
        games += 1
    dt = time.perf_counter() - t0
    ok = not mismatches and games >= 20 and winds == {1, 5} and dt < 120
    verdict(1, ok, f"{games} games, |D| in {sorted(winds)}, {len(mismatches)} mismatches, {dt:.1f} s")


# ---------------------------------------------------------------- 2


@pytest.mark.slow
def test_criterion_2_robust_reach_avoid(mini_yard):
    task, params = mini_yard
    t0 = time.perf_counter()
    res = sweep(task, params, range(1000), keep=True)
    late = []
    starts = set()
    for rec in res.records:
        for seg in rec.segments:
            starts.add(HybridState(seg.mode, seg.x0))
            if seg.reached and seg.steps > seg.horizon + 1 - seg.k_first:
                late.append(seg)
    cache = SolveCache()
    bad = []
    explored = 0
    for s in sorted(starts, key=repr):
        sol = solve_with_extension(s, task, params, cache=cache, anchor=segment_anchor(s, task))
        v = adversarial_verify(sol.policy, sol.game, s.x, sol.k_first)
        explored += v.explored
        if not v.ok:
            bad.append((s, v.counterexample))
    dt = time.perf_counter() - t0
    ok = res.all_terminated and res.unsafe_visits == 0 and not late and not bad and params.horizon <= 12 and dt < 600
    verdict(
        2,
        ok,
        f"1000 wind plays {res.outcomes}, {res.unsafe_visits} unsafe visits, "
        f"{len(starts)} modal starts verified ({explored} nodes), {len(bad)} counterexamples, {dt:.0f} s",
    )


# ---------------------------------------------------------------- 3


def test_criterion_3_monotonicity(monotonicity_audit, mini_yard):
    # make sure at least the fixture segments have passed through the audit
    task, params = mini_yard
    cache = SolveCache()
    for j, q in [(1, Mode.DEPART), (2, Mode.CRUISE), (3, Mode.CRUISE), (4, Mode.ARRIVE)]:
        solve_with_extension(HybridState(q, StateVec(task.waypoint(j), ZERO, j + 1)), task, params, cache=cache)
    for seed in range(10):
        game, _ = random_small_game(seed)
        solve_ddp(game, early_stop=False)
    n = monotonicity_audit["solutions"]
    bad = monotonicity_audit["violations"]
    verdict(3, n > 0 and not bad, f"{n} solved instances audited so far, {len(bad)} violations")


# ---------------------------------------------------------------- 4


def _undisturbed(policy, sol, x):
    return undisturbed_cost(policy, sol.game, x, sol.k_first, max_steps=10 * sol.horizon)


def test_criterion_4_fixpoint_approximation(mini_yard):
    task, params = mini_yard
    s = HybridState(Mode.CRUISE, StateVec(task.waypoint(2), ZERO, 3))
    sol = solve_with_extension(s, task, params)
    q = quasi_stationary(sol)
    v = adversarial_verify(q, sol.game, s.x, sol.k_first, max_steps=sol.horizon)
    c_star = _undisturbed(sol.policy, sol, s.x)
    c_inf = _undisturbed(q, sol, s.x)
    delta = c_inf - c_star
    rel = abs(delta) / c_star if c_star else 0.0
    ok = sol.k_fp is not None and sol.k_fp < sol.horizon and v.ok and rel <= 0.10
    verdict(
        4,
        ok,
        f"k_fp={sol.k_fp} < N={sol.horizon}, u_inf adversarial ok={v.ok}, "
        f"cost u*={c_star} u_inf={c_inf} delta={delta} ({100 * rel:.1f}%)",
    )


# ---------------------------------------------------------------- 5


def test_criterion_5_scope_extension():
    task, params = builtin_scenario("detour"), builtin_params("detour")
    s = HybridState(Mode.CRUISE, StateVec(task.waypoint(2), ZERO, 3))
    try:
        solve_with_extension(s, task, params.replace(ext_pad=0))
        at_zero = "solvable"
    except Unsolvable:
        at_zero = "unsolvable"
    sol = solve_with_extension(s, task, params.replace(ext_pad=2))
    ok = at_zero == "unsolvable" and sol.stats.extensions == 1
    verdict(5, ok, f"ext_pad 0: {at_zero}; ext_pad 2: solved after {sol.stats.extensions} extension(s)")


# ---------------------------------------------------------------- 6


def test_criterion_6_near_optimality(mini_yard):
    checked = []
    # the mini-yard flown without wind, segment by segment
    task, params = mini_yard
    calm = params.replace(disturbances=(ZERO,))
    cache = SolveCache()
    rec = play(task, calm, PlayConfig(disturbance="none"), cache=cache)
    assert rec.outcome == Outcome.TERMINATED
    for seg in rec.segments:
        s = HybridState(seg.mode, seg.x0)
        sol = solve_with_extension(s, task, calm, cache=cache, anchor=segment_anchor(s, task))
        ref = shortest_cost(sol.game, seg.x0, sol.horizon + 1 - sol.k_first)
        checked.append((f"mini-yard {seg.mode.value} i={seg.i}", seg.cost, ref))
    # small random games played from their modal start
    for seed in range(20):
        game, s = random_small_game(2000 + seed, wind=False)
        sol = solve_ddp(game, x0=s.x, early_stop=False)
        if not sol.winning(s.x, sol.k_first):
            continue
        played = undisturbed_cost(sol.policy, game, s.x, sol.k_first)
        checked.append((f"random {2000 + seed}", played, shortest_cost(game, s.x, game.horizon + 1 - sol.k_first)))
    bad = [c for c in checked if c[1] != c[2]]
    verdict(6, len(checked) >= 10 and not bad, f"{len(checked)} modal starts, {len(bad)} cost mismatches {bad[:3]}")


# ---------------------------------------------------------------- 7


def test_criterion_7_perforation_agreement():
    disagree = []
    yes = 0
    for seed in range(100):
        density = (0.02, 0.08, 0.15, 0.25)[seed % 4]
        task = gen_random_scenario(seed, (14, 14, 8), density, 4 + seed % 3, carve=False)
        a, b = bool(check_perforation(task)), tube_oracle(task)
        yes += a
        if a != b:
            disagree.append(seed)
    verdict(7, not disagree, f"100 tasks ({yes} perforated), {len(disagree)} disagreements")


# ---------------------------------------------------------------- 8


def test_criterion_8_throughput():
    res = run_bench(1_000_000, stages=1, reps=1)
    ok = res["cells"] >= 1_000_000 and res["controls"] == 27 and res["disturbances"] == 5 and res["min"] <= 10.0
    verdict(
        8,
        ok,
        f"{res['cells']} cells, |U|={res['controls']} |D|={res['disturbances']}: "
        f"{res['min']:.2f} s ({res['backups_per_second']:.0f} backups/s)",
    )


# ---------------------------------------------------------------- 9


def test_criterion_9_shortcut():
    task, params = builtin_scenario("yard"), builtin_params("yard")
    rec = play(task, params, PlayConfig(disturbance="none"))
    skipped = task.waypoint(5)
    cheb = min(max(abs(a - b) for a, b in zip(p, skipped)) for p in rec.positions)
    eucl = min(math.dist(p, skipped) for p in rec.positions)
    # the jump out of the segment aiming at p5 happens inside its goal cuboid
    jump = next(r for r in rec.rows if r.event and r.x.i == 5)
    inside = jump.x.p in goal_region(HybridState(jump.mode, jump.x), task, params)
    snapshot = DATA / "yard_shortcut.csv"
    text = record_to_csv(rec)
    same = snapshot.read_text() == text
    ok = rec.outcome == Outcome.TERMINATED and inside and cheb > 2 and same
    verdict(
        9,
        ok,
        f"outcome {rec.outcome.value}, goal cuboid entered at {tuple(jump.x.p)}, "
        f"closest approach to p5: {eucl:.2f} (Chebyshev {cheb}), snapshot match={same}",
    )
