import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from reachavoid.model import (
    TOP,
    ZERO,
    Box,
    Event,
    GridVec,
    HybridState,
    Mode,
    StateVec,
    Task,
    build_modal_game,
    goal_region,
    horizontal_wind,
    step_dynamics,
    unsafe_static,
)
from reachavoid.player import (
    COMPASS,
    CSV_COLUMNS,
    Outcome,
    PlayConfig,
    TaskUpdate,
    TaskUpdateRejected,
    WindState,
    classify,
    default_wind_weights,
    format_summary,
    gen_dist,
    parse_summary,
    play,
    read_csv,
    record_to_csv,
    segment_anchor,
    sweep,
    upd_task,
    write_csv,
)
from reachavoid.scenarios import box_cells, builtin_params, builtin_scenario, desk_params
from reachavoid.solver import SolveCache, quasi_stationary, solve_ddp, solve_with_extension

# Obstacle-free 4-waypoint route on the mini-yard footprint. A cruise entered
# at speed against a persistent wind needs a longer horizon to turn around.
OPEN = Task(Box((0, 0, 0), (29, 29, 11)), [(9, 9, 0), (9, 9, 5), (17, 15, 5), (17, 15, 0)])
OPEN_PARAMS = desk_params(horizon=20)
CALM_PARAMS = desk_params(horizon=20, disturbances=(ZERO,))


@pytest.fixture(scope="module")
def open_cache():
    return SolveCache()


# ---------------------------------------------------------------- wind


def test_none_mode_is_always_zero(open_cache):
    rec = play(OPEN, OPEN_PARAMS, PlayConfig(disturbance="none"), cache=open_cache)
    assert all(r.d == ZERO for r in rec.rows if r.d is not None)


def test_default_weights():
    w = default_wind_weights()
    assert w["N"] == {"N": 4, "E": 2, "W": 2, "S": 1, "calm": 2}
    assert w["calm"]["calm"] == 4 and w["calm"]["E"] == 2


def test_wind_state_rejects_bad_rows():
    with pytest.raises(ValueError):
        WindState(weights={"calm": {"calm": 0}})
    with pytest.raises(ValueError):
        WindState(dwell=(0, 3))


def test_dwell_holds_direction():
    rng = np.random.default_rng(0)
    w = WindState("E", remaining=3)
    seen = []
    for _ in range(3):
        d, w = gen_dist(w, rng)
        seen.append(d)
    assert seen == [COMPASS["E"]] * 3
    assert w.remaining == 0


def test_gen_dist_is_seed_deterministic():
    def draw(seed):
        rng = np.random.default_rng(seed)
        w, out = WindState(), []
        for _ in range(200):
            d, w = gen_dist(w, rng)
            out.append(d)
        return out

    assert draw(4) == draw(4)
    assert draw(4) != draw(5)


def test_wind_statistics_favour_persistence():
    rng = np.random.default_rng(123)
    D = horizontal_wind(1)
    w = WindState()
    same = opposite = 0
    prev = None
    for _ in range(100_000):
        d, w = gen_dist(w, rng, D)
        assert d in D and d.z == 0
        if prev is not None and prev != ZERO and d != ZERO:
            if d == prev:
                same += 1
            elif d == -prev:
                opposite += 1
        prev = d
    assert same > opposite > 0


def test_out_of_range_wind_is_replaced_by_calm():
    rng = np.random.default_rng(0)
    d, _ = gen_dist(WindState("N", remaining=2, magnitude=2), rng, horizontal_wind(1))
    assert d == ZERO


# ---------------------------------------------------------------- classify


@pytest.fixture(scope="module")
def cruise_solution():
    params = desk_params(horizon=12)
    s = HybridState(Mode.CRUISE, StateVec(OPEN.waypoint(2), ZERO, 3))
    return s, solve_ddp(build_modal_game(s, OPEN, params), early_stop=False), params


def test_classify_standby_terminates(cruise_solution):
    s, sol, params = cruise_solution
    standby = HybridState(Mode.STANDBY, StateVec(GridVec(99, 99, 0), ZERO, 4))
    # termination wins over everything else, even a state outside the scope
    assert classify(standby, 99, sol, params, OPEN) == Outcome.TERMINATED


def test_classify_outside_winning_region_fails(cruise_solution):
    s, sol, params = cruise_solution
    fast = HybridState(Mode.CRUISE, StateVec(GridVec(7, 9, 5), GridVec(-3, -3, 3), 3))
    assert not sol.winning(fast.x, 1)
    assert classify(fast, 1, sol, params, OPEN) == Outcome.FAILURE

def test_classify_failure_outranks_quasi_timeout(open_cache):
    # a quasi-stationary play checks both the region and its step budget
    s = HybridState(Mode.CRUISE, StateVec(OPEN.waypoint(2), ZERO, 3))
    sol = solve_with_extension(s, OPEN, OPEN_PARAMS, cache=open_cache)
    q = quasi_stationary(sol)
    late = sol.k_first + sol.horizon
    fast = HybridState(Mode.CRUISE, StateVec(GridVec(7, 9, 5), GridVec(-3, -3, 3), 3))
    assert not sol.winning(fast.x, sol.k_fp)
    assert classify(fast, late, sol, OPEN_PARAMS, OPEN, q) == Outcome.FAILURE
    assert classify(s, late, sol, OPEN_PARAMS, OPEN, q) == Outcome.TIMEOUT
    assert classify(s, late - 1, sol, OPEN_PARAMS, OPEN, q) is None


def test_classify_timeout_at_horizon(cruise_solution):
    s, sol, params = cruise_solution
    N = sol.horizon
    # one step short of the goal cuboid: winning at N, done at N + 1
    near = HybridState(Mode.CRUISE, StateVec(GridVec(14, 13, 5), GridVec(1, 1, 0), 3))
    assert not sol.game.reached(near.x) and sol.winning(near.x, N)
    assert classify(near, N, sol, params, OPEN) is None
    # past the last control stage the value table no longer applies
    assert classify(near, N + 1, sol, params, OPEN) == Outcome.TIMEOUT
    assert classify(s, sol.k_first, sol, params, OPEN) is None


def test_classify_invariant_violation(cruise_solution):
    s, sol, params = cruise_solution
    bad = HybridState(Mode.CRUISE, StateVec(GridVec(9, 9, 5), GridVec(4, 0, 0), 3))
    assert classify(bad, 1, None, params, OPEN) == Outcome.INVARIANT
    assert classify(s, 1, None, params, OPEN) is None


# ---------------------------------------------------------------- task updates


def test_far_obstacle_update_is_accepted():
    new = upd_task(OPEN, 2, {(28, 1, 1)})
    assert (28, 1, 1) in new.obstacles
    assert new.route == OPEN.route


def test_sealing_update_is_rejected():
    wall = box_cells((13, 0, 0), (13, 29, 11))
    with pytest.raises(TaskUpdateRejected) as info:
        upd_task(OPEN, 2, wall)
    assert info.value.predicate == "perforation"


def test_prefix_change_is_rejected():
    moved = list(OPEN.route)
    moved[1] = (9, 9, 6)
    with pytest.raises(TaskUpdateRejected) as info:
        upd_task(OPEN, 2, new_route=moved)
    assert info.value.predicate == "prefix"


def test_suffix_change_is_validated():
    ok = upd_task(OPEN, 2, new_route_suffix=[(20, 12, 5), (20, 12, 0)])
    assert ok.route[-1] == (20, 12, 0) and ok.route[:2] == OPEN.route[:2]
    with pytest.raises(TaskUpdateRejected) as info:
        upd_task(OPEN, 2, new_route_suffix=[(20, 12, 5), (21, 12, 0)])
    assert info.value.predicate == "valid-route"


def test_rejected_update_leaves_play_task_unchanged(open_cache):
    wall = frozenset(box_cells((13, 0, 0), (13, 29, 11)))
    cfg = PlayConfig(disturbance="none", updates={2: TaskUpdate(new_obstacles=wall)})
    rec = play(OPEN, OPEN_PARAMS, cfg, cache=open_cache)
    assert rec.rejected_updates == ["p2:perforation"]
    assert rec.task == OPEN
    assert rec.outcome == Outcome.TERMINATED


def test_accepted_update_is_used_by_later_segments(open_cache):
    extra = frozenset({(28, 28, 1)})
    cfg = PlayConfig(disturbance="none", updates={2: TaskUpdate(new_obstacles=extra)})
    rec = play(OPEN, OPEN_PARAMS, cfg, cache=open_cache)
    assert rec.task.obstacles == extra
    assert rec.outcome == Outcome.TERMINATED


# ---------------------------------------------------------------- plays


def test_open_route_terminates_and_visits_goals_in_order(open_cache):
    rec = play(OPEN, OPEN_PARAMS, PlayConfig(disturbance="none"), cache=open_cache)
    assert rec.outcome == Outcome.TERMINATED
    assert rec.final.q == Mode.STANDBY
    assert [e for _, e in rec.events] == [Event.START, Event.TO_CRUISE, Event.TO_ARRIVE, Event.LAND]
    jumps = [r for r in rec.rows if r.event in ("to_cruise", "to_arrive")]
    assert [r.x.i for r in jumps] == [2, 3]
    for r in jumps:
        assert r.x.p in goal_region(HybridState(r.mode, r.x), OPEN, OPEN_PARAMS)
    landed = rec.positions[-1]
    target = OPEN.route[-1]
    assert landed.z == 0
    assert max(abs(landed.x - target.x), abs(landed.y - target.y)) <= OPEN_PARAMS.pos_pad[Mode.ARRIVE]


@pytest.mark.slow
def test_open_route_wind_sweep_never_unsafe():
    res = sweep(OPEN, OPEN_PARAMS, range(1000))
    assert res.outcomes == {"terminated": 1000}
    assert res.unsafe_visits == 0


def test_worst_case_play_terminates(open_cache):
    rec = play(OPEN, OPEN_PARAMS, PlayConfig(disturbance="worst-case"), cache=open_cache)
    assert rec.outcome == Outcome.TERMINATED
    assert not any(unsafe_static(p, OPEN) for p in rec.positions)


def test_walled_route_fails_at_second_segment():
    task, params = builtin_scenario("walled"), builtin_params("walled")
    rec = play(task, params, PlayConfig(disturbance="none"))
    assert rec.outcome == Outcome.FAILURE
    assert [s.mode for s in rec.segments] == [Mode.DEPART, Mode.CRUISE]
    seg = rec.segments[-1]
    assert seg.error and seg.extensions == params.max_retries + 1
    assert seg.steps == 0
    assert rec.summary()["segment_2_error"] == seg.error


def test_max_steps_budget_times_out(open_cache):
    rec = play(OPEN, OPEN_PARAMS, PlayConfig(disturbance="none", max_steps=3), cache=open_cache)
    assert rec.outcome == Outcome.TIMEOUT
    assert rec.steps == 3


def test_moving_obstacle_hook_interrupts(open_cache):
    cfg = PlayConfig(disturbance="none", moving_obstacle=lambda s, k: s.q == Mode.CRUISE)
    rec = play(OPEN, OPEN_PARAMS, cfg, cache=open_cache)
    assert rec.outcome == Outcome.FAILURE
    assert rec.events[-1][1] == "interrupt"


@settings(max_examples=8, deadline=None)
@given(seed=st.integers(0, 10**6), mode=st.sampled_from(["none", "random-wind", "worst-case"]))
def test_trajectory_replays_through_dynamics(open_cache, seed, mode):
    rec = play(OPEN, OPEN_PARAMS, PlayConfig(seed=seed, disturbance=mode), cache=open_cache)
    rows = rec.rows
    for a, b in zip(rows, rows[1:]):
        if a.u is not None:
            assert b.x == step_dynamics(a.x, a.u, a.d)
            assert b.k == a.k + 1 or b.event
        elif a.event:
            assert b.x.p == a.x.p
    assert rec.outcome is not None


def test_seed_determinism(open_cache):
    a = play(OPEN, OPEN_PARAMS, PlayConfig(seed=9), cache=open_cache)
    b = play(OPEN, OPEN_PARAMS, PlayConfig(seed=9), cache=SolveCache())
    assert record_to_csv(a) == record_to_csv(b)
    assert a.outcome == b.outcome and a.events == b.events
    ka = {k: v for k, v in a.summary().items() if "solve_time" not in k and not k.startswith("segment_")}
    kb = {k: v for k, v in b.summary().items() if "solve_time" not in k and not k.startswith("segment_")}
    assert ka == kb


def test_quasi_flavor_plays_through(open_cache):
    rec = play(OPEN, OPEN_PARAMS, PlayConfig(disturbance="none", flavor="quasi-stationary"), cache=open_cache)
    assert rec.outcome == Outcome.TERMINATED
    assert all(s.flavor == "quasi-stationary" for s in rec.segments)


def test_bad_config_is_rejected():
    with pytest.raises(ValueError):
        PlayConfig(disturbance="gusty")
    with pytest.raises(ValueError):
        PlayConfig(flavor="lazy")


# ---------------------------------------------------------------- records


def test_csv_round_trip(tmp_path, open_cache):
    rec = play(OPEN, OPEN_PARAMS, PlayConfig(seed=2), cache=open_cache)
    path = tmp_path / "traj.csv"
    write_csv(rec, path)
    assert path.read_text().splitlines()[0] == ",".join(CSV_COLUMNS)
    assert read_csv(path) == rec.rows


def test_summary_round_trip(open_cache):
    rec = play(OPEN, OPEN_PARAMS, PlayConfig(seed=2), cache=open_cache)
    summary = rec.summary()
    back = parse_summary(format_summary(summary))
    assert back == {k: str(v) for k, v in summary.items()}
    assert back["outcome"] == "terminated"
    assert int(back["steps"]) == rec.steps


# ---------------------------------------------------------------- cost-to-go


def _segment_values(rec, task, params, cache):
    out = []
    for seg in rec.segments:
        s = HybridState(seg.mode, seg.x0)
        sol = solve_with_extension(s, task, params, cache=cache, anchor=segment_anchor(s, task))
        out.append(sol.cost(seg.x0, sol.k_first))
    return out


def test_undisturbed_cost_equals_value_without_wind():
    cache = SolveCache()
    rec = play(OPEN, CALM_PARAMS, PlayConfig(disturbance="none"), cache=cache)
    assert rec.outcome == Outcome.TERMINATED
    values = _segment_values(rec, OPEN, CALM_PARAMS, cache)
    assert [s.cost for s in rec.segments] == values


def test_worst_case_replay_realises_the_value(open_cache):
    rec = play(OPEN, OPEN_PARAMS, PlayConfig(disturbance="worst-case"), cache=open_cache)
    values = _segment_values(rec, OPEN, OPEN_PARAMS, open_cache)
    assert [s.cost for s in rec.segments] == values


@settings(max_examples=5, deadline=None)
@given(seed=st.integers(0, 10**6))
def test_random_wind_cost_is_bounded_by_value(open_cache, seed):
    rec = play(OPEN, OPEN_PARAMS, PlayConfig(seed=seed), cache=open_cache)
    values = _segment_values(rec, OPEN, OPEN_PARAMS, open_cache)
    for seg, v in zip(rec.segments, values):
        assert v is not TOP and seg.cost <= v
