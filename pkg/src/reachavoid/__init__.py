"""Robust reach-avoid control of a grid-bound aerial vehicle.

Step-shielded discrete dynamic programming over modal games of a hybrid
game automaton, a hybrid game player with a semi-Markov wind adversary,
scenario tooling and slow reference oracles for cross-checking.
"""

from .model import (
    GRAVITY,
    TOP,
    ZERO,
    Box,
    DegenerateScope,
    Event,
    GameParams,
    GridVec,
    HybridState,
    ModalGame,
    Mode,
    Scope,
    StateVec,
    Task,
    apply_jump,
    build_modal_game,
    compute_scope,
    cube_vectors,
    enabled_events,
    goal_region,
    horizontal_wind,
    initial_state,
    stage_cost,
    step_dynamics,
    terminal_cost,
    unsafe_static,
)
from .solver import (
    OutOfDomain,
    Solution,
    Unsolvable,
    bellman_backup,
    fp_ddp,
    fp_u,
    policy_action,
    quasi_stationary,
    solve_ddp,
    solve_with_extension,
    winning_region,
)

__version__ = "0.1.0"
