import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from helpers import monotonicity_violations  # noqa: E402
from reachavoid import solver  # noqa: E402
from reachavoid.scenarios import builtin_params, builtin_scenario  # noqa: E402
from reachavoid.solver import SolveCache  # noqa: E402

AUDIT = {"solutions": 0, "violations": []}


def _audit(sol):
    AUDIT["solutions"] += 1
    bad = monotonicity_violations(sol)
    if bad:
        AUDIT["violations"].extend(bad)
        raise AssertionError("monotonicity violated: " + "; ".join(bad))


@pytest.fixture(autouse=True, scope="session")
def monotonicity_audit():
    """Every solve_ddp call in the suite is checked for monotone winning
    regions and monotone finiteness."""
    solver.SOLVE_OBSERVERS.append(_audit)
    yield AUDIT
    solver.SOLVE_OBSERVERS.remove(_audit)


@pytest.fixture(scope="session")
def mini_yard():
    return builtin_scenario("mini-yard"), builtin_params("mini-yard")


@pytest.fixture(scope="session")
def mini_cache():
    return SolveCache()


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        terminalreporter.write_line(results[n])
    missing = [n for n in range(1, 10) if n not in results]
    if missing:
        terminalreporter.write_line(f"not run: {missing}")
