"""Scene schematics as standalone SVG files.

Two views are drawn, top-down ``(x, y)`` and side ``(x, z)``, each showing
the obstacles, the route, the goal cuboids of the segments and up to two
trajectories: the undisturbed reference (solid blue) and a disturbed play
(dashed red). Trajectories are read back from the play CSV, so rendering the
same files twice yields byte-identical output.
"""

from __future__ import annotations

from pathlib import Path
from typing import Optional, Sequence

from .model import Box, HybridState, Mode, StateVec, Task, ZERO, compute_scope, GameParams
from .player import read_csv

REFERENCE_STYLE = 'fill="none" stroke="#1f4fd1" stroke-width="2"'
DISTURBED_STYLE = 'fill="none" stroke="#d62728" stroke-width="1.5" stroke-dasharray="5,3"'
ROUTE_STYLE = 'fill="none" stroke="#444444" stroke-width="1" stroke-dasharray="2,2"'
GOAL_STYLE = 'fill="#2ca02c" fill-opacity="0.12" stroke="#2ca02c" stroke-width="1"'
OBSTACLE_STYLE = 'fill="#7f7f7f"'

VIEWS = {"top": (0, 1), "side": (0, 2)}


def goal_boxes(task: Task, params: Optional[GameParams] = None) -> list[Box]:
    """Position goal of each modal game along the undisturbed mode sequence."""
    params = params or GameParams()
    n = len(task.route)
    out = []
    for i in range(2, n + 1):
        if i == 2:
            q = Mode.DEPART
        elif i == n:
            q = Mode.ARRIVE
        else:
            q = Mode.CRUISE
        s = HybridState(q, StateVec(task.waypoint(i - 1), ZERO, i))
        if q == Mode.ARRIVE:
            col = compute_scope(s, task, params).positions
            out.append(Box(col.lower[:2] + (0,), col.upper[:2] + (0,)))
        else:
            nxt = HybridState(Mode.ARRIVE if i + 1 == n else Mode.CRUISE, StateVec(task.waypoint(i), ZERO, i + 1))
            out.append(compute_scope(nxt, task, params).positions)
    return out


def _projected_runs(cells, a: int, b: int) -> list[tuple[int, int, int]]:
    """Obstacle cells projected on axes ``(a, b)`` merged into horizontal
    runs ``(b_value, a_start, a_end)``."""
    proj = sorted({(c[b], c[a]) for c in cells})
    runs = []
    for vb, va in proj:
        if runs and runs[-1][0] == vb and runs[-1][2] == va - 1:
            runs[-1][2] = va
        else:
            runs.append([vb, va, va])
    return [tuple(r) for r in runs]


def render_svg(
    task: Task,
    view: str = "top",
    reference: Optional[Sequence] = None,
    disturbed: Optional[Sequence] = None,
    params: Optional[GameParams] = None,
    title: str = "",
) -> str:
    """SVG text for one view; trajectories are sequences of positions."""
    a, b = VIEWS[view]
    lo, hi = task.grid.lower, task.grid.upper
    wa, wb = hi[a] - lo[a] + 1, hi[b] - lo[b] + 1
    scale = max(2, min(16, 800 // max(wa, wb)))
    margin = 20
    width, height = wa * scale + 2 * margin, wb * scale + 2 * margin + 16

    def X(va) -> float:
        return margin + (va - lo[a]) * scale

    def Y(vb) -> float:
        # SVG y grows downwards
        return margin + 16 + (hi[b] - vb) * scale

    def centre(p) -> str:
        return f"{X(p[a]) + scale / 2:.1f},{Y(p[b]) + scale / 2:.1f}"

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<rect x="{margin}" y="{margin + 16}" width="{wa * scale}" height="{wb * scale}" '
        'fill="none" stroke="black" stroke-width="1"/>',
    ]
    label = title or f"{view} view ({'xyz'[a]}, {'xyz'[b]})"
    out.append(f'<text x="{margin}" y="{margin}" font-family="sans-serif" font-size="12">{_escape(label)}</text>')
    out.append('<g id="obstacles">')
    for vb, a0, a1 in _projected_runs(task.obstacles, a, b):
        out.append(
            f'<rect x="{X(a0)}" y="{Y(vb)}" width="{(a1 - a0 + 1) * scale}" height="{scale}" {OBSTACLE_STYLE}/>'
        )
    out.append("</g>")
    out.append('<g id="goals">')
    for box in goal_boxes(task, params):
        out.append(
            f'<rect x="{X(box.lower[a])}" y="{Y(box.upper[b])}" '
            f'width="{(box.upper[a] - box.lower[a] + 1) * scale}" '
            f'height="{(box.upper[b] - box.lower[b] + 1) * scale}" {GOAL_STYLE}/>'
        )
    out.append("</g>")
    pts = " ".join(centre(p) for p in task.route)
    out.append(f'<polyline id="route" points="{pts}" {ROUTE_STYLE}/>')
    for j, p in enumerate(task.route, start=1):
        cx, cy = centre(p).split(",")
        out.append(f'<circle cx="{cx}" cy="{cy}" r="3" fill="#444444"/>')
        out.append(
            f'<text x="{float(cx) + 4:.1f}" y="{float(cy) - 4:.1f}" font-family="sans-serif" '
            f'font-size="10">p{j}</text>'
        )
    for name, traj, style in (("reference", reference, REFERENCE_STYLE), ("disturbed", disturbed, DISTURBED_STYLE)):
        if traj:
            pts = " ".join(centre(p) for p in traj)
            out.append(f'<polyline id="{name}" points="{pts}" {style}/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _escape(text: str) -> str:
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def positions_from_csv(path) -> list[tuple[int, int, int]]:
    return [tuple(r.x.p) for r in read_csv(path)]


def plot_play(
    task: Task,
    out_dir,
    reference_csv=None,
    disturbed_csv=None,
    params: Optional[GameParams] = None,
    stem: str = "play",
) -> list[Path]:
    """Write ``<stem>_top.svg`` and ``<stem>_side.svg`` from trajectory CSVs."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ref = positions_from_csv(reference_csv) if reference_csv else None
    dist = positions_from_csv(disturbed_csv) if disturbed_csv else None
    paths = []
    for view in VIEWS:
        path = out_dir / f"{stem}_{view}.svg"
        path.write_text(render_svg(task, view, ref, dist, params))
        paths.append(path)
    return paths


def max_deviation(reference: Sequence, disturbed: Sequence) -> int:
    """Largest Chebyshev distance from a disturbed position to the nearest
    reference position."""
    if not reference or not disturbed:
        return 0
    return max(min(max(abs(p[j] - q[j]) for j in range(3)) for q in reference) for p in disturbed)
