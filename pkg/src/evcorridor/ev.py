"""Emergency vehicle overlay: a point entity tracked on top of the cell flow.

The EV follows a fixed route of grid intersections. Its speed each step is
scaled by the density of its current cell and zeroed when the signal at the
next route intersection holds its movement red while it sits in that
intersection's final approach cell. A stopped EV occupies one vehicle worth
of space in its cell; a moving EV is massless.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .gridnet import (
    LEFT,
    Network,
    THROUGH,
    classify_turn,
    movement_phase,
)


@dataclass
class EvRoute:
    nodes: list[int]                 # K route intersections, origin first
    cells: np.ndarray                # route cells in driving order
    required_phase: np.ndarray       # canonical preemption phase per node
    alt_phase: np.ndarray            # secondary phase also passing the EV, -1 if none
    length_m: float

    @property
    def k(self) -> int:
        return len(self.nodes)


def build_route(net: Network, nodes: list[int]) -> EvRoute:
    """Assemble the route cells and per-intersection gating phases.

    The canonical preemption phase at every route intersection is the
    through phase of the EV's approach axis. Where the route turns left,
    the protected left phase of that axis also passes the EV: a priority
    vehicle takes the permitted-left gap during the through phase, and the
    protected phase serves it outright.
    """
    if len(nodes) < 2:
        raise ValueError("a route needs at least two intersections")
    cells: list[int] = []
    headings: list[int] = []
    for u, v in zip(nodes[:-1], nodes[1:]):
        try:
            li = net.link_id(u, v)
        except KeyError:
            raise ValueError(f"route nodes {u}->{v} are not grid-adjacent") from None
        cells.extend(net.link_cells(li).tolist())
        headings.append(int(net.link_head[li]))

    k = len(nodes)
    required = np.zeros(k, dtype=np.int64)
    alt = np.full(k, -1, dtype=np.int64)
    required[0] = movement_phase(headings[0], THROUGH)
    for j in range(1, k - 1):
        turn = classify_turn(headings[j - 1], headings[j])
        required[j] = movement_phase(headings[j - 1], THROUGH)
        if turn == LEFT:
            alt[j] = movement_phase(headings[j - 1], LEFT)
    required[-1] = movement_phase(headings[-1], THROUGH)

    ell = net.spec.cell_length
    return EvRoute(nodes=list(nodes), cells=np.asarray(cells, dtype=np.int64),
                   required_phase=required, alt_phase=alt,
                   length_m=len(cells) * ell)


def sample_route(net: Network, rng: np.random.Generator,
                 min_manhattan: int | None = None) -> EvRoute:
    """Uniform OD pair with Manhattan distance >= min (default max(R,C)//2),
    joined by an L-shaped shortest path with randomized leg order."""
    if min_manhattan is None:
        min_manhattan = max(net.rows, net.cols) // 2
    min_manhattan = max(min_manhattan, 1)
    pairs = []
    for o in range(net.n_nodes):
        ro, co = net.node_rc(o)
        for d in range(net.n_nodes):
            rd, cd = net.node_rc(d)
            if abs(ro - rd) + abs(co - cd) >= min_manhattan:
                pairs.append((o, d))
    if not pairs:
        raise ValueError("no admissible OD pair at this Manhattan distance")
    o, d = pairs[rng.integers(len(pairs))]
    ro, co = net.node_rc(o)
    rd, cd = net.node_rc(d)

    def col_leg(r: int, c0: int, c1: int) -> list[int]:
        stepc = 1 if c1 > c0 else -1
        return [net.node_id(r, c) for c in range(c0 + stepc, c1 + stepc, stepc)]

    def row_leg(c: int, r0: int, r1: int) -> list[int]:
        stepr = 1 if r1 > r0 else -1
        return [net.node_id(r, c) for r in range(r0 + stepr, r1 + stepr, stepr)]

    nodes = [o]
    if ro == rd:
        nodes += col_leg(ro, co, cd)
    elif co == cd:
        nodes += row_leg(co, ro, rd)
    elif rng.integers(2) == 0:      # row leg first, then column leg
        nodes += row_leg(co, ro, rd)
        nodes += col_leg(rd, co, cd)
    else:
        nodes += col_leg(ro, co, cd)
        nodes += row_leg(cd, ro, rd)
    return build_route(net, nodes)


@dataclass
class EvState:
    route: EvRoute
    pos_m: float = 0.0
    speed: float = 0.0
    arrived: bool = False
    stop_count: int = 0
    dispatch_time: float = 0.0
    arrival_time: float = float("nan")
    _last_speed: float = field(default=-1.0, repr=False)   # <0: not yet moved

    @property
    def cell_index(self) -> int:
        """Index into route.cells of the cell the EV currently occupies."""
        if self.arrived:
            return len(self.route.cells) - 1
        ell = self.route.length_m / len(self.route.cells)
        return min(int(self.pos_m // ell), len(self.route.cells) - 1)

    @property
    def cell(self) -> int:
        return int(self.route.cells[self.cell_index])


def ev_speed(n: float, n_max: float, gate_green: bool, v_f: float) -> float:
    """Congestion- and signal-scaled EV speed."""
    if not gate_green:
        return 0.0
    return v_f * min(1.0, max(0.0, 1.0 - n / n_max))


def _governing_gate(net: Network, ev: EvState, phases: np.ndarray) -> bool:
    """Green flag for the EV; only binding in a final approach cell."""
    L = net.cells_per_link
    idx = ev.cell_index
    if (idx + 1) % L != 0:
        return True
    node_pos = (idx + 1) // L       # approaching route node index node_pos
    node = ev.route.nodes[node_pos]
    shown = int(phases[node])
    return shown == int(ev.route.required_phase[node_pos]) \
        or shown == int(ev.route.alt_phase[node_pos])


def ev_step(net: Network, ev: EvState, n_cells: np.ndarray,
            phases: np.ndarray, t: int) -> float:
    """Advance the EV one timestep; returns the distance travelled (m).

    ``n_cells`` is the background vehicle count array before the traffic
    update for this step.
    """
    if ev.arrived:
        return 0.0
    spec = net.spec
    green = _governing_gate(net, ev, phases)
    v = ev_speed(float(n_cells[ev.cell]), net.n_max, green, spec.v_f)
    before = ev.pos_m
    ev.pos_m = min(ev.pos_m + v * spec.dt, ev.route.length_m)
    moved = ev.pos_m - before

    if v <= 0.0 and ev._last_speed != 0.0:
        ev.stop_count += 1
    ev._last_speed = v
    ev.speed = v
    if ev.pos_m >= ev.route.length_m:
        ev.arrived = True
        ev.arrival_time = (t + 1) * spec.dt
    return moved


def ev_features(net: Network, ev: EvState) -> dict[str, np.ndarray]:
    """Per-route-intersection EV features.

    delta: remaining distance to the intersection normalized by the distance
    from the origin (1.0 at dispatch, 0.0 once passed). arrival_flag: EV
    within H=3 cells upstream and not yet past. speed_frac: v / v_f.
    """
    route = ev.route
    ell = net.spec.cell_length
    L = net.cells_per_link
    k = route.k
    delta = np.zeros(k, dtype=np.float64)
    flags = np.zeros(k, dtype=bool)
    horizon = 3 * ell
    for j in range(k):
        dist_from_origin = j * L * ell
        if dist_from_origin <= 0.0:
            delta[j] = 0.0 if ev.pos_m >= 0.0 else 1.0
            continue
        remaining = dist_from_origin - ev.pos_m
        delta[j] = min(max(remaining / dist_from_origin, 0.0), 1.0)
        flags[j] = 0.0 < remaining <= horizon
    speed_frac = np.full(k, ev.speed / net.spec.v_f)
    return {"delta": delta, "arrival_flag": flags, "speed_frac": speed_frac}
