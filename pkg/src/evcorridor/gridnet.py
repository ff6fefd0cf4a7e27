"""Grid network construction and cell-transmission traffic dynamics.

Roads are discretized into cells of length ``v_f * dt`` so that free-flow
traffic crosses exactly one cell per step. All flows are computed in cell
units (free-flow speed == 1 cell/step), which reproduces the usual
fundamental-diagram constants: with the default 75 m cells a cell holds at
most 11 vehicles and passes at most 3 per step.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

P_PHASES = 4
PHASE_NS_THROUGH = 0
PHASE_NS_LEFT = 1
PHASE_EW_THROUGH = 2
PHASE_EW_LEFT = 3

PHASE_NAMES = ("NS-through", "NS-left", "EW-through", "EW-left")

# Headings are directions of travel on a link. Row index grows southward.
NORTH, SOUTH, EAST, WEST = 0, 1, 2, 3
_HEADING_DELTA = {NORTH: (-1, 0), SOUTH: (1, 0), EAST: (0, 1), WEST: (0, -1)}
_LEFT_OF = {NORTH: WEST, WEST: SOUTH, SOUTH: EAST, EAST: NORTH}
_RIGHT_OF = {NORTH: EAST, EAST: SOUTH, SOUTH: WEST, WEST: NORTH}

THROUGH, LEFT, RIGHT = 0, 1, 2


def movement_phase(heading: int, turn: int) -> int:
    """Phase id that permits a movement (right turns ride the through phase)."""
    ns = heading in (NORTH, SOUTH)
    if turn == LEFT:
        return PHASE_NS_LEFT if ns else PHASE_EW_LEFT
    return PHASE_NS_THROUGH if ns else PHASE_EW_THROUGH


def classify_turn(heading_in: int, heading_out: int) -> int:
    if heading_in == heading_out:
        return THROUGH
    if _LEFT_OF[heading_in] == heading_out:
        return LEFT
    if _RIGHT_OF[heading_in] == heading_out:
        return RIGHT
    raise ValueError("U-turns are not modelled")


@dataclass(frozen=True)
class GridSpec:
    """Static description of a rectangular grid scenario."""

    rows: int = 4
    cols: int = 4
    link_length: float = 300.0      # m
    v_f: float = 15.0               # m/s
    w: float = 5.0                  # m/s
    k_jam: float = 0.15             # veh/m
    dt: float = 5.0                 # s
    entry_demand: float = 0.10      # veh/s per entry cell
    turn_ratios: tuple[float, float, float] = (0.6, 0.2, 0.2)  # through, left, right

    @property
    def cell_length(self) -> float:
        return self.v_f * self.dt

    def validate(self) -> None:
        for name in ("rows", "cols"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        for name in ("link_length", "v_f", "w", "k_jam", "dt"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be strictly positive")
        if self.entry_demand < 0:
            raise ValueError("entry_demand must be >= 0")
        if self.rows == 1 and self.cols == 1:
            raise ValueError("grid needs at least two intersections")
        ell = self.cell_length
        ratio = self.link_length / ell
        if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
            raise ValueError(
                f"cell length {ell} m does not divide link length {self.link_length} m"
            )
        if ell < max(self.v_f, self.w) * self.dt - 1e-9:
            raise ValueError(
                f"CFL violation: cell length {ell} < max(v_f, w)*dt "
                f"= {max(self.v_f, self.w) * self.dt}"
            )
        if abs(sum(self.turn_ratios) - 1.0) > 1e-9 or min(self.turn_ratios) < 0:
            raise ValueError("turn ratios must be non-negative and sum to 1")


@dataclass(frozen=True)
class DerivedParams:
    n_max: int
    q_max_per_step: int
    cells_per_link: int


def derive_params(spec: GridSpec) -> DerivedParams:
    """Cell capacity and per-step capacity from the triangular fundamental diagram."""
    spec.validate()
    ell = spec.cell_length
    n_max = round(spec.k_jam * ell)
    q_max = round(spec.v_f * spec.w * spec.k_jam / (spec.v_f + spec.w) * spec.dt)
    return DerivedParams(
        n_max=int(n_max),
        q_max_per_step=int(q_max),
        cells_per_link=int(round(spec.link_length / ell)),
    )


@dataclass
class TrafficState:
    """Mutable per-episode traffic state. One writer at a time."""

    n: np.ndarray                   # vehicles per cell, float64
    injected: float = 0.0
    exited: float = 0.0
    dropped: float = 0.0


@dataclass
class StepOutcome:
    exited: float
    injected: float
    dropped: float
    delay_veh_s: float              # sum_i n_i (1 - v_i/v_f) dt over this step
    delay_per_node: np.ndarray      # same quantity attributed to approach nodes
    delay_per_cell: np.ndarray      # veh*s per cell this step


class Network:
    """Compiled grid network: immutable topology plus vectorized step kernels."""

    def __init__(self, spec: GridSpec):
        spec.validate()
        self.spec = spec
        self.params = derive_params(spec)
        self.rows, self.cols = spec.rows, spec.cols
        self.n_nodes = spec.rows * spec.cols
        self.cells_per_link = self.params.cells_per_link
        self.n_max = float(self.params.n_max)
        self.q_max = float(self.params.q_max_per_step)
        self.w_norm = spec.w / spec.v_f          # cells/step

        self._build_topology()
        self._build_kernels()

    # -- topology ---------------------------------------------------------

    def node_id(self, r: int, c: int) -> int:
        return r * self.cols + c

    def node_rc(self, node: int) -> tuple[int, int]:
        return divmod(node, self.cols)

    def is_boundary(self, node: int) -> bool:
        r, c = self.node_rc(node)
        return r in (0, self.rows - 1) or c in (0, self.cols - 1)

    def _build_topology(self) -> None:
        L = self.cells_per_link
        link_from, link_to, link_head = [], [], []
        self._link_index: dict[tuple[int, int], int] = {}
        for r in range(self.rows):
            for c in range(self.cols):
                u = self.node_id(r, c)
                for head, (dr, dc) in _HEADING_DELTA.items():
                    r2, c2 = r + dr, c + dc
                    if 0 <= r2 < self.rows and 0 <= c2 < self.cols:
                        v = self.node_id(r2, c2)
                        self._link_index[(u, v)] = len(link_from)
                        link_from.append(u)
                        link_to.append(v)
                        link_head.append(head)
        self.n_links = len(link_from)
        self.link_from = np.asarray(link_from, dtype=np.int64)
        self.link_to = np.asarray(link_to, dtype=np.int64)
        self.link_head = np.asarray(link_head, dtype=np.int64)
        self.n_cells = self.n_links * L

        self.link_first_cell = np.arange(self.n_links, dtype=np.int64) * L
        self.link_last_cell = self.link_first_cell + L - 1

        # cell -> node the cell's link leads to (for delay attribution)
        self.cell_to_node = np.repeat(self.link_to, L)

        # incoming link per node per compass side: side is where traffic
        # comes FROM, so the north-side approach travels south.
        side_of_heading = {SOUTH: 0, NORTH: 1, WEST: 2, EAST: 3}   # N, S, E, W slots
        self.approach_link = np.full((self.n_nodes, 4), -1, dtype=np.int64)
        for li in range(self.n_links):
            slot = side_of_heading[link_head[li]]
            self.approach_link[link_to[li], slot] = li

        # symmetric 1-hop adjacency over intersections
        adj = [set() for _ in range(self.n_nodes)]
        for li in range(self.n_links):
            adj[link_from[li]].add(link_to[li])
            adj[link_to[li]].add(link_from[li])
        self.adjacency = [sorted(s) for s in adj]

    def link_id(self, u: int, v: int) -> int:
        return self._link_index[(u, v)]

    def link_cells(self, li: int) -> np.ndarray:
        L = self.cells_per_link
        return np.arange(li * L, (li + 1) * L, dtype=np.int64)

    # -- kernels ----------------------------------------------------------

    def _build_kernels(self) -> None:
        L = self.cells_per_link
        # within-link cell pairs (up, up+1)
        ups = []
        for li in range(self.n_links):
            ups.extend(range(li * L, (li + 1) * L - 1))
        self.pair_up = np.asarray(ups, dtype=np.int64)
        self.pair_down = self.pair_up + 1

        # movements: from every link's last cell across its end node
        t_ratio, l_ratio, r_ratio = self.spec.turn_ratios
        ratio_of = {THROUGH: t_ratio, LEFT: l_ratio, RIGHT: r_ratio}
        mv_from, mv_to, mv_node, mv_phase, mv_ratio, mv_turn = [], [], [], [], [], []
        for li in range(self.n_links):
            node = int(self.link_to[li])
            h_in = int(self.link_head[li])
            r, c = self.node_rc(node)
            for turn in (THROUGH, LEFT, RIGHT):
                h_out = h_in if turn == THROUGH else (
                    _LEFT_OF[h_in] if turn == LEFT else _RIGHT_OF[h_in])
                dr, dc = _HEADING_DELTA[h_out]
                r2, c2 = r + dr, c + dc
                if 0 <= r2 < self.rows and 0 <= c2 < self.cols:
                    to_cell = int(self.link_first_cell[self.link_id(node, self.node_id(r2, c2))])
                else:
                    to_cell = -1    # leaves the network
                mv_from.append(int(self.link_last_cell[li]))
                mv_to.append(to_cell)
                mv_node.append(node)
                mv_phase.append(movement_phase(h_in, turn))
                mv_ratio.append(ratio_of[turn])
                mv_turn.append(turn)
        self.mv_from = np.asarray(mv_from, dtype=np.int64)
        self.mv_to = np.asarray(mv_to, dtype=np.int64)
        self.mv_node = np.asarray(mv_node, dtype=np.int64)
        self.mv_phase = np.asarray(mv_phase, dtype=np.int64)
        self.mv_ratio = np.asarray(mv_ratio, dtype=np.float64)
        self.mv_is_exit = self.mv_to < 0
        self.mv_to_safe = np.where(self.mv_is_exit, 0, self.mv_to)
        self.n_movements = len(mv_from)

        # demand enters at the first cell of every link leaving a boundary node
        # every link leaving a boundary node takes outside demand at its
        # first cell; each such entry point draws its own Poisson arrivals
        entry = [int(self.link_first_cell[li]) for li in range(self.n_links)
                 if self.is_boundary(int(self.link_from[li]))]
        self.entry_cells = np.asarray(sorted(entry), dtype=np.int64)
        exits = sorted({int(self.mv_from[i]) for i in range(self.n_movements)
                        if self.mv_is_exit[i]})
        self.exit_cells = np.asarray(exits, dtype=np.int64)

        # flat approach arrays for vectorized queue computation
        app_node, app_cell, app_is_ns = [], [], []
        for node in range(self.n_nodes):
            for slot in range(4):
                li = self.approach_link[node, slot]
                if li < 0:
                    continue
                app_node.append(node)
                app_cell.append(int(self.link_last_cell[li]))
                app_is_ns.append(int(self.link_head[li]) in (NORTH, SOUTH))
        self.app_node = np.asarray(app_node, dtype=np.int64)
        self.app_cell = np.asarray(app_cell, dtype=np.int64)
        self.app_is_ns = np.asarray(app_is_ns, dtype=bool)

    # -- dynamics ---------------------------------------------------------

    def empty_state(self) -> TrafficState:
        return TrafficState(n=np.zeros(self.n_cells, dtype=np.float64))

    def step(
        self,
        state: TrafficState,
        phases: np.ndarray,
        rng: np.random.Generator | None = None,
        demand_rate: float | None = None,
        ev_cell: int = -1,
        ev_stopped: bool = False,
    ) -> StepOutcome:
        """Advance the traffic state one timestep under the given signal phases.

        A stopped emergency vehicle occupies space in its cell (reduces the
        cell's supply and shows up in observed densities) but its unit of
        mass is tracked outside ``state.n`` so vehicle conservation applies
        to background traffic alone.
        """
        n = state.n
        if ev_stopped and ev_cell >= 0:
            occ = n.copy()
            occ[ev_cell] += 1.0
        else:
            occ = n

        demand = np.minimum(n, self.q_max)
        supply = np.minimum(self.w_norm * (self.n_max - occ), self.q_max)
        np.maximum(supply, 0.0, out=supply)

        q_link = np.minimum(demand[self.pair_up], supply[self.pair_down])

        open_mv = phases[self.mv_node] == self.mv_phase
        req = demand[self.mv_from] * self.mv_ratio * open_mv

        # receiving cells ration competing movements proportionally
        tot_req = np.zeros(self.n_cells, dtype=np.float64)
        np.add.at(tot_req, self.mv_to_safe, np.where(self.mv_is_exit, 0.0, req))
        with np.errstate(divide="ignore", invalid="ignore"):
            cell_scale = np.where(tot_req > 0.0,
                                  np.minimum(1.0, supply / np.maximum(tot_req, 1e-300)),
                                  1.0)
        mv_scale = np.where(self.mv_is_exit, 1.0, cell_scale[self.mv_to_safe])
        flow_mv = req * mv_scale

        outflow = np.zeros(self.n_cells, dtype=np.float64)
        inflow = np.zeros(self.n_cells, dtype=np.float64)
        outflow[self.pair_up] = q_link
        inflow[self.pair_down] = q_link
        np.add.at(outflow, self.mv_from, flow_mv)
        np.add.at(inflow, self.mv_to_safe, np.where(self.mv_is_exit, 0.0, flow_mv))
        exited = float(flow_mv[self.mv_is_exit].sum())

        # realized speed v_i = outflow * ell / (n_i dt); empty cells are free-flow
        delay_veh = n - outflow
        delay_per_node = np.bincount(self.cell_to_node, weights=delay_veh,
                                     minlength=self.n_nodes)
        delay_veh_s = float(delay_veh.sum()) * self.spec.dt
        delay_per_node = delay_per_node * self.spec.dt

        n += inflow - outflow

        injected = 0.0
        dropped = 0.0
        rate = self.spec.entry_demand if demand_rate is None else demand_rate
        if rng is not None and rate > 0.0 and len(self.entry_cells) > 0:
            lam = rate * self.spec.dt
            arrivals = rng.poisson(lam, size=len(self.entry_cells))
            arrivals = arrivals.astype(np.float64)
            space = np.maximum(self.n_max - n[self.entry_cells], 0.0)
            inj = np.minimum(arrivals, space)
            n[self.entry_cells] += inj
            injected = float(inj.sum())
            dropped = float(arrivals.sum() - inj.sum())

        state.exited += exited
        state.injected += injected
        state.dropped += dropped
        return StepOutcome(exited=exited, injected=injected, dropped=dropped,
                           delay_veh_s=delay_veh_s,
                           delay_per_node=delay_per_node,
                           delay_per_cell=delay_veh * self.spec.dt)

    # -- observations helpers ----------------------------------------------

    def approach_last_cells(self, node: int) -> np.ndarray:
        """Nearest upstream cell per compass approach (N, S, E, W); -1 if absent."""
        links = self.approach_link[node]
        return np.where(links >= 0, self.link_last_cell[np.maximum(links, 0)], -1)

    def queue_lengths(self, state: TrafficState, phases: np.ndarray) -> np.ndarray:
        """Per-intersection queues: vehicles in the nearest upstream cell of
        each red approach. An approach is red when the active phase permits
        none of its movements, i.e. when the phase belongs to the other axis.
        """
        phase_is_ns = phases < 2
        green = phase_is_ns[self.app_node] == self.app_is_ns
        held = state.n[self.app_cell] * (~green)
        return np.bincount(self.app_node, weights=held, minlength=self.n_nodes)

    def queue_length(self, state: TrafficState, node: int,
                     phases: np.ndarray) -> float:
        return float(self.queue_lengths(state, phases)[node])


def build_grid(spec: GridSpec) -> Network:
    """Compile a grid spec into a network with all cells empty."""
    return Network(spec)


def cell_flow(n_up: float, n_down: float, n_max: float, q_max: float,
              gate_open: bool, w_over_vf: float = 1.0 / 3.0) -> float:
    """Godunov flux between two cells in cell units (v_f == 1 cell/step)."""
    if not gate_open:
        return 0.0
    demand = min(n_up, q_max)
    supply = min(w_over_vf * (n_max - n_down), q_max)
    return max(0.0, min(demand, supply))


# -- plain-text config loading ------------------------------------------------

_KEY_MAP = {
    "rows": ("rows", int),
    "cols": ("cols", int),
    "link_length_m": ("link_length", float),
    "v_f": ("v_f", float),
    "w": ("w", float),
    "k_jam": ("k_jam", float),
    "dt_s": ("dt", float),
    "demand_veh_s": ("entry_demand", float),
}


def load_grid_config(path: str | Path) -> tuple[GridSpec, dict]:
    """Read a ``key = value`` grid config file.

    Recognized keys: rows, cols, link_length_m, v_f, w, k_jam, dt_s,
    demand_veh_s, turn_straight, turn_left, turn_right, seed. Unknown keys
    are returned in the extras dict so callers can layer their own options.
    """
    values: dict[str, str] = {}
    for raw in Path(path).read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"bad config line: {raw!r}")
        key, val = (part.strip() for part in line.split("=", 1))
        values[key] = val

    kwargs: dict = {}
    extras: dict = {}
    turns = {}
    for key, val in values.items():
        if key in _KEY_MAP:
            name, cast = _KEY_MAP[key]
            kwargs[name] = cast(val)
        elif key in ("turn_straight", "turn_left", "turn_right"):
            turns[key] = float(val)
        elif key == "seed":
            extras["seed"] = int(val)
        else:
            extras[key] = val
    if turns:
        kwargs["turn_ratios"] = (
            turns.get("turn_straight", 0.6),
            turns.get("turn_left", 0.2),
            turns.get("turn_right", 0.2),
        )
    spec = GridSpec(**kwargs)
    spec.validate()
    return spec, extras
