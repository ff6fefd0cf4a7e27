"""Episode environment: observations, joint phase actions, reward and cost.

One environment instance owns one episode at a time; reset() rebuilds the
traffic state, warms up background flow under the fixed-time schedule,
samples an EV route, and dispatches the EV at t = 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .ev import EvState, build_route, ev_features, ev_step, sample_route
from .gridnet import GridSpec, Network, P_PHASES

FT_STEPS_PER_PHASE = 4          # 20 s per phase at dt = 5 s


@dataclass(frozen=True)
class RewardWeights:
    alpha: float = 1.0          # per meter of EV progress
    beta: float = 0.01          # per queued vehicle per step
    lam: float = 10.0           # terminal arrival bonus


@dataclass(frozen=True)
class Scenario:
    spec: GridSpec = field(default_factory=GridSpec)
    warmup_steps: int = 60
    t_max: int = 200
    metrics_horizon_steps: int = 90   # fixed civilian-impact window
    min_manhattan: int | None = None
    weights: RewardWeights = field(default_factory=RewardWeights)

    def with_demand(self, rate: float) -> "Scenario":
        return replace(self, spec=replace(self.spec, entry_demand=rate))


@dataclass
class StepResult:
    obs: np.ndarray
    reward: float
    cost: float
    done: bool
    info: dict


def fixed_time_phase(t: int) -> int:
    """Round-robin background schedule, FT_STEPS_PER_PHASE steps per phase."""
    return (t // FT_STEPS_PER_PHASE) % P_PHASES


class CorridorEnv:
    """Signal-control MDP over the corridor intersections of a sampled route.

    Observations are route-ordered blocks, one per corridor intersection:
    [phase one-hot (4), incoming densities N/S/E/W (4), EV distance, t/T_max],
    padded with zero blocks up to the grid's maximum corridor length so the
    vector length is fixed per grid (70 for a 4x4 grid).
    """

    def __init__(self, scenario: Scenario):
        scenario.spec.validate()
        self.scenario = scenario
        self.net = Network(scenario.spec)
        self.k_max = scenario.spec.rows + scenario.spec.cols - 1
        self.block_dim = P_PHASES + 6
        self.obs_dim = self.k_max * self.block_dim
        self.weights = scenario.weights
        self.t_max = scenario.t_max
        self._episode_active = False

    # -- lifecycle ----------------------------------------------------------

    def reset(self, seed: int, route_nodes: list[int] | None = None) -> np.ndarray:
        self.rng = np.random.default_rng(seed)
        self.state = self.net.empty_state()
        warm = self.scenario.warmup_steps
        for i in range(warm):
            phases = np.full(self.net.n_nodes, fixed_time_phase(i), dtype=np.int64)
            self.net.step(self.state, phases, self.rng)
        # episode accounting starts at dispatch
        self.state.injected = self.state.exited = self.state.dropped = 0.0
        self._initial_total = float(self.state.n.sum())

        if route_nodes is not None:
            self.route = build_route(self.net, route_nodes)
        else:
            self.route = sample_route(self.net, self.rng,
                                      self.scenario.min_manhattan)
        if self.route.k > self.k_max:
            raise ValueError("route longer than the grid's maximum corridor")
        self.ev = EvState(route=self.route)
        self.t = 0
        self._episode_active = True
        self._corridor_nodes = np.asarray(self.route.nodes, dtype=np.int64)
        self._app_cells = np.stack(
            [self.net.approach_last_cells(v) for v in self.route.nodes])
        # the dispatch notification arms the corridor: at t = 0 each route
        # intersection already displays its EV-compatible phase (controllers
        # still override from the first step onward)
        self._phases = np.full(self.net.n_nodes, fixed_time_phase(warm),
                               dtype=np.int64)
        self._phases[self._corridor_nodes] = self.route.required_phase
        self.total_delay_veh_s = 0.0
        self.cross_delay_veh_s = 0.0      # delay off the EV's route links
        self.delay_per_node = np.zeros(self.net.n_nodes, dtype=np.float64)
        self._route_cell_mask = np.zeros(self.net.n_cells, dtype=bool)
        self._route_cell_mask[self.route.cells] = True
        self.trace: list[dict] = []
        self.delay_trace: list[dict] = []
        self._reward_sum = 0.0
        return self._observe()

    @property
    def done(self) -> bool:
        return not self._episode_active

    def anchor_return(self) -> float:
        """Return of an ideal zero-queue free-flow episode for this route."""
        return self.weights.alpha * self.route.length_m + self.weights.lam

    # -- stepping -----------------------------------------------------------

    def step(self, action: np.ndarray) -> StepResult:
        if not self._episode_active:
            raise RuntimeError("episode finished; call reset()")
        action = np.asarray(action, dtype=np.int64)
        if action.shape != (self.k_max,):
            raise ValueError(f"action must have shape ({self.k_max},)")
        if action.min() < 0 or action.max() >= P_PHASES:
            raise ValueError("phase ids must be in 0..3")

        sched = fixed_time_phase(self.t + self.scenario.warmup_steps)
        phases = np.full(self.net.n_nodes, sched, dtype=np.int64)
        phases[self._corridor_nodes] = action[: self.route.k]
        self._phases = phases

        was_arrived = self.ev.arrived
        pos_before = self.ev.pos_m
        moved = ev_step(self.net, self.ev, self.state.n, phases, self.t)
        ev_stopped = (not self.ev.arrived) and self.ev.speed == 0.0
        outcome = self.net.step(
            self.state, phases, self.rng,
            ev_cell=self.ev.cell, ev_stopped=ev_stopped)

        queues = self.net.queue_lengths(self.state, phases)
        cost = float(queues.sum())
        arrived_now = self.ev.arrived and not was_arrived
        reward = (self.weights.alpha * moved
                  - self.weights.beta * cost
                  + (self.weights.lam if arrived_now else 0.0))

        self.total_delay_veh_s += outcome.delay_veh_s
        cross = float(outcome.delay_per_cell[~self._route_cell_mask].sum())
        self.cross_delay_veh_s += cross
        self.delay_per_node += outcome.delay_per_node
        self.delay_trace.append(
            {"t": self.t, "delay_veh_s": outcome.delay_veh_s,
             "cross_delay_veh_s": cross,
             "exited": outcome.exited, "cooldown": False})
        self._reward_sum += reward

        self.t += 1
        done = self.ev.arrived or self.t > self.t_max
        self._episode_active = not done

        info = {
            "t": self.t - 1,
            "exited": outcome.exited,
            "injected": outcome.injected,
            "dropped": outcome.dropped,
            "delay_veh_s": outcome.delay_veh_s,
            "ev_pos_m": self.ev.pos_m,
            "ev_speed": self.ev.speed,
            "ev_arrived": self.ev.arrived,
            "queues": queues,
            "arrived_now": arrived_now,
        }
        self.trace.append({
            "t": self.t - 1,
            "action": action[: self.route.k].tolist(),
            "reward": reward,
            "cost": cost,
            "ev_pos_m": self.ev.pos_m,
            "ev_pos_pre_m": pos_before,
            "ev_speed": self.ev.speed,
            "queues": queues.tolist(),
            "phases": phases[self._corridor_nodes].tolist(),
            "exited": outcome.exited,
            "ev_green": [int(phases[v]) in (int(p), int(a)) for v, p, a in
                         zip(self.route.nodes, self.route.required_phase,
                             self.route.alt_phase)],
        })
        return StepResult(obs=self._observe(), reward=reward, cost=cost,
                          done=done, info=info)

    # -- views --------------------------------------------------------------

    def _observe(self) -> np.ndarray:
        obs = np.zeros(self.obs_dim, dtype=np.float64)
        k = self.route.k
        n_max = self.net.n_max
        occ = self.state.n
        ev_extra = 1.0 if ((not self.ev.arrived) and self.ev.speed == 0.0
                           and self.t > 0) else 0.0
        feats = ev_features(self.net, self.ev)
        tbar = min(self.t / self.t_max, 1.0)
        blocks = obs.reshape(self.k_max, self.block_dim)
        for j in range(k):
            node = self.route.nodes[j]
            blocks[j, int(self._phases[node])] = 1.0
            cells = self._app_cells[j]
            for slot in range(4):
                ci = cells[slot]
                if ci >= 0:
                    dens = occ[ci]
                    if ev_extra and ci == self.ev.cell:
                        dens = dens + ev_extra
                    blocks[j, P_PHASES + slot] = min(dens / n_max, 1.0)
            blocks[j, P_PHASES + 4] = feats["delta"][j]
            blocks[j, P_PHASES + 5] = tbar
        return obs

    def agent_obs(self) -> np.ndarray:
        """Per-intersection local blocks (n_nodes, 10) for multi-agent models.

        Same layout as a corridor block; off-route intersections carry
        delta = 0 (no EV bound for them).
        """
        a = self.net.n_nodes
        out = np.zeros((a, self.block_dim), dtype=np.float64)
        occ = self.state.n
        n_max = self.net.n_max
        ev_extra = 1.0 if ((not self.ev.arrived) and self.ev.speed == 0.0
                           and self.t > 0) else 0.0
        feats = ev_features(self.net, self.ev)
        tbar = min(self.t / self.t_max, 1.0)
        for node in range(a):
            out[node, int(self._phases[node])] = 1.0
            for slot in range(4):
                li = self.net.approach_link[node, slot]
                if li < 0:
                    continue
                ci = int(self.net.link_last_cell[li])
                dens = occ[ci]
                if ev_extra and ci == self.ev.cell:
                    dens = dens + ev_extra
                out[node, P_PHASES + slot] = min(dens / n_max, 1.0)
            out[node, P_PHASES + 5] = tbar
        for j, node in enumerate(self.route.nodes):
            out[node, P_PHASES + 4] = feats["delta"][j]
        return out

    def applied_phases(self) -> np.ndarray:
        """Phases applied at the most recent step, all intersections."""
        return self._phases.copy()

    def ev_flags(self) -> np.ndarray:
        """Arrival flags per corridor slot, padded with False."""
        out = np.zeros(self.k_max, dtype=bool)
        out[: self.route.k] = ev_features(self.net, self.ev)["arrival_flag"]
        return out

    def ev_required_phases(self) -> np.ndarray:
        """Phase permitting the EV movement per corridor slot, -1 padded."""
        out = np.full(self.k_max, -1, dtype=np.int64)
        out[: self.route.k] = self.route.required_phase
        return out

    def cooldown(self, horizon_steps: int | None = None) -> None:
        """Run background-only steps up to the fixed metrics horizon.

        The episode is over (EV arrived or censored); the corridor reverts
        to the fixed-time schedule while civilian delay and throughput keep
        accumulating, so policies are compared over a common window.
        """
        if self._episode_active:
            raise RuntimeError("cooldown only after the episode finished")
        horizon = (self.scenario.metrics_horizon_steps
                   if horizon_steps is None else horizon_steps)
        while self.t < horizon:
            sched = fixed_time_phase(self.t + self.scenario.warmup_steps)
            phases = np.full(self.net.n_nodes, sched, dtype=np.int64)
            outcome = self.net.step(self.state, phases, self.rng)
            self.total_delay_veh_s += outcome.delay_veh_s
            cross = float(outcome.delay_per_cell[~self._route_cell_mask].sum())
            self.cross_delay_veh_s += cross
            self.delay_per_node += outcome.delay_per_node
            self.delay_trace.append(
                {"t": self.t, "delay_veh_s": outcome.delay_veh_s,
                 "cross_delay_veh_s": cross,
                 "exited": outcome.exited, "cooldown": True})
            self.t += 1

    def episode_return(self) -> float:
        return self._reward_sum

    def conservation_residual(self) -> float:
        """initial + injected - exited - remaining; zero when conserved."""
        return (self._initial_total + self.state.injected
                - self.state.exited - float(self.state.n.sum()))
