"""Rule-based signal policies: evaluation baselines and behavior policies."""

from __future__ import annotations

import numpy as np

from .env import FT_STEPS_PER_PHASE, CorridorEnv
from .gridnet import Network, P_PHASES, TrafficState


def fixed_time_evp(t: int, ev_phase_flags: np.ndarray, k: int) -> np.ndarray:
    """Fixed round-robin plan with preemption overrides.

    ``ev_phase_flags`` holds, per corridor slot, the EV-compatible phase id
    when the EV arrival flag is raised and -1 otherwise.
    """
    base = (t // FT_STEPS_PER_PHASE) % P_PHASES
    action = np.full(k, base, dtype=np.int64)
    hot = ev_phase_flags >= 0
    action[hot] = ev_phase_flags[hot]
    return action


def greedy_preempt(required_phases: np.ndarray) -> np.ndarray:
    """Immediate green for the EV movement at every corridor intersection."""
    return np.where(required_phases >= 0, required_phases, 0).astype(np.int64)


def max_pressure(net: Network, state: TrafficState, node: int) -> int:
    """Phase with the largest upstream-minus-downstream pressure at a node.

    Pressure of a phase sums, over its permitted movements, the approach
    last-cell count minus the receiving first-cell count (0 off-network).
    Ties break toward the lowest phase id.
    """
    sel = net.mv_node == node
    up = state.n[net.mv_from[sel]]
    down = np.where(net.mv_is_exit[sel], 0.0, state.n[net.mv_to_safe[sel]])
    contrib = up - down
    phase_ids = net.mv_phase[sel]
    pressures = np.zeros(P_PHASES, dtype=np.float64)
    np.add.at(pressures, phase_ids, contrib)
    return int(np.argmax(pressures))


def noisy_expert(expert_action: np.ndarray, eps: float,
                 rng: np.random.Generator) -> np.ndarray:
    """Independently replace each intersection's action with prob eps."""
    if not 0.0 <= eps <= 1.0:
        raise ValueError("eps must lie in [0, 1]")
    out = np.array(expert_action, dtype=np.int64, copy=True)
    flip = rng.random(len(out)) < eps
    out[flip] = rng.integers(0, P_PHASES, size=int(flip.sum()))
    return out


class Policy:
    """Base class: a policy maps the env's public state to a corridor action."""

    name = "policy"

    def reset(self, env: CorridorEnv, rng: np.random.Generator) -> None:
        self.rng = rng

    def action(self, env: CorridorEnv) -> np.ndarray:
        raise NotImplementedError


class FixedTimeEVP(Policy):
    """Static plan with preemption service on the plan's 20 s stage grid.

    Detection (the H=3 arrival flag) is sampled at stage boundaries and the
    preemption phase enters service one full stage later, mimicking the
    clearance and minimum-green lag of field preemption controllers. The
    plan's switching grid itself never moves.
    """

    name = "ft_evp"

    def reset(self, env: CorridorEnv, rng: np.random.Generator) -> None:
        super().reset(env, rng)
        self._latched = np.full(env.k_max, -1, dtype=np.int64)
        self._pending = np.full(env.k_max, -1, dtype=np.int64)

    def action(self, env: CorridorEnv) -> np.ndarray:
        if env.t % FT_STEPS_PER_PHASE == 0:
            self._latched = self._pending
            flags = env.ev_flags()
            req = env.ev_required_phases()
            self._pending = np.where(flags, req, -1)
        return fixed_time_evp(env.t, self._latched, env.k_max)


class GreedyPreempt(Policy):
    name = "greedy"

    def action(self, env: CorridorEnv) -> np.ndarray:
        return greedy_preempt(env.ev_required_phases())


class MaxPressure(Policy):
    name = "max_pressure"

    def action(self, env: CorridorEnv) -> np.ndarray:
        act = np.zeros(env.k_max, dtype=np.int64)
        for j, node in enumerate(env.route.nodes):
            act[j] = max_pressure(env.net, env.state, node)
        return act


class UniformRandom(Policy):
    name = "random"

    def action(self, env: CorridorEnv) -> np.ndarray:
        return self.rng.integers(0, P_PHASES, size=env.k_max)


class NoisyExpert(Policy):
    def __init__(self, inner: Policy | None = None, eps: float = 0.3):
        self.inner = inner if inner is not None else GreedyPreempt()
        self.eps = eps
        self.name = f"noisy_{self.inner.name}"

    def reset(self, env: CorridorEnv, rng: np.random.Generator) -> None:
        super().reset(env, rng)
        self.inner.reset(env, rng)

    def action(self, env: CorridorEnv) -> np.ndarray:
        return noisy_expert(self.inner.action(env), self.eps, self.rng)


POLICIES = {
    "ft_evp": FixedTimeEVP,
    "greedy": GreedyPreempt,
    "max_pressure": MaxPressure,
    "random": UniformRandom,
    "noisy": NoisyExpert,
}


def make_policy(name: str) -> Policy:
    if name not in POLICIES:
        raise ValueError(f"unknown policy {name!r}; choose from {sorted(POLICIES)}")
    return POLICIES[name]()
