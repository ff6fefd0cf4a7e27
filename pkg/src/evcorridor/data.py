"""Trajectory recording, return labelling, dataset files, batch streaming.

Dataset files are self-describing: a human-readable JSON header, a blank
line, then length-prefixed little-endian binary trajectory records. All
numeric fields round-trip bit-exactly.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .controllers import GreedyPreempt, NoisyExpert, Policy, UniformRandom
from .env import CorridorEnv, Scenario

DATASET_MAGIC = "evcorridor-dataset"
DATASET_VERSION = 1


def compute_rtg(rewards: np.ndarray | list[float]) -> np.ndarray:
    """Undiscounted return-to-go: suffix sums of the reward sequence."""
    rewards = np.asarray(rewards, dtype=np.float64)
    if rewards.size == 0:
        raise ValueError("empty reward sequence")
    out = np.empty_like(rewards)
    acc = 0.0
    for i in range(rewards.size - 1, -1, -1):
        acc += rewards[i]
        out[i] = acc
    return out


@dataclass
class Trajectory:
    obs: np.ndarray            # (T, obs_dim) float32
    actions: np.ndarray        # (T, k_max) uint8
    rewards: np.ndarray        # (T,) float64
    costs: np.ndarray          # (T,) float64
    rtg: np.ndarray            # (T,) float64
    ctg: np.ndarray            # (T,) float64
    rtg_anchored: np.ndarray | None = None    # rtg minus ideal remaining return
    agent_rewards: np.ndarray | None = None   # (T, A) for multi-agent data
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.rtg_anchored is None:
            self.rtg_anchored = np.zeros_like(self.rtg)
        if self.agent_rewards is None:
            self.agent_rewards = np.zeros((len(self.rewards), 0), np.float64)

    @property
    def length(self) -> int:
        return int(self.obs.shape[0])

    @property
    def episode_return(self) -> float:
        return float(self.rtg[0])


@dataclass
class MixSpec:
    n_episodes: int = 5000
    expert: float = 0.70
    random: float = 0.15
    noisy: float = 0.15
    noisy_eps: float = 0.3
    base_seed: int = 42

    def validate(self) -> None:
        fr = (self.expert, self.random, self.noisy)
        if min(fr) < 0 or abs(sum(fr) - 1.0) > 1e-9:
            raise ValueError("mix fractions must be non-negative and sum to 1")

    def counts(self) -> dict[str, int]:
        """Episode counts per policy; rounding residue goes to the expert."""
        self.validate()
        n = self.n_episodes
        c_random = int(round(self.random * n))
        c_noisy = int(round(self.noisy * n))
        c_expert = n - c_random - c_noisy
        if c_expert < 0:
            raise ValueError("mix rounds to a negative expert count")
        return {"expert": c_expert, "random": c_random, "noisy": c_noisy}


def agent_local_rewards(route, trace_row: dict, n_agents: int,
                        weights) -> np.ndarray:
    """Per-intersection local reward for one logged step.

    Each agent pays its own queue penalty; EV progress is credited to the
    route intersection governing the EV's current link, and the pass bonus
    fires at each intersection whose stop line the EV crossed this step.
    """
    out = np.zeros(n_agents, dtype=np.float64)
    out -= weights.beta * np.asarray(trace_row["queues"], dtype=np.float64)
    k = route.k
    link_len = route.length_m / (k - 1)
    pos_pre = trace_row["ev_pos_pre_m"]
    pos_post = trace_row["ev_pos_m"]
    next_idx = min(int(pos_pre // link_len) + 1, k - 1)
    out[route.nodes[next_idx]] += weights.alpha * (pos_post - pos_pre)
    for j in range(1, k):
        node_pos = j * link_len
        if pos_pre < node_pos <= pos_post:
            out[route.nodes[j]] += weights.lam
    return out


def run_episode(env: CorridorEnv, policy: Policy, seed: int,
                record_obs: bool = True, agent_mode: bool = False) -> Trajectory:
    """Roll one full episode under a rule policy and label it.

    In agent mode the stored observation is the flattened per-intersection
    grid view, actions cover every intersection (background ones included),
    and the local reward decomposition is recorded per agent.
    """
    obs = env.reset(seed)
    policy.reset(env, np.random.default_rng(seed + 7_919))
    if agent_mode:
        obs = env.agent_obs().reshape(-1)
    n_agents = env.net.n_nodes
    obs_l, act_l, rew_l, cost_l, agent_rew_l = [], [], [], [], []
    done = False
    while not done:
        action = policy.action(env)
        res = env.step(action)
        if record_obs:
            obs_l.append(obs.astype(np.float32))
        if agent_mode:
            act_l.append(env.applied_phases().astype(np.uint8))
            agent_rew_l.append(agent_local_rewards(
                env.route, env.trace[-1], n_agents, env.weights))
            obs = env.agent_obs().reshape(-1)
        else:
            act_l.append(np.asarray(action, dtype=np.uint8))
            obs = res.obs
        rew_l.append(res.reward)
        cost_l.append(res.cost)
        done = res.done
    rewards = np.asarray(rew_l, dtype=np.float64)
    costs = np.asarray(cost_l, dtype=np.float64)
    rtg = compute_rtg(rewards)
    pos_pre = np.asarray([row["ev_pos_pre_m"] for row in env.trace])
    w = env.weights
    ideal_remaining = w.alpha * (env.route.length_m - pos_pre) + w.lam
    traj = Trajectory(
        obs=np.stack(obs_l) if record_obs else np.zeros((len(rew_l), 0), np.float32),
        actions=np.stack(act_l),
        rewards=rewards,
        costs=costs,
        rtg=rtg,
        ctg=compute_rtg(costs),
        rtg_anchored=rtg - ideal_remaining,
        agent_rewards=(np.stack(agent_rew_l) if agent_mode
                       else np.zeros((len(rew_l), 0), np.float64)),
        meta={
            "policy": policy.name,
            "seed": seed,
            "episode_return": float(rewards.sum()),
            "episode_cost": float(costs.sum()),
            "length": int(len(rewards)),
            "route_nodes": list(map(int, env.route.nodes)),
            "route_k": env.route.k,
            "route_length_m": env.route.length_m,
            "arrived": bool(env.ev.arrived),
            "ev_stops": int(env.ev.stop_count),
            "anchor_return": env.anchor_return(),
        },
    )
    if agent_mode:
        traj.meta["n_agents"] = n_agents
        traj.meta["agent_mode"] = True
    return traj


def collect(mix: MixSpec, scenario: Scenario, progress: bool = False,
            agent_mode: bool = False) -> "Dataset":
    """Generate a mixed-quality dataset; episode i uses seed base_seed + i."""
    counts = mix.counts()
    env = CorridorEnv(scenario)
    plan: list[tuple[str, Policy]] = []
    plan += [("expert", GreedyPreempt())] * counts["expert"]
    plan += [("random", UniformRandom())] * counts["random"]
    plan += [("noisy", NoisyExpert(eps=mix.noisy_eps))] * counts["noisy"]

    trajs: list[Trajectory] = []
    for i, (kind, policy) in enumerate(plan):
        traj = run_episode(env, policy, seed=mix.base_seed + i,
                           agent_mode=agent_mode)
        traj.meta["mix_kind"] = kind
        trajs.append(traj)
        if progress and (i + 1) % 200 == 0:
            print(f"  collected {i + 1}/{len(plan)} episodes")
    return Dataset(trajectories=trajs, scenario=scenario, mix=mix)


@dataclass
class Dataset:
    trajectories: list[Trajectory]
    scenario: Scenario | None = None
    mix: MixSpec | None = None
    header_extra: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.trajectories)

    def returns(self) -> np.ndarray:
        return np.asarray([t.episode_return for t in self.trajectories])

    def stats(self) -> dict:
        return dataset_stats(self)

    # -- serialization ----------------------------------------------------

    def save(self, path: str | Path) -> None:
        path = Path(path)
        header = {
            "magic": DATASET_MAGIC,
            "version": DATASET_VERSION,
            "n_trajectories": len(self.trajectories),
            "scenario": _scenario_dict(self.scenario),
            "mix": None if self.mix is None else {
                "n_episodes": self.mix.n_episodes,
                "expert": self.mix.expert,
                "random": self.mix.random,
                "noisy": self.mix.noisy,
                "noisy_eps": self.mix.noisy_eps,
                "base_seed": self.mix.base_seed,
            },
            "stats": dataset_stats(self),
        }
        header.update(self.header_extra)
        tmp = path.with_suffix(path.suffix + ".tmp")
        try:
            with open(tmp, "wb") as f:
                f.write(json.dumps(header, indent=2, sort_keys=True).encode())
                f.write(b"\n\n")
                for traj in self.trajectories:
                    rec = _pack_trajectory(traj)
                    f.write(struct.pack("<I", len(rec)))
                    f.write(rec)
            os.replace(tmp, path)
        finally:
            if tmp.exists():
                tmp.unlink()

    @classmethod
    def load(cls, path: str | Path) -> "Dataset":
        raw = Path(path).read_bytes()
        sep = raw.index(b"\n\n")
        header = json.loads(raw[:sep])
        if header.get("magic") != DATASET_MAGIC:
            raise ValueError(f"{path} is not a dataset file")
        offset = sep + 2
        trajs = []
        for _ in range(header["n_trajectories"]):
            (size,) = struct.unpack_from("<I", raw, offset)
            offset += 4
            trajs.append(_unpack_trajectory(raw[offset:offset + size]))
            offset += size
        ds = cls(trajectories=trajs)
        ds.header_extra = {k: v for k, v in header.items()
                           if k not in ("magic", "version", "n_trajectories")}
        return ds


def _scenario_dict(scn: Scenario | None) -> dict | None:
    if scn is None:
        return None
    return {
        "rows": scn.spec.rows, "cols": scn.spec.cols,
        "link_length_m": scn.spec.link_length,
        "v_f": scn.spec.v_f, "w": scn.spec.w, "k_jam": scn.spec.k_jam,
        "dt_s": scn.spec.dt, "demand_veh_s": scn.spec.entry_demand,
        "turn_ratios": list(scn.spec.turn_ratios),
        "warmup_steps": scn.warmup_steps, "t_max": scn.t_max,
        "min_manhattan": scn.min_manhattan,
    }


_ARRAY_FIELDS = (
    ("obs", "<f4", 2), ("actions", "<u1", 2), ("rewards", "<f8", 1),
    ("costs", "<f8", 1), ("rtg", "<f8", 1), ("ctg", "<f8", 1),
    ("rtg_anchored", "<f8", 1), ("agent_rewards", "<f8", 2),
)


def _pack_trajectory(traj: Trajectory) -> bytes:
    parts = []
    meta = json.dumps(traj.meta, sort_keys=True).encode()
    parts.append(struct.pack("<I", len(meta)))
    parts.append(meta)
    for name, dtype, ndim in _ARRAY_FIELDS:
        arr = np.ascontiguousarray(getattr(traj, name), dtype=np.dtype(dtype))
        shape = arr.shape + (1,) * (ndim - arr.ndim)
        parts.append(struct.pack("<" + "I" * ndim, *shape[:ndim]))
        parts.append(arr.tobytes())
    return b"".join(parts)


def _unpack_trajectory(buf: bytes) -> Trajectory:
    offset = 0
    (meta_len,) = struct.unpack_from("<I", buf, offset)
    offset += 4
    meta = json.loads(buf[offset:offset + meta_len])
    offset += meta_len
    arrays = {}
    for name, dtype, ndim in _ARRAY_FIELDS:
        shape = struct.unpack_from("<" + "I" * ndim, buf, offset)
        offset += 4 * ndim
        dt = np.dtype(dtype)
        count = int(np.prod(shape))
        arr = np.frombuffer(buf, dtype=dt, count=count, offset=offset).reshape(shape)
        offset += count * dt.itemsize
        arrays[name] = arr.copy()
    return Trajectory(meta=meta, **arrays)


def dataset_stats(ds: Dataset) -> dict:
    """Length/return summaries and per-policy breakdown."""
    if len(ds) == 0:
        raise ValueError("empty dataset")
    lengths = np.asarray([t.length for t in ds.trajectories], dtype=np.float64)
    returns = ds.returns()
    costs = np.asarray([float(t.ctg[0]) for t in ds.trajectories])
    per_policy: dict[str, dict] = {}
    for traj in ds.trajectories:
        kind = traj.meta.get("policy", "unknown")
        rec = per_policy.setdefault(kind, {"count": 0, "return_sum": 0.0})
        rec["count"] += 1
        rec["return_sum"] += traj.episode_return
    for rec in per_policy.values():
        rec["mean_return"] = rec["return_sum"] / rec["count"]
        del rec["return_sum"]
    return {
        "length": {"mean": float(lengths.mean()), "std": float(lengths.std()),
                   "min": float(lengths.min()), "max": float(lengths.max())},
        "return": {"mean": float(returns.mean()), "std": float(returns.std()),
                   "min": float(returns.min()), "max": float(returns.max())},
        "cost": {"mean": float(costs.mean()),
                 "p25": float(np.percentile(costs, 25))},
        "arrival_rate": float(np.mean(
            [t.meta.get("arrived", False) for t in ds.trajectories])),
        "per_policy": per_policy,
    }


def quartile_boundaries(returns: np.ndarray) -> tuple[float, float, float]:
    """25/50/75 percentiles of episode returns (linear interpolation)."""
    q = np.percentile(np.asarray(returns, dtype=np.float64), [25, 50, 75])
    return float(q[0]), float(q[1]), float(q[2])


def quartile_of(returns: np.ndarray, bounds: tuple[float, float, float]) -> np.ndarray:
    """Quartile index (0..3) per episode given the percentile boundaries."""
    returns = np.asarray(returns)
    idx = np.zeros(len(returns), dtype=np.int64)
    idx += returns > bounds[0]
    idx += returns > bounds[1]
    idx += returns > bounds[2]
    return idx


@dataclass
class TokenBatch:
    rtg: np.ndarray          # (B, C) float32, raw returns-to-go
    rtg_anchored: np.ndarray  # (B, C) float32, excess over ideal remaining
    ctg: np.ndarray          # (B, C) float32
    costs: np.ndarray        # (B, C) float32, per-step costs
    obs: np.ndarray          # (B, C, obs_dim) float32
    actions: np.ndarray      # (B, C, k_max) int64
    timesteps: np.ndarray    # (B, C) int64
    mask: np.ndarray         # (B, C) bool, False on left padding
    head_mask: np.ndarray    # (B, k_max) bool, False on padded corridor slots
    traj_ids: np.ndarray | None = None   # dataset indices the windows came from


def stratified_batches(ds: Dataset, batch_size: int, context: int,
                       rng: np.random.Generator, k_max: int | None = None):
    """Endless stream of return-stratified context windows.

    Each batch draws batch_size/4 trajectories per return quartile, then a
    random window of ``context`` steps per trajectory; windows overlapping
    the episode start are left-padded and masked.
    """
    if batch_size % 4 != 0:
        raise ValueError("batch_size must be divisible by 4")
    if len(ds) < 4:
        raise ValueError("dataset smaller than one batch of quartiles")
    returns = ds.returns()
    bounds = quartile_boundaries(returns)
    quart = quartile_of(returns, bounds)
    groups = [np.flatnonzero(quart == q) for q in range(4)]
    for q in range(4):
        if len(groups[q]) == 0:      # degenerate ties: fall back to all
            groups[q] = np.arange(len(ds))
    per_q = batch_size // 4
    while True:
        picks = np.concatenate(
            [rng.choice(groups[q], size=per_q, replace=True) for q in range(4)])
        yield make_window_batch(ds, picks, context, rng, k_max=k_max)


def make_window_batch(ds: Dataset, traj_ids: np.ndarray, context: int,
                      rng: np.random.Generator,
                      k_max: int | None = None) -> TokenBatch:
    b = len(traj_ids)
    sample = ds.trajectories[int(traj_ids[0])]
    obs_dim = sample.obs.shape[1]
    if k_max is None:
        k_max = sample.actions.shape[1]
    rtg = np.zeros((b, context), dtype=np.float32)
    rtg_anchored = np.zeros((b, context), dtype=np.float32)
    ctg = np.zeros((b, context), dtype=np.float32)
    costs = np.zeros((b, context), dtype=np.float32)
    obs = np.zeros((b, context, obs_dim), dtype=np.float32)
    actions = np.zeros((b, context, k_max), dtype=np.int64)
    timesteps = np.zeros((b, context), dtype=np.int64)
    mask = np.zeros((b, context), dtype=bool)
    head_mask = np.zeros((b, k_max), dtype=bool)
    for i, tid in enumerate(traj_ids):
        traj = ds.trajectories[int(tid)]
        t_end = int(rng.integers(traj.length))
        t_lo = max(0, t_end - context + 1)
        seg = slice(t_lo, t_end + 1)
        width = t_end + 1 - t_lo
        dst = slice(context - width, context)
        rtg[i, dst] = traj.rtg[seg]
        rtg_anchored[i, dst] = traj.rtg_anchored[seg]
        ctg[i, dst] = traj.ctg[seg]
        costs[i, dst] = traj.costs[seg]
        obs[i, dst] = traj.obs[seg]
        actions[i, dst] = traj.actions[seg]
        timesteps[i, dst] = np.arange(t_lo, t_end + 1)
        mask[i, dst] = True
        head_mask[i, : traj.meta.get("route_k", k_max)] = True
    return TokenBatch(rtg=rtg, rtg_anchored=rtg_anchored, ctg=ctg,
                      costs=costs, obs=obs, actions=actions,
                      timesteps=timesteps, mask=mask, head_mask=head_mask,
                      traj_ids=np.asarray(traj_ids, dtype=np.int64))
