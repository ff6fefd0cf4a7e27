"""Autoregressive episode rollout with live return/cost retargeting.

The dispatcher's knob G* is anchored to the episode's ideal return: the
initial raw return-to-go is anchor + G*, where the anchor is the return of
a hypothetical zero-queue free-flow run of the sampled route. G* = 0 asks
for an ideal-aggressive corridor; negative values ask for progressively
more conservative behavior. Setting a new target mid-episode resets the
running return-to-go to the new anchored value, which is then decremented
by realized rewards as usual.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from ..data import Trajectory, compute_rtg
from ..env import CorridorEnv
from ..evalkit import EpisodeMetrics, episode_metrics
from .nets import DecisionTransformer, MultiAgentDT


@dataclass
class RolloutResult:
    trajectory: Trajectory
    metrics: EpisodeMetrics
    rtg_trace: list[float]           # raw return-to-go fed at each step
    ctg_trace: list[float]
    anchor: float


def cost_budget(model_cfg, c_star: float | None) -> float:
    """Map the dispatcher cost knob (<= 0, 0 = tight) to a raw budget."""
    ref = getattr(model_cfg, "cost_budget_ref", 0.0) or 0.0
    if c_star is None:
        return ref
    return ref * (1.0 - c_star / 100.0)


def _nucleus(probs: np.ndarray, top_p: float) -> np.ndarray:
    """Per-head nucleus filter: keep the smallest prefix of phases covering
    top_p probability, renormalize. Confident heads collapse to their mode
    while near-uniform heads keep their full spread."""
    if top_p >= 1.0:
        return probs
    order = np.argsort(-probs, axis=-1)
    sorted_p = np.take_along_axis(probs, order, axis=-1)
    csum = sorted_p.cumsum(axis=-1)
    keep_sorted = np.roll(csum < top_p, 1, axis=-1)
    keep_sorted[:, 0] = True
    keep = np.zeros_like(keep_sorted)
    np.put_along_axis(keep, order, keep_sorted, axis=-1)
    out = probs * keep
    return out / out.sum(axis=-1, keepdims=True)


class LiveRollout:
    """One return-conditioned episode advanced step by step.

    Targets may be changed between steps; greedy argmax decoding; the
    context window holds the last ``context`` steps.
    """

    def __init__(self, model: DecisionTransformer, env: CorridorEnv,
                 g_star: float, c_star: float | None = None, seed: int = 0,
                 route_nodes: list[int] | None = None,
                 record_obs: bool = True, sample: bool = True,
                 temperature: float = 1.0, top_p: float = 0.9):
        model.eval()
        self.model = model
        self.cfg = model.cfg
        self.env = env
        self.is_cdt = self.cfg.variant == "cdt"
        self.record_obs = record_obs
        self.seed = seed
        self.g_star = g_star
        self.c_star = c_star
        self.sample = sample
        self.temperature = temperature
        self.top_p = top_p
        self._act_rng = np.random.default_rng(seed + 59_999)

        obs = env.reset(seed, route_nodes=route_nodes)
        self.anchor = env.anchor_return()
        self.cal = getattr(self.cfg, "g_star_cal", 0.0)
        self.gain = getattr(self.cfg, "g_star_gain", 1.0)
        self.rhat = self.anchor + self.cal + self.gain * g_star
        self.chat = cost_budget(self.cfg, c_star) if self.is_cdt else 0.0

        self.obs_hist: list[np.ndarray] = [obs.astype(np.float32)]
        self.act_hist: list[np.ndarray] = []
        self.rtg_hist: list[float] = []
        self.rtg2_hist: list[float] = []
        self.ctg_hist: list[float] = []
        self.rewards: list[float] = []
        self.costs: list[float] = []
        self.t = 0
        self.done = False

    def remaining_ideal(self) -> float:
        """Return of a free-flow zero-queue finish from the current position."""
        w = self.env.weights
        return w.alpha * (self.env.route.length_m - self.env.ev.pos_m) + w.lam

    def set_targets(self, g_star: float | None = None,
                    c_star: float | None = None) -> None:
        """Reset the running conditioning to newly anchored targets.

        Mid-episode the anchor is the ideal return of the remaining route,
        so a target set at step t means the same thing it meant at dispatch:
        the tolerated shortfall against a free-flow finish.
        """
        if g_star is not None:
            self.g_star = g_star
            self.rhat = (self.remaining_ideal() + self.cal
                         + self.gain * g_star)
        if c_star is not None and self.is_cdt:
            self.c_star = c_star
            self.chat = cost_budget(self.cfg, c_star)

    @torch.no_grad()
    def step(self):
        """Choose and apply one action; returns the env StepResult."""
        if self.done:
            raise RuntimeError("episode finished")
        cfg = self.cfg
        t = self.t
        self.rtg_hist.append(self.rhat)
        # demanding more than the best the data ever achieved conditions on
        # the best observed form rather than extrapolating off-distribution
        anchored = min(self.rhat - self.remaining_ideal(),
                       getattr(cfg, "rtg2_max", float("inf")))
        self.rtg2_hist.append(anchored)
        self.ctg_hist.append(self.chat)

        lo = max(0, t - cfg.context + 1)
        width = t - lo + 1
        rtg_w = torch.tensor([self.rtg_hist[lo:]], dtype=torch.float32)
        obs_w = torch.tensor(np.stack(self.obs_hist[lo:])[None],
                             dtype=torch.float32)
        act_w = np.full((1, width, cfg.k), -1, dtype=np.int64)
        for j, a in enumerate(self.act_hist[lo:]):
            act_w[0, j, : len(a)] = a
        ts_w = torch.arange(lo, t + 1, dtype=torch.int64)[None]
        kwargs = {"rtg_anchored": torch.tensor([self.rtg2_hist[lo:]],
                                               dtype=torch.float32)}
        if self.is_cdt:
            kwargs["ctg"] = torch.tensor([self.ctg_hist[lo:]],
                                         dtype=torch.float32)
        out = self.model(rtg_w, obs_w, torch.from_numpy(act_w), ts_w, **kwargs)
        logits = out[0] if self.is_cdt else out
        if self.sample:
            probs = torch.softmax(logits[0, -1] / self.temperature,
                                  dim=-1).numpy()
            probs = _nucleus(probs, self.top_p)
            cum = probs.cumsum(axis=-1)
            draws = self._act_rng.random((probs.shape[0], 1))
            action = (draws > cum).sum(axis=-1).astype(np.int64)
        else:
            action = logits[0, -1].argmax(dim=-1).numpy().astype(np.int64)

        res = self.env.step(action)
        self.act_hist.append(action.copy())
        self.rewards.append(res.reward)
        self.costs.append(res.cost)
        self.rhat -= res.reward
        self.chat -= res.cost
        self.obs_hist.append(res.obs.astype(np.float32))
        self.done = res.done
        self.t += 1
        return res

    def result(self) -> RolloutResult:
        rew = np.asarray(self.rewards, dtype=np.float64)
        cost = np.asarray(self.costs, dtype=np.float64)
        rtg = compute_rtg(rew)
        w = self.env.weights
        pos_pre = np.asarray([r["ev_pos_pre_m"] for r in self.env.trace])
        ideal = w.alpha * (self.env.route.length_m - pos_pre) + w.lam
        traj = Trajectory(
            obs=(np.stack(self.obs_hist[:-1]) if self.record_obs
                 else np.zeros((len(rew), 0), np.float32)),
            actions=np.stack(self.act_hist).astype(np.uint8),
            rewards=rew, costs=cost,
            rtg=rtg, ctg=compute_rtg(cost), rtg_anchored=rtg - ideal,
            meta={
                "policy": self.cfg.variant, "seed": self.seed,
                "g_star": self.g_star, "c_star": self.c_star,
                "anchor_return": self.anchor,
                "episode_return": float(rew.sum()),
                "episode_cost": float(cost.sum()),
                "length": int(len(rew)),
                "route_nodes": list(map(int, self.env.route.nodes)),
                "route_k": self.env.route.k,
                "arrived": bool(self.env.ev.arrived),
                "ev_stops": int(self.env.ev.stop_count),
            })
        return RolloutResult(trajectory=traj,
                             metrics=episode_metrics(self.env, self.seed),
                             rtg_trace=list(self.rtg_hist),
                             ctg_trace=list(self.ctg_hist),
                             anchor=self.anchor)


def rollout(model: DecisionTransformer, env: CorridorEnv, g_star: float,
            c_star: float | None = None, seed: int = 0,
            control_hook=None, route_nodes: list[int] | None = None,
            record_obs: bool = True, sample: bool = True) -> RolloutResult:
    """Return-conditioned rollout of a single-agent model.

    Actions are drawn per head from the model's categorical output with a
    generator seeded from ``seed`` (set ``sample=False`` for pure argmax);
    traces are reproducible given (seed, params, knob schedule).
    ``control_hook(t) -> None | (g_new, c_new)`` is polled between steps and
    realizes the live dispatch channel.
    """
    live = LiveRollout(model, env, g_star, c_star=c_star, seed=seed,
                       route_nodes=route_nodes, record_obs=record_obs,
                       sample=sample)
    while not live.done:
        if control_hook is not None:
            update = control_hook(live.t)
            if update is not None:
                live.set_targets(update[0], update[1])
        live.step()
    return live.result()


@torch.no_grad()
def rollout_madt(model: MultiAgentDT, env: CorridorEnv, g_star: float,
                 adjacency: torch.Tensor, seed: int = 0,
                 control_hook=None) -> RolloutResult:
    """Greedy decentralized rollout: each agent decodes its own stream.

    The global knob splits evenly across the corridor agents: each route
    agent's return-to-go starts at (anchor + G*)/K; off-route agents carry
    zero and their decoded actions are ignored by the environment.
    """
    from ..data import agent_local_rewards

    model.eval()
    cfg = model.cfg
    env.reset(seed)
    a = cfg.n_agents
    anchor = env.anchor_return()
    route_nodes = list(env.route.nodes)
    rhat = np.zeros(a, dtype=np.float64)
    rhat[route_nodes] = (anchor + g_star) / env.route.k

    obs_hist = [env.agent_obs().astype(np.float32)]
    act_hist: list[np.ndarray] = []
    rtg_hist: list[np.ndarray] = []
    rewards: list[float] = []
    costs: list[float] = []

    done = False
    t = 0
    while not done:
        if control_hook is not None:
            update = control_hook(t)
            if update is not None and update[0] is not None:
                rhat = np.zeros(a, dtype=np.float64)
                rhat[route_nodes] = (anchor + update[0]) / env.route.k
        rtg_hist.append(rhat.copy())

        lo = max(0, t - cfg.context + 1)
        width = t - lo + 1
        rtg_w = torch.tensor(np.stack(rtg_hist[lo:])[None], dtype=torch.float32)
        obs_w = torch.tensor(np.stack(obs_hist[lo:])[None], dtype=torch.float32)
        act_w = np.full((1, width, a), -1, dtype=np.int64)
        for j, act in enumerate(act_hist[lo:]):
            act_w[0, j] = act
        ts_w = torch.arange(lo, t + 1, dtype=torch.int64)[None]
        logits = model(rtg_w, obs_w, torch.from_numpy(act_w), ts_w, adjacency)
        agent_actions = logits[0, -1].argmax(dim=-1).numpy().astype(np.int64)

        action = np.zeros(env.k_max, dtype=np.int64)
        action[: env.route.k] = agent_actions[route_nodes]
        res = env.step(action)
        local = agent_local_rewards(env.route, env.trace[-1], a, env.weights)
        rhat = rhat - local
        act_hist.append(agent_actions)
        rewards.append(res.reward)
        costs.append(res.cost)
        obs_hist.append(env.agent_obs().astype(np.float32))
        done = res.done
        t += 1

    rew = np.asarray(rewards, dtype=np.float64)
    cost = np.asarray(costs, dtype=np.float64)
    traj = Trajectory(
        obs=np.stack(obs_hist[:-1]).reshape(len(rew), -1),
        actions=np.stack(act_hist).astype(np.uint8),
        rewards=rew, costs=cost, rtg=compute_rtg(rew), ctg=compute_rtg(cost),
        meta={"policy": "madt", "seed": seed, "g_star": g_star,
              "episode_return": float(rew.sum()),
              "route_nodes": route_nodes, "route_k": env.route.k,
              "arrived": bool(env.ev.arrived),
              "ev_stops": int(env.ev.stop_count), "length": int(len(rew))})
    return RolloutResult(trajectory=traj, metrics=episode_metrics(env, seed),
                         rtg_trace=[float(r.sum()) for r in rtg_hist],
                         ctg_trace=[], anchor=anchor)
