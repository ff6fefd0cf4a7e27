"""Episode metrics, statistical tests, sweeps, and export records."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import stdtr

from .env import CorridorEnv


@dataclass
class EpisodeMetrics:
    ett_s: float                   # EV travel time; T_max*dt when censored
    acd_s_per_veh: float           # average civilian delay
    throughput_veh: float          # vehicles that left the network
    ev_stops: int
    per_node_delay_s: np.ndarray
    clipped_entries: float
    arrived: bool
    episode_return: float = 0.0
    episode_cost: float = 0.0
    seed: int = -1

    def as_record(self) -> dict:
        return {
            "ett_s": self.ett_s,
            "acd_s_per_veh": self.acd_s_per_veh,
            "throughput_veh": self.throughput_veh,
            "ev_stops": self.ev_stops,
            "clipped_entries": self.clipped_entries,
            "arrived": self.arrived,
            "episode_return": self.episode_return,
            "episode_cost": self.episode_cost,
            "seed": self.seed,
        }


def acd(delay_total_veh_s: float, throughput_veh: float) -> float:
    """Total civilian delay divided by throughput; NaN when nothing exited."""
    if throughput_veh <= 0:
        return float("nan")
    return delay_total_veh_s / throughput_veh


def episode_metrics(env: CorridorEnv, seed: int = -1) -> EpisodeMetrics:
    """Summarize a finished episode straight off the environment.

    ACD counts cross-traffic delay: vehicles on every link except the EV's
    route links, i.e. the population the corridor imposes on.
    """
    if env.ev.arrived:
        ett = env.ev.arrival_time
    else:
        ett = env.t_max * env.scenario.spec.dt
    return EpisodeMetrics(
        ett_s=float(ett),
        acd_s_per_veh=acd(env.cross_delay_veh_s, env.state.exited),
        throughput_veh=float(env.state.exited),
        ev_stops=int(env.ev.stop_count),
        per_node_delay_s=env.delay_per_node.copy(),
        clipped_entries=float(env.state.dropped),
        arrived=bool(env.ev.arrived),
        episode_return=float(env.episode_return()),
        episode_cost=float(sum(row["cost"] for row in env.trace)),
        seed=seed,
    )


# -- statistics ----------------------------------------------------------------


def welch_t(sample_a, sample_b) -> tuple[float, float, float]:
    """Welch's t statistic, Welch-Satterthwaite dof, and two-tailed p."""
    a = np.asarray(sample_a, dtype=np.float64)
    b = np.asarray(sample_b, dtype=np.float64)
    if len(a) < 2 or len(b) < 2:
        raise ValueError("both samples need at least 2 observations")
    ma, mb = a.mean(), b.mean()
    va, vb = a.var(ddof=1), b.var(ddof=1)
    na, nb = len(a), len(b)
    se2 = va / na + vb / nb
    if se2 == 0.0:
        return 0.0, float(na + nb - 2), 1.0
    t = (ma - mb) / math.sqrt(se2)
    dof = se2 ** 2 / ((va / na) ** 2 / (na - 1) + (vb / nb) ** 2 / (nb - 1))
    p = 2.0 * float(stdtr(dof, -abs(t)))
    return float(t), float(dof), min(max(p, 0.0), 1.0)


def _average_ranks(x: np.ndarray) -> np.ndarray:
    order = np.argsort(x, kind="mergesort")
    ranks = np.empty(len(x), dtype=np.float64)
    sx = x[order]
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and sx[j + 1] == sx[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def spearman(x, y) -> float:
    """Rank correlation 1 - 6*sum(d^2)/(n(n^2-1)), average ranks on ties."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(x) != len(y):
        raise ValueError("samples must have equal length")
    if len(x) < 2:
        raise ValueError("need at least 2 observations")
    d = _average_ranks(x) - _average_ranks(y)
    n = len(x)
    return float(1.0 - 6.0 * np.sum(d * d) / (n * (n * n - 1)))


def gini(values) -> float:
    """Mean-absolute-difference Gini coefficient; 0 for all-zero input."""
    v = np.asarray(values, dtype=np.float64)
    if np.any(v < 0):
        raise ValueError("gini is defined for non-negative values")
    total = v.sum()
    if total == 0.0:
        return 0.0
    n = len(v)
    s = np.sort(v)
    weighted = np.sum((2.0 * np.arange(1, n + 1) - n - 1.0) * s)
    return float(weighted / (n * total))


# -- sweeps --------------------------------------------------------------------


@dataclass
class SweepSpec:
    axis: str
    values: list
    episodes_per_point: int = 20
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)

    def validate(self) -> None:
        if not self.values:
            raise ValueError("sweep needs at least one axis value")
        if self.episodes_per_point < 1 or not self.seeds:
            raise ValueError("sweep needs seeds and episodes")


@dataclass
class SweepRow:
    axis_value: object
    n_episodes: int
    means: dict
    stds: dict
    error: str | None = None


@dataclass
class SweepResult:
    spec: SweepSpec
    rows: list[SweepRow] = field(default_factory=list)
    records: list[dict] = field(default_factory=list)

    def column(self, metric: str) -> list[float]:
        return [row.means.get(metric, float("nan")) for row in self.rows]


_SWEEP_METRICS = ("ett_s", "acd_s_per_veh", "throughput_veh", "ev_stops",
                  "episode_return", "episode_cost")


def run_sweep(spec: SweepSpec, run_point) -> SweepResult:
    """Aggregate metrics over seeds x episodes for each axis value.

    ``run_point(value, seed, episode_idx) -> EpisodeMetrics``. A failure at
    one point is recorded and the sweep continues.
    """
    spec.validate()
    result = SweepResult(spec=spec)
    for value in spec.values:
        metrics: list[EpisodeMetrics] = []
        error = None
        try:
            for seed in spec.seeds:
                for ep in range(spec.episodes_per_point):
                    m = run_point(value, seed, ep)
                    metrics.append(m)
                    rec = m.as_record()
                    rec.update({"axis": spec.axis, "axis_value": value,
                                "sweep_seed": seed, "episode": ep})
                    result.records.append(rec)
        except Exception as exc:   # noqa: BLE001 - sweep must survive one bad point
            error = f"{type(exc).__name__}: {exc}"
        if metrics:
            arrays = {m: np.asarray([getattr(x, m) for x in metrics], dtype=float)
                      for m in _SWEEP_METRICS}
            means = {k: float(np.nanmean(v)) for k, v in arrays.items()}
            stds = {k: float(np.nanstd(v)) for k, v in arrays.items()}
        else:
            means, stds = {}, {}
        result.rows.append(SweepRow(axis_value=value, n_episodes=len(metrics),
                                    means=means, stds=stds, error=error))
    return result


# -- trace decompositions --------------------------------------------------------


def per_intersection_decomposition(trace: list[dict], route_k: int,
                                   link_length_m: float, cell_length_m: float,
                                   dt: float) -> np.ndarray:
    """EV time near each route intersection.

    The control zone of route intersection j spans two cells upstream and two
    downstream of the stop line, clipped to the route extent. Each logged
    step contributes dt to the zone containing the EV's position at the
    start of that step; steps between zones contribute to none.
    """
    zone_time = np.zeros(route_k, dtype=np.float64)
    length = (route_k - 1) * link_length_m
    half = 2.0 * cell_length_m
    for row in trace:
        pos = row["ev_pos_pre_m"]
        for j in range(route_k):
            center = j * link_length_m
            lo, hi = max(center - half, 0.0), min(center + half, length)
            if lo <= pos < hi:
                zone_time[j] += dt
                break
    return zone_time


def spacetime_export(trace: list[dict]) -> list[dict]:
    """Plot-ready space-time records: one row per step."""
    rows = []
    for row in trace:
        rows.append({
            "t": row["t"],
            "ev_pos_m": row["ev_pos_m"],
            "ev_speed": row["ev_speed"],
            "phases": list(row["phases"]),
            "ev_green": list(row["ev_green"]),
        })
    return rows
