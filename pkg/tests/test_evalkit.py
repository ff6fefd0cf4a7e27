"""Metrics and statistics against independent brute-force oracles."""

import math

import numpy as np
import pytest

from evcorridor.env import CorridorEnv, Scenario
from evcorridor.controllers import make_policy
from evcorridor.evalkit import (
    SweepSpec,
    acd,
    episode_metrics,
    gini,
    per_intersection_decomposition,
    run_sweep,
    spacetime_export,
    spearman,
    welch_t,
)
from evcorridor.gridnet import GridSpec


# -- oracles -------------------------------------------------------------------


def t_sf_numeric(t_val: float, dof: float) -> float:
    """P(T > t) via trapezoid integration of the t density (lgamma norm)."""
    log_c = (math.lgamma((dof + 1) / 2) - math.lgamma(dof / 2)
             - 0.5 * math.log(dof * math.pi))

    def pdf(x):
        return math.exp(log_c - (dof + 1) / 2 * math.log1p(x * x / dof))

    hi = max(abs(t_val) + 60.0, 200.0)
    xs = np.linspace(t_val, hi, 400_001)
    ys = np.asarray([pdf(x) for x in xs])
    return float(np.trapezoid(ys, xs))


def spearman_bruteforce(x, y) -> float:
    """O(n^2) average ranks, then the pinned d^2 formula."""
    def ranks(v):
        v = list(v)
        out = []
        for i, a in enumerate(v):
            less = sum(1 for b in v if b < a)
            equal = sum(1 for b in v if b == a)
            out.append(less + (equal + 1) / 2.0)
        return out
    rx, ry = ranks(x), ranks(y)
    n = len(rx)
    d2 = sum((a - b) ** 2 for a, b in zip(rx, ry))
    return 1.0 - 6.0 * d2 / (n * (n * n - 1))


def gini_bruteforce(values) -> float:
    v = list(values)
    n = len(v)
    total = sum(v)
    if total == 0:
        return 0.0
    s = sum(abs(a - b) for a in v for b in v)
    return s / (2.0 * n * n * (total / n))


# -- statistics ----------------------------------------------------------------


class TestWelch:
    def test_identical_samples(self):
        t, dof, p = welch_t([1, 2, 3, 4], [1, 2, 3, 4])
        assert t == 0.0
        assert p == pytest.approx(1.0)

    def test_separated_distributions(self):
        a = list(range(1, 11))
        b = [x + 100 + 0.001 * x for x in range(1, 11)]
        _, _, p = welch_t(a, b)
        assert p < 1e-6

    def test_zero_variance_equal_means(self):
        t, dof, p = welch_t([2.0, 2.0], [2.0, 2.0])
        assert (t, p) == (0.0, 1.0)

    def test_matches_numerical_cdf_oracle(self):
        a = (88, 90, 87, 91, 89)
        b = (95, 97, 94, 96, 98)
        t, dof, p = welch_t(a, b)
        p_oracle = 2.0 * t_sf_numeric(abs(t), dof)
        assert p == pytest.approx(p_oracle, abs=1e-6)

    def test_random_vectors_match_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(10):
            a = rng.normal(0, 1, size=rng.integers(5, 30))
            b = rng.normal(0.5, 2, size=rng.integers(5, 30))
            t, dof, p = welch_t(a, b)
            assert p == pytest.approx(2 * t_sf_numeric(abs(t), dof), abs=1e-6)

    def test_too_small_sample_rejected(self):
        with pytest.raises(ValueError):
            welch_t([1.0], [1.0, 2.0])


class TestSpearman:
    def test_identical_rankings(self):
        assert spearman([1, 2, 3, 4], [10, 20, 30, 40]) == pytest.approx(1.0)

    def test_reversed_rankings(self):
        assert spearman([1, 2, 3, 4], [4, 3, 2, 1]) == pytest.approx(-1.0)

    def test_single_swap_gives_point_eight(self):
        assert spearman([1, 2, 3, 4], [1, 3, 2, 4]) == pytest.approx(0.8)

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError):
            spearman([1, 2], [1, 2, 3])

    def test_matches_bruteforce_on_random_vectors(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            n = int(rng.integers(3, 25))
            x = rng.integers(0, 10, size=n).astype(float)   # ties likely
            y = rng.integers(0, 10, size=n).astype(float)
            assert spearman(x, y) == pytest.approx(
                spearman_bruteforce(x, y), abs=1e-12)


class TestGini:
    def test_all_equal_is_zero(self):
        assert gini([3.0, 3.0, 3.0]) == pytest.approx(0.0)

    def test_single_holder(self):
        assert gini([0.0, 0.0, 0.0, 1.0]) == pytest.approx(0.75)

    def test_all_zero_convention(self):
        assert gini([0.0, 0.0]) == 0.0

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            gini([-1.0, 2.0])

    def test_matches_bruteforce_on_random_vectors(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            v = rng.uniform(0, 5, size=int(rng.integers(2, 30)))
            assert gini(v) == pytest.approx(gini_bruteforce(v), abs=1e-10)


class TestAcd:
    def test_zero_delay(self):
        assert acd(0.0, 10.0) == 0.0

    def test_two_vehicles_stopped_ten_seconds(self):
        # 2 veh at zero speed for 2 steps of 5 s = 20 veh*s over 2 served
        assert acd(20.0, 2.0) == pytest.approx(10.0)

    def test_zero_throughput_reported_missing(self):
        assert math.isnan(acd(5.0, 0.0))


# -- trace-level checks -----------------------------------------------------------


def run_episode(env, name, seed):
    env.reset(seed)
    pol = make_policy(name)
    pol.reset(env, np.random.default_rng(seed + 99))
    done = False
    while not done:
        done = env.step(pol.action(env)).done
    return env


@pytest.fixture(scope="module")
def env():
    env = CorridorEnv(Scenario())
    run_episode(env, "ft_evp", 4)
    env.cooldown()
    return env


class TestTraces:

    def test_acd_matches_delay_trace_recount(self, env):
        total = sum(r["delay_veh_s"] for r in env.delay_trace)
        assert total == pytest.approx(env.total_delay_veh_s, abs=1e-6)
        cross = sum(r["cross_delay_veh_s"] for r in env.delay_trace)
        assert cross == pytest.approx(env.cross_delay_veh_s, abs=1e-6)
        m = episode_metrics(env)
        assert m.acd_s_per_veh == pytest.approx(
            cross / env.state.exited, abs=1e-6)

    def test_cost_trace_is_queue_recount(self, env):
        for row in env.trace:
            assert row["cost"] == pytest.approx(sum(row["queues"]), abs=1e-9)

    def test_decomposition_partitions_travel_time(self, env):
        spec = env.scenario.spec
        zones = per_intersection_decomposition(
            env.trace, env.route.k, spec.link_length, spec.cell_length,
            spec.dt)
        ett = episode_metrics(env).ett_s
        assert zones.sum() <= ett + 1e-9
        assert zones.sum() == pytest.approx(ett, abs=1e-9)  # L=4: zones tile

    def test_decomposition_unimpeded(self):
        env = CorridorEnv(Scenario(spec=GridSpec(entry_demand=0.0),
                                   warmup_steps=0))
        env.reset(0, route_nodes=[0, 1, 2, 3, 7, 11, 15])
        done = False
        while not done:
            done = env.step(env.ev_required_phases().clip(0)).done
        spec = env.scenario.spec
        zones = per_intersection_decomposition(
            env.trace, env.route.k, spec.link_length, spec.cell_length,
            spec.dt)
        # interior zones span 4 cells = 300 m -> 20 s; ends clipped to 150 m
        assert zones[0] == pytest.approx(150.0 / 15.0)
        for z in zones[1:-1]:
            assert z == pytest.approx(300.0 / 15.0)
        assert zones[-1] == pytest.approx(150.0 / 15.0)

    def test_spacetime_rows_and_colors(self, env):
        rows = spacetime_export(env.trace)
        assert len(rows) == len(env.trace)
        for rec, row in zip(rows, env.trace):
            assert rec["ev_green"] == row["ev_green"]
        stopped = [r for r in rows if r["ev_speed"] == 0.0]
        for rec in stopped:
            nxt = [r for r in rows if r["t"] == rec["t"] + 1]
            if nxt and nxt[0]["ev_speed"] == 0.0:
                assert nxt[0]["ev_pos_m"] == pytest.approx(rec["ev_pos_m"])


class TestSweep:
    def test_single_point_single_episode(self):
        env = CorridorEnv(Scenario())

        def run_point(value, seed, ep):
            run_episode(env, "greedy", seed)
            env.cooldown()
            return episode_metrics(env, seed)

        spec = SweepSpec(axis="demand", values=[0.1],
                         episodes_per_point=1, seeds=(0,))
        result = run_sweep(spec, run_point)
        assert len(result.rows) == 1
        assert len(result.records) == 1
        assert result.rows[0].means["ett_s"] == result.records[0]["ett_s"]

    def test_failure_recorded_and_sweep_continues(self):
        def run_point(value, seed, ep):
            if value == 2:
                raise RuntimeError("boom")
            env = CorridorEnv(Scenario())
            run_episode(env, "greedy", seed)
            return episode_metrics(env, seed)

        spec = SweepSpec(axis="demand", values=[1, 2, 3],
                         episodes_per_point=1, seeds=(0,))
        result = run_sweep(spec, run_point)
        assert result.rows[1].error is not None
        assert result.rows[0].error is None
        assert result.rows[2].n_episodes == 1

    def test_empty_values_rejected(self):
        with pytest.raises(ValueError):
            SweepSpec(axis="demand", values=[]).validate()
