"""CTM core: discretization, flow law, conservation, demand injection."""

import numpy as np
import pytest

from evcorridor.gridnet import (
    GridSpec,
    Network,
    build_grid,
    cell_flow,
    derive_params,
    load_grid_config,
)


def brute_force_flow(n_up, n_down, n_max, q_max, gate_open, w_over_vf):
    """Independent min(demand, supply) evaluation."""
    if not gate_open:
        return 0.0
    demand = n_up if n_up < q_max else q_max
    room = w_over_vf * (n_max - n_down)
    supply = room if room < q_max else q_max
    if supply < 0.0:
        supply = 0.0
    return min(demand, supply)


class TestDiscretization:
    def test_4x4_has_192_cells(self):
        net = build_grid(GridSpec())
        assert net.n_cells == 192

    def test_8x8_has_896_cells(self):
        net = build_grid(GridSpec(rows=8, cols=8))
        assert net.n_cells == 896

    def test_1x2_has_8_cells(self):
        # closed form: 2*(R*(C-1)+C*(R-1))*L = 2*(1*1+2*0)*4 = 8
        net = build_grid(GridSpec(rows=1, cols=2))
        assert net.n_cells == 8

    def test_cell_count_closed_form(self):
        for rows, cols in ((2, 3), (3, 3), (4, 6), (1, 8)):
            net = build_grid(GridSpec(rows=rows, cols=cols))
            L = net.cells_per_link
            expected = 2 * (rows * (cols - 1) + cols * (rows - 1)) * L
            assert net.n_cells == expected

    def test_default_derived_params(self):
        p = derive_params(GridSpec())
        assert p.n_max == 11
        assert p.q_max_per_step == 3
        assert p.cells_per_link == 4

    def test_symmetric_fundamental_diagram(self):
        # v_f == w makes capacity v_f * k_jam / 2 per second
        spec = GridSpec(v_f=10.0, w=10.0, dt=5.0, link_length=200.0)
        p = derive_params(spec)
        assert p.q_max_per_step == round(10.0 * 0.15 / 2 * 5.0)

    def test_non_divisible_link_length_rejected(self):
        with pytest.raises(ValueError, match="divide"):
            GridSpec(link_length=310.0).validate()

    def test_cfl_violation_rejected(self):
        with pytest.raises(ValueError, match="CFL"):
            GridSpec(v_f=4.0, w=5.0, link_length=100.0, dt=5.0).validate()

    def test_nonpositive_constant_rejected(self):
        with pytest.raises(ValueError):
            GridSpec(k_jam=0.0).validate()

    def test_all_cells_start_empty(self):
        net = build_grid(GridSpec())
        state = net.empty_state()
        assert state.n.shape == (192,)
        assert np.all(state.n == 0.0)

    def test_adjacency_symmetric_with_expected_degrees(self):
        net = build_grid(GridSpec())
        for i, nbrs in enumerate(net.adjacency):
            assert i not in nbrs
            for j in nbrs:
                assert i in net.adjacency[j]
        degrees = sorted(len(n) for n in net.adjacency)
        # 4 corners with 2, 8 edges with 3, 4 interior with 4
        assert degrees == [2] * 4 + [3] * 8 + [4] * 4


class TestCellFlow:
    def test_empty_sending_cell(self):
        assert cell_flow(0.0, 5.0, 11, 3, True) == 0.0

    def test_jammed_receiving_cell(self):
        assert cell_flow(5.0, 11.0, 11, 3, True) == 0.0

    def test_worked_example(self):
        assert cell_flow(5.0, 2.0, 11, 3, True, w_over_vf=1 / 3) == 3.0

    def test_closed_gate(self):
        assert cell_flow(5.0, 2.0, 11, 3, False) == 0.0

    def test_matches_brute_force_on_integer_grid(self):
        # full 12x12 grid of (n_up, n_down) pairs
        for n_up in range(12):
            for n_down in range(12):
                for gate in (False, True):
                    got = cell_flow(n_up, n_down, 11, 3, gate, 1 / 3)
                    want = brute_force_flow(n_up, n_down, 11, 3, gate, 1 / 3)
                    assert got == pytest.approx(want, abs=1e-12)

    def test_monotone_supply(self):
        # increasing downstream occupancy never increases the flow
        rng = np.random.default_rng(7)
        for _ in range(500):
            n_up = rng.uniform(0, 11)
            a, b = np.sort(rng.uniform(0, 11, size=2))
            f_low = cell_flow(n_up, a, 11, 3, True, 1 / 3)
            f_high = cell_flow(n_up, b, 11, 3, True, 1 / 3)
            assert f_high <= f_low + 1e-12


class TestStep:
    def test_empty_network_stays_empty(self):
        net = build_grid(GridSpec(entry_demand=0.0))
        state = net.empty_state()
        phases = np.zeros(net.n_nodes, dtype=np.int64)
        out = net.step(state, phases, np.random.default_rng(0))
        assert out.exited == 0.0
        assert np.all(state.n == 0.0)

    def test_two_cell_link_moves_three(self):
        # 150 m links at 75 m cells: 2 cells per link; gate closed
        spec = GridSpec(rows=1, cols=2, link_length=150.0, entry_demand=0.0)
        net = build_grid(spec)
        state = net.empty_state()
        li = net.link_id(0, 1)
        cells = net.link_cells(li)
        state.n[cells[0]] = 5.0
        state.n[cells[1]] = 2.0
        phases = np.full(net.n_nodes, 1, dtype=np.int64)  # nothing eastbound
        net.step(state, phases, None)
        assert state.n[cells[0]] == pytest.approx(2.0)
        assert state.n[cells[1]] == pytest.approx(5.0)

    def test_isolated_pulse_fully_exits(self):
        # all flow through, alternating every phase open for its turn
        spec = GridSpec(rows=1, cols=2, entry_demand=0.0,
                        turn_ratios=(1.0, 0.0, 0.0))
        net = build_grid(spec)
        state = net.empty_state()
        li = net.link_id(0, 1)
        state.n[net.link_cells(li)[0]] = 5.0
        phases = np.full(net.n_nodes, 2, dtype=np.int64)  # EW-through
        for _ in range(20):
            net.step(state, phases, None)
        assert state.exited == pytest.approx(5.0, abs=1e-12)
        assert np.all(np.abs(state.n) < 1e-12)

    def test_closed_gate_blocks_crossing(self):
        spec = GridSpec(rows=1, cols=2, entry_demand=0.0)
        net = build_grid(spec)
        state = net.empty_state()
        li = net.link_id(0, 1)
        last = net.link_cells(li)[-1]
        state.n[last] = 6.0
        phases = np.full(net.n_nodes, 0, dtype=np.int64)  # NS only: red for EW
        for _ in range(5):
            net.step(state, phases, None)
        assert state.exited == 0.0
        assert state.n[last] == pytest.approx(6.0)

    def test_conservation_with_demand(self):
        net = build_grid(GridSpec())
        state = net.empty_state()
        rng = np.random.default_rng(3)
        for t in range(300):
            phases = np.full(net.n_nodes, (t // 4) % 4, dtype=np.int64)
            net.step(state, phases, rng)
        residual = state.injected - state.exited - state.n.sum()
        assert abs(residual) < 1e-9

    def test_density_bounds_preserved(self):
        net = build_grid(GridSpec(entry_demand=0.3))
        state = net.empty_state()
        rng = np.random.default_rng(11)
        for t in range(200):
            phases = np.full(net.n_nodes, (t * 7) % 4, dtype=np.int64)
            net.step(state, phases, rng)
            assert state.n.min() >= -1e-9
            assert state.n.max() <= net.n_max + 1e-9


class TestInjection:
    def test_zero_rate_injects_nothing(self):
        net = build_grid(GridSpec(entry_demand=0.0))
        state = net.empty_state()
        out = net.step(state, np.zeros(net.n_nodes, dtype=np.int64),
                       np.random.default_rng(0))
        assert out.injected == 0.0

    def test_poisson_mean_per_entry(self):
        # empty the cells each step so clipping never binds; the sample mean
        # over 1e5 entry draws must sit within 0.01 of rate*dt = 0.5
        net = build_grid(GridSpec(rows=1, cols=2))
        state = net.empty_state()
        rng = np.random.default_rng(5)
        phases = np.zeros(net.n_nodes, dtype=np.int64)
        steps = 100_000 // len(net.entry_cells) + 1
        total = 0.0
        for _ in range(steps):
            state.n[:] = 0.0
            out = net.step(state, phases, rng)
            total += out.injected
        mean = total / (steps * len(net.entry_cells))
        assert mean == pytest.approx(0.5, abs=0.01)

    def test_full_entry_cell_drops_and_counts(self):
        net = build_grid(GridSpec(entry_demand=5.0))
        state = net.empty_state()
        state.n[net.entry_cells] = net.n_max
        before = state.n.sum()
        out = net.step(state, np.full(net.n_nodes, 1, dtype=np.int64),
                       np.random.default_rng(1))
        assert out.dropped > 0.0
        # nothing squeezed into full cells beyond what flows freed
        assert state.n.max() <= net.n_max + 1e-9
        assert state.dropped == out.dropped


class TestConfigFile:
    def test_round_trip(self, tmp_path):
        cfg = tmp_path / "grid.cfg"
        cfg.write_text(
            "# demo scenario\n"
            "rows = 4\ncols = 4\nlink_length_m = 300\n"
            "v_f = 15\nw = 5\nk_jam = 0.15\ndt_s = 5\n"
            "demand_veh_s = 0.2\nturn_straight = 0.5\n"
            "turn_left = 0.25\nturn_right = 0.25\nseed = 9\n")
        spec, extras = load_grid_config(cfg)
        assert spec.rows == 4 and spec.entry_demand == 0.2
        assert spec.turn_ratios == (0.5, 0.25, 0.25)
        assert extras["seed"] == 9

    def test_bad_line_rejected(self, tmp_path):
        cfg = tmp_path / "grid.cfg"
        cfg.write_text("rows 4\n")
        with pytest.raises(ValueError, match="bad config line"):
            load_grid_config(cfg)
