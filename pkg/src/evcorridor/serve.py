"""Live dispatch service: streams snapshots, accepts mid-episode targets.

One operator session at a time. The session loop owns the episode; incoming
messages are applied strictly between control steps, so a target update
never lands mid-step. Disconnecting pauses the episode; a reconnecting
console resumes from the next snapshot.
"""

from __future__ import annotations

import socket
import time

from . import wire
from .env import CorridorEnv, Scenario
from .model.checkpoint import load_checkpoint
from .model.rollout import LiveRollout
from .ws import ConnectionClosed, WebSocket, accept_websocket

DEFAULT_RATE = 2.0          # snapshots (control steps) per wall-clock second


class DispatchService:
    def __init__(self, checkpoint_path: str, scenario: Scenario,
                 host: str = "127.0.0.1", port: int = 8777,
                 rate: float = DEFAULT_RATE, seed: int = 0,
                 g_star: float = 0.0, c_star: float | None = None):
        self.model, self.header = load_checkpoint(checkpoint_path)
        self.scenario = scenario
        self.env = CorridorEnv(scenario)
        if self.model.cfg.k != self.env.k_max:
            raise ValueError(
                f"checkpoint was trained for corridors of {self.model.cfg.k} "
                f"slots, scenario has {self.env.k_max}")
        self.host, self.port = host, port
        self.rate = rate
        self.seed = seed
        self.g_star = g_star
        self.c_star = c_star
        self._default_targets = (g_star, c_star)
        self.live: LiveRollout | None = None
        self.running = False
        self._steps_left: int | None = None
        self._listener: socket.socket | None = None

    # -- lifecycle -----------------------------------------------------------

    def bind(self) -> int:
        self._listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._listener.bind((self.host, self.port))
        self._listener.listen(1)
        self.port = self._listener.getsockname()[1]
        return self.port

    def close(self) -> None:
        if self._listener is not None:
            self._listener.close()
            self._listener = None

    def serve_forever(self, max_sessions: int | None = None,
                      accept_timeout: float | None = None) -> None:
        if self._listener is None:
            self.bind()
        served = 0
        while max_sessions is None or served < max_sessions:
            try:
                ws = accept_websocket(self._listener, timeout=accept_timeout)
            except (socket.timeout, TimeoutError):
                break
            try:
                self._run_session(ws)
            finally:
                ws.close()
                self.running = False      # disconnect pauses the episode
            served += 1

    # -- session loop ----------------------------------------------------------

    def _ensure_episode(self) -> None:
        if self.live is None:
            self._reset_episode(self.seed)

    def _reset_episode(self, seed: int) -> None:
        self.seed = seed
        # fresh episodes start from the configured default targets so that
        # reset(seed) plus an identical knob trace replays identically
        self.g_star, self.c_star = self._default_targets
        self.live = LiveRollout(self.model, self.env, self.g_star,
                                c_star=self.c_star, seed=seed,
                                record_obs=False)
        self.running = False
        self._steps_left = None

    def _run_session(self, ws: WebSocket) -> None:
        ws.send_text(wire.serialize(wire.hello()))
        self._ensure_episode()
        ws.send_text(wire.serialize(self._scenario_message()))
        next_due = time.monotonic()
        while True:
            now = time.monotonic()
            if self.running and not self.live.done:
                wait = max(next_due - now, 1e-4)
            else:
                wait = 0.25
            try:
                text = ws.recv_text(timeout=wait)
            except (socket.timeout, TimeoutError, BlockingIOError):
                text = None
            except ConnectionClosed:
                return
            if text is not None:
                try:
                    msg = wire.parse(text)
                    self._apply_message(msg, ws)
                except wire.WireError as exc:
                    ws.send_text(wire.serialize(wire.error_reply(str(exc))))
                    continue
                except _SessionDone:
                    return
                continue

            if self.running and not self.live.done \
                    and time.monotonic() >= next_due:
                self.live.step()
                ws.send_text(wire.serialize(self._snapshot_message()))
                next_due = time.monotonic() + 1.0 / self.rate
                if self._steps_left is not None:
                    self._steps_left -= 1
                    if self._steps_left <= 0:
                        self.running = False
                        self._steps_left = None
                if self.live.done:
                    self.running = False
                    ws.send_text(wire.serialize(self._metrics_message()))

    def _apply_message(self, msg: dict, ws: WebSocket) -> None:
        mtype = msg["type"]
        if mtype == "set_target":
            self._ensure_episode()
            g = msg.get("g_star")
            c = msg.get("c_star")
            self.g_star = g if g is not None else self.g_star
            self.c_star = c if c is not None else self.c_star
            self.live.set_targets(g, c)
        elif mtype == "control":
            action = msg["action"]
            if action in ("start", "resume"):
                self._ensure_episode()
                if self.live.done:
                    ws.send_text(wire.serialize(self._metrics_message()))
                else:
                    self.running = True
                    self._steps_left = msg.get("steps")
            elif action == "pause":
                self.running = False
            elif action == "reset":
                self._reset_episode(int(msg["seed"]))
                ws.send_text(wire.serialize(self._scenario_message()))
            elif action == "rate":
                self.rate = float(msg["steps_per_s"])
        elif mtype == "bye":
            raise _SessionDone
        elif mtype == "hello":
            pass
        else:
            raise wire.WireError(f"server cannot handle {mtype!r}")

    # -- messages ---------------------------------------------------------------

    def _scenario_message(self) -> dict:
        env = self.env
        spec = self.scenario.spec
        return {
            "type": "scenario",
            "rows": spec.rows, "cols": spec.cols,
            "link_length_m": spec.link_length,
            "cell_length_m": spec.cell_length,
            "cells_per_link": env.net.cells_per_link,
            "n_cells": env.net.n_cells,
            "dt_s": spec.dt,
            "t_max": env.t_max,
            "seed": self.seed,
            "route": list(map(int, env.route.nodes)),
            "required_phases": list(map(int, env.route.required_phase)),
            "route_length_m": env.route.length_m,
            "anchor_return": self.live.anchor,
            "g_star_cal": self.live.cal,
            "g_star_gain": self.live.gain,
            "g_star": self.g_star,
            "c_star": self.c_star,
            "links": [[int(env.net.link_from[i]), int(env.net.link_to[i])]
                      for i in range(env.net.n_links)],
        }

    def _snapshot_message(self) -> dict:
        env = self.env
        live = self.live
        n_max = env.net.n_max
        ev = env.ev
        elapsed = env.t * self.scenario.spec.dt
        if ev.arrived:
            ett_proj = ev.arrival_time
        else:
            remaining = max(ev.route.length_m - ev.pos_m, 0.0)
            ett_proj = elapsed + remaining / self.scenario.spec.v_f
        throughput = float(env.state.exited)
        acd = (env.cross_delay_veh_s / throughput) if throughput > 0 else None
        return {
            "type": "snapshot",
            "t": env.t - 1,
            "rtg": live.rtg_hist[-1],
            "ctg": live.ctg_hist[-1],
            "g_star": self.g_star,
            "c_star": self.c_star,
            "reward": live.rewards[-1],
            "cost": live.costs[-1],
            "density": [round(float(x) / n_max, 4) for x in env.state.n],
            "phases": [int(p) for p in env.applied_phases()],
            "ev": {
                "pos_m": ev.pos_m,
                "speed": ev.speed,
                "cell": int(ev.cell),
                "route_index": int(ev.cell_index),
                "arrived": bool(ev.arrived),
                "stops": int(ev.stop_count),
            },
            "metrics": {
                "ett_proj_s": ett_proj,
                "acd_s_per_veh": acd,
                "queue_total": live.costs[-1],
                "throughput": throughput,
            },
        }

    def _metrics_message(self) -> dict:
        m = self.live.result().metrics
        rec = m.as_record()
        rec["type"] = "metrics"
        return rec


class _SessionDone(Exception):
    pass


def serve(checkpoint_path: str, scenario: Scenario, host: str, port: int,
          rate: float = DEFAULT_RATE, seed: int = 0,
          max_sessions: int | None = None) -> None:
    service = DispatchService(checkpoint_path, scenario, host=host, port=port,
                              rate=rate, seed=seed)
    bound = service.bind()
    print(f"dispatch service listening on ws://{service.host}:{bound}/")
    try:
        service.serve_forever(max_sessions=max_sessions)
    finally:
        service.close()
