// Console state: a reducer over server messages plus local knob edits.
// The console never mutates simulation state directly; every change goes
// out as a wire message and is reflected back through snapshots.

import {
  MetricsMsg,
  ScenarioMsg,
  ServerMessage,
  Snapshot,
  clampTargets,
} from "./protocol.js";

export type Connection = "connecting" | "open" | "closed";

export interface KnobEvent {
  atStep: number;
  gStar: number;
  cStar: number | null;
  wallClock: number;
}

export interface ConsoleState {
  connection: Connection;
  scenario: ScenarioMsg | null;
  snapshot: Snapshot | null;
  snapshots: Snapshot[];
  finalMetrics: MetricsMsg | null;
  lastError: string | null;
  playing: boolean;
  gStar: number;
  cStar: number | null;
  pendingTarget: boolean;
  knobLog: KnobEvent[];
  lastSnapshotAt: number | null;
  series: { t: number; ettProj: number; acd: number | null; queue: number }[];
}

export function initialState(): ConsoleState {
  return {
    connection: "connecting",
    scenario: null,
    snapshot: null,
    snapshots: [],
    finalMetrics: null,
    lastError: null,
    playing: false,
    gStar: 0,
    cStar: null,
    pendingTarget: false,
    knobLog: [],
    lastSnapshotAt: null,
    series: [],
  };
}

export const STALE_AFTER_MS = 2000;

export function isStale(state: ConsoleState, now: number): boolean {
  return (
    state.playing &&
    state.lastSnapshotAt !== null &&
    now - state.lastSnapshotAt > STALE_AFTER_MS
  );
}

export function applyServerMessage(
  state: ConsoleState,
  msg: ServerMessage,
  now: number,
): ConsoleState {
  switch (msg.type) {
    case "hello":
      return { ...state, connection: "open" };
    case "scenario":
      return {
        ...state,
        scenario: msg,
        snapshot: null,
        snapshots: [],
        series: [],
        finalMetrics: null,
        gStar: msg.g_star,
        cStar: msg.c_star,
        pendingTarget: false,
      };
    case "snapshot": {
      const snapshots = state.snapshots.concat([msg]);
      const series = state.series.concat([
        {
          t: msg.t,
          ettProj: msg.metrics.ett_proj_s,
          acd: msg.metrics.acd_s_per_veh,
          queue: msg.metrics.queue_total,
        },
      ]);
      return {
        ...state,
        snapshot: msg,
        snapshots,
        series,
        lastSnapshotAt: now,
        // the next snapshot after a retarget reflects the new target
        pendingTarget: state.pendingTarget && msg.g_star !== state.gStar,
      };
    }
    case "metrics":
      return { ...state, finalMetrics: msg, playing: false };
    case "error":
      return { ...state, lastError: msg.message };
    default:
      return state;
  }
}

export function applyLocalTarget(
  state: ConsoleState,
  gStar: number,
  cStar: number | null,
  atStep: number,
  wallClock: number,
): ConsoleState {
  const { g, c } = clampTargets(gStar, cStar);
  return {
    ...state,
    gStar: g,
    cStar: c,
    pendingTarget: true,
    knobLog: state.knobLog.concat([
      { atStep, gStar: g, cStar: c, wallClock },
    ]),
  };
}

export function setConnection(
  state: ConsoleState,
  connection: Connection,
): ConsoleState {
  // a drop pauses the view; reconnecting resumes from the next snapshot
  return {
    ...state,
    connection,
    playing: connection === "open" ? state.playing : false,
  };
}

export function setPlaying(state: ConsoleState, playing: boolean): ConsoleState {
  return { ...state, playing };
}
