// Wire protocol shared with the dispatch service: one JSON object per
// websocket text message. Unknown fields are ignored for forward
// compatibility; unknown types are reported, not thrown.

export const KNOB_RANGE = { gMin: -400, gMax: 100, cMin: -100, cMax: 0 };

export interface Hello {
  type: "hello";
  version: number;
  role: string;
}

export interface ScenarioMsg {
  type: "scenario";
  rows: number;
  cols: number;
  link_length_m: number;
  cell_length_m: number;
  cells_per_link: number;
  n_cells: number;
  dt_s: number;
  t_max: number;
  seed: number;
  route: number[];
  required_phases: number[];
  route_length_m: number;
  anchor_return: number;
  g_star_cal: number;
  g_star: number;
  c_star: number | null;
  links: [number, number][];
}

export interface EvInfo {
  pos_m: number;
  speed: number;
  cell: number;
  route_index: number;
  arrived: boolean;
  stops: number;
}

export interface Snapshot {
  type: "snapshot";
  t: number;
  rtg: number;
  ctg: number;
  g_star: number;
  c_star: number | null;
  reward: number;
  cost: number;
  density: number[];
  phases: number[];
  ev: EvInfo;
  metrics: {
    ett_proj_s: number;
    acd_s_per_veh: number | null;
    queue_total: number;
    throughput: number;
  };
}

export interface MetricsMsg {
  type: "metrics";
  ett_s: number;
  acd_s_per_veh: number;
  throughput_veh: number;
  ev_stops: number;
  arrived: boolean;
  [key: string]: unknown;
}

export interface ErrorMsg {
  type: "error";
  message: string;
}

export type ServerMessage =
  | Hello
  | ScenarioMsg
  | Snapshot
  | MetricsMsg
  | ErrorMsg;

const SERVER_TYPES = new Set([
  "hello",
  "scenario",
  "snapshot",
  "metrics",
  "error",
  "bye",
]);

export class WireError extends Error {}

export function parseServerMessage(text: string): ServerMessage {
  let data: unknown;
  try {
    data = JSON.parse(text);
  } catch (err) {
    throw new WireError(`not valid JSON: ${String(err)}`);
  }
  if (typeof data !== "object" || data === null || Array.isArray(data)) {
    throw new WireError("message must be a JSON object");
  }
  const type = (data as { type?: unknown }).type;
  if (typeof type !== "string" || !SERVER_TYPES.has(type)) {
    throw new WireError(`unknown message type ${String(type)}`);
  }
  return data as ServerMessage;
}

export function clampTargets(gStar: number, cStar: number | null) {
  const g = Math.min(Math.max(gStar, KNOB_RANGE.gMin), KNOB_RANGE.gMax);
  const c =
    cStar === null
      ? null
      : Math.min(Math.max(cStar, KNOB_RANGE.cMin), KNOB_RANGE.cMax);
  return { g, c, clamped: g !== gStar || c !== cStar };
}

export function serializeSetTarget(gStar: number, cStar: number | null): string {
  const { g, c } = clampTargets(gStar, cStar);
  return JSON.stringify({ type: "set_target", g_star: g, c_star: c });
}

export function serializeControl(
  action: "start" | "pause" | "resume" | "reset" | "rate",
  extra: { seed?: number; steps_per_s?: number; steps?: number } = {},
): string {
  return JSON.stringify({ type: "control", action, ...extra });
}
