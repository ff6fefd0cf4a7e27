// Dispatch console entry point: wires the socket, state, controls, and the
// two canvases together. Everything the operator does becomes a wire
// message; the view only trusts what snapshots echo back.

import {
  KNOB_RANGE,
  WireError,
  parseServerMessage,
  serializeControl,
  serializeSetTarget,
} from "./protocol.js";
import {
  ConsoleState,
  applyLocalTarget,
  applyServerMessage,
  initialState,
  isStale,
  setConnection,
  setPlaying,
} from "./state.js";
import { ConsoleSocket } from "./socket.js";
import { drawGrid, drawSpacetimeStrip, gridLayout } from "./render.js";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

let state: ConsoleState = initialState();

const gridCanvas = el<HTMLCanvasElement>("grid");
const stripCanvas = el<HTMLCanvasElement>("strip");
const gSlider = el<HTMLInputElement>("g-star");
const cSlider = el<HTMLInputElement>("c-star");
const cEnabled = el<HTMLInputElement>("c-enabled");
const seedField = el<HTMLInputElement>("seed");
const rateField = el<HTMLInputElement>("rate");
const status = el<HTMLSpanElement>("status");
const readout = el<HTMLDivElement>("readout");
const knobNote = el<HTMLSpanElement>("knob-note");

gSlider.min = String(KNOB_RANGE.gMin);
gSlider.max = String(KNOB_RANGE.gMax);
cSlider.min = String(KNOB_RANGE.cMin);
cSlider.max = String(KNOB_RANGE.cMax);
gSlider.title = cSlider.title =
  "Targets outside the trained range are clamped: conditioning far " +
  "outside the data makes the policy erratic.";

const url =
  new URLSearchParams(location.search).get("ws") ?? "ws://127.0.0.1:8777/";

const socket = new ConsoleSocket({
  url,
  onStatus: (s) => {
    state = setConnection(state, s === "open" ? "open" : s);
    status.textContent = s;
  },
  onText: (text) => {
    try {
      state = applyServerMessage(state, parseServerMessage(text), Date.now());
    } catch (err) {
      if (err instanceof WireError) {
        state = { ...state, lastError: err.message };
      } else {
        throw err;
      }
    }
    redraw();
  },
});

function sendTargets(): void {
  const g = Number(gSlider.value);
  const c = cEnabled.checked ? Number(cSlider.value) : null;
  const atStep = state.snapshot ? state.snapshot.t : -1;
  state = applyLocalTarget(state, g, c, atStep, Date.now());
  const ok = socket.send(serializeSetTarget(state.gStar, state.cStar));
  knobNote.textContent = ok ? "pending" : "queued (disconnected)";
  redraw();
}

gSlider.addEventListener("change", sendTargets);
cSlider.addEventListener("change", sendTargets);
cEnabled.addEventListener("change", sendTargets);

el<HTMLButtonElement>("play").addEventListener("click", () => {
  state = setPlaying(state, true);
  socket.send(serializeControl("start"));
});
el<HTMLButtonElement>("pause").addEventListener("click", () => {
  state = setPlaying(state, false);
  socket.send(serializeControl("pause"));
});
el<HTMLButtonElement>("reset").addEventListener("click", () => {
  socket.send(serializeControl("reset", { seed: Number(seedField.value) }));
});
rateField.addEventListener("change", () => {
  socket.send(
    serializeControl("rate", { steps_per_s: Number(rateField.value) }),
  );
});
el<HTMLButtonElement>("save-log").addEventListener("click", () => {
  const blob = new Blob([JSON.stringify(state.knobLog, null, 2)], {
    type: "application/json",
  });
  const a = document.createElement("a");
  a.href = URL.createObjectURL(blob);
  a.download = "knob-trace.json";
  a.click();
});

function fmt(x: number | null | undefined, digits = 1): string {
  return x === null || x === undefined ? "-" : x.toFixed(digits);
}

function redraw(): void {
  const ctx = gridCanvas.getContext("2d");
  const sctx = stripCanvas.getContext("2d");
  if (state.scenario && state.snapshot && ctx && sctx) {
    const layout = gridLayout(
      state.scenario,
      gridCanvas.width,
      gridCanvas.height,
    );
    drawGrid(ctx, state.scenario, state.snapshot, layout);
    drawSpacetimeStrip(sctx, state.scenario, state.snapshots);
  }
  const snap = state.snapshot;
  const fin = state.finalMetrics;
  const stale = isStale(state, Date.now());
  readout.innerHTML = [
    `t = ${snap ? snap.t : "-"} ${stale ? "(stale)" : ""}`,
    `R&#770; = ${fmt(snap?.rtg)}  G* = ${fmt(state.gStar, 0)}` +
      (state.pendingTarget ? " (pending)" : ""),
    `ETT proj = ${fmt(snap?.metrics.ett_proj_s)} s`,
    `ACD = ${fmt(snap?.metrics.acd_s_per_veh)} s/veh`,
    `queues = ${fmt(snap?.metrics.queue_total)} veh`,
    `EV stops = ${snap ? snap.ev.stops : "-"}`,
    fin
      ? `<b>final: ETT ${fmt(fin.ett_s)} s, ACD ${fmt(fin.acd_s_per_veh)},` +
        ` arrived ${fin.arrived}</b>`
      : "",
    state.lastError ? `<i>error: ${state.lastError}</i>` : "",
  ].join("<br>");
}

setInterval(redraw, 500);
redraw();
