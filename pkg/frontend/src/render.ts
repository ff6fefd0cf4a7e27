// Canvas rendering: grid heatmap with phase colors and the EV marker,
// plus an append-only space-time strip. Geometry helpers are pure so the
// layout can be unit tested without a canvas.

import { ScenarioMsg, Snapshot } from "./protocol.js";

export interface CellSegment {
  x0: number;
  y0: number;
  x1: number;
  y1: number;
  cell: number;
}

export interface GridLayout {
  nodeXY: [number, number][];
  segments: CellSegment[];
  scale: number;
  margin: number;
}

// density 0 -> pale, 1 -> saturated red-brown
export function densityColor(d: number): string {
  const v = Math.min(Math.max(d, 0), 1);
  const r = Math.round(235 - 90 * v);
  const g = Math.round(238 - 170 * v);
  const b = Math.round(240 - 190 * v);
  return `rgb(${r},${g},${b})`;
}

export const PHASE_COLORS = ["#2f9e44", "#2b8a3e", "#1971c2", "#1864ab"];

export function gridLayout(
  scenario: ScenarioMsg,
  width: number,
  height: number,
): GridLayout {
  const margin = 40;
  const cols = scenario.cols;
  const rows = scenario.rows;
  const spanX = Math.max(cols - 1, 1);
  const spanY = Math.max(rows - 1, 1);
  const scale = Math.min(
    (width - 2 * margin) / spanX,
    (height - 2 * margin) / spanY,
  );
  const nodeXY: [number, number][] = [];
  for (let r = 0; r < rows; r++) {
    for (let c = 0; c < cols; c++) {
      nodeXY.push([margin + c * scale, margin + r * scale]);
    }
  }
  const per = scenario.cells_per_link;
  const segments: CellSegment[] = [];
  scenario.links.forEach(([from, to], li) => {
    const [x0, y0] = nodeXY[from];
    const [x1, y1] = nodeXY[to];
    // offset right of travel so the two directions do not overlap
    const dx = x1 - x0;
    const dy = y1 - y0;
    const len = Math.hypot(dx, dy) || 1;
    const ox = (-dy / len) * 5;
    const oy = (dx / len) * 5;
    for (let j = 0; j < per; j++) {
      const a = j / per;
      const b = (j + 1) / per;
      segments.push({
        x0: x0 + dx * a + ox,
        y0: y0 + dy * a + oy,
        x1: x0 + dx * b + ox,
        y1: y0 + dy * b + oy,
        cell: li * per + j,
      });
    }
  });
  return { nodeXY, segments, scale, margin };
}

export function evMarkerXY(
  scenario: ScenarioMsg,
  layout: GridLayout,
  posM: number,
): [number, number] {
  const linkLen = scenario.link_length_m;
  const legIndex = Math.min(
    Math.floor(posM / linkLen),
    scenario.route.length - 2,
  );
  const frac = Math.min((posM - legIndex * linkLen) / linkLen, 1);
  const [xa, ya] = layout.nodeXY[scenario.route[legIndex]];
  const [xb, yb] = layout.nodeXY[scenario.route[legIndex + 1]];
  return [xa + (xb - xa) * frac, ya + (yb - ya) * frac];
}

export function drawGrid(
  ctx: CanvasRenderingContext2D,
  scenario: ScenarioMsg,
  snapshot: Snapshot,
  layout: GridLayout,
): void {
  ctx.clearRect(0, 0, ctx.canvas.width, ctx.canvas.height);
  ctx.lineWidth = 4;
  for (const seg of layout.segments) {
    ctx.strokeStyle = densityColor(snapshot.density[seg.cell] ?? 0);
    ctx.beginPath();
    ctx.moveTo(seg.x0, seg.y0);
    ctx.lineTo(seg.x1, seg.y1);
    ctx.stroke();
  }
  snapshot.phases.forEach((phase, node) => {
    const [x, y] = layout.nodeXY[node];
    ctx.fillStyle = PHASE_COLORS[phase] ?? "#888";
    ctx.beginPath();
    ctx.arc(x, y, 7, 0, Math.PI * 2);
    ctx.fill();
    if (scenario.route.includes(node)) {
      ctx.strokeStyle = "#e03131";
      ctx.lineWidth = 2;
      ctx.stroke();
      ctx.lineWidth = 4;
    }
  });
  const [ex, ey] = evMarkerXY(scenario, layout, snapshot.ev.pos_m);
  ctx.fillStyle = snapshot.ev.arrived ? "#e8590c" : "#e03131";
  ctx.beginPath();
  ctx.arc(ex, ey, 6, 0, Math.PI * 2);
  ctx.fill();
  if (snapshot.ev.arrived) {
    const [dx, dy] = layout.nodeXY[scenario.route[scenario.route.length - 1]];
    ctx.strokeStyle = "#e8590c";
    ctx.lineWidth = 3;
    ctx.beginPath();
    ctx.arc(dx, dy, 12, 0, Math.PI * 2);
    ctx.stroke();
  }
}

// one column per snapshot: EV route progress plus per-intersection
// signal bands (green when the shown phase passes the EV)
export function spacetimeColumn(
  scenario: ScenarioMsg,
  snapshot: Snapshot,
): { progress: number; green: boolean[] } {
  const green = scenario.route.map(
    (node, j) => snapshot.phases[node] === scenario.required_phases[j],
  );
  return {
    progress: Math.min(snapshot.ev.pos_m / scenario.route_length_m, 1),
    green,
  };
}

export function drawSpacetimeStrip(
  ctx: CanvasRenderingContext2D,
  scenario: ScenarioMsg,
  snapshots: Snapshot[],
): void {
  const w = ctx.canvas.width;
  const h = ctx.canvas.height;
  ctx.clearRect(0, 0, w, h);
  if (snapshots.length === 0) return;
  const colW = Math.max(Math.min(w / snapshots.length, 6), 1);
  const k = scenario.route.length;
  snapshots.forEach((snap, i) => {
    const col = spacetimeColumn(scenario, snap);
    const x = i * colW;
    col.green.forEach((g, j) => {
      ctx.fillStyle = g ? "rgba(47,158,68,0.55)" : "rgba(224,49,49,0.45)";
      const y = h - ((j + 0.5) / k) * h;
      ctx.fillRect(x, y - 1.5, colW, 3);
    });
    ctx.fillStyle = "#111";
    ctx.fillRect(x, h - col.progress * h - 1.5, colW, 3);
  });
}
