/**
 * Canvas drawing. A pure function of the view model and calibration: the
 * agent is drawn at exactly the pose the server sent, with no interpolation
 * or extrapolation between frames.
 */

import type { StateUpdate } from "./protocol.js";
import type { Marker } from "./viewmodel.js";
import { Calibration, worldToCanvas, degToRad } from "./geometry.js";

/** The 2D context subset used here; lets tests record draw calls. */
export interface DrawCtx {
  fillStyle: string | CanvasGradient | CanvasPattern;
  strokeStyle: string | CanvasGradient | CanvasPattern;
  lineWidth: number;
  globalAlpha: number;
  clearRect(x: number, y: number, w: number, h: number): void;
  fillRect(x: number, y: number, w: number, h: number): void;
  strokeRect(x: number, y: number, w: number, h: number): void;
  beginPath(): void;
  moveTo(x: number, y: number): void;
  lineTo(x: number, y: number): void;
  arc(x: number, y: number, r: number, a0: number, a1: number, ccw?: boolean): void;
  closePath(): void;
  fill(): void;
  stroke(): void;
}

const CELL_M = 0.25;
const FOV_DEG = 90;

export const CATEGORY_COLORS = [
  "#e6554d", "#f2930d", "#e8c517", "#7dbb42", "#2aa198",
  "#3f8fd2", "#6c71c4", "#c65fa6", "#8a6d3b", "#5c7487",
];

const FLOOR = "#f4f1ea";
const WALL = "#3a3f44";

export function drawFrame(
  ctx: DrawCtx,
  frame: StateUpdate,
  marker: Marker | null,
  cal: Calibration,
  canvasW: number,
  canvasH: number,
): void {
  ctx.globalAlpha = 1;
  ctx.clearRect(0, 0, canvasW, canvasH);

  drawRoom(ctx, frame, cal);
  drawRays(ctx, frame, cal);
  drawObjects(ctx, frame, cal);
  drawTrail(ctx, frame, cal);
  drawAgent(ctx, frame, cal);
  if (marker !== null) drawMarker(ctx, marker, cal);
}

function cellRect(cal: Calibration, ix: number, iy: number): [number, number, number, number] {
  // cell (ix, iy) spans [ix, ix+1) x [iy, iy+1) in cell units; its top-left
  // corner on canvas is the world point (ix * CELL_M, (iy + 1) * CELL_M)
  const [cx, cy] = worldToCanvas(cal, ix * CELL_M, (iy + 1) * CELL_M);
  const side = CELL_M * cal.scale;
  return [cx, cy, side, side];
}

function drawRoom(ctx: DrawCtx, frame: StateUpdate, cal: Calibration): void {
  const scene = frame.scene;
  const [left, top] = worldToCanvas(cal, 0, scene.height_m);
  ctx.fillStyle = FLOOR;
  ctx.fillRect(left, top, scene.width_m * cal.scale, scene.height_m * cal.scale);
  ctx.fillStyle = WALL;
  for (let iy = 0; iy < scene.grid.length; iy++) {
    const row = scene.grid[iy];
    for (let ix = 0; ix < row.length; ix++) {
      if (row[ix] !== 1) continue;
      const [x, y, w, h] = cellRect(cal, ix, iy);
      ctx.fillRect(x, y, w, h);
    }
  }
}

function drawRays(ctx: DrawCtx, frame: StateUpdate, cal: Calibration): void {
  const pose = frame.pose;
  const [px, py] = worldToCanvas(cal, pose.x, pose.y);
  const n = frame.rays.length;
  if (n === 0) return;
  ctx.globalAlpha = 0.12;
  ctx.strokeStyle = "#3f8fd2";
  ctx.lineWidth = 1;
  ctx.beginPath();
  for (let i = 0; i < n; i++) {
    const depth = frame.rays[i][0];
    const off = -FOV_DEG / 2 + (FOV_DEG * i) / (n - 1);
    const ang = degToRad(pose.heading_deg + off);
    const [ex, ey] = worldToCanvas(
      cal,
      pose.x + depth * Math.cos(ang),
      pose.y + depth * Math.sin(ang),
    );
    ctx.moveTo(px, py);
    ctx.lineTo(ex, ey);
  }
  ctx.stroke();
  ctx.globalAlpha = 1;
}

function drawObjects(ctx: DrawCtx, frame: StateUpdate, cal: Calibration): void {
  const target = frame.target;
  for (const obj of frame.objects) {
    ctx.fillStyle = CATEGORY_COLORS[obj.category % CATEGORY_COLORS.length];
    for (const cell of obj.footprint) {
      const [x, y, w, h] = cellRect(cal, cell[0], cell[1]);
      ctx.fillRect(x, y, w, h);
    }
  }
  // outline the goal instance so it reads at a glance
  for (const obj of frame.objects) {
    if (obj.instance !== target.instance) continue;
    ctx.strokeStyle = "#d4b106";
    ctx.lineWidth = 3;
    for (const cell of obj.footprint) {
      const [x, y, w, h] = cellRect(cal, cell[0], cell[1]);
      ctx.strokeRect(x, y, w, h);
    }
  }
}

function drawTrail(ctx: DrawCtx, frame: StateUpdate, cal: Calibration): void {
  const traj = frame.trajectory;
  if (traj.length === 0) return;
  ctx.strokeStyle = "#5c7487";
  ctx.globalAlpha = 0.5;
  ctx.lineWidth = 1.5;
  ctx.beginPath();
  for (let i = 0; i < traj.length; i++) {
    const [x, y] = worldToCanvas(cal, traj[i][0], traj[i][1]);
    if (i === 0) ctx.moveTo(x, y);
    else ctx.lineTo(x, y);
  }
  ctx.stroke();
  ctx.fillStyle = "#5c7487";
  for (const p of traj) {
    const [x, y] = worldToCanvas(cal, p[0], p[1]);
    ctx.beginPath();
    ctx.arc(x, y, 2, 0, Math.PI * 2);
    ctx.fill();
  }
  ctx.globalAlpha = 1;
}

function drawAgent(ctx: DrawCtx, frame: StateUpdate, cal: Calibration): void {
  const pose = frame.pose;
  const [px, py] = worldToCanvas(cal, pose.x, pose.y);
  const heading = degToRad(pose.heading_deg);
  const wedgeR = 1.2 * cal.scale;

  // field of view wedge, 90 degrees centered on the heading; canvas angles
  // run clockwise so world angles flip sign
  ctx.fillStyle = "#3f8fd2";
  ctx.globalAlpha = 0.15;
  ctx.beginPath();
  ctx.moveTo(px, py);
  ctx.arc(px, py, wedgeR, -(heading + degToRad(FOV_DEG / 2)),
    -(heading - degToRad(FOV_DEG / 2)));
  ctx.closePath();
  ctx.fill();
  ctx.globalAlpha = 1;

  ctx.fillStyle = frame.episode.done
    ? (frame.episode.success ? "#2f9e44" : "#c92a2a")
    : "#1d4ed8";
  ctx.beginPath();
  ctx.arc(px, py, 6, 0, Math.PI * 2);
  ctx.fill();

  const [hx, hy] = worldToCanvas(
    cal,
    pose.x + 0.35 * Math.cos(heading),
    pose.y + 0.35 * Math.sin(heading),
  );
  ctx.strokeStyle = "#ffffff";
  ctx.lineWidth = 2;
  ctx.beginPath();
  ctx.moveTo(px, py);
  ctx.lineTo(hx, hy);
  ctx.stroke();
}

function drawMarker(ctx: DrawCtx, marker: Marker, cal: Calibration): void {
  const [mx, my] = worldToCanvas(cal, marker.x, marker.y);
  ctx.strokeStyle = "#c2255c";
  ctx.lineWidth = 2;
  ctx.beginPath();
  ctx.arc(mx, my, 8, 0, Math.PI * 2);
  ctx.stroke();
  ctx.beginPath();
  ctx.moveTo(mx - 12, my);
  ctx.lineTo(mx + 12, my);
  ctx.moveTo(mx, my - 12);
  ctx.lineTo(mx, my + 12);
  ctx.stroke();
}
