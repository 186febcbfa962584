/**
 * Wire types for the steering gateway websocket.
 *
 * The server sends full state snapshots; the client treats them as the only
 * source of truth and never advances poses or episode state on its own.
 */

export interface Pose {
  x: number;
  y: number;
  heading_deg: number;
}

export interface EpisodeInfo {
  steps: number;
  stops: number;
  done: boolean;
  success: boolean;
}

export interface Tallies {
  sr: number;
  spl: number;
  n: number;
}

export interface SceneInfo {
  scene_id: string;
  scene_type: string;
  width_m: number;
  height_m: number;
  /** grid[iy][ix], 0 = free, 1 = blocked; row 0 is the bottom of the room */
  grid: number[][];
}

export interface ObjectInfo {
  instance: number;
  category: number;
  anchor: number[];
  /** occupied grid cells as [ix, iy] pairs */
  footprint: number[][];
}

export interface TargetInfo {
  category: number;
  instance: number;
}

export interface StateUpdate {
  type: "state_update";
  seq: number;
  pose: Pose;
  /** visited poses as [x, y, heading_deg], oldest first */
  trajectory: number[][];
  /** 32 rays fanned over the field of view: [depth_m, category or -1] */
  rays: number[][];
  objects: ObjectInfo[];
  target: TargetInfo;
  gesture_kind: string | null;
  last_reward: number | null;
  episode: EpisodeInfo;
  tallies: Tallies;
  scene: SceneInfo;
  injected: Record<string, unknown> | null;
  condition: string;
  pace: number;
  paused: boolean;
}

export interface ErrorMsg {
  type: "error";
  code: string;
}

export type ServerMsg = StateUpdate | ErrorMsg;

export type ClientCmd =
  | { type: "reset" }
  | { type: "pause" }
  | { type: "resume" }
  | { type: "set_pace"; sps: number }
  | { type: "point"; bearing_deg: number }
  | { type: "intervene" };

function isNum(v: unknown): v is number {
  return typeof v === "number" && Number.isFinite(v);
}

function isPose(v: unknown): v is Pose {
  if (typeof v !== "object" || v === null) return false;
  const p = v as Record<string, unknown>;
  return isNum(p.x) && isNum(p.y) && isNum(p.heading_deg);
}

function isEpisode(v: unknown): v is EpisodeInfo {
  if (typeof v !== "object" || v === null) return false;
  const e = v as Record<string, unknown>;
  return isNum(e.steps) && isNum(e.stops) &&
    typeof e.done === "boolean" && typeof e.success === "boolean";
}

function isScene(v: unknown): v is SceneInfo {
  if (typeof v !== "object" || v === null) return false;
  const s = v as Record<string, unknown>;
  return typeof s.scene_id === "string" && isNum(s.width_m) &&
    isNum(s.height_m) && Array.isArray(s.grid);
}

export function isStateUpdate(v: unknown): v is StateUpdate {
  if (typeof v !== "object" || v === null) return false;
  const m = v as Record<string, unknown>;
  return m.type === "state_update" && isNum(m.seq) && isPose(m.pose) &&
    Array.isArray(m.trajectory) && Array.isArray(m.rays) &&
    Array.isArray(m.objects) && isEpisode(m.episode) && isScene(m.scene) &&
    typeof m.tallies === "object" && m.tallies !== null;
}

/** Parse one websocket text payload; null for anything malformed. */
export function parseServerMsg(raw: string): ServerMsg | null {
  let data: unknown;
  try {
    data = JSON.parse(raw);
  } catch {
    return null;
  }
  if (typeof data !== "object" || data === null) return null;
  const m = data as Record<string, unknown>;
  if (m.type === "error" && typeof m.code === "string") {
    return { type: "error", code: m.code };
  }
  if (isStateUpdate(data)) return data;
  return null;
}
