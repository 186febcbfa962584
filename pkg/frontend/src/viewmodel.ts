/**
 * Client-side view state.
 *
 * Holds the most recent server snapshot plus purely presentational state
 * (connection status, the click marker, transient hints). All navigation
 * state comes from the server verbatim; nothing here steps the simulation.
 */

import type { ServerMsg, StateUpdate } from "./protocol.js";

export type ConnStatus = "connecting" | "open" | "closed";

export interface Marker {
  x: number;
  y: number;
}

export class ViewModel {
  frame: StateUpdate | null = null;
  status: ConnStatus = "connecting";
  /** most recent server error code, kept for the hint line */
  lastError: string | null = null;
  marker: Marker | null = null;
  hint: string | null = null;
  /** bumps on every new hint so the UI can restart its flash animation */
  hintSeq = 0;

  applyServer(msg: ServerMsg): void {
    if (msg.type === "error") {
      this.lastError = msg.code;
      this.flash(`server rejected command: ${msg.code}`);
      return;
    }
    const prev = this.frame;
    this.frame = msg;
    // the marker's gesture window is over once the episode ends or restarts
    const restarted = prev !== null && msg.episode.steps < prev.episode.steps;
    if (msg.episode.done || restarted) this.marker = null;
  }

  setStatus(status: ConnStatus): void {
    this.status = status;
  }

  placeMarker(x: number, y: number): void {
    this.marker = { x, y };
  }

  clearMarker(): void {
    this.marker = null;
  }

  flash(text: string): void {
    this.hint = text;
    this.hintSeq += 1;
  }

  hasActiveEpisode(): boolean {
    return this.frame !== null && !this.frame.episode.done;
  }

  /**
   * Where the pointing human stands: the agent's start pose for the
   * current episode, i.e. the oldest trajectory entry.
   */
  anchor(): [number, number] | null {
    const f = this.frame;
    if (f === null || f.trajectory.length === 0) return null;
    const [x, y] = f.trajectory[0];
    return [x, y];
  }
}
