/**
 * Websocket wrapper: parses server frames, reports connection status, and
 * reconnects on its own with capped exponential backoff. The socket and the
 * timer functions are injectable so tests can run without a browser.
 */

import { parseServerMsg, ServerMsg, ClientCmd } from "./protocol.js";
import type { ConnStatus } from "./viewmodel.js";

export interface WsLike {
  onopen: (() => void) | null;
  onclose: (() => void) | null;
  onerror: (() => void) | null;
  onmessage: ((ev: { data: unknown }) => void) | null;
  send(data: string): void;
  close(): void;
}

export type WsFactory = (url: string) => WsLike;
export type Schedule = (fn: () => void, ms: number) => unknown;
export type Cancel = (handle: unknown) => void;

export interface SocketHooks {
  onMsg(msg: ServerMsg): void;
  onStatus(status: ConnStatus): void;
}

export function backoffMs(attempt: number): number {
  return Math.min(4000, 250 * 2 ** attempt);
}

export class SocketClient {
  private ws: WsLike | null = null;
  private open = false;
  private attempt = 0;
  private timer: unknown = null;
  private stopped = false;

  constructor(
    private url: string,
    private hooks: SocketHooks,
    private factory: WsFactory = (u) => new WebSocket(u) as unknown as WsLike,
    private schedule: Schedule = (fn, ms) => setTimeout(fn, ms),
    private cancel: Cancel = (h) => clearTimeout(h as number),
  ) {}

  connect(): void {
    if (this.stopped) return;
    this.hooks.onStatus("connecting");
    const ws = this.factory(this.url);
    this.ws = ws;
    ws.onopen = () => {
      this.attempt = 0;
      this.open = true;
      this.hooks.onStatus("open");
    };
    ws.onmessage = (ev) => {
      if (typeof ev.data !== "string") return;
      const msg = parseServerMsg(ev.data);
      if (msg !== null) this.hooks.onMsg(msg);
    };
    ws.onerror = () => {
      // the close handler owns recovery; errors always precede a close
    };
    ws.onclose = () => {
      if (this.ws !== ws) return;
      this.ws = null;
      this.open = false;
      if (this.stopped) return;
      this.hooks.onStatus("closed");
      const delay = backoffMs(this.attempt);
      this.attempt += 1;
      this.timer = this.schedule(() => {
        this.timer = null;
        this.connect();
      }, delay);
    };
  }

  /** Send one command; false if the socket is not open yet. */
  send(cmd: ClientCmd): boolean {
    if (this.ws === null || !this.open) return false;
    this.ws.send(JSON.stringify(cmd));
    return true;
  }

  close(): void {
    this.stopped = true;
    if (this.timer !== null) {
      this.cancel(this.timer);
      this.timer = null;
    }
    if (this.ws !== null) {
      const ws = this.ws;
      this.ws = null;
      ws.close();
    }
  }
}
