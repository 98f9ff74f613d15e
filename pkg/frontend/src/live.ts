// WebSocket live feed with automatic reconnect. The dashboard never mutates
// data through this path; it only renders what arrives.

import type { LiveFrame } from "./types";

export type WebSocketCtor = new (url: string) => WebSocket;

export interface LiveFeedHandlers {
  onFrame: (frame: LiveFrame) => void;
  onConnectionChange: (connected: boolean) => void;
}

const RECONNECT_MIN_MS = 500;
const RECONNECT_MAX_MS = 8000;

export class LiveFeed {
  private ws: WebSocket | null = null;
  private backoffMs = RECONNECT_MIN_MS;
  private closed = false;
  private timer: ReturnType<typeof setTimeout> | null = null;

  constructor(
    private readonly url: string,
    private readonly handlers: LiveFeedHandlers,
    private readonly wsCtor: WebSocketCtor = WebSocket,
  ) {}

  connect(): void {
    this.closed = false;
    this.open();
  }

  private open(): void {
    const ws = new this.wsCtor(this.url);
    this.ws = ws;
    ws.onopen = () => {
      this.backoffMs = RECONNECT_MIN_MS;
      this.handlers.onConnectionChange(true);
    };
    ws.onmessage = (event: MessageEvent) => {
      this.handlers.onFrame(JSON.parse(String(event.data)) as LiveFrame);
    };
    ws.onclose = () => {
      this.handlers.onConnectionChange(false);
      this.scheduleReconnect();
    };
    ws.onerror = () => {
      ws.close();
    };
  }

  private scheduleReconnect(): void {
    if (this.closed || this.timer !== null) return;
    this.timer = setTimeout(() => {
      this.timer = null;
      if (!this.closed) this.open();
    }, this.backoffMs);
    this.backoffMs = Math.min(this.backoffMs * 2, RECONNECT_MAX_MS);
  }

  close(): void {
    this.closed = true;
    if (this.timer !== null) {
      clearTimeout(this.timer);
      this.timer = null;
    }
    this.ws?.close();
  }
}
