import { ConnectionStatus, TimingMessage } from "./types.js";

export interface StreamEvents {
  onFrame(data: ArrayBuffer): void;
  onTiming(timing: TimingMessage): void;
  onStatus(status: ConnectionStatus): void;
}

/** The subset of the WebSocket surface the client uses (injectable in tests). */
export interface WebSocketLike {
  binaryType: string;
  onopen: ((...args: any[]) => void) | null;
  onclose: ((...args: any[]) => void) | null;
  onerror: ((...args: any[]) => void) | null;
  onmessage: ((ev: any) => void) | null;
  close(): void;
}

export type WebSocketFactory = (url: string) => WebSocketLike;

/** Parse a text WS message; null if it is not a timing message. */
export function parseTiming(text: string): TimingMessage | null {
  let body: any;
  try {
    body = JSON.parse(text);
  } catch {
    return null;
  }
  if (body?.type !== "timing" || typeof body.interval_ms !== "number") {
    return null;
  }
  return body as TimingMessage;
}

/**
 * Stream consumer: binary messages are composited PNG frames, text messages
 * carry per-frame timings. Reconnects with a fixed delay after a drop.
 */
export class StreamClient {
  private ws: WebSocketLike | null = null;
  private stopped = false;

  constructor(
    private readonly url: string,
    private readonly events: StreamEvents,
    private readonly factory: WebSocketFactory,
    private readonly reconnectDelayMs: number = 1000,
  ) {}

  start(): void {
    this.stopped = false;
    this.connect("connecting");
  }

  stop(): void {
    this.stopped = true;
    if (this.ws) {
      this.ws.close();
      this.ws = null;
    }
  }

  private connect(status: ConnectionStatus): void {
    if (this.stopped) {
      return;
    }
    this.events.onStatus(status);
    const ws = this.factory(this.url);
    this.ws = ws;
    ws.binaryType = "arraybuffer";
    ws.onopen = () => this.events.onStatus("open");
    ws.onmessage = (ev) => this.handleMessage(ev.data);
    ws.onerror = () => ws.close();
    ws.onclose = () => {
      this.ws = null;
      if (!this.stopped) {
        this.events.onStatus("reconnecting");
        setTimeout(() => this.connect("reconnecting"), this.reconnectDelayMs);
      }
    };
  }

  handleMessage(data: unknown): void {
    if (typeof data === "string") {
      const timing = parseTiming(data);
      if (timing) {
        this.events.onTiming(timing);
      }
      return;
    }
    if (data instanceof ArrayBuffer) {
      this.events.onFrame(data);
    } else if (ArrayBuffer.isView(data as ArrayBufferView)) {
      const view = data as ArrayBufferView;
      const copy = new Uint8Array(view.byteLength);
      copy.set(new Uint8Array(view.buffer, view.byteOffset, view.byteLength));
      this.events.onFrame(copy.buffer);
    }
  }
}
