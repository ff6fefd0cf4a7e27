// Reconnecting websocket wrapper. The constructor is injectable so tests
// can drive the console with a scripted fake.

export interface SocketLike {
  send(text: string): void;
  close(): void;
  onopen: ((ev?: unknown) => void) | null;
  onclose: ((ev?: unknown) => void) | null;
  onmessage: ((ev: { data: string }) => void) | null;
}

export type SocketFactory = (url: string) => SocketLike;

export interface ConsoleSocketOptions {
  url: string;
  factory?: SocketFactory;
  reconnectDelayMs?: number;
  onText: (text: string) => void;
  onStatus: (status: "connecting" | "open" | "closed") => void;
  scheduler?: (fn: () => void, ms: number) => void;
}

export class ConsoleSocket {
  private sock: SocketLike | null = null;
  private queue: string[] = [];
  private closedByUser = false;
  private opts: Required<ConsoleSocketOptions>;

  constructor(opts: ConsoleSocketOptions) {
    this.opts = {
      factory: (url: string) => new WebSocket(url) as unknown as SocketLike,
      reconnectDelayMs: 1000,
      scheduler: (fn, ms) => setTimeout(fn, ms),
      ...opts,
    } as Required<ConsoleSocketOptions>;
    this.connect();
  }

  private connect(): void {
    this.opts.onStatus("connecting");
    const sock = this.opts.factory(this.opts.url);
    this.sock = sock;
    sock.onopen = () => {
      this.opts.onStatus("open");
      for (const text of this.queue.splice(0)) {
        sock.send(text);
      }
    };
    sock.onmessage = (ev) => this.opts.onText(ev.data);
    sock.onclose = () => {
      this.opts.onStatus("closed");
      this.sock = null;
      if (!this.closedByUser) {
        this.opts.scheduler(() => this.connect(), this.opts.reconnectDelayMs);
      }
    };
  }

  // queued while disconnected and flushed on reconnect
  send(text: string): boolean {
    if (this.sock) {
      try {
        this.sock.send(text);
        return true;
      } catch {
        this.queue.push(text);
        return false;
      }
    }
    this.queue.push(text);
    return false;
  }

  close(): void {
    this.closedByUser = true;
    this.sock?.close();
  }
}
