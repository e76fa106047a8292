// Service access over an injectable line transport. The protocol layer
// never touches sockets directly, so tests drive it with an in-memory
// transport and a WebSocket bridge could be slotted in for browsers;
// connectTcp covers Node deployments talking to the service directly.

import {
  decodeEvent,
  decodeResponse,
  encodeLine,
  type Edit,
  type LifecycleEvent,
  type ServiceResponse,
  type VerdictEvent,
} from "./protocol.js";

export interface LineTransport {
  send(line: string): void;
  onLine(handler: (line: string) => void): void;
  onClose(handler: () => void): void;
  close(): void;
}

export class ServiceError extends Error {
  constructor(readonly code: string, message: string) {
    super(message);
    this.name = "ServiceError";
  }
}

export interface StartOptions {
  source: string;
  model?: string;
  config?: Record<string, number> | string;
  session_id?: string;
}

/** Control-socket client; requests are answered in order, one line each. */
export class ServiceClient {
  private pending: Array<{
    resolve: (r: ServiceResponse) => void;
    reject: (e: Error) => void;
  }> = [];

  constructor(private transport: LineTransport) {
    transport.onLine((line) => this.handleLine(line));
    transport.onClose(() => this.failAll(new ServiceError("Disconnected", "connection closed")));
  }

  private handleLine(line: string): void {
    const waiter = this.pending.shift();
    if (!waiter) {
      return; // unsolicited line; control socket never pushes
    }
    try {
      waiter.resolve(decodeResponse(line));
    } catch (err) {
      waiter.reject(err as Error);
    }
  }

  private failAll(error: Error): void {
    const waiting = this.pending.splice(0);
    for (const waiter of waiting) {
      waiter.reject(error);
    }
  }

  request(payload: Record<string, unknown>): Promise<ServiceResponse> {
    return new Promise((resolve, reject) => {
      this.pending.push({ resolve, reject });
      this.transport.send(encodeLine(payload));
    });
  }

  private async checked(payload: Record<string, unknown>): Promise<ServiceResponse> {
    const response = await this.request(payload);
    if (!response.ok) {
      throw new ServiceError(response.error ?? "Unknown", response.message ?? "request failed");
    }
    return response;
  }

  async start(options: StartOptions): Promise<string> {
    const response = await this.checked({ cmd: "start", ...options });
    return response.session ?? "";
  }

  async stop() {
    const response = await this.checked({ cmd: "stop" });
    return response.bundle!;
  }

  async reviewGet() {
    const response = await this.checked({ cmd: "review_get" });
    return response.bundle!;
  }

  async reviewSubmit(edits: Edit[], journal: number[]): Promise<void> {
    await this.checked({ cmd: "review_submit", edits, journal });
  }

  close(): void {
    this.transport.close();
  }
}

export interface EventHandlers {
  onVerdict?: (event: VerdictEvent) => void;
  onLifecycle?: (event: LifecycleEvent) => void;
  onDisconnect?: () => void;
  onProtocolError?: (error: Error) => void;
}

/** Event-socket subscription; dispatches one decoded event per line. */
export class EventStream {
  constructor(transport: LineTransport, handlers: EventHandlers) {
    transport.onLine((line) => {
      let event;
      try {
        event = decodeEvent(line);
      } catch (err) {
        handlers.onProtocolError?.(err as Error);
        return;
      }
      if (event.evt === "verdict") {
        handlers.onVerdict?.(event);
      } else {
        handlers.onLifecycle?.(event);
      }
    });
    transport.onClose(() => handlers.onDisconnect?.());
  }
}

/** Node transport: raw TCP to the service's control or event port. */
export async function connectTcp(host: string, port: number): Promise<LineTransport> {
  const net = await import("node:net");
  const socket = net.createConnection({ host, port });
  await new Promise<void>((resolve, reject) => {
    socket.once("connect", () => resolve());
    socket.once("error", reject);
  });
  let lineHandler: ((line: string) => void) | null = null;
  let closeHandler: (() => void) | null = null;
  let buffer = "";
  socket.on("data", (chunk) => {
    buffer += chunk.toString("utf-8");
    let newline;
    while ((newline = buffer.indexOf("\n")) >= 0) {
      const line = buffer.slice(0, newline);
      buffer = buffer.slice(newline + 1);
      if (line.trim()) {
        lineHandler?.(line);
      }
    }
  });
  socket.on("close", () => closeHandler?.());
  socket.on("error", () => socket.destroy());
  return {
    send: (line) => void socket.write(line),
    onLine: (handler) => {
      lineHandler = handler;
    },
    onClose: (handler) => {
      closeHandler = handler;
    },
    close: () => socket.end(),
  };
}
