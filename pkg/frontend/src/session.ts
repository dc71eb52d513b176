import type { GatewayClient, SocketLike } from "./api.js";
import { parseHierarchy, type HierarchyNode } from "./hierarchy.js";
import {
  CONTROL_SEQ,
  SESSION_CLOSED,
  STREAM_DROPPED,
  type EventFrame,
  type SendResult,
  type SessionStatus,
} from "./types.js";

export interface Banner {
  kind: "info" | "error";
  text: string;
}

const MAX_RECONNECTS = 5;
/** Frame kinds after which the engine's status may have changed. */
const STATUS_KINDS = new Set(["session_start", "assistant_message", "finalization", "error"]);

/** All console state for one session tab.
 *
 * Every field is sourced from a gateway response: status from the status
 * endpoint, the tree from the graph endpoint, frames from the event socket,
 * memory panels from the scoped memory endpoint. Nothing is fabricated
 * client-side; updates are applied one at a time in arrival order.
 */
export class SessionStore {
  readonly frames: EventFrame[] = [];
  status: SessionStatus | null = null;
  hierarchy: HierarchyNode[] = [];
  banners: Banner[] = [];
  memoryPanel: { agent: string; records: EventFrame[] } | null = null;

  private lastSeq = 0;
  private socket: SocketLike | null = null;
  private closed = false;
  private reconnects = 0;
  private pending: Promise<void> = Promise.resolve();
  private listeners: Array<() => void> = [];

  constructor(
    private readonly client: GatewayClient,
    readonly sessionId: string,
  ) {}

  /** Composer unlocks only while the engine waits on the user. */
  get composerEnabled(): boolean {
    return this.status?.status === "awaiting_user";
  }

  subscribe(listener: () => void): void {
    this.listeners.push(listener);
  }

  private notify(): void {
    for (const listener of this.listeners) listener();
  }

  /** Resolves once every queued status refresh has landed. */
  settled(): Promise<void> {
    return this.pending;
  }

  async connect(): Promise<void> {
    this.status = await this.client.fetchStatus(this.sessionId);
    this.hierarchy = parseHierarchy(await this.client.fetchGraph(this.sessionId));
    this.openSocket();
    this.notify();
  }

  disconnect(): void {
    this.closed = true;
    this.socket?.close();
    this.socket = null;
  }

  private openSocket(): void {
    const socket = this.client.openEvents(this.sessionId);
    this.socket = socket;
    socket.onmessage = (event) => this.ingest(JSON.parse(event.data) as EventFrame);
    socket.onerror = () => this.banner("error", "event stream error");
    socket.onclose = () => {
      if (this.socket !== socket) return; // superseded by a reconnect
      this.socket = null;
      this.reconnect("event stream closed");
    };
  }

  /** The gateway replays the backlog from seq 1 on every connect, so a
   * reconnect only has to skip what is already displayed. */
  private reconnect(why: string): void {
    if (this.closed) return;
    if (this.reconnects >= MAX_RECONNECTS) {
      this.banner("error", `${why}; giving up after ${MAX_RECONNECTS} reconnects`);
      return;
    }
    this.reconnects += 1;
    this.banner("info", `${why}; reconnecting (backlog resumes from seq ${this.lastSeq + 1})`);
    this.openSocket();
  }

  ingest(frame: EventFrame): void {
    if (frame.seq === CONTROL_SEQ) {
      if (frame.kind === STREAM_DROPPED) {
        const socket = this.socket;
        this.socket = null;
        socket?.close();
        this.reconnect("fell behind the event stream");
      } else if (frame.kind === SESSION_CLOSED) {
        this.closed = true;
        this.banner("info", "session closed by the gateway");
      } else {
        this.banner("error", `unknown control frame: ${frame.kind}`);
      }
      this.notify();
      return;
    }
    if (frame.seq <= this.lastSeq) return; // backlog replay after a reconnect
    if (frame.seq !== this.lastSeq + 1) {
      this.banner("error", `event gap: expected seq ${this.lastSeq + 1}, got ${frame.seq}`);
    }
    this.lastSeq = frame.seq;
    this.frames.push(frame);
    if (STATUS_KINDS.has(frame.kind)) this.queueStatusRefresh();
    this.notify();
  }

  private queueStatusRefresh(): void {
    this.pending = this.pending.then(() => this.refreshStatus());
  }

  async refreshStatus(): Promise<void> {
    try {
      this.status = await this.client.fetchStatus(this.sessionId);
    } catch (error) {
      this.banner("error", String(error));
    }
    this.notify();
  }

  /** No request leaves the client unless the composer is enabled. */
  async send(text: string): Promise<SendResult> {
    if (!this.composerEnabled) return { sent: false, reason: "composer-disabled" };
    const result = await this.client.sendMessage(this.sessionId, text);
    if (!result.accepted) {
      this.banner("error", `message rejected: ${result.detail || "turn in progress"}`);
      await this.refreshStatus();
      return { sent: false, reason: "conflict" };
    }
    await this.refreshStatus();
    return { sent: true };
  }

  async inspectMemory(agent: string): Promise<void> {
    this.memoryPanel = {
      agent,
      records: await this.client.fetchMemory(this.sessionId, agent),
    };
    this.notify();
  }

  private banner(kind: Banner["kind"], text: string): void {
    this.banners.push({ kind, text });
  }
}
