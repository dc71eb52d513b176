import type { EventFrame, SessionStatus } from "./types.js";

/** The slice of fetch/WebSocket the console needs; injectable for tests. */
export interface ResponseLike {
  status: number;
  ok: boolean;
  json(): Promise<unknown>;
  text(): Promise<string>;
}

export type FetchLike = (
  url: string,
  init?: { method?: string; headers?: Record<string, string>; body?: string },
) => Promise<ResponseLike>;

export interface SocketLike {
  onmessage: ((event: { data: string }) => void) | null;
  onclose: ((event: { code: number }) => void) | null;
  onerror: ((event: unknown) => void) | null;
  close(): void;
}

export type SocketFactory = (url: string) => SocketLike;

export interface GatewayOptions {
  fetchImpl?: FetchLike;
  socketFactory?: SocketFactory;
  token?: string;
}

export class GatewayError extends Error {
  constructor(
    readonly status: number,
    readonly detail: string,
  ) {
    super(`gateway responded ${status}: ${detail}`);
  }
}

async function detailOf(response: ResponseLike): Promise<string> {
  try {
    const body = (await response.json()) as { detail?: string };
    return body.detail ?? "";
  } catch {
    return "";
  }
}

/** Thin typed client over the session service. One base URL, nothing else. */
export class GatewayClient {
  private readonly fetchImpl: FetchLike;
  private readonly socketFactory: SocketFactory;
  private readonly token: string;
  readonly baseUrl: string;

  constructor(baseUrl: string, options: GatewayOptions = {}) {
    this.baseUrl = baseUrl.replace(/\/+$/, "");
    this.fetchImpl = options.fetchImpl ?? ((url, init) => fetch(url, init));
    this.socketFactory =
      options.socketFactory ?? ((url) => new WebSocket(url) as unknown as SocketLike);
    this.token = options.token ?? "";
  }

  private headers(json: boolean): Record<string, string> {
    const headers: Record<string, string> = {};
    if (json) headers["content-type"] = "application/json";
    if (this.token) headers["authorization"] = `Bearer ${this.token}`;
    return headers;
  }

  private async request(path: string, init?: { method?: string; body?: string }) {
    return this.fetchImpl(`${this.baseUrl}${path}`, {
      method: init?.method ?? "GET",
      headers: this.headers(init?.body !== undefined),
      body: init?.body,
    });
  }

  async createSession(body: {
    session_id?: string;
    config_name?: string;
    inline_config?: string;
  }): Promise<{ session_id: string; status: string }> {
    const response = await this.request("/sessions", {
      method: "POST",
      body: JSON.stringify(body),
    });
    if (!response.ok) throw new GatewayError(response.status, await detailOf(response));
    return (await response.json()) as { session_id: string; status: string };
  }

  /** 202 and 409 are both expected outcomes; anything else throws. */
  async sendMessage(
    sessionId: string,
    text: string,
  ): Promise<{ accepted: boolean; status: number; detail: string }> {
    const response = await this.request(`/sessions/${sessionId}/message`, {
      method: "POST",
      body: JSON.stringify({ text }),
    });
    if (response.status === 202) return { accepted: true, status: 202, detail: "" };
    const detail = await detailOf(response);
    if (response.status === 409) return { accepted: false, status: 409, detail };
    throw new GatewayError(response.status, detail);
  }

  async fetchStatus(sessionId: string): Promise<SessionStatus> {
    const response = await this.request(`/sessions/${sessionId}`);
    if (!response.ok) throw new GatewayError(response.status, await detailOf(response));
    return (await response.json()) as SessionStatus;
  }

  async fetchGraph(sessionId: string): Promise<string> {
    const response = await this.request(`/sessions/${sessionId}/graph`);
    if (!response.ok) throw new GatewayError(response.status, await detailOf(response));
    return response.text();
  }

  async fetchMemory(sessionId: string, asAgent?: string): Promise<EventFrame[]> {
    const query = asAgent ? `?as=${encodeURIComponent(asAgent)}` : "";
    const response = await this.request(`/sessions/${sessionId}/memory${query}`);
    if (!response.ok) throw new GatewayError(response.status, await detailOf(response));
    const body = (await response.json()) as { records: EventFrame[] };
    return body.records;
  }

  openEvents(sessionId: string): SocketLike {
    const wsBase = this.baseUrl.replace(/^http/, "ws");
    const query = this.token ? `?token=${encodeURIComponent(this.token)}` : "";
    return this.socketFactory(`${wsBase}/sessions/${sessionId}/events${query}`);
  }
}
