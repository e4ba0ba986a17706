import type { GatewayErrorBody, RespondResponse, Transcript } from "./types.js";

export class GatewayError extends Error {
  status: number;
  body: GatewayErrorBody | null;

  constructor(status: number, message: string, body: GatewayErrorBody | null) {
    super(message);
    this.status = status;
    this.body = body;
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class GatewayClient {
  readonly baseUrl: string;
  private readonly fetchImpl: FetchLike;

  constructor(baseUrl: string, fetchImpl?: FetchLike) {
    this.baseUrl = baseUrl.replace(/\/+$/, "");
    this.fetchImpl = fetchImpl ?? ((input, init) => fetch(input, init));
  }

  artifactHref(path: string | null | undefined): string | null {
    if (!path) return null;
    if (/^https?:/.test(path)) return path;
    return this.baseUrl + path;
  }

  async createSession(): Promise<string> {
    const res = await this.fetchImpl(`${this.baseUrl}/v1/sessions`, { method: "POST" });
    if (!res.ok) throw new GatewayError(res.status, `session creation failed (${res.status})`, null);
    const body = (await res.json()) as { id: string };
    return body.id;
  }

  async respond(instruction: string, sessionId: string | null): Promise<RespondResponse> {
    const res = await this.fetchImpl(`${this.baseUrl}/v1/respond`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(
        sessionId ? { instruction, session_id: sessionId } : { instruction },
      ),
    });
    if (!res.ok) {
      let body: GatewayErrorBody | null = null;
      try {
        body = (await res.json()) as GatewayErrorBody;
      } catch {
        body = null;
      }
      throw new GatewayError(res.status, body?.error ?? `gateway error ${res.status}`, body);
    }
    return (await res.json()) as RespondResponse;
  }

  async transcript(sessionId: string): Promise<Transcript> {
    const res = await this.fetchImpl(`${this.baseUrl}/v1/sessions/${sessionId}`);
    if (!res.ok) throw new GatewayError(res.status, `transcript fetch failed (${res.status})`, null);
    return (await res.json()) as Transcript;
  }
}
