import { describe, expect, it } from "vitest";

import { GatewayClient, GatewayError } from "../src/api.js";

function jsonResponse(status: number, body: unknown): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "Content-Type": "application/json" },
  });
}

describe("GatewayClient", () => {
  it("creates sessions", async () => {
    const calls: Array<{ url: string; init?: RequestInit }> = [];
    const client = new GatewayClient("http://gw.test/", async (url, init) => {
      calls.push({ url, init });
      return jsonResponse(200, { id: "s1" });
    });
    expect(await client.createSession()).toBe("s1");
    expect(calls[0].url).toBe("http://gw.test/v1/sessions");
    expect(calls[0].init?.method).toBe("POST");
  });

  it("posts respond bodies with the session id", async () => {
    let seenBody = "";
    const client = new GatewayClient("http://gw.test", async (_url, init) => {
      seenBody = String(init?.body);
      return jsonResponse(200, {
        modality: "text",
        text: "2",
        artifact_url: null,
        trace: {},
      });
    });
    const result = await client.respond("1+1=?", "s1");
    expect(JSON.parse(seenBody)).toEqual({ instruction: "1+1=?", session_id: "s1" });
    expect(result.text).toBe("2");
  });

  it("omits session_id for stateless calls", async () => {
    let seenBody = "";
    const client = new GatewayClient("http://gw.test", async (_url, init) => {
      seenBody = String(init?.body);
      return jsonResponse(200, { modality: "text", text: "x", artifact_url: null, trace: {} });
    });
    await client.respond("hello", null);
    expect(JSON.parse(seenBody)).toEqual({ instruction: "hello" });
  });

  it("raises GatewayError with the 502 trace body", async () => {
    const client = new GatewayClient("http://gw.test", async () =>
      jsonResponse(502, { error: "llm wire down", trace: { raw_llm_text: "partial" } }),
    );
    try {
      await client.respond("hello", null);
      throw new Error("expected a GatewayError");
    } catch (error) {
      expect(error).toBeInstanceOf(GatewayError);
      const gatewayError = error as GatewayError;
      expect(gatewayError.status).toBe(502);
      expect(gatewayError.message).toBe("llm wire down");
      expect(gatewayError.body?.trace).toEqual({ raw_llm_text: "partial" });
    }
  });

  it("fetches transcripts", async () => {
    const client = new GatewayClient("http://gw.test", async (url) => {
      expect(url).toBe("http://gw.test/v1/sessions/s9");
      return jsonResponse(200, { id: "s9", turns: [{ role: "user", text: "hi" }] });
    });
    const transcript = await client.transcript("s9");
    expect(transcript.turns).toHaveLength(1);
  });

  it("resolves artifact hrefs against the gateway base", () => {
    const client = new GatewayClient("http://gw.test/");
    expect(client.artifactHref("/v1/artifacts/abc")).toBe("http://gw.test/v1/artifacts/abc");
    expect(client.artifactHref("http://elsewhere/x")).toBe("http://elsewhere/x");
    expect(client.artifactHref(null)).toBeNull();
  });
});
