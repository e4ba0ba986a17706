// DOM bootstrap: everything stateful lives in state.ts, everything visual in
// render.ts; this file only wires events and persistence.

import { GatewayClient, GatewayError } from "./api.js";
import {
  AppState,
  beginSend,
  completeSend,
  failSend,
  initialState,
  loadTranscript,
  toggleTrace,
} from "./state.js";
import { renderTurns } from "./render.js";

const SESSION_KEY = "modalgate.session";
const GATEWAY_KEY = "modalgate.gateway";

function defaultGateway(): string {
  const params = new URLSearchParams(window.location.search);
  return (
    params.get("gateway") ??
    window.localStorage.getItem(GATEWAY_KEY) ??
    "http://127.0.0.1:8008"
  );
}

export function bootstrap(root: HTMLElement): void {
  const state: AppState = initialState();
  let gatewayUrl = defaultGateway();
  let client = new GatewayClient(gatewayUrl);

  root.innerHTML = `
    <header>
      <h1>modalgate chat</h1>
      <label>gateway <input id="gateway-url" value="${gatewayUrl}" /></label>
      <button id="new-session">new session</button>
    </header>
    <main id="turns"></main>
    <footer>
      <input id="composer" placeholder="Ask for text, an image, or speech..." autocomplete="off" />
      <button id="send">send</button>
    </footer>
  `;

  const turnsEl = root.querySelector("#turns") as HTMLElement;
  const composer = root.querySelector("#composer") as HTMLInputElement;
  const sendButton = root.querySelector("#send") as HTMLButtonElement;
  const gatewayInput = root.querySelector("#gateway-url") as HTMLInputElement;
  const newSessionButton = root.querySelector("#new-session") as HTMLButtonElement;

  function redraw(): void {
    turnsEl.innerHTML = renderTurns(state.turns, client.baseUrl);
    composer.disabled = state.pending;
    sendButton.disabled = state.pending;
    turnsEl.scrollTop = turnsEl.scrollHeight;
  }

  async function ensureSession(): Promise<string> {
    if (state.sessionId) return state.sessionId;
    const stored = window.localStorage.getItem(SESSION_KEY);
    if (stored) {
      try {
        const transcript = await client.transcript(stored);
        state.sessionId = transcript.id;
        loadTranscript(state, transcript.turns);
        redraw();
        return stored;
      } catch {
        window.localStorage.removeItem(SESSION_KEY);
      }
    }
    const created = await client.createSession();
    state.sessionId = created;
    window.localStorage.setItem(SESSION_KEY, created);
    return created;
  }

  async function send(text: string): Promise<void> {
    if (!beginSend(state, text)) return;
    composer.value = "";
    redraw();
    try {
      const sessionId = await ensureSession();
      const response = await client.respond(text, sessionId);
      completeSend(state, response);
    } catch (error) {
      if (error instanceof GatewayError) {
        failSend(state, error.message, error.body?.trace ?? null, text);
      } else {
        failSend(state, `network failure: ${String(error)}`, null, text);
      }
    }
    redraw();
  }

  sendButton.addEventListener("click", () => void send(composer.value));
  composer.addEventListener("keydown", (event) => {
    if (event.key === "Enter") void send(composer.value);
  });

  gatewayInput.addEventListener("change", () => {
    gatewayUrl = gatewayInput.value.trim();
    window.localStorage.setItem(GATEWAY_KEY, gatewayUrl);
    client = new GatewayClient(gatewayUrl);
  });

  newSessionButton.addEventListener("click", () => {
    window.localStorage.removeItem(SESSION_KEY);
    state.sessionId = null;
    state.turns = [];
    redraw();
  });

  turnsEl.addEventListener("click", (event) => {
    const target = event.target as HTMLElement;
    if (target.classList.contains("trace-toggle")) {
      toggleTrace(state, Number(target.dataset.turnId));
      redraw();
    } else if (target.classList.contains("retry")) {
      const text = target.dataset.retryText ?? "";
      const bubble = target.closest(".bubble");
      if (bubble) {
        const id = Number((bubble as HTMLElement).dataset.turnId);
        state.turns = state.turns.filter((t) => t.id !== id);
      }
      void send(text);
    }
  });

  void ensureSession().then(redraw);
  redraw();
}

if (typeof document !== "undefined") {
  const root = document.getElementById("app");
  if (root) bootstrap(root);
}
