import type { Modality, RespondResponse, RouteTrace, TranscriptTurn } from "./types.js";

// One rendered chat bubble. Assistant turns carry the full route trace so the
// inspector panel can show the parsed modality, conversion prompt, and
// latencies without another round trip.
export interface ChatTurnView {
  id: number;
  role: "user" | "assistant";
  kind: "text" | "media" | "error" | "pending";
  text: string | null;
  artifactUrl: string | null;
  modality: Modality | null;
  trace: RouteTrace | null;
  error: string | null;
  retryText: string | null;
  traceOpen: boolean;
}

export interface AppState {
  sessionId: string | null;
  turns: ChatTurnView[];
  pending: boolean;
  nextId: number;
}

export function initialState(): AppState {
  return { sessionId: null, turns: [], pending: false, nextId: 1 };
}

function turn(state: AppState, partial: Omit<ChatTurnView, "id">): ChatTurnView {
  const created = { id: state.nextId, ...partial };
  state.nextId += 1;
  return created;
}

/** Optimistic user bubble plus a pending assistant slot; refuses while a
 * respond call is already in flight (one per session). */
export function beginSend(state: AppState, text: string): boolean {
  const trimmed = text.trim();
  if (!trimmed || state.pending) return false;
  state.turns.push(
    turn(state, {
      role: "user",
      kind: "text",
      text: trimmed,
      artifactUrl: null,
      modality: null,
      trace: null,
      error: null,
      retryText: null,
      traceOpen: false,
    }),
  );
  state.turns.push(
    turn(state, {
      role: "assistant",
      kind: "pending",
      text: null,
      artifactUrl: null,
      modality: null,
      trace: null,
      error: null,
      retryText: null,
      traceOpen: false,
    }),
  );
  state.pending = true;
  return true;
}

function pendingSlot(state: AppState): ChatTurnView | undefined {
  for (let i = state.turns.length - 1; i >= 0; i -= 1) {
    if (state.turns[i].kind === "pending") return state.turns[i];
  }
  return undefined;
}

/** Fill the pending assistant slot from a gateway response. The primary
 * content is the artifact when one exists, otherwise the text. */
export function completeSend(state: AppState, response: RespondResponse): void {
  const slot = pendingSlot(state);
  if (!slot) return;
  slot.kind = response.artifact_url ? "media" : "text";
  slot.text = response.artifact_url ? null : response.text;
  slot.artifactUrl = response.artifact_url;
  slot.modality = response.modality;
  slot.trace = response.trace;
  state.pending = false;
}

/** Turn the pending slot into a retryable error bubble. */
export function failSend(
  state: AppState,
  message: string,
  trace: RouteTrace | null,
  retryText: string,
): void {
  const slot = pendingSlot(state);
  if (!slot) return;
  slot.kind = "error";
  slot.error = message;
  slot.trace = trace;
  slot.retryText = retryText;
  state.pending = false;
}

export function toggleTrace(state: AppState, turnId: number): void {
  for (const t of state.turns) {
    if (t.id === turnId) t.traceOpen = !t.traceOpen;
  }
}

/** Rebuild bubbles from a persisted transcript (after a reload). */
export function loadTranscript(state: AppState, turns: TranscriptTurn[]): void {
  state.turns = [];
  state.pending = false;
  for (const entry of turns) {
    state.turns.push(
      turn(state, {
        role: entry.role,
        kind: entry.artifact_url ? "media" : "text",
        text: entry.artifact_url ? entry.text ?? null : entry.text ?? "",
        artifactUrl: entry.artifact_url ?? null,
        modality: entry.modality ?? null,
        trace: null,
        error: null,
        retryText: null,
        traceOpen: false,
      }),
    );
  }
}
