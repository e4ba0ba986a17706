import type { ChatTurnView } from "./state.js";
import type { RouteTrace } from "./types.js";

export function escapeHtml(value: string): string {
  return value
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;")
    .replace(/'/g, "&#39;");
}

function latencyRows(latencies: Record<string, number> | undefined): string {
  if (!latencies || Object.keys(latencies).length === 0) return "";
  const rows = Object.entries(latencies)
    .map(
      ([stage, seconds]) =>
        `<tr><td>${escapeHtml(stage)}</td><td>${(seconds * 1000).toFixed(1)} ms</td></tr>`,
    )
    .join("");
  return `<table class="latencies">${rows}</table>`;
}

export function renderTrace(trace: RouteTrace | null): string {
  if (!trace) {
    return `<div class="trace-panel"><p class="trace-empty">no trace recorded</p></div>`;
  }
  const parsed = trace.parse_outcome.result;
  const modality = parsed ? parsed.type : "(parse failed)";
  const conversion = trace.conversion_prompt
    ? `<p class="conversion-prompt">conversion prompt: <code>${escapeHtml(trace.conversion_prompt)}</code></p>`
    : `<p class="conversion-prompt">no conversion</p>`;
  const fallback = trace.parse_outcome.fell_back_to_text
    ? `<p class="fallback-flag">fell_back_to_text: true</p>`
    : "";
  const repairs = trace.parse_outcome.repairs_applied.length
    ? `<p class="repairs">repairs: ${trace.parse_outcome.repairs_applied.map(escapeHtml).join(", ")}</p>`
    : "";
  const rawExcerpt = escapeHtml(trace.raw_llm_text.slice(0, 400));
  return [
    `<div class="trace-panel">`,
    `<p class="parsed-modality">parsed modality: <strong>${escapeHtml(modality)}</strong></p>`,
    conversion,
    fallback,
    repairs,
    `<p class="llm-calls">llm calls: ${trace.llm_calls} (re-asks: ${trace.reasks_used})</p>`,
    latencyRows(trace.backend_latencies),
    `<details class="raw-output"><summary>raw model output</summary><pre>${rawExcerpt}</pre></details>`,
    `</div>`,
  ].join("");
}

function renderError(turn: ChatTurnView): string {
  const excerpt = turn.trace ? escapeHtml(turn.trace.raw_llm_text.slice(0, 200)) : "";
  const tracePart = turn.trace
    ? `<pre class="error-trace">${excerpt}</pre>`
    : "";
  return [
    `<div class="bubble error" data-turn-id="${turn.id}">`,
    `<p>${escapeHtml(turn.error ?? "request failed")}</p>`,
    tracePart,
    `<button class="retry" data-retry-text="${escapeHtml(turn.retryText ?? "")}">retry</button>`,
    `</div>`,
  ].join("");
}

/** One chat bubble. Assistant turns render exactly one primary content:
 * the artifact when present (inline image or playable audio), else text. */
export function renderTurn(turn: ChatTurnView, baseUrl: string): string {
  if (turn.kind === "pending") {
    return `<div class="bubble assistant pending" data-turn-id="${turn.id}"><span class="dots">responding...</span></div>`;
  }
  if (turn.kind === "error") {
    return renderError(turn);
  }
  const classes = `bubble ${turn.role}`;
  const badge = turn.modality
    ? `<span class="badge modality-${turn.modality}">${turn.modality}</span>`
    : "";
  let content: string;
  if (turn.artifactUrl) {
    const href = /^https?:/.test(turn.artifactUrl)
      ? turn.artifactUrl
      : baseUrl.replace(/\/+$/, "") + turn.artifactUrl;
    content =
      turn.modality === "speech"
        ? `<audio controls src="${escapeHtml(href)}"></audio>`
        : `<img src="${escapeHtml(href)}" alt="generated image" />`;
  } else {
    content = `<p class="text">${escapeHtml(turn.text ?? "")}</p>`;
  }
  const traceToggle =
    turn.role === "assistant" && turn.trace
      ? `<button class="trace-toggle" data-turn-id="${turn.id}">trace</button>` +
        (turn.traceOpen ? renderTrace(turn.trace) : "")
      : "";
  return `<div class="${classes}" data-turn-id="${turn.id}">${badge}${content}${traceToggle}</div>`;
}

export function renderTurns(turns: ChatTurnView[], baseUrl: string): string {
  return turns.map((turn) => renderTurn(turn, baseUrl)).join("\n");
}
