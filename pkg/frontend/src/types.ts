// Wire shapes of the gateway's JSON responses. The UI renders strictly from
// these; it never infers modality on its own.

export type Modality = "text" | "image" | "speech";

export interface ParseOutcome {
  result: { type: string; response: string } | null;
  repairs_applied: string[];
  fell_back_to_text: boolean;
  raw: string;
  error: string | null;
}

export interface RouteTrace {
  prompt: string;
  raw_llm_text: string;
  parse_outcome: ParseOutcome;
  policy: string;
  conversion_prompt: string | null;
  llm_calls: number;
  reasks_used: number;
  backend_latencies?: Record<string, number>;
  started_at?: number;
  finished_at?: number;
}

export interface ArtifactSummary {
  media_kind: "image" | "audio";
  mime: string;
  prompt_used: string;
  content_hash: string;
  byte_length: number;
}

export interface RespondResponse {
  modality: Modality;
  text: string | null;
  artifact_url: string | null;
  artifact?: ArtifactSummary;
  trace: RouteTrace;
}

export interface GatewayErrorBody {
  error: string;
  trace: RouteTrace | null;
}

export interface TranscriptTurn {
  role: "user" | "assistant";
  text: string | null;
  modality?: Modality;
  artifact_url?: string | null;
}

export interface Transcript {
  id: string;
  turns: TranscriptTurn[];
}
