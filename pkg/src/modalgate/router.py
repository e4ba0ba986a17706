"""Inference pipeline: instruction -> prompt -> LLM -> parse -> conversion route.

Exactly one LLM call per invocation by default, at most one conversion backend
call ever, and the parsed response field (never the instruction itself) is
what reaches the conversion model. The full trace of prompts, parse outcome,
and latencies rides along on every result and on raised backend errors.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field
from typing import Any, Callable

from .backends import BackendError, ChatRequest, MediaArtifact
from .parsing import parse_structured_response
from .prompting import ConversationHistory, render_fewshot_prompt, render_tuned_prompt
from .schema import Modality, ParseOutcome

POLICIES = ("tuned", "fewshot")

REASK_SUFFIX = (
    "\n\nYour previous reply could not be parsed. Respond with exactly one JSON "
    'object with the keys "type" and "response" and nothing else.'
)


class BackendUnavailable(BackendError):
    """The parsed modality needs a conversion backend that was not configured."""


@dataclass(frozen=True)
class RouteTrace:
    """Intermediate artifacts of one routing pass: prompts, parse outcome,
    per-stage latencies, and call counts."""

    prompt: str
    raw_llm_text: str
    parse_outcome: ParseOutcome
    policy: str
    conversion_prompt: str | None = None
    backend_latencies: dict[str, float] = field(default_factory=dict)
    started_at: float = 0.0
    finished_at: float = 0.0
    llm_calls: int = 1
    reasks_used: int = 0

    def to_dict(self, include_timing: bool = True) -> dict[str, Any]:
        out: dict[str, Any] = {
            "prompt": self.prompt,
            "raw_llm_text": self.raw_llm_text,
            "parse_outcome": self.parse_outcome.to_dict(),
            "policy": self.policy,
            "conversion_prompt": self.conversion_prompt,
            "llm_calls": self.llm_calls,
            "reasks_used": self.reasks_used,
        }
        if include_timing:
            out["backend_latencies"] = dict(self.backend_latencies)
            out["started_at"] = self.started_at
            out["finished_at"] = self.finished_at
        return out


@dataclass(frozen=True)
class RoutedResult:
    """Final multi-modal answer: text for the text route, an artifact for the
    image/speech routes, plus the full trace."""

    modality: Modality
    trace: RouteTrace
    text: str | None = None
    artifact: MediaArtifact | None = None

    def __post_init__(self) -> None:
        if self.modality is Modality.TEXT:
            if self.text is None or self.artifact is not None:
                raise ValueError("text results carry text and no artifact")
        else:
            if self.artifact is None:
                raise ValueError(f"{self.modality.value} results carry an artifact")

    def to_dict(self, include_timing: bool = True) -> dict[str, Any]:
        return {
            "modality": self.modality.value,
            "text": self.text,
            "artifact": self.artifact.summary() if self.artifact else None,
            "trace": self.trace.to_dict(include_timing=include_timing),
        }

    def to_json(self, include_timing: bool = True) -> str:
        return json.dumps(self.to_dict(include_timing=include_timing), ensure_ascii=False)


def default_image_seed(conversion_prompt: str) -> int:
    """Reproducible per-prompt seed; overridable per request."""
    return int.from_bytes(hashlib.sha256(conversion_prompt.encode("utf-8")).digest()[:8], "big")


def _render_prompt(instruction: str, history: ConversationHistory | None, policy: str) -> str:
    if policy == "fewshot":
        return render_fewshot_prompt(instruction)
    return render_tuned_prompt(history or ConversationHistory(), instruction)


def route(
    instruction: str,
    history: ConversationHistory | None = None,
    llm: Any = None,
    image_backend: Any = None,
    speech_backend: Any = None,
    policy: str = "tuned",
    fallback_to_text: bool = True,
    image_seed: int | None = None,
    temperature: float | None = None,
    max_new_tokens: int | None = None,
    clock: Callable[[], float] = time.perf_counter,
) -> RoutedResult:
    """Single-pass routing: one LLM call, parse, dispatch to at most one
    conversion backend."""
    return route_with_retry(
        instruction,
        history=history,
        llm=llm,
        image_backend=image_backend,
        speech_backend=speech_backend,
        policy=policy,
        max_reasks=0,
        fallback_to_text=fallback_to_text,
        image_seed=image_seed,
        temperature=temperature,
        max_new_tokens=max_new_tokens,
        clock=clock,
    )


def route_with_retry(
    instruction: str,
    history: ConversationHistory | None = None,
    llm: Any = None,
    image_backend: Any = None,
    speech_backend: Any = None,
    policy: str = "tuned",
    max_reasks: int = 0,
    fallback_to_text: bool = True,
    image_seed: int | None = None,
    temperature: float | None = None,
    max_new_tokens: int | None = None,
    clock: Callable[[], float] = time.perf_counter,
) -> RoutedResult:
    """Routing with up to ``max_reasks`` corrective re-prompts on parse failure.

    After exhaustion the behavior matches :func:`route` with the fallback
    flag: the last raw reply is wrapped as a text response.
    """
    if not instruction or not instruction.strip():
        raise ValueError("instruction must be non-empty")
    if policy not in POLICIES:
        raise ValueError(f"policy must be one of {POLICIES}")
    if llm is None:
        raise ValueError("an LLM backend is required")
    if max_reasks < 0:
        raise ValueError("max_reasks must be >= 0")

    base_prompt = _render_prompt(instruction.strip(), history, policy)
    started_at = time.time()
    latencies: dict[str, float] = {}

    prompt = base_prompt
    raw = ""
    outcome: ParseOutcome | None = None
    llm_calls = 0
    for attempt in range(max_reasks + 1):
        if attempt > 0:
            prompt = base_prompt + REASK_SUFFIX
        t0 = clock()
        request_kwargs: dict[str, Any] = {}
        if temperature is not None:
            request_kwargs["temperature"] = temperature
        if max_new_tokens is not None:
            request_kwargs["max_new_tokens"] = max_new_tokens
        request = ChatRequest(prompt=prompt, **request_kwargs)
        try:
            reply = llm.complete(request)
        except BackendError as exc:
            latencies["llm"] = latencies.get("llm", 0.0) + (clock() - t0)
            llm_calls += 1
            exc.route_trace = _failure_trace(  # type: ignore[attr-defined]
                prompt, raw, policy, latencies, started_at, llm_calls, attempt, str(exc)
            )
            raise
        latencies["llm"] = latencies.get("llm", 0.0) + (clock() - t0)
        llm_calls += 1
        raw = reply.text
        outcome = parse_structured_response(raw, fallback_to_text=False)
        if outcome.ok:
            break

    assert outcome is not None
    reasks_used = llm_calls - 1
    if not outcome.ok:
        outcome = parse_structured_response(raw, fallback_to_text=fallback_to_text)
    if not outcome.ok:
        trace = _failure_trace(
            prompt, raw, policy, latencies, started_at, llm_calls, reasks_used, outcome.error or "parse failed"
        )
        error = BackendError(f"unroutable LLM output: {outcome.error}")
        error.route_trace = trace  # type: ignore[attr-defined]
        raise error

    result = outcome.result
    assert result is not None
    modality = result.modality

    def finish(trace_kwargs: dict[str, Any]) -> RouteTrace:
        return RouteTrace(
            prompt=prompt,
            raw_llm_text=raw,
            parse_outcome=outcome,
            policy=policy,
            backend_latencies=dict(latencies),
            started_at=started_at,
            finished_at=time.time(),
            llm_calls=llm_calls,
            reasks_used=reasks_used,
            **trace_kwargs,
        )

    if modality is Modality.TEXT:
        return RoutedResult(modality=modality, text=result.response, trace=finish({}))

    backend = image_backend if modality is Modality.IMAGE else speech_backend
    if backend is None:
        error = BackendUnavailable(f"no {modality.value} backend configured")
        error.route_trace = finish({})  # type: ignore[attr-defined]
        raise error

    stage = modality.value
    t0 = clock()
    try:
        if modality is Modality.IMAGE:
            seed = image_seed if image_seed is not None else default_image_seed(result.response)
            artifact = backend.generate(result.response, seed=seed)
        else:
            # verbatim pass-through: the parsed response field, untouched
            artifact = backend.synthesize(result.response)
    except BackendError as exc:
        latencies[stage] = clock() - t0
        exc.route_trace = finish({"conversion_prompt": result.response})  # type: ignore[attr-defined]
        raise
    latencies[stage] = clock() - t0
    return RoutedResult(
        modality=modality,
        artifact=artifact,
        trace=finish({"conversion_prompt": result.response}),
    )


def _failure_trace(
    prompt: str,
    raw: str,
    policy: str,
    latencies: dict[str, float],
    started_at: float,
    llm_calls: int,
    reasks_used: int,
    error: str,
) -> RouteTrace:
    outcome = ParseOutcome(raw=raw, result=None, error=error)
    return RouteTrace(
        prompt=prompt,
        raw_llm_text=raw,
        parse_outcome=outcome,
        policy=policy,
        backend_latencies=dict(latencies),
        started_at=started_at,
        finished_at=time.time(),
        llm_calls=llm_calls,
        reasks_used=reasks_used,
    )
