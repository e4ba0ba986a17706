"""HTTP gateway: conversational routing, content-addressed artifact store,
append-only sessions, and async eval jobs.

Endpoints (JSON over HTTP):
  POST /v1/respond            route one instruction, optionally in a session
  GET  /v1/artifacts/{id}     stored artifact bytes, content-addressed
  POST /v1/sessions           create a session
  GET  /v1/sessions/{id}      transcript
  POST /v1/eval               start an eval job;  GET /v1/eval/{id} polls it
"""

from __future__ import annotations

import json
import logging
import threading
import time
import uuid
from concurrent.futures import ThreadPoolExecutor
from concurrent.futures import TimeoutError as FutureTimeout
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from fastapi import FastAPI, Request, Response
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from .backends import BackendConfig, BackendError, BackendKind, MediaArtifact, auth_token_from_env
from .mocks import make_mock
from .prompting import DEFAULT_MAX_TURNS, ConversationHistory
from .router import route

logger = logging.getLogger("modalgate.service")

_EXTENSIONS = {"image/png": ".png", "audio/wav": ".wav", "image/jpeg": ".jpg"}


class ArtifactStore:
    """Flat directory of artifacts named by content hash; writes idempotent."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def put(self, artifact: MediaArtifact) -> str:
        ext = _EXTENSIONS.get(artifact.mime, ".bin")
        path = self.root / f"{artifact.content_hash}{ext}"
        if not path.exists():
            tmp = path.with_name(path.name + ".tmp")
            tmp.write_bytes(artifact.data)
            tmp.replace(path)
        meta = self.root / f"{artifact.content_hash}.json"
        if not meta.exists():
            meta.write_text(json.dumps({"mime": artifact.mime, "ext": ext}), "utf-8")
        return artifact.content_hash

    def get(self, content_hash: str) -> tuple[bytes, str] | None:
        meta = self.root / f"{content_hash}.json"
        if not meta.exists():
            return None
        info = json.loads(meta.read_text("utf-8"))
        path = self.root / f"{content_hash}{info['ext']}"
        if not path.exists():
            return None
        return path.read_bytes(), info["mime"]


class SessionStore:
    """Append-only JSON-lines transcript per session; appends serialized per id."""

    def __init__(self, root: str | Path, max_turns: int = DEFAULT_MAX_TURNS):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.max_turns = max_turns
        self._locks: dict[str, threading.Lock] = {}
        self._locks_guard = threading.Lock()

    def _lock_for(self, session_id: str) -> threading.Lock:
        with self._locks_guard:
            return self._locks.setdefault(session_id, threading.Lock())

    def _path(self, session_id: str) -> Path:
        return self.root / f"{session_id}.jsonl"

    def create(self) -> str:
        session_id = uuid.uuid4().hex
        self._path(session_id).touch()
        return session_id

    def exists(self, session_id: str) -> bool:
        return self._path(session_id).exists()

    def turns(self, session_id: str) -> list[dict[str, Any]]:
        path = self._path(session_id)
        if not path.exists():
            raise KeyError(session_id)
        out = []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    out.append(json.loads(line))
        return out

    def append(self, session_id: str, turn: dict[str, Any]) -> None:
        with self._lock_for(session_id):
            with open(self._path(session_id), "a", encoding="utf-8") as fh:
                fh.write(json.dumps(turn, ensure_ascii=False))
                fh.write("\n")

    def history(self, session_id: str) -> ConversationHistory:
        turns = tuple(
            (turn["role"], turn["text"])
            for turn in self.turns(session_id)
            if turn.get("text")
        )
        return ConversationHistory(turns, max_turns=self.max_turns)


@dataclass
class ServiceConfig:
    llm_url: str = "mock:"
    image_url: str = "mock:"
    speech_url: str = "mock:"
    scorer_url: str | None = None
    artifact_dir: str = "artifacts"
    session_dir: str = "sessions"
    max_turns: int = DEFAULT_MAX_TURNS
    policy: str = "tuned"
    respond_timeout: float = 120.0
    extra: dict[str, Any] = field(default_factory=dict)


def backend_for(kind: BackendKind | str, url: str, **mock_kwargs: Any) -> Any:
    """Resolve a backend from a URL; the ``mock:`` scheme selects in-process
    deterministic mocks (e.g. ``mock:oracle``, ``mock:echo``)."""
    kind = BackendKind(kind)
    if url.startswith("mock:"):
        spec = url[len("mock:") :]
        if kind is BackendKind.LLM:
            return _mock_llm_for(spec)
        return make_mock(kind)
    from . import backends as b

    cfg = BackendConfig(kind=kind, base_url=url, auth_token=auth_token_from_env(kind))
    client_cls = {
        BackendKind.LLM: b.HttpChatBackend,
        BackendKind.IMAGE: b.HttpImageBackend,
        BackendKind.SPEECH: b.HttpSpeechBackend,
        BackendKind.SCORER: b.HttpScorerBackend,
    }[kind]
    return client_cls(cfg, **mock_kwargs)


def _mock_llm_for(spec: str) -> Any:
    from .mocks import make_heuristic_llm, make_oracle_llm
    from .schema import read_records

    if spec in ("", "oracle", "echo", "heuristic"):
        return make_heuristic_llm()
    if spec.startswith("oracle:"):
        return make_oracle_llm(read_records(spec[len("oracle:") :]))
    if spec.startswith("text:"):
        from .mocks import make_always_text_llm

        return make_always_text_llm(spec[len("text:") :] or "ok")
    raise ValueError(f"unknown mock llm spec: {spec!r}")


class RespondBody(BaseModel):
    instruction: str = ""
    session_id: str | None = None
    policy: str | None = None


class EvalBody(BaseModel):
    corpus: str
    policy: str = "tuned"
    llm: str = "mock:"
    image: str = "mock:"
    speech: str = "mock:"
    scorer: str | None = None
    out_dir: str | None = None
    cache_dir: str | None = None
    rng_seed: str = "0"
    job_id: str | None = None
    system_id: str = "system"


def create_app(config: ServiceConfig | None = None) -> FastAPI:
    config = config or ServiceConfig()
    app = FastAPI(title="modalgate", version="0.1.0")
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )

    artifacts = ArtifactStore(config.artifact_dir)
    sessions = SessionStore(config.session_dir, max_turns=config.max_turns)
    llm = backend_for(BackendKind.LLM, config.llm_url)
    image_backend = backend_for(BackendKind.IMAGE, config.image_url)
    speech_backend = backend_for(BackendKind.SPEECH, config.speech_url)
    eval_jobs: dict[str, dict[str, Any]] = {}
    eval_lock = threading.Lock()
    respond_pool = ThreadPoolExecutor(max_workers=16, thread_name_prefix="respond")

    app.state.config = config
    app.state.artifacts = artifacts
    app.state.sessions = sessions
    app.state.llm = llm
    app.state.image_backend = image_backend
    app.state.speech_backend = speech_backend

    @app.middleware("http")
    async def request_log(request: Request, call_next):  # type: ignore[no-untyped-def]
        started = time.perf_counter()
        response = await call_next(request)
        logger.info(
            json.dumps(
                {
                    "method": request.method,
                    "path": request.url.path,
                    "status": response.status_code,
                    "elapsed_ms": round((time.perf_counter() - started) * 1000, 2),
                }
            )
        )
        return response

    @app.post("/v1/sessions")
    def create_session() -> dict[str, str]:
        return {"id": sessions.create()}

    @app.get("/v1/sessions/{session_id}")
    def get_session(session_id: str) -> JSONResponse:
        try:
            turns = sessions.turns(session_id)
        except KeyError:
            return JSONResponse({"error": "unknown session"}, status_code=404)
        return JSONResponse({"id": session_id, "turns": turns})

    @app.get("/v1/artifacts/{content_hash}")
    def get_artifact(content_hash: str) -> Response:
        found = artifacts.get(content_hash)
        if found is None:
            return JSONResponse({"error": "unknown artifact"}, status_code=404)
        data, mime = found
        return Response(content=data, media_type=mime)

    @app.post("/v1/respond")
    def respond(body: RespondBody) -> JSONResponse:
        if not body.instruction or not body.instruction.strip():
            return JSONResponse({"error": "instruction must be non-empty"}, status_code=400)
        history = ConversationHistory(max_turns=config.max_turns)
        if body.session_id is not None:
            if not sessions.exists(body.session_id):
                return JSONResponse({"error": "unknown session"}, status_code=404)
            history = sessions.history(body.session_id)
        try:
            future = respond_pool.submit(
                route,
                body.instruction,
                history=history,
                llm=llm,
                image_backend=image_backend,
                speech_backend=speech_backend,
                policy=body.policy or config.policy,
            )
            result = future.result(timeout=config.respond_timeout)
        except FutureTimeout:
            return JSONResponse(
                {"error": f"respond timed out after {config.respond_timeout}s", "trace": None},
                status_code=502,
            )
        except BackendError as exc:
            trace = getattr(exc, "route_trace", None)
            return JSONResponse(
                {"error": str(exc), "trace": trace.to_dict() if trace else None},
                status_code=502,
            )

        payload: dict[str, Any] = {
            "modality": result.modality.value,
            "text": result.text,
            "artifact_url": None,
            "trace": result.trace.to_dict(),
        }
        if result.artifact is not None:
            content_hash = artifacts.put(result.artifact)
            payload["artifact_url"] = f"/v1/artifacts/{content_hash}"
            payload["artifact"] = result.artifact.summary()
        if body.session_id is not None:
            sessions.append(body.session_id, {"role": "user", "text": body.instruction})
            # non-text turns keep the conversion prompt as their textual shadow
            # so later turns still see what was generated
            sessions.append(
                body.session_id,
                {
                    "role": "assistant",
                    "text": result.text or result.trace.conversion_prompt,
                    "modality": result.modality.value,
                    "artifact_url": payload["artifact_url"],
                },
            )
        return JSONResponse(payload)

    @app.post("/v1/eval")
    def start_eval(body: EvalBody) -> JSONResponse:
        from .evalharness import EvalJob, run_eval, write_report

        job_id = body.job_id or uuid.uuid4().hex
        with eval_lock:
            if job_id in eval_jobs:
                return JSONResponse({"error": "duplicate job id"}, status_code=409)
            eval_jobs[job_id] = {"status": "running", "report": None}

        def runner() -> None:
            try:
                job = EvalJob(
                    corpus_path=body.corpus,
                    llm=backend_for(BackendKind.LLM, body.llm),
                    image_backend=backend_for(BackendKind.IMAGE, body.image),
                    speech_backend=backend_for(BackendKind.SPEECH, body.speech),
                    scorer=backend_for(BackendKind.SCORER, body.scorer) if body.scorer else None,
                    policy=body.policy,
                    system_id=body.system_id,
                    cache_dir=body.cache_dir,
                    rng_seed=body.rng_seed,
                )
                report = run_eval(job)
                if body.out_dir:
                    write_report(report, body.out_dir)
                with eval_lock:
                    eval_jobs[job_id] = {"status": "done", "report": report.to_dict()}
            except Exception as exc:  # job errors are reported, never crash the app
                logger.exception("eval job %s failed", job_id)
                with eval_lock:
                    eval_jobs[job_id] = {"status": "failed", "error": str(exc), "report": None}

        threading.Thread(target=runner, daemon=True).start()
        return JSONResponse({"job_id": job_id})

    @app.get("/v1/eval/{job_id}")
    def poll_eval(job_id: str) -> JSONResponse:
        with eval_lock:
            job = eval_jobs.get(job_id)
            if job is None:
                return JSONResponse({"error": "unknown job"}, status_code=404)
            return JSONResponse({"job_id": job_id, **job})

    return app


def load_service_config(path: str | Path) -> ServiceConfig:
    obj = json.loads(Path(path).read_text("utf-8"))
    known = {f for f in ServiceConfig.__dataclass_fields__ if f != "extra"}
    unknown = set(obj) - known
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    return ServiceConfig(**obj)
