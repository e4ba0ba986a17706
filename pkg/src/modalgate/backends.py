"""Client contracts for the four external services: chat LLM, text-to-image,
text-to-speech, and the scorer (CLIP/FID delegate).

Wire shapes:
  LLM     POST {base}/v1/chat/completions  {model, messages, temperature, max_tokens}
  Image   POST {base}/generate             {prompt, seed, width, height} -> {image_b64, mime}
  Speech  POST {base}/synthesize           {text} -> {audio_b64, mime}
  Scorer  POST {base}/clip {image_b64, text} -> {score}
          POST {base}/fid {pairs: [{gen_b64, ref_id}]} -> {job_id}
          GET  {base}/fid/{job_id} -> {status, fid}

Transient transport failures are retried up to ``max_retries`` times with
backoff; 4xx refusals are surfaced immediately with the body preserved.
"""

from __future__ import annotations

import base64
import binascii
import hashlib
import os
import threading
import time
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Callable

import httpx

DEFAULT_TIMEOUT = 30.0
DEFAULT_TEMPERATURE = 0.2
DEFAULT_MAX_NEW_TOKENS = 256
DEFAULT_IMAGE_SIZE = 512
MAX_RETRIES_CAP = 5


class BackendError(Exception):
    """Base class for backend client failures."""


class TransportError(BackendError):
    """Network-level failure (connect/read/5xx) after retries were exhausted."""


class BackendTimeout(TransportError):
    """The backend did not answer within the configured timeout."""


class RemoteRefusal(BackendError):
    """HTTP 4xx from the backend; the body is preserved for diagnosis."""

    def __init__(self, status_code: int, body: str):
        super().__init__(f"backend refused request ({status_code}): {body[:500]}")
        self.status_code = status_code
        self.body = body


class BadPayload(BackendError):
    """The backend answered 2xx but the payload was undecodable."""


class ScorerError(BackendError):
    """The scorer backend failed; the harness records the score as missing."""


class MissingReference(BackendError):
    """FID pair collection referenced ids absent from the reference store."""

    def __init__(self, missing_ids: list[str]):
        super().__init__(f"unresolved reference image ids: {sorted(missing_ids)}")
        self.missing_ids = sorted(missing_ids)


class BackendKind(str, Enum):
    LLM = "llm"
    IMAGE = "image"
    SPEECH = "speech"
    SCORER = "scorer"


@dataclass(frozen=True)
class BackendConfig:
    kind: BackendKind
    base_url: str
    auth_token: str | None = None
    timeout: float = DEFAULT_TIMEOUT
    max_retries: int = 2
    retry_backoff: float = 0.25
    model: str = "default"

    def __post_init__(self) -> None:
        if not isinstance(self.kind, BackendKind):
            object.__setattr__(self, "kind", BackendKind(self.kind))
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")
        if not 0 <= self.max_retries <= MAX_RETRIES_CAP:
            raise ValueError(f"max_retries must be within 0..{MAX_RETRIES_CAP}")


def auth_token_from_env(kind: BackendKind) -> str | None:
    """Per-backend auth token env var (MODALGATE_LLM_TOKEN etc.). Never logged."""
    return os.environ.get(f"MODALGATE_{kind.value.upper()}_TOKEN")


@dataclass(frozen=True)
class ChatRequest:
    prompt: str
    temperature: float = DEFAULT_TEMPERATURE
    max_new_tokens: int = DEFAULT_MAX_NEW_TOKENS

    def __post_init__(self) -> None:
        if not self.prompt:
            raise ValueError("prompt must be non-empty")
        if not 0.0 <= self.temperature <= 2.0:
            raise ValueError("temperature must be within [0, 2]")
        if self.max_new_tokens <= 0:
            raise ValueError("max_new_tokens must be positive")


@dataclass(frozen=True)
class ChatReply:
    text: str
    finish_reason: str = "stop"

    def __post_init__(self) -> None:
        if self.finish_reason not in ("stop", "length", "error"):
            raise ValueError(f"bad finish_reason: {self.finish_reason}")
        if self.finish_reason != "error" and self.text is None:
            raise ValueError("reply text required unless finish_reason=error")


@dataclass(frozen=True)
class MediaArtifact:
    """Binary conversion output plus the exact prompt that produced it."""

    media_kind: str  # "image" | "audio"
    data: bytes
    mime: str
    prompt_used: str
    content_hash: str = ""

    def __post_init__(self) -> None:
        if self.media_kind not in ("image", "audio"):
            raise ValueError(f"bad media_kind: {self.media_kind}")
        expected_prefix = "image/" if self.media_kind == "image" else "audio/"
        if not self.mime.startswith(expected_prefix):
            raise ValueError(f"mime {self.mime!r} inconsistent with {self.media_kind}")
        digest = hashlib.sha256(self.data).hexdigest()
        if self.content_hash and self.content_hash != digest:
            raise ValueError("content_hash does not match data digest")
        object.__setattr__(self, "content_hash", digest)

    def summary(self) -> dict[str, Any]:
        return {
            "media_kind": self.media_kind,
            "mime": self.mime,
            "prompt_used": self.prompt_used,
            "content_hash": self.content_hash,
            "byte_length": len(self.data),
        }


class _HttpBackend:
    """Shared POST-with-retries plumbing; subclasses add the wire shapes."""

    def __init__(
        self,
        cfg: BackendConfig,
        transport: httpx.BaseTransport | None = None,
        sleeper: Callable[[float], None] = time.sleep,
    ):
        self.cfg = cfg
        self._client = httpx.Client(transport=transport, timeout=cfg.timeout)
        self._sleeper = sleeper
        self._lock = threading.Lock()
        self.calls: list[dict[str, Any]] = []

    def describe(self) -> str:
        return f"{self.cfg.kind.value}@{self.cfg.base_url}"

    def _log_call(self, path: str, attempt: int) -> None:
        with self._lock:
            self.calls.append({"path": path, "attempt": attempt})

    def _headers(self) -> dict[str, str]:
        if self.cfg.auth_token:
            return {"Authorization": f"Bearer {self.cfg.auth_token}"}
        return {}

    def _request(self, method: str, path: str, payload: dict[str, Any] | None = None) -> dict[str, Any]:
        url = self.cfg.base_url.rstrip("/") + path
        attempts = self.cfg.max_retries + 1
        last_error: BackendError | None = None
        for attempt in range(attempts):
            self._log_call(path, attempt)
            try:
                response = self._client.request(method, url, json=payload, headers=self._headers())
            except httpx.TimeoutException as exc:
                last_error = BackendTimeout(f"{url}: {exc}")
            except httpx.HTTPError as exc:
                last_error = TransportError(f"{url}: {exc}")
            else:
                if response.status_code >= 500:
                    last_error = TransportError(f"{url}: server error {response.status_code}")
                elif response.status_code >= 400:
                    raise RemoteRefusal(response.status_code, response.text)
                else:
                    try:
                        return response.json()
                    except ValueError as exc:
                        raise BadPayload(f"{url}: non-JSON reply: {exc}") from exc
            if attempt < attempts - 1:
                self._sleeper(self.cfg.retry_backoff * (attempt + 1))
        assert last_error is not None
        raise last_error


class HttpChatBackend(_HttpBackend):
    def __init__(self, cfg: BackendConfig, **kwargs: Any):
        if cfg.kind is not BackendKind.LLM:
            raise ValueError("chat backend requires kind=llm")
        super().__init__(cfg, **kwargs)

    def complete(self, req: ChatRequest) -> ChatReply:
        body = {
            "model": self.cfg.model,
            "messages": [{"role": "user", "content": req.prompt}],
            "temperature": req.temperature,
            "max_tokens": req.max_new_tokens,
        }
        obj = self._request("POST", "/v1/chat/completions", body)
        try:
            choice = obj["choices"][0]
            text = choice["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise BadPayload(f"malformed chat completion reply: {exc}") from exc
        finish = choice.get("finish_reason", "stop")
        if finish not in ("stop", "length", "error"):
            finish = "stop"
        return ChatReply(text=text, finish_reason=finish)


def _decode_b64(payload: dict[str, Any], key: str) -> bytes:
    if key not in payload:
        raise BadPayload(f"reply missing {key!r}")
    try:
        return base64.b64decode(payload[key], validate=True)
    except (binascii.Error, TypeError, ValueError) as exc:
        raise BadPayload(f"undecodable {key!r}: {exc}") from exc


class HttpImageBackend(_HttpBackend):
    def __init__(self, cfg: BackendConfig, **kwargs: Any):
        if cfg.kind is not BackendKind.IMAGE:
            raise ValueError("image backend requires kind=image")
        super().__init__(cfg, **kwargs)

    def generate(
        self,
        prompt: str,
        seed: int | None = None,
        width: int = DEFAULT_IMAGE_SIZE,
        height: int = DEFAULT_IMAGE_SIZE,
    ) -> MediaArtifact:
        if not prompt or not prompt.strip():
            raise ValueError("image prompt must be non-empty")
        obj = self._request(
            "POST", "/generate", {"prompt": prompt, "seed": seed, "width": width, "height": height}
        )
        data = _decode_b64(obj, "image_b64")
        return MediaArtifact(
            media_kind="image",
            data=data,
            mime=obj.get("mime", "image/png"),
            prompt_used=prompt,
        )


class HttpSpeechBackend(_HttpBackend):
    def __init__(self, cfg: BackendConfig, **kwargs: Any):
        if cfg.kind is not BackendKind.SPEECH:
            raise ValueError("speech backend requires kind=speech")
        super().__init__(cfg, **kwargs)

    def synthesize(self, text: str) -> MediaArtifact:
        if not text or not text.strip():
            raise ValueError("speech text must be non-empty")
        obj = self._request("POST", "/synthesize", {"text": text})
        data = _decode_b64(obj, "audio_b64")
        # prompt_used carries the input verbatim: the speech route passes text
        # through unmodified and downstream checks assert on it.
        return MediaArtifact(
            media_kind="audio",
            data=data,
            mime=obj.get("mime", "audio/wav"),
            prompt_used=text,
        )


class HttpScorerBackend(_HttpBackend):
    def __init__(self, cfg: BackendConfig, **kwargs: Any):
        if cfg.kind is not BackendKind.SCORER:
            raise ValueError("scorer backend requires kind=scorer")
        super().__init__(cfg, **kwargs)

    def clip(self, image: MediaArtifact, text: str) -> float:
        if image.media_kind != "image":
            raise ValueError("clip scoring requires an image artifact")
        try:
            obj = self._request(
                "POST",
                "/clip",
                {"image_b64": base64.b64encode(image.data).decode("ascii"), "text": text},
            )
            return float(obj["score"])
        except (BackendError, KeyError, TypeError, ValueError) as exc:
            raise ScorerError(f"clip scoring failed: {exc}") from exc

    def submit_fid(self, pairs: list[tuple[bytes, str]]) -> str:
        if not pairs:
            raise ValueError("fid batch must be non-empty")
        body = {
            "pairs": [
                {"gen_b64": base64.b64encode(data).decode("ascii"), "ref_id": ref_id}
                for data, ref_id in pairs
            ]
        }
        try:
            obj = self._request("POST", "/fid", body)
            return str(obj["job_id"])
        except (KeyError, TypeError) as exc:
            raise ScorerError(f"malformed fid submission reply: {exc}") from exc

    def poll_fid(self, job_id: str) -> tuple[str, float | None]:
        obj = self._request("GET", f"/fid/{job_id}")
        status = str(obj.get("status", "unknown"))
        fid = obj.get("fid")
        return status, (float(fid) if fid is not None else None)


class ReferenceImageStore:
    """Reference images keyed by image_id, used for FID pairing."""

    def __init__(self, images: dict[str, bytes] | None = None):
        self._images = dict(images or {})

    @classmethod
    def from_dir(cls, path: str | Path) -> "ReferenceImageStore":
        images = {}
        for file in sorted(Path(path).iterdir()):
            if file.is_file():
                images[file.stem] = file.read_bytes()
        return cls(images)

    def __contains__(self, image_id: str) -> bool:
        return image_id in self._images

    def __len__(self) -> int:
        return len(self._images)

    def get(self, image_id: str) -> bytes:
        return self._images[image_id]


def collect_fid_pair(
    scorer: "HttpScorerBackend | Any",
    batch: list[tuple[MediaArtifact, str]],
    reference_store: ReferenceImageStore,
) -> str:
    """Submit (generated, reference-id) pairs for a batch FID score.

    Every reference id must resolve in the store before anything is uploaded;
    the returned handle is polled via ``poll_fid`` for the single scalar.
    """
    if not batch:
        raise ValueError("fid batch must be non-empty")
    missing = [ref_id for _, ref_id in batch if ref_id not in reference_store]
    if missing:
        raise MissingReference(missing)
    return scorer.submit_fid([(artifact.data, ref_id) for artifact, ref_id in batch])


# Module-level operations mirroring the client methods, for callers that hold
# configs rather than backend instances.

def complete_chat(cfg: BackendConfig, req: ChatRequest, **kwargs: Any) -> ChatReply:
    return HttpChatBackend(cfg, **kwargs).complete(req)


def generate_image(cfg: BackendConfig, prompt: str, seed: int | None = None, **kwargs: Any) -> MediaArtifact:
    return HttpImageBackend(cfg, **kwargs).generate(prompt, seed=seed)


def synthesize_speech(cfg: BackendConfig, text: str, **kwargs: Any) -> MediaArtifact:
    return HttpSpeechBackend(cfg, **kwargs).synthesize(text)


def score_clip(cfg: BackendConfig, image: MediaArtifact, text: str, **kwargs: Any) -> float:
    return HttpScorerBackend(cfg, **kwargs).clip(image, text)
