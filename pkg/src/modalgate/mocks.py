"""Deterministic in-process backends for hermetic tests and backend-free demos.

All mocks are bit-deterministic: the media generators hand-roll their PNG/WAV
bytes (stored-block deflate, integer square waves) so identical inputs give
identical artifacts across runs and platforms.
"""

from __future__ import annotations

import hashlib
import json
import re
import struct
import threading
import zlib
from typing import Any, Callable, Iterable

from .backends import (
    BackendError,
    BackendKind,
    ChatReply,
    ChatRequest,
    MediaArtifact,
)
from .metrics import tokenize
from .schema import InstructionRecord

MOCK_IMAGE_SIZE = 64
MOCK_WAV_RATE = 8000
MOCK_WAV_SECONDS = 0.5


def _sha(parts: Iterable[bytes]) -> bytes:
    digest = hashlib.sha256()
    for part in parts:
        digest.update(part)
        digest.update(b"\x00")
    return digest.digest()


def _byte_stream(key: bytes, length: int) -> bytes:
    out = bytearray()
    counter = 0
    while len(out) < length:
        out += hashlib.sha256(key + counter.to_bytes(4, "big")).digest()
        counter += 1
    return bytes(out[:length])


def _deflate_stored(data: bytes) -> bytes:
    """zlib container with stored (uncompressed) deflate blocks; the byte
    layout is fully specified, so output never depends on the zlib build."""
    out = bytearray(b"\x78\x01")
    pos = 0
    n = len(data)
    while True:
        chunk = data[pos : pos + 65535]
        pos += len(chunk)
        final = 1 if pos >= n else 0
        out.append(final)
        out += struct.pack("<HH", len(chunk), 0xFFFF - len(chunk))
        out += chunk
        if final:
            break
    out += struct.pack(">I", zlib.adler32(data) & 0xFFFFFFFF)
    return bytes(out)


def _png_chunk(tag: bytes, payload: bytes) -> bytes:
    return (
        struct.pack(">I", len(payload))
        + tag
        + payload
        + struct.pack(">I", zlib.crc32(tag + payload) & 0xFFFFFFFF)
    )


def deterministic_png(key: bytes, size: int = MOCK_IMAGE_SIZE) -> bytes:
    """A size x size RGB PNG whose pixels are a fixed function of ``key``."""
    pixels = _byte_stream(key, size * size * 3)
    scanlines = b"".join(
        b"\x00" + pixels[y * size * 3 : (y + 1) * size * 3] for y in range(size)
    )
    ihdr = struct.pack(">IIBBBBB", size, size, 8, 2, 0, 0, 0)
    return (
        b"\x89PNG\r\n\x1a\n"
        + _png_chunk(b"IHDR", ihdr)
        + _png_chunk(b"IDAT", _deflate_stored(scanlines))
        + _png_chunk(b"IEND", b"")
    )


def deterministic_wav(key: bytes, seconds: float = MOCK_WAV_SECONDS, rate: int = MOCK_WAV_RATE) -> bytes:
    """A playable 16-bit mono WAV square wave keyed by ``key``."""
    n_samples = int(rate * seconds)
    half_period = 8 + key[0] % 32
    amplitude = 8000 + int.from_bytes(key[1:3], "big") % 8000
    frames = bytearray()
    for i in range(n_samples):
        value = amplitude if (i // half_period) % 2 == 0 else -amplitude
        frames += struct.pack("<h", value)
    data = bytes(frames)
    header = (
        b"RIFF"
        + struct.pack("<I", 36 + len(data))
        + b"WAVE"
        + b"fmt "
        + struct.pack("<IHHIIHH", 16, 1, 1, rate, rate * 2, 2, 16)
        + b"data"
        + struct.pack("<I", len(data))
    )
    return header + data


class MockChatBackend:
    """Scripted chat LLM.

    ``script`` is a constant string (repeated), a list of replies (FIFO,
    raising when exhausted), or a callable prompt -> reply text.
    """

    kind = BackendKind.LLM

    def __init__(self, script: str | list[str] | Callable[[str], str], script_id: str = ""):
        self._script = script
        self._queue = list(script) if isinstance(script, list) else None
        self._script_id = script_id or self._derive_id(script)
        self._lock = threading.Lock()
        self.calls: list[str] = []

    @staticmethod
    def _derive_id(script: Any) -> str:
        if isinstance(script, str):
            return "const:" + hashlib.sha256(script.encode()).hexdigest()[:12]
        if isinstance(script, list):
            return "queue:" + hashlib.sha256(json.dumps(script).encode()).hexdigest()[:12]
        return "fn:" + getattr(script, "__name__", "anonymous")

    def describe(self) -> str:
        return f"mock:llm:{self._script_id}"

    def complete(self, req: ChatRequest) -> ChatReply:
        with self._lock:
            self.calls.append(req.prompt)
            if self._queue is not None:
                if not self._queue:
                    raise BackendError("mock chat script exhausted")
                text = self._queue.pop(0)
            elif callable(self._script):
                text = self._script(req.prompt)
            else:
                text = self._script
        return ChatReply(text=text, finish_reason="stop")


class MockImageBackend:
    kind = BackendKind.IMAGE

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self.calls: list[dict[str, Any]] = []

    def describe(self) -> str:
        return "mock:image"

    def generate(self, prompt: str, seed: int | None = None, width: int = 0, height: int = 0) -> MediaArtifact:
        if not prompt or not prompt.strip():
            raise ValueError("image prompt must be non-empty")
        with self._lock:
            self.calls.append({"prompt": prompt, "seed": seed})
        key = _sha([prompt.encode("utf-8"), repr(seed).encode("ascii")])
        return MediaArtifact(
            media_kind="image",
            data=deterministic_png(key),
            mime="image/png",
            prompt_used=prompt,
        )


class MockSpeechBackend:
    kind = BackendKind.SPEECH

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self.calls: list[str] = []

    def describe(self) -> str:
        return "mock:speech"

    def synthesize(self, text: str) -> MediaArtifact:
        if not text or not text.strip():
            raise ValueError("speech text must be non-empty")
        with self._lock:
            self.calls.append(text)
        return MediaArtifact(
            media_kind="audio",
            data=deterministic_wav(_sha([text.encode("utf-8")])),
            mime="audio/wav",
            prompt_used=text,
        )


def overlap_clip_score(prompt_used: str, text: str) -> float:
    """The mock CLIP formula: 100 x |token intersection| / |token union|."""
    a = set(tokenize(prompt_used))
    b = set(tokenize(text))
    union = a | b
    if not union:
        return 0.0
    return 100.0 * len(a & b) / len(union)


class MockScorerBackend:
    kind = BackendKind.SCORER

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._jobs: dict[str, float] = {}
        self.calls: list[dict[str, Any]] = []

    def describe(self) -> str:
        return "mock:scorer"

    def clip(self, image: MediaArtifact, text: str) -> float:
        if image.media_kind != "image":
            raise ValueError("clip scoring requires an image artifact")
        with self._lock:
            self.calls.append({"op": "clip", "text": text})
        return overlap_clip_score(image.prompt_used, text)

    def submit_fid(self, pairs: list[tuple[bytes, str]]) -> str:
        if not pairs:
            raise ValueError("fid batch must be non-empty")
        digest = hashlib.sha256()
        for data, ref_id in pairs:
            digest.update(hashlib.sha256(data).digest())
            digest.update(ref_id.encode("utf-8"))
        job_id = digest.hexdigest()[:16]
        fid = 50.0 + int(digest.hexdigest()[:8], 16) % 10000 / 100.0
        with self._lock:
            self.calls.append({"op": "fid", "pairs": len(pairs)})
            self._jobs[job_id] = fid
        return job_id

    def poll_fid(self, job_id: str) -> tuple[str, float | None]:
        with self._lock:
            if job_id not in self._jobs:
                raise BackendError(f"unknown fid job: {job_id}")
            return "done", self._jobs[job_id]


def instruction_from_prompt(prompt: str) -> str:
    """Recover the user instruction from any of the prompt framings."""
    fewshot_turns = re.findall(r"Instruction: (.+?)\s*\n+Response:", prompt, flags=re.DOTALL)
    if fewshot_turns:
        return fewshot_turns[-1].strip()
    user_turns = re.findall(r"^User: (.*)$", prompt, flags=re.MULTILINE)
    if user_turns:
        return user_turns[-1].strip()
    return prompt.strip()


def make_oracle_llm(records: list[InstructionRecord], speech_alias: str = "speech") -> MockChatBackend:
    """Mock LLM that answers each known instruction with its ground truth."""
    by_instruction = {record.instruction: record for record in records}

    def script(prompt: str) -> str:
        instruction = instruction_from_prompt(prompt)
        record = by_instruction.get(instruction)
        if record is None:
            # conversational prompts embed the instruction; fall back to scan
            matches = [i for i in by_instruction if i in prompt]
            if not matches:
                raise BackendError(f"oracle has no record for: {instruction[:80]!r}")
            record = by_instruction[max(matches, key=len)]
        return record.output.to_json(speech_alias=speech_alias)

    corpus_id = hashlib.sha256(
        "\n".join(sorted(by_instruction)).encode("utf-8")
    ).hexdigest()[:12]
    return MockChatBackend(script, script_id=f"oracle:{corpus_id}")


def make_always_text_llm(answer: str = "Here is a plain text answer.") -> MockChatBackend:
    reply = json.dumps({"type": "text", "response": answer})
    return MockChatBackend(reply, script_id="always-text")


_IMAGE_HINTS = ("image", "picture", "photo", "draw", "paint", "visualize", "show me", "logo", "illustration", "sketch")
_SPEECH_HINTS = ("speech", "audio", "say", "speak", "pronounce", "read", "recite", "voice", "sing", "aloud")


def make_heuristic_llm() -> MockChatBackend:
    """Keyword-guessing demo LLM: routes by instruction keywords, echoing the
    instruction as the conversion prompt."""

    def script(prompt: str) -> str:
        instruction = instruction_from_prompt(prompt)
        lowered = instruction.lower()
        if any(hint in lowered for hint in _IMAGE_HINTS):
            return json.dumps({"type": "image", "response": instruction})
        if any(hint in lowered for hint in _SPEECH_HINTS):
            return json.dumps({"type": "speech", "response": instruction})
        return json.dumps({"type": "text", "response": instruction})

    return MockChatBackend(script, script_id="heuristic")


_CAPTIONS_MARKER = "Please generate an appropriate instruction for each of them:"


def make_mock_teacher(modality_hint: str = "image") -> MockChatBackend:
    """Deterministic stand-in for the teacher LLM: answers a generation
    prompt with one caption-derived instruction per listed caption."""

    stem = "Render this concept as a picture:" if modality_hint == "image" else "Read this aloud:"

    def script(prompt: str) -> str:
        _, _, tail = prompt.partition(_CAPTIONS_MARKER)
        captions = re.findall(r"^\[(.+)\]$", tail, flags=re.MULTILINE)
        lines = []
        for caption in captions:
            lines.append(f"[{caption}]")
            lines.append(f"Instruction: {stem} {caption}")
        return "\n".join(lines)

    return MockChatBackend(script, script_id=f"teacher:{modality_hint}")


def make_mock(kind: BackendKind | str, script: Any = None, script_id: str = "") -> Any:
    """Construct a deterministic in-process backend of the given kind."""
    kind = BackendKind(kind)
    if kind is BackendKind.LLM:
        if script is None:
            return make_heuristic_llm()
        return MockChatBackend(script, script_id=script_id)
    if script is not None:
        raise ValueError(f"{kind.value} mock takes no script")
    if kind is BackendKind.IMAGE:
        return MockImageBackend()
    if kind is BackendKind.SPEECH:
        return MockSpeechBackend()
    return MockScorerBackend()
