"""Canonical domain types: modalities, structured responses, instruction records.

The structured response is the two-field object ``{"type": ..., "response": ...}``
that the chat LLM is expected to emit; everything downstream (routing, datagen,
evaluation) is built on these types and their JSON-lines wire format.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Iterator, TextIO


class UnknownModality(ValueError):
    """Raised when a modality string cannot be canonicalized."""


class Modality(str, Enum):
    TEXT = "text"
    IMAGE = "image"
    SPEECH = "speech"

    def __str__(self) -> str:  # pragma: no cover - cosmetic
        return self.value


# Accepted spellings on the wire. "audio" appears alongside "speech" in real
# teacher/LLM output, so both map to the same canonical modality.
_MODALITY_ALIASES = {
    "text": Modality.TEXT,
    "image": Modality.IMAGE,
    "speech": Modality.SPEECH,
    "audio": Modality.SPEECH,
}

# Serializer profiles: the canonical internal spelling is "speech", but some
# corpora spell the same modality "audio"; writers can pick either.
SPEECH_ALIASES = ("speech", "audio")


def canonicalize_modality(raw: str) -> Modality:
    """Map a raw modality string to the canonical enum.

    Case-insensitive, surrounding whitespace ignored; "audio" and "speech"
    both canonicalize to speech. Raises :class:`UnknownModality` for anything
    else so the caller decides the fallback.
    """
    if not isinstance(raw, str):
        raise UnknownModality(f"modality must be a string, got {type(raw).__name__}")
    key = raw.strip().lower()
    try:
        return _MODALITY_ALIASES[key]
    except KeyError:
        raise UnknownModality(f"unknown modality: {raw!r}") from None


@dataclass(frozen=True)
class StructuredResponse:
    """The (response, modality) pair contracted between the LLM and the router.

    ``response`` is the text-to-image prompt for the image route, the verbatim
    text to speak for the speech route, and the final answer for the text
    route. Outer whitespace is stripped at construction; the interior is
    preserved byte-exact.
    """

    modality: Modality
    response: str

    def __post_init__(self) -> None:
        if not isinstance(self.modality, Modality):
            object.__setattr__(self, "modality", canonicalize_modality(self.modality))
        if not isinstance(self.response, str):
            raise ValueError("response must be a string")
        trimmed = self.response.strip()
        if not trimmed:
            raise ValueError("response must be non-empty after trimming")
        object.__setattr__(self, "response", trimmed)

    def to_wire(self, speech_alias: str = "speech") -> dict[str, str]:
        """Flat two-key wire object. ``speech_alias`` picks the spelling used
        for the speech modality ("speech" or "audio")."""
        if speech_alias not in SPEECH_ALIASES:
            raise ValueError(f"speech_alias must be one of {SPEECH_ALIASES}")
        type_str = self.modality.value
        if self.modality is Modality.SPEECH:
            type_str = speech_alias
        return {"type": type_str, "response": self.response}

    def to_json(self, speech_alias: str = "speech") -> str:
        return json.dumps(self.to_wire(speech_alias=speech_alias), ensure_ascii=False)


def structured_response_from_obj(obj: Any) -> tuple[StructuredResponse, list[str]]:
    """Build a StructuredResponse from a decoded JSON value.

    Returns the response plus warning tags ("extra-keys" when keys beyond
    type/response were present and ignored). Raises ValueError or
    UnknownModality when the object does not carry a usable pair.
    """
    if not isinstance(obj, dict):
        raise ValueError(f"structured response must be an object, got {type(obj).__name__}")
    if "type" not in obj:
        raise ValueError('structured response is missing the "type" key')
    if "response" not in obj:
        raise ValueError('structured response is missing the "response" key')
    warnings: list[str] = []
    extras = set(obj) - {"type", "response"}
    if extras:
        warnings.append("extra-keys")
    modality = canonicalize_modality(obj["type"])
    response = obj["response"]
    if not isinstance(response, str):
        raise ValueError("response must be a string")
    return StructuredResponse(modality=modality, response=response), warnings


class Source(str, Enum):
    SEED = "seed"
    TEACHER = "teacher"
    HUMAN = "human"
    SAMPLED_BENCHMARK = "sampled-benchmark"


@dataclass(frozen=True)
class InstructionRecord:
    """One instruction with its ground-truth structured output.

    ``image_id`` keys the reference image used for FID pairing on validation
    records; ``source`` is in-memory provenance and is not serialized (the
    JSON-lines wire format carries exactly instruction/output[/image_id]).
    """

    instruction: str
    output: StructuredResponse
    image_id: str | None = None
    source: Source = Source.HUMAN

    def __post_init__(self) -> None:
        if not isinstance(self.instruction, str) or not self.instruction.strip():
            raise ValueError("instruction must be non-empty")
        object.__setattr__(self, "instruction", self.instruction.strip())
        if not isinstance(self.source, Source):
            object.__setattr__(self, "source", Source(self.source))

    def to_wire(self, speech_alias: str = "speech") -> dict[str, Any]:
        output = self.output.to_wire(speech_alias=speech_alias)
        if self.image_id is not None:
            output["image_id"] = self.image_id
        return {"instruction": self.instruction, "output": output}

    def to_json(self, speech_alias: str = "speech") -> str:
        return json.dumps(self.to_wire(speech_alias=speech_alias), ensure_ascii=False)


def record_from_wire(
    obj: dict[str, Any], source: Source = Source.HUMAN
) -> tuple[InstructionRecord, dict[str, Any]]:
    """Decode one wire record; returns (record, extra top-level fields).

    Extra fields (QA payloads on validation corpora, etc.) are passed through
    untouched so extended formats stay loadable.
    """
    if not isinstance(obj, dict):
        raise ValueError("record must be an object")
    if "instruction" not in obj or "output" not in obj:
        raise ValueError('record must carry "instruction" and "output"')
    output_obj = obj["output"]
    if not isinstance(output_obj, dict):
        raise ValueError('"output" must be an object')
    image_id = output_obj.get("image_id", obj.get("image_id"))
    if image_id is not None:
        image_id = str(image_id)
    response, _ = structured_response_from_obj(
        {"type": output_obj.get("type"), "response": output_obj.get("response")}
    )
    record = InstructionRecord(
        instruction=obj["instruction"], output=response, image_id=image_id, source=source
    )
    extras = {k: v for k, v in obj.items() if k not in ("instruction", "output", "image_id")}
    return record, extras


def validate_validation_record(record: InstructionRecord) -> None:
    """Validation corpora require an image_id on every image-route record."""
    if record.output.modality is Modality.IMAGE and not record.image_id:
        raise ValueError(
            f"validation record for image output must carry image_id: {record.instruction[:60]!r}"
        )


def write_records(
    records: Iterable[InstructionRecord],
    path: str | Path | TextIO,
    speech_alias: str = "speech",
) -> int:
    """Write records as UTF-8 JSON lines; returns the number written."""
    if hasattr(path, "write"):
        return _write_records_fh(records, path, speech_alias)  # type: ignore[arg-type]
    with open(path, "w", encoding="utf-8") as fh:
        return _write_records_fh(records, fh, speech_alias)


def _write_records_fh(
    records: Iterable[InstructionRecord], fh: TextIO, speech_alias: str
) -> int:
    n = 0
    for record in records:
        fh.write(record.to_json(speech_alias=speech_alias))
        fh.write("\n")
        n += 1
    return n


def read_records(
    path: str | Path, source: Source = Source.HUMAN
) -> list[InstructionRecord]:
    return [record for record, _ in iter_records_with_extras(path, source=source)]


def iter_records_with_extras(
    path: str | Path, source: Source = Source.HUMAN
) -> Iterator[tuple[InstructionRecord, dict[str, Any]]]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                yield record_from_wire(obj, source=source)
            except (ValueError, UnknownModality) as exc:
                raise ValueError(f"{path}:{lineno}: bad record: {exc}") from exc


@dataclass(frozen=True)
class ParseOutcome:
    """Result of parsing raw LLM text into a structured response.

    ``repairs_applied`` is empty exactly when the raw text already contained a
    strictly well-formed structured object; ``fell_back_to_text`` marks the
    policy fallback where unparseable output is wrapped as a text response.
    """

    raw: str
    result: StructuredResponse | None = None
    repairs_applied: tuple[str, ...] = field(default_factory=tuple)
    fell_back_to_text: bool = False
    error: str | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "repairs_applied", tuple(self.repairs_applied))
        if self.fell_back_to_text:
            if self.result is None or self.result.modality is not Modality.TEXT:
                raise ValueError("text fallback requires a text-modality result")
        if self.result is None and self.error is None:
            raise ValueError("failure outcomes must carry an error")

    @property
    def ok(self) -> bool:
        return self.result is not None

    def to_dict(self) -> dict[str, Any]:
        return {
            "result": self.result.to_wire() if self.result else None,
            "repairs_applied": list(self.repairs_applied),
            "fell_back_to_text": self.fell_back_to_text,
            "raw": self.raw,
            "error": self.error,
        }
