from __future__ import annotations

import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from modalgate.schema import (
    InstructionRecord,
    Modality,
    ParseOutcome,
    Source,
    StructuredResponse,
    UnknownModality,
    canonicalize_modality,
    read_records,
    record_from_wire,
    structured_response_from_obj,
    validate_validation_record,
    write_records,
)


def test_canonicalize_audio_alias_maps_to_speech():
    assert canonicalize_modality("audio") is Modality.SPEECH


def test_canonicalize_case_fold_and_whitespace():
    assert canonicalize_modality("IMAGE") is Modality.IMAGE
    assert canonicalize_modality("  Text\n") is Modality.TEXT
    assert canonicalize_modality("Speech") is Modality.SPEECH


def test_canonicalize_rejects_out_of_enum():
    with pytest.raises(UnknownModality):
        canonicalize_modality("video")
    with pytest.raises(UnknownModality):
        canonicalize_modality("")


def test_structured_response_trims_but_preserves_interior():
    resp = StructuredResponse(Modality.SPEECH, "  McDonald's  and  friends \n")
    assert resp.response == "McDonald's  and  friends"


def test_structured_response_rejects_empty():
    with pytest.raises(ValueError):
        StructuredResponse(Modality.TEXT, "   ")


def test_wire_form_has_exactly_two_keys():
    resp = StructuredResponse(Modality.IMAGE, "a cat")
    assert resp.to_wire() == {"type": "image", "response": "a cat"}


def test_speech_alias_profiles():
    resp = StructuredResponse(Modality.SPEECH, "John")
    assert resp.to_wire()["type"] == "speech"
    assert resp.to_wire(speech_alias="audio")["type"] == "audio"
    with pytest.raises(ValueError):
        resp.to_wire(speech_alias="voice")


def test_from_obj_flags_extra_keys():
    resp, warnings = structured_response_from_obj(
        {"type": "text", "response": "ok", "confidence": 0.9}
    )
    assert resp.response == "ok"
    assert warnings == ["extra-keys"]


def test_record_requires_instruction():
    with pytest.raises(ValueError):
        InstructionRecord("", StructuredResponse(Modality.TEXT, "x"))


def test_record_wire_matches_published_listing_shape():
    record = InstructionRecord(
        instruction="Showcasing the city a hundred years from now.",
        output=StructuredResponse(
            Modality.IMAGE, "A futuristic cityscape with towering skyscrapers and flying vehicles."
        ),
    )
    assert record.to_wire() == {
        "instruction": "Showcasing the city a hundred years from now.",
        "output": {
            "type": "image",
            "response": "A futuristic cityscape with towering skyscrapers and flying vehicles.",
        },
    }


def test_record_wire_embeds_image_id_in_output():
    record = InstructionRecord(
        instruction="Can you show me the famous Japanese painting which includes wave and mountain fuji?",
        output=StructuredResponse(Modality.IMAGE, "The Great Wave off Kanagawa."),
        image_id="42153",
    )
    wire = record.to_wire()
    assert wire["output"]["image_id"] == "42153"
    parsed, extras = record_from_wire(wire)
    assert parsed.image_id == "42153"
    assert extras == {}


def test_validation_record_needs_image_id_for_image_route():
    record = InstructionRecord(
        instruction="Show me a llama photo.",
        output=StructuredResponse(Modality.IMAGE, "A photo of a llama."),
    )
    with pytest.raises(ValueError):
        validate_validation_record(record)
    validate_validation_record(
        InstructionRecord(
            instruction="Say hi.", output=StructuredResponse(Modality.SPEECH, "hi")
        )
    )


def test_jsonl_round_trip(tmp_path):
    records = [
        InstructionRecord("Say John.", StructuredResponse(Modality.SPEECH, "John")),
        InstructionRecord(
            "Draw a cat.", StructuredResponse(Modality.IMAGE, "a cat"), image_id="7"
        ),
    ]
    path = tmp_path / "records.jsonl"
    assert write_records(records, path) == 2
    loaded = read_records(path, source=Source.SEED)
    assert [r.instruction for r in loaded] == ["Say John.", "Draw a cat."]
    assert loaded[0].source is Source.SEED
    assert loaded[1].image_id == "7"


def test_record_from_wire_accepts_qa_extras():
    record, extras = record_from_wire(
        {
            "instruction": "Pick one.",
            "output": {"type": "text", "response": "A"},
            "choices": ["A", "B"],
            "correct_indices": [0],
        }
    )
    assert record.output.response == "A"
    assert extras == {"choices": ["A", "B"], "correct_indices": [0]}


def test_parse_outcome_fallback_invariant():
    with pytest.raises(ValueError):
        ParseOutcome(raw="x", result=None, fell_back_to_text=True)
    with pytest.raises(ValueError):
        ParseOutcome(
            raw="x",
            result=StructuredResponse(Modality.IMAGE, "y"),
            fell_back_to_text=True,
        )


_modalities = st.sampled_from(list(Modality))
_responses = st.text(min_size=1).filter(lambda s: s.strip())


@given(_modalities, _responses)
def test_serialize_parse_round_trip(modality, response):
    original = StructuredResponse(modality, response)
    wire = json.loads(original.to_json())
    reparsed, warnings = structured_response_from_obj(wire)
    assert warnings == []
    assert reparsed.to_json() == original.to_json()
