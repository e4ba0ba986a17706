from __future__ import annotations

import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from modalgate.parsing import (
    Irreparable,
    extract_structured_block,
    parse_structured_response,
    repair_structured_text,
)
from modalgate.schema import Modality, StructuredResponse


def test_extract_strips_surrounding_prose():
    raw = 'Sure! {"type": "text", "response": "2"} Hope that helps.'
    assert extract_structured_block(raw) == '{"type": "text", "response": "2"}'


def test_extract_strips_code_fence():
    raw = '```\n{"type": "image", "response": "x"}\n```'
    assert extract_structured_block(raw) == '{"type": "image", "response": "x"}'


def test_extract_none_without_braces():
    assert extract_structured_block("I cannot do that.") is None


def test_extract_honors_braces_inside_strings():
    raw = '{"type": "text", "response": "set {a, b} union"} trailing'
    assert extract_structured_block(raw) == '{"type": "text", "response": "set {a, b} union"}'


def test_extract_skips_unbalanced_prefix():
    raw = 'weird { opener {"type": "text", "response": "ok"}'
    assert extract_structured_block(raw) == '{"type": "text", "response": "ok"}'


def test_repair_outer_single_quotes():
    candidate = '\'{"type": "audio", "response": "October first, two thousand."}\''
    repaired, tags = repair_structured_text(candidate)
    assert tags == ["outer-quotes"]
    assert json.loads(repaired) == {
        "type": "audio",
        "response": "October first, two thousand.",
    }


def test_repair_single_quotes_and_trailing_comma():
    repaired, tags = repair_structured_text("{'type': 'image', 'response': 'a cat',}")
    assert tags == ["single-quotes", "trailing-comma"]
    assert json.loads(repaired) == {"type": "image", "response": "a cat"}


def test_repair_preserves_interior_apostrophes():
    repaired, _ = repair_structured_text("{'type': 'audio', 'response': 'McDonald's'}")
    assert json.loads(repaired) == {"type": "audio", "response": "McDonald's"}


def test_repair_doubled_quotes():
    repaired, tags = repair_structured_text('{``type": ``audio", ``response": ``hello"}')
    assert "doubled-quotes" in tags
    assert json.loads(repaired) == {"type": "audio", "response": "hello"}


def test_repair_duplicate_response_keeps_first():
    repaired, tags = repair_structured_text(
        '{"type": "text", "response": "first", "response": "second"}'
    )
    assert "duplicate-response" in tags
    assert json.loads(repaired)["response"] == "first"


def test_repair_missing_value_is_irreparable():
    with pytest.raises(Irreparable):
        repair_structured_text('{"type": }')


def test_repair_is_idempotent_on_known_corruptions():
    candidates = [
        "{'type': 'image', 'response': 'a cat',}",
        '\'{"type": "audio", "response": "hi"}\'',
        '{``type": ``audio", ``response": ``hello"}',
        '{"type": "text", "response": "first", "response": "second"}',
        '{"type": "text", "response": "plain"}',
    ]
    for candidate in candidates:
        once, _ = repair_structured_text(candidate)
        twice, _ = repair_structured_text(once)
        assert twice == once


def test_parse_published_example():
    raw = '{"type": "image", "response": "A photo of an astronaut riding a horse on Mars"}'
    outcome = parse_structured_response(raw)
    assert outcome.ok
    assert outcome.result.modality is Modality.IMAGE
    assert outcome.result.response == "A photo of an astronaut riding a horse on Mars"
    assert outcome.repairs_applied == ()
    assert not outcome.fell_back_to_text


def test_parse_fallback_wraps_raw_text():
    outcome = parse_structured_response("2", fallback_to_text=True)
    assert outcome.ok
    assert outcome.result.modality is Modality.TEXT
    assert outcome.result.response == "2"
    assert outcome.fell_back_to_text


def test_parse_without_fallback_reports_failure():
    outcome = parse_structured_response("2", fallback_to_text=False)
    assert not outcome.ok
    assert outcome.error
    assert not outcome.fell_back_to_text


def test_parse_extra_keys_tolerated_with_warning():
    raw = '{"type": "text", "response": "ok", "confidence": 1}'
    outcome = parse_structured_response(raw)
    assert outcome.ok
    assert "extra-keys" in outcome.repairs_applied


def test_parse_unknown_modality_falls_back():
    outcome = parse_structured_response('{"type": "video", "response": "x"}')
    assert outcome.fell_back_to_text
    assert outcome.result.modality is Modality.TEXT


# --- corruption corpus -------------------------------------------------------
# Oracle: the strict records below parse trivially; every mechanically
# corrupted variant must parse back to a result equal to its original.

STRICT_RECORDS = [
    (Modality.TEXT, "2", "speech"),
    (Modality.IMAGE, "A photo of an astronaut riding a horse on Mars", "speech"),
    (Modality.IMAGE, "The Great Wave off Kanagawa.", "speech"),
    (Modality.SPEECH, "McDonald's", "audio"),
    (
        Modality.SPEECH,
        "She sells sea shells by the seashore. The shells she sells are surely seashells.",
        "audio",
    ),
]


def _strict_json(modality: Modality, response: str, alias: str) -> str:
    return StructuredResponse(modality, response).to_json(speech_alias=alias)


CORRUPTIONS = {
    "fence": lambda s: f"```json\n{s}\n```",
    "outer-quotes": lambda s: f"'{s}'",
    "prose": lambda s: f"Sure! Here is the structured answer: {s} Hope that helps.",
    "trailing-comma": lambda s: s[:-1] + ",}",
}


def _corruption_corpus():
    corpus = []
    for modality, response, alias in STRICT_RECORDS:
        strict = _strict_json(modality, response, alias)
        for name, corrupt in CORRUPTIONS.items():
            corpus.append((modality, response, name, corrupt(strict)))
    return corpus


def test_corruption_corpus_has_twenty_variants():
    assert len(_corruption_corpus()) == 20


@pytest.mark.parametrize(
    "modality,response,corruption,raw", _corruption_corpus(), ids=lambda v: str(v)[:46]
)
def test_corrupted_variants_parse_to_originals(modality, response, corruption, raw):
    # oracle: strict parse of the uncorrupted original
    original = StructuredResponse(modality, response)
    assert parse_structured_response(original.to_json()).result == original

    outcome = parse_structured_response(raw)
    assert outcome.ok
    assert not outcome.fell_back_to_text
    assert outcome.result == original
    if corruption == "trailing-comma":
        assert "trailing-comma" in outcome.repairs_applied
    else:
        # extraction alone recovers these: the raw text still contained a
        # strictly well-formed object, so no repair tags
        assert outcome.repairs_applied == ()


IRREPARABLE_FIXTURES = [
    "I cannot do that.",
    '{"type": }',
    "no structured output here, just words",
]


@pytest.mark.parametrize("raw", IRREPARABLE_FIXTURES)
def test_irreparable_fixtures_fall_back_to_text(raw):
    outcome = parse_structured_response(raw, fallback_to_text=True)
    assert outcome.ok
    assert outcome.fell_back_to_text
    assert outcome.result.modality is Modality.TEXT
    assert outcome.result.response == raw.strip()


@settings(max_examples=200)
@given(st.text())
def test_parser_totality(raw):
    for fallback in (True, False):
        outcome = parse_structured_response(raw, fallback_to_text=fallback)
        if outcome.fell_back_to_text:
            assert outcome.result.modality is Modality.TEXT


@given(
    st.sampled_from(list(Modality)),
    st.text(min_size=1).filter(lambda s: s.strip()),
)
def test_parse_round_trip_over_serializations(modality, response):
    original = StructuredResponse(modality, response)
    outcome = parse_structured_response(original.to_json())
    assert outcome.ok
    assert outcome.repairs_applied == ()
    assert outcome.result.to_json() == original.to_json()
