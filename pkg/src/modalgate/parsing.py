"""Fault-tolerant extraction and repair of structured responses from LLM text.

LLMs wrap the expected two-field object in prose, code fences, outer quotes,
or lightly broken JSON. The pipeline here is extract -> repair -> strict parse
-> canonicalize, with an optional fallback that wraps anything unparseable as
a plain text response instead of raising.
"""

from __future__ import annotations

import json
import re

from .schema import (
    Modality,
    ParseOutcome,
    StructuredResponse,
    UnknownModality,
    structured_response_from_obj,
)


class Irreparable(ValueError):
    """Raised when a candidate still fails strict parsing after all repairs."""


# Characters accepted as "single quote" wrappers: ASCII quote/backtick plus
# the curly variants that survive copy/paste from rendered documents.
_OUTER_QUOTE_CHARS = "'`‘’´"
_STRUCTURAL_BEFORE = "{[,:"
_STRUCTURAL_AFTER = ":,}]"

REPAIR_OUTER_QUOTES = "outer-quotes"
REPAIR_SINGLE_QUOTES = "single-quotes"
REPAIR_TRAILING_COMMA = "trailing-comma"
REPAIR_DOUBLED_QUOTES = "doubled-quotes"
REPAIR_DUPLICATE_RESPONSE = "duplicate-response"


def extract_structured_block(raw_llm_text: str) -> str | None:
    """Return the first balanced brace-delimited object substring, or None.

    Prose and code-fence markers around the object are skipped; double-quoted
    strings are honored so braces inside them do not affect balancing.
    """
    if not raw_llm_text:
        return None
    text = raw_llm_text
    start = text.find("{")
    while start != -1:
        end = _scan_balanced(text, start)
        if end is not None:
            return text[start : end + 1]
        start = text.find("{", start + 1)
    return None


def _scan_balanced(text: str, start: int) -> int | None:
    depth = 0
    in_string = False
    escaped = False
    for i in range(start, len(text)):
        ch = text[i]
        if in_string:
            if escaped:
                escaped = False
            elif ch == "\\":
                escaped = True
            elif ch == '"':
                in_string = False
            continue
        if ch == '"':
            in_string = True
        elif ch == "{":
            depth += 1
        elif ch == "}":
            depth -= 1
            if depth == 0:
                return i
    return None


def repair_structured_text(candidate: str) -> tuple[str, list[str]]:
    """Apply the fixed, idempotent repair sequence to a brace-balanced candidate.

    Repairs, in order: strip outer single quotes; convert single-quoted
    keys/strings to double quotes when unambiguous; drop trailing commas;
    unescape doubled quotes; collapse duplicate "response" keys keeping the
    first. Each applied repair contributes one tag. Raises
    :class:`Irreparable` when the result still fails strict parsing.
    """
    tags: list[str] = []
    text = candidate.strip()

    # Text-level repairs run only while the candidate still fails strict
    # parsing: once the text is valid JSON, rewriting it can only corrupt
    # legitimate content (escaped quotes, commas inside strings).
    rewrites = (
        (REPAIR_OUTER_QUOTES, _strip_outer_quotes),
        (REPAIR_SINGLE_QUOTES, _convert_single_quotes),
        (REPAIR_TRAILING_COMMA, lambda t: re.sub(r",(\s*[}\]])", r"\1", t)),
        (REPAIR_DOUBLED_QUOTES, _collapse_doubled_quotes),
    )
    for tag, rewrite in rewrites:
        if _parses_strictly(text):
            break
        repaired = rewrite(text)
        if repaired != text:
            tags.append(tag)
            text = repaired

    # Duplicate keys decode "cleanly" (last wins), so this check always runs.
    deduped, response_duplicated = _collapse_duplicate_keys(text)
    if deduped is not None:
        if response_duplicated:
            tags.append(REPAIR_DUPLICATE_RESPONSE)
        text = deduped

    try:
        parsed = json.loads(text)
    except json.JSONDecodeError as exc:
        raise Irreparable(f"candidate not repairable: {exc}") from exc
    if not isinstance(parsed, dict):
        raise Irreparable("candidate does not decode to an object")
    return text, tags


def _parses_strictly(text: str) -> bool:
    try:
        json.loads(text)
    except json.JSONDecodeError:
        return False
    return True


def _strip_outer_quotes(text: str) -> str:
    while (
        len(text) >= 2
        and text[0] in _OUTER_QUOTE_CHARS
        and text[-1] in _OUTER_QUOTE_CHARS
        and "{" in text
    ):
        text = text[1:-1].strip()
    return text


def _convert_single_quotes(text: str) -> str:
    """Rewrite single-quoted strings in key/value position to double quotes.

    Only converts when a closing quote is followed by a structural character,
    which keeps interior apostrophes (McDonald's) intact. Ambiguous spans are
    left untouched.
    """
    out: list[str] = []
    i = 0
    n = len(text)
    in_dquote = False
    escaped = False
    last_structural = True  # start of candidate counts as structural
    while i < n:
        ch = text[i]
        if in_dquote:
            out.append(ch)
            if escaped:
                escaped = False
            elif ch == "\\":
                escaped = True
            elif ch == '"':
                in_dquote = False
            i += 1
            continue
        if ch == '"':
            in_dquote = True
            out.append(ch)
            i += 1
            continue
        if ch == "'" and last_structural:
            end = _find_single_quote_end(text, i)
            if end is not None:
                inner = text[i + 1 : end]
                inner = inner.replace('\\"', '"')
                inner = inner.replace('"', '\\"')
                out.append('"' + inner + '"')
                i = end + 1
                last_structural = False
                continue
        out.append(ch)
        if not ch.isspace():
            last_structural = ch in _STRUCTURAL_BEFORE
        i += 1
    return "".join(out)


def _find_single_quote_end(text: str, start: int) -> int | None:
    j = start + 1
    n = len(text)
    while j < n:
        if text[j] == "'":
            k = j + 1
            while k < n and text[k].isspace():
                k += 1
            if k >= n or text[k] in _STRUCTURAL_AFTER:
                return j
        j += 1
    return None


def _collapse_doubled_quotes(text: str) -> str:
    # CSV-style "" doubling plus the LaTeX-derived `` and '' quote pairs.
    text = re.sub(r"``|''", '"', text)
    return re.sub(r'"{2,}', '"', text)


def _collapse_duplicate_keys(text: str) -> tuple[str | None, bool]:
    """Keep the first occurrence of duplicated keys.

    Returns (rebuilt text or None when nothing was duplicated, whether the
    "response" key specifically was duplicated).
    """
    try:
        pairs = json.loads(text, object_pairs_hook=lambda p: p)
    except json.JSONDecodeError:
        return None, False
    if not isinstance(pairs, list):
        return None, False
    seen: dict[str, object] = {}
    response_duplicated = False
    duplicated = False
    for key, value in pairs:
        if key in seen:
            duplicated = True
            if key == "response":
                response_duplicated = True
            continue
        seen[key] = value
    if not duplicated:
        return None, False
    return json.dumps(seen, ensure_ascii=False), response_duplicated


def parse_structured_response(raw_llm_text: str, fallback_to_text: bool = True) -> ParseOutcome:
    """Parse raw LLM text into a ParseOutcome; never raises.

    Composes extract -> repair -> strict parse -> modality canonicalization ->
    invariant validation. On any failure with ``fallback_to_text`` set, the
    raw text (trimmed) is wrapped as a text response with
    ``fell_back_to_text=True``; otherwise a failure outcome is returned.
    """
    raw = raw_llm_text if isinstance(raw_llm_text, str) else str(raw_llm_text)
    tags: list[str] = []
    error: str | None = None

    candidate = extract_structured_block(raw)
    if candidate is None:
        error = "no structured object found"
    else:
        try:
            repaired, tags = repair_structured_text(candidate)
            obj = json.loads(repaired)
            result, warn_tags = structured_response_from_obj(obj)
            return ParseOutcome(
                raw=raw,
                result=result,
                repairs_applied=tuple(tags) + tuple(warn_tags),
            )
        except (Irreparable, UnknownModality, ValueError) as exc:
            error = str(exc)

    if fallback_to_text:
        trimmed = raw.strip()
        if trimmed:
            return ParseOutcome(
                raw=raw,
                result=StructuredResponse(Modality.TEXT, trimmed),
                repairs_applied=tuple(tags),
                fell_back_to_text=True,
                error=error,
            )
        error = f"{error}; raw output empty, cannot fall back"
    return ParseOutcome(raw=raw, result=None, repairs_applied=tuple(tags), error=error)
