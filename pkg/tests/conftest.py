from __future__ import annotations

import pytest

from modalgate.schema import InstructionRecord, Modality, StructuredResponse

# acceptance test outcomes, printed one per criterion in the terminal summary
_ACCEPTANCE_RESULTS: dict[str, bool] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    if report.when == "call" and item.fspath.basename == "test_acceptance.py":
        _ACCEPTANCE_RESULTS[item.name] = report.passed


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _ACCEPTANCE_RESULTS:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for name, passed in sorted(_ACCEPTANCE_RESULTS.items()):
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {name}")


def make_fixture_corpus(per_route: int = 20) -> tuple[list[InstructionRecord], list[dict]]:
    """Balanced benchmark fixture: per_route records for each of the three
    routes; text rows carry QA payloads whose correct choice is the ground
    response. Returns (records, extras-per-record)."""
    records: list[InstructionRecord] = []
    extras: list[dict] = []
    for i in range(per_route):
        correct = f"Topic {i} relies on careful measurement of signal {i}."
        wrong_a = "Entirely unrelated filler words occupy this distractor sentence."
        wrong_b = f"Nothing in item {i} was ever checked against observations."
        records.append(
            InstructionRecord(
                instruction=f"Which statement about topic {i} is accurate?",
                output=StructuredResponse(Modality.TEXT, correct),
            )
        )
        extras.append({"choices": [correct, wrong_a, wrong_b], "correct_indices": [0]})
    for i in range(per_route):
        records.append(
            InstructionRecord(
                instruction=f"Show me a rendition of scene number {i}.",
                output=StructuredResponse(
                    Modality.IMAGE, f"A detailed painting of scene number {i} with vivid colors."
                ),
                image_id=f"img{i:03d}",
            )
        )
        extras.append({})
    for i in range(per_route):
        records.append(
            InstructionRecord(
                instruction=f"Please read announcement {i} aloud.",
                output=StructuredResponse(
                    Modality.SPEECH, f"Announcement {i}: the reading room opens at nine."
                ),
            )
        )
        extras.append({})
    return records, extras


def write_fixture_corpus(path, per_route: int = 20) -> list[InstructionRecord]:
    import json

    records, extras = make_fixture_corpus(per_route)
    with open(path, "w", encoding="utf-8") as fh:
        for record, extra in zip(records, extras):
            obj = record.to_wire()
            obj.update(extra)
            fh.write(json.dumps(obj, ensure_ascii=False))
            fh.write("\n")
    return records


@pytest.fixture
def fixture_corpus_path(tmp_path):
    path = tmp_path / "corpus.jsonl"
    records = write_fixture_corpus(path)
    return path, records
