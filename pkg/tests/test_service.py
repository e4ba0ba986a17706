from __future__ import annotations

import hashlib
import time

import pytest
from fastapi.testclient import TestClient

from conftest import write_fixture_corpus
from modalgate.evalharness import EvalJob, run_eval
from modalgate.mocks import MockImageBackend, MockSpeechBackend, MockScorerBackend, make_oracle_llm
from modalgate.schema import InstructionRecord, Modality, StructuredResponse, write_records
from modalgate.service import ServiceConfig, create_app

GREAT_WAVE = InstructionRecord(
    instruction="Can you show me the famous Japanese painting which includes wave and mountain fuji?",
    output=StructuredResponse(Modality.IMAGE, "The Great Wave off Kanagawa."),
    image_id="42153",
)
STATUE_TEXT = InstructionRecord(
    instruction="Tell me about the Statue of Liberty",
    output=StructuredResponse(
        Modality.TEXT, "The Statue of Liberty stands on Liberty Island in New York Harbor."
    ),
)
STATUE_IMAGE = InstructionRecord(
    instruction="show it to me as a picture",
    output=StructuredResponse(Modality.IMAGE, "The Statue of Liberty at sunset, harbor view."),
    image_id="901",
)
SPEECH_TURN = InstructionRecord(
    instruction="Please read the harbor announcement aloud.",
    output=StructuredResponse(Modality.SPEECH, "The ferry departs every hour on the hour."),
)


@pytest.fixture
def app_client(tmp_path):
    corpus = tmp_path / "demo.jsonl"
    write_records([GREAT_WAVE, STATUE_TEXT, STATUE_IMAGE, SPEECH_TURN], corpus)
    config = ServiceConfig(
        llm_url=f"mock:oracle:{corpus}",
        image_url="mock:",
        speech_url="mock:",
        artifact_dir=str(tmp_path / "artifacts"),
        session_dir=str(tmp_path / "sessions"),
    )
    app = create_app(config)
    return TestClient(app)


def test_respond_routes_image_with_resolvable_artifact(app_client):
    created = app_client.post("/v1/sessions").json()
    response = app_client.post(
        "/v1/respond",
        json={"session_id": created["id"], "instruction": GREAT_WAVE.instruction},
    )
    assert response.status_code == 200
    body = response.json()
    assert body["modality"] == "image"
    assert body["trace"]["conversion_prompt"] == "The Great Wave off Kanagawa."
    artifact = app_client.get(body["artifact_url"])
    assert artifact.status_code == 200
    assert artifact.headers["content-type"].startswith("image/png")
    assert hashlib.sha256(artifact.content).hexdigest() == body["artifact"]["content_hash"]


def test_second_turn_prompt_contains_history(app_client):
    session = app_client.post("/v1/sessions").json()["id"]
    first = app_client.post(
        "/v1/respond", json={"session_id": session, "instruction": STATUE_TEXT.instruction}
    )
    assert first.json()["modality"] == "text"
    second = app_client.post(
        "/v1/respond", json={"session_id": session, "instruction": STATUE_IMAGE.instruction}
    )
    assert second.status_code == 200
    prompt = second.json()["trace"]["prompt"]
    assert "Statue of Liberty" in prompt
    assert STATUE_IMAGE.instruction in prompt


def test_trace_echo_matches_backend_call_log(app_client):
    response = app_client.post("/v1/respond", json={"instruction": GREAT_WAVE.instruction})
    conversion_prompt = response.json()["trace"]["conversion_prompt"]
    image_backend = app_client.app.state.image_backend
    assert image_backend.calls[-1]["prompt"] == conversion_prompt


def test_empty_instruction_is_400(app_client):
    assert app_client.post("/v1/respond", json={"instruction": "  "}).status_code == 400


def test_unknown_session_is_404(app_client):
    response = app_client.post(
        "/v1/respond", json={"session_id": "nope", "instruction": "hello there"}
    )
    assert response.status_code == 404
    assert app_client.get("/v1/sessions/nope").status_code == 404


def test_backend_down_returns_502_with_partial_trace(tmp_path, monkeypatch):
    import modalgate.service as service_mod
    from modalgate.backends import BackendError, BackendKind
    from modalgate.service import backend_for as real_backend_for

    class Down:
        def describe(self):
            return "down"

        def complete(self, req):
            raise BackendError("llm wire down")

    def patched(kind, url):
        if BackendKind(kind) is BackendKind.LLM:
            return Down()
        return real_backend_for(kind, url)

    monkeypatch.setattr(service_mod, "backend_for", patched)
    config = ServiceConfig(
        artifact_dir=str(tmp_path / "a"), session_dir=str(tmp_path / "s")
    )
    client = TestClient(service_mod.create_app(config))
    response = client.post("/v1/respond", json={"instruction": "hi"})
    assert response.status_code == 502
    body = response.json()
    assert "llm wire down" in body["error"]
    assert body["trace"]["llm_calls"] == 1


def test_sessions_round_trip_and_order(app_client):
    session = app_client.post("/v1/sessions").json()["id"]
    transcript = app_client.get(f"/v1/sessions/{session}").json()
    assert transcript == {"id": session, "turns": []}
    app_client.post("/v1/respond", json={"session_id": session, "instruction": STATUE_TEXT.instruction})
    app_client.post("/v1/respond", json={"session_id": session, "instruction": SPEECH_TURN.instruction})
    turns = app_client.get(f"/v1/sessions/{session}").json()["turns"]
    assert [t["role"] for t in turns] == ["user", "assistant", "user", "assistant"]
    assert turns[0]["text"] == STATUE_TEXT.instruction
    assert turns[3]["modality"] == "speech"
    assert turns[3]["artifact_url"].startswith("/v1/artifacts/")


def test_respond_without_session_writes_no_state(app_client, tmp_path):
    sessions_dir = app_client.app.state.sessions.root
    before = set(sessions_dir.iterdir())
    response = app_client.post("/v1/respond", json={"instruction": STATUE_TEXT.instruction})
    assert response.status_code == 200
    assert set(sessions_dir.iterdir()) == before


def test_artifacts_deduplicate_by_content(app_client):
    first = app_client.post("/v1/respond", json={"instruction": GREAT_WAVE.instruction}).json()
    second = app_client.post("/v1/respond", json={"instruction": GREAT_WAVE.instruction}).json()
    assert first["artifact_url"] == second["artifact_url"]
    store_root = app_client.app.state.artifacts.root
    png_files = [p for p in store_root.iterdir() if p.suffix == ".png"]
    assert len(png_files) == 1


def test_unknown_artifact_is_404(app_client):
    assert app_client.get("/v1/artifacts/deadbeef").status_code == 404


def test_eval_job_round_trip(tmp_path, app_client):
    corpus = tmp_path / "eval-corpus.jsonl"
    records = write_fixture_corpus(corpus, per_route=2)
    payload = {
        "corpus": str(corpus),
        "llm": f"mock:oracle:{corpus}",
        "image": "mock:",
        "speech": "mock:",
        "scorer": "mock:",
        "job_id": "job-1",
        "system_id": "svc",
    }
    started = app_client.post("/v1/eval", json=payload)
    assert started.status_code == 200
    assert started.json()["job_id"] == "job-1"

    duplicate = app_client.post("/v1/eval", json=payload)
    assert duplicate.status_code == 409

    deadline = time.time() + 30
    status = "running"
    body = {}
    while time.time() < deadline and status == "running":
        body = app_client.get("/v1/eval/job-1").json()
        status = body["status"]
        if status == "running":
            time.sleep(0.05)
    assert status == "done", body

    direct = run_eval(
        EvalJob(
            corpus_path=corpus,
            llm=make_oracle_llm(records),
            image_backend=MockImageBackend(),
            speech_backend=MockSpeechBackend(),
            scorer=MockScorerBackend(),
            system_id="svc",
        )
    )
    assert body["report"] == direct.to_dict()


def test_eval_unknown_job_404(app_client):
    assert app_client.get("/v1/eval/ghost").status_code == 404


def test_eval_poll_while_running(tmp_path, app_client):
    corpus = tmp_path / "slow-corpus.jsonl"
    write_fixture_corpus(corpus, per_route=2)
    payload = {
        "corpus": str(corpus),
        "llm": f"mock:oracle:{corpus}",
        "job_id": "job-slow",
    }
    app_client.post("/v1/eval", json=payload)
    body = app_client.get("/v1/eval/job-slow").json()
    assert body["status"] in ("running", "done")
