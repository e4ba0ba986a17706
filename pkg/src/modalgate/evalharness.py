"""Batch benchmark runner with per-item caching and resume.

Loads a validation corpus, drives the router per record (tuned policy or the
few-shot baseline), applies the metrics behind the eligibility gate, and
produces a comparison-table-shaped report. Item results are cached keyed by
(record content digest, system config digest), so interrupted runs resume and
reports recompute exactly from cache.
"""

from __future__ import annotations

import base64
import hashlib
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from .backends import (
    BackendError,
    MediaArtifact,
    ReferenceImageStore,
    ScorerError,
    collect_fid_pair,
)
from .metrics import (
    AllMissing,
    EvalReport,
    QAItem,
    REPORT_COLUMNS,
    aggregate_clip,
    bleu,
    eligibility_gate,
    modality_accuracy,
    qa_score,
)
from .router import route_with_retry
from .schema import (
    InstructionRecord,
    Modality,
    Source,
    iter_records_with_extras,
    validate_validation_record,
)


class SchemaMismatch(ValueError):
    """Raised when reports being compared do not share the table schema."""


@dataclass(frozen=True)
class EvalItem:
    """One corpus record plus its content-derived id and optional QA payload."""

    record_id: str
    record: InstructionRecord
    qa: QAItem | None = None


@dataclass(frozen=True)
class EvalJob:
    """Everything needed to score one system on one corpus."""

    corpus_path: str | Path
    llm: Any
    image_backend: Any = None
    speech_backend: Any = None
    scorer: Any = None
    reference_store: ReferenceImageStore | None = None
    policy: str = "tuned"
    system_id: str = "system"
    parallelism: int = 4
    cache_dir: str | Path | None = None
    rng_seed: int | str = 0
    max_reasks: int = 0
    penalize_mismatch: bool = False
    include_text_ground: bool = False

    def __post_init__(self) -> None:
        if self.parallelism < 1:
            raise ValueError("parallelism must be >= 1")
        if self.policy not in ("tuned", "fewshot"):
            raise ValueError("policy must be tuned or fewshot")

    def config_digest(self) -> str:
        descriptor = {
            "policy": self.policy,
            "llm": _describe(self.llm),
            "image": _describe(self.image_backend),
            "speech": _describe(self.speech_backend),
            "scorer": _describe(self.scorer),
            "rng_seed": str(self.rng_seed),
            "max_reasks": self.max_reasks,
            "penalize_mismatch": self.penalize_mismatch,
            "include_text_ground": self.include_text_ground,
        }
        blob = json.dumps(descriptor, sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()[:12]


def _describe(backend: Any) -> str:
    if backend is None:
        return "none"
    if hasattr(backend, "describe"):
        return str(backend.describe())
    return type(backend).__name__


def load_eval_corpus(path: str | Path) -> list[EvalItem]:
    """Parse the whole corpus up front; QA fields ride as record extras."""
    items: list[EvalItem] = []
    seen: dict[str, int] = {}
    for record, extras in iter_records_with_extras(path, source=Source.SAMPLED_BENCHMARK):
        validate_validation_record(record)
        qa = None
        if "choices" in extras:
            qa = QAItem(
                question=record.instruction,
                choices=tuple(extras["choices"]),
                correct_indices=frozenset(extras.get("correct_indices", ())),
            )
        blob = json.dumps(
            {"record": record.to_wire(), "extras": extras}, sort_keys=True, ensure_ascii=False
        ).encode("utf-8")
        digest = hashlib.sha256(blob).hexdigest()[:12]
        occurrence = seen.get(digest, 0)
        seen[digest] = occurrence + 1
        record_id = digest if occurrence == 0 else f"{digest}-{occurrence}"
        items.append(EvalItem(record_id=record_id, record=record, qa=qa))
    if not items:
        raise ValueError(f"empty eval corpus: {path}")
    return items


@dataclass
class ItemResult:
    """Everything needed to recompute the report without re-running backends."""

    record_id: str
    ground: str
    predicted: str | None
    gated: bool
    response: str | None = None
    conversion_prompt: str | None = None
    fell_back_to_text: bool = False
    llm_calls: int = 0
    bleu_score: float | None = None
    clip_score: float | None = None
    clip_error: str | None = None
    qa_correct: bool | None = None
    artifact_hash: str | None = None
    artifact_b64: str | None = None
    image_id: str | None = None
    error: str | None = None
    wall_time: float = 0.0

    def to_dict(self) -> dict[str, Any]:
        return dict(self.__dict__)

    @classmethod
    def from_dict(cls, obj: dict[str, Any]) -> "ItemResult":
        return cls(**obj)


def _evaluate_item(item: EvalItem, job: EvalJob) -> ItemResult:
    started = time.perf_counter()
    ground = item.record.output.modality
    try:
        routed = route_with_retry(
            item.record.instruction,
            llm=job.llm,
            image_backend=job.image_backend,
            speech_backend=job.speech_backend,
            policy=job.policy,
            max_reasks=job.max_reasks,
        )
    except BackendError as exc:
        return ItemResult(
            record_id=item.record_id,
            ground=ground.value,
            predicted=None,
            gated=False,
            error=str(exc),
            wall_time=time.perf_counter() - started,
        )

    predicted = routed.modality
    outcome = routed.trace.parse_outcome
    gated = eligibility_gate(ground, predicted)
    result = ItemResult(
        record_id=item.record_id,
        ground=ground.value,
        predicted=predicted.value,
        gated=gated,
        response=outcome.result.response if outcome.result else None,
        conversion_prompt=routed.trace.conversion_prompt,
        fell_back_to_text=outcome.fell_back_to_text,
        llm_calls=routed.trace.llm_calls,
        wall_time=0.0,
    )

    if gated:
        if ground is Modality.SPEECH and result.response is not None:
            result.bleu_score = bleu(result.response, [item.record.output.response])
        elif ground is Modality.IMAGE and routed.artifact is not None:
            result.artifact_hash = routed.artifact.content_hash
            result.artifact_b64 = base64.b64encode(routed.artifact.data).decode("ascii")
            result.image_id = item.record.image_id
            if job.scorer is not None:
                try:
                    result.clip_score = job.scorer.clip(
                        routed.artifact, item.record.output.response
                    )
                except ScorerError as exc:
                    result.clip_error = str(exc)
        elif ground is Modality.TEXT and item.qa is not None and result.response is not None:
            result.qa_correct = qa_score(item.qa, result.response)

    result.wall_time = time.perf_counter() - started
    return result


def run_eval(job: EvalJob) -> EvalReport:
    """Score one system over a corpus; per-item results are cached and
    interrupted runs resume from cache."""
    items = load_eval_corpus(job.corpus_path)
    digest = job.config_digest()
    cache_dir = Path(job.cache_dir) if job.cache_dir else None
    if cache_dir:
        cache_dir.mkdir(parents=True, exist_ok=True)

    def run_item(item: EvalItem) -> ItemResult:
        cache_file = cache_dir / f"{item.record_id}-{digest}.json" if cache_dir else None
        if cache_file and cache_file.exists():
            return ItemResult.from_dict(json.loads(cache_file.read_text("utf-8")))
        result = _evaluate_item(item, job)
        if cache_file:
            tmp = cache_file.with_suffix(".tmp")
            tmp.write_text(json.dumps(result.to_dict(), ensure_ascii=False), "utf-8")
            os.replace(tmp, cache_file)
        return result

    if job.parallelism == 1 or len(items) == 1:
        results = [run_item(item) for item in items]
    else:
        with ThreadPoolExecutor(max_workers=job.parallelism) as executor:
            results = list(executor.map(run_item, items))

    return build_report(job, items, results)


def build_report(job: EvalJob, items: list[EvalItem], results: list[ItemResult]) -> EvalReport:
    """Deterministic aggregation: per-item sums run in record-id order and the
    report carries no wall-clock values."""
    by_id = {result.record_id: result for result in results}
    ordered = [by_id[record_id] for record_id in sorted(by_id)]
    items_by_id = {item.record_id: item for item in items}

    pairs = [
        (Modality(r.ground), Modality(r.predicted)) for r in ordered if r.predicted is not None
    ]
    accuracy, confusion = modality_accuracy(pairs, include_text_ground=job.include_text_ground)

    absence: dict[str, str] = {}
    bleu_values: list[float] = []
    clip_values: list[float | None] = []
    qa_values: list[bool] = []
    fid_pairs: list[tuple[MediaArtifact, str]] = []
    parse_fallbacks = 0
    backend_errors = 0
    ledger: list[dict[str, Any]] = []

    for result in ordered:
        if result.fell_back_to_text:
            parse_fallbacks += 1
        if result.error is not None:
            backend_errors += 1
        ground = Modality(result.ground)
        if ground is Modality.SPEECH and result.predicted is not None:
            if result.gated and result.bleu_score is not None:
                bleu_values.append(result.bleu_score)
            elif not result.gated and job.penalize_mismatch:
                bleu_values.append(0.0)
        if ground is Modality.IMAGE and result.predicted is not None:
            if result.gated:
                if job.scorer is not None:
                    clip_values.append(result.clip_score)
                if (
                    result.artifact_b64 is not None
                    and result.image_id is not None
                    and job.reference_store is not None
                ):
                    artifact = MediaArtifact(
                        media_kind="image",
                        data=base64.b64decode(result.artifact_b64),
                        mime="image/png",
                        prompt_used=result.conversion_prompt or "",
                    )
                    fid_pairs.append((artifact, result.image_id))
            elif job.penalize_mismatch and job.scorer is not None:
                clip_values.append(0.0)
        if ground is Modality.TEXT and items_by_id[result.record_id].qa is not None:
            if result.gated and result.qa_correct is not None:
                qa_values.append(result.qa_correct)
            elif not result.gated and result.predicted is not None and job.penalize_mismatch:
                qa_values.append(False)
        row = result.to_dict()
        row.pop("artifact_b64", None)
        row.pop("wall_time", None)
        row["excluded_by_gate"] = result.predicted is not None and not result.gated
        ledger.append(row)

    speech_bleu = None
    if bleu_values:
        speech_bleu = sum(bleu_values) / len(bleu_values)
    else:
        absence["speech_bleu"] = "no gated speech items"

    clip_mean = None
    clip_missing = 0
    if job.scorer is None:
        absence["clip_mean"] = "no scorer backend configured"
    elif clip_values:
        try:
            clip_mean, clip_missing = aggregate_clip(clip_values)
        except AllMissing:
            clip_missing = len(clip_values)
            absence["clip_mean"] = "all clip scores missing"
    else:
        absence["clip_mean"] = "no gated image items"

    qa_accuracy = None
    if qa_values:
        qa_accuracy = sum(qa_values) / len(qa_values)
    else:
        absence["qa_accuracy"] = "no gated QA items"

    fid = None
    if job.scorer is None:
        absence["fid"] = "no scorer backend configured"
    elif job.reference_store is None:
        absence["fid"] = "no reference image store configured"
    elif not fid_pairs:
        absence["fid"] = "no gated image items"
    else:
        try:
            handle = collect_fid_pair(job.scorer, fid_pairs, job.reference_store)
            status, value = job.scorer.poll_fid(handle)
            polls = 0
            while status not in ("done", "failed") and polls < 1200:
                time.sleep(0.05)
                status, value = job.scorer.poll_fid(handle)
                polls += 1
            if status == "done" and value is not None:
                fid = value
            else:
                absence["fid"] = f"fid job ended with status {status}"
        except BackendError as exc:
            absence["fid"] = f"fid collection failed: {exc}"

    return EvalReport(
        system_id=job.system_id,
        policy=job.policy,
        modality_accuracy=accuracy,
        confusion=confusion,
        clip_mean=clip_mean,
        clip_missing=clip_missing,
        fid=fid,
        qa_accuracy=qa_accuracy,
        speech_bleu=speech_bleu,
        parse_fallbacks=parse_fallbacks,
        backend_errors=backend_errors,
        absence_reasons=absence,
        ledger=tuple(ledger),
    )


_MD_HEADERS = ("Modality Acc. (%)", "CLIP", "FID", "QA", "BLEU")


def _format_cell(column: str, value: float | None) -> str:
    if value is None:
        return "—"
    if column == "modality_accuracy":
        return f"{value * 100:.1f}"
    if column in ("qa_accuracy", "speech_bleu"):
        return f"{value:.3f}"
    return f"{value:.2f}"


def report_markdown(reports: list[EvalReport]) -> str:
    lines = ["| System | " + " | ".join(_MD_HEADERS) + " |"]
    lines.append("|" + "---|" * (len(_MD_HEADERS) + 1))
    for report in reports:
        cells = [_format_cell(col, getattr(report, col)) for col in REPORT_COLUMNS]
        lines.append("| " + report.system_id + " | " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def write_report(report: EvalReport, out_dir: str | Path) -> dict[str, Path]:
    """Write report.json, report.md, and the per-item ledger.jsonl."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report_dict = report.to_dict()
    ledger = report_dict.pop("ledger")
    json_path = out / "report.json"
    json_path.write_text(
        json.dumps(report_dict, indent=2, ensure_ascii=False, sort_keys=True) + "\n", "utf-8"
    )
    md_path = out / "report.md"
    md_path.write_text(report_markdown([report]), "utf-8")
    ledger_path = out / "ledger.jsonl"
    with open(ledger_path, "w", encoding="utf-8") as fh:
        for row in ledger:
            fh.write(json.dumps(row, ensure_ascii=False, sort_keys=True))
            fh.write("\n")
    return {"json": json_path, "markdown": md_path, "ledger": ledger_path}


def load_report(path: str | Path) -> EvalReport:
    obj = json.loads(Path(path).read_text("utf-8"))
    missing = [c for c in REPORT_COLUMNS if c not in obj] + (
        [] if "system_id" in obj else ["system_id"]
    )
    if missing:
        raise SchemaMismatch(f"report {path} lacks fields: {missing}")
    obj.setdefault("ledger", [])
    return EvalReport.from_dict(obj)


def compare_systems(reports: list[EvalReport]) -> dict[str, Any]:
    """Side-by-side rows plus per-column best-first rankings."""
    if len(reports) < 2:
        raise ValueError("compare needs at least 2 reports")
    reports = sorted(reports, key=lambda r: -(r.modality_accuracy or 0.0))
    rows = []
    for report in reports:
        rows.append(
            {
                "system_id": report.system_id,
                "policy": report.policy,
                **{col: getattr(report, col) for col in REPORT_COLUMNS},
                "missing": sorted(report.absence_reasons),
            }
        )
    rankings: dict[str, list[str]] = {}
    for col in REPORT_COLUMNS:
        scored = [(row[col], row["system_id"]) for row in rows if row[col] is not None]
        reverse = col != "fid"  # lower FID is better; everything else higher
        scored.sort(key=lambda pair: pair[0], reverse=reverse)
        rankings[col] = [system for _, system in scored]
    return {"systems": rows, "rankings": rankings, "markdown": report_markdown(reports)}
