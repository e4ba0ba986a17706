"""Self-contained benchmark metrics.

The BLEU variant is pinned so scores are comparable across implementations:
lowercase tokenization with punctuation separated from words, modified n-gram
precisions for n=1..4 with clipping, add-one smoothing for zero-match orders
above unigram, geometric mean over the orders the candidate actually supports,
and a closest-reference brevity penalty.
"""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Any, Iterable, Sequence

from .schema import Modality

BLEU_MAX_ORDER = 4

_PUNCT_RE = re.compile(r"([^\w\s])")


class EmptyInput(ValueError):
    """Raised when a candidate or reference tokenizes to nothing."""


class EmptyEligibleSet(ValueError):
    """Raised when no item is eligible for modality accuracy."""


class AllMissing(ValueError):
    """Raised when aggregating a score list with no present values."""


def tokenize(text: str) -> list[str]:
    """Lowercase and split on whitespace after separating punctuation."""
    return _PUNCT_RE.sub(r" \1 ", text.lower()).split()


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu(candidate: str, references: list[str]) -> float:
    """BLEU-4 of a candidate against one or more references, in [0, 1]."""
    cand = tokenize(candidate)
    if not cand:
        raise EmptyInput("candidate tokenizes to nothing")
    if not references:
        raise EmptyInput("at least one reference required")
    refs = [tokenize(r) for r in references]
    if any(not r for r in refs):
        raise EmptyInput("reference tokenizes to nothing")

    c = len(cand)
    orders = [n for n in range(1, BLEU_MAX_ORDER + 1) if c >= n]
    log_sum = 0.0
    for n in orders:
        cand_counts = _ngrams(cand, n)
        total = sum(cand_counts.values())
        max_counts: Counter = Counter()
        for ref in refs:
            ref_counts = _ngrams(ref, n)
            for gram in cand_counts:
                max_counts[gram] = max(max_counts[gram], ref_counts[gram])
        clipped = sum(min(count, max_counts[gram]) for gram, count in cand_counts.items())
        if clipped == 0:
            if n == 1:
                return 0.0
            precision = 1.0 / (total + 1.0)
        else:
            precision = clipped / total
        log_sum += math.log(precision)

    geo_mean = math.exp(log_sum / len(orders))
    r = min((len(ref) for ref in refs), key=lambda rl: (abs(rl - c), rl))
    bp = 1.0 if c >= r else math.exp(1.0 - r / c)
    return bp * geo_mean


@dataclass(frozen=True)
class ModalityConfusion:
    """3x3 ground-truth x predicted counts plus the eligible-subset tally."""

    counts: dict[str, dict[str, int]]
    n_correct: int
    n_total: int

    def to_dict(self) -> dict[str, Any]:
        return {"counts": self.counts, "n_correct": self.n_correct, "n_total": self.n_total}


def modality_accuracy(
    pairs: list[tuple[Modality, Modality]],
    include_text_ground: bool = False,
) -> tuple[float, ModalityConfusion]:
    """Classification accuracy over the eligible subset, plus full confusion.

    By default items whose ground-truth modality is text are excluded from the
    accuracy denominator (text being the default output, they carry no signal);
    ``include_text_ground`` widens the eligible set to everything.
    """
    if not pairs:
        raise EmptyEligibleSet("no pairs given")
    counts = {g.value: {p.value: 0 for p in Modality} for g in Modality}
    n_correct = 0
    n_total = 0
    for ground, predicted in pairs:
        counts[ground.value][predicted.value] += 1
        if not include_text_ground and ground is Modality.TEXT:
            continue
        n_total += 1
        if ground is predicted:
            n_correct += 1
    if n_total == 0:
        raise EmptyEligibleSet("no eligible items (all ground-truth modalities are text)")
    return n_correct / n_total, ModalityConfusion(counts, n_correct, n_total)


def eligibility_gate(ground: Modality, predicted: Modality) -> bool:
    """Only predictions matching the ground-truth modality get quality scores."""
    return ground is predicted


@dataclass(frozen=True)
class QAItem:
    """A multiple-choice question scored by BLEU similarity to the choices."""

    question: str
    choices: tuple[str, ...]
    correct_indices: frozenset[int]

    def __post_init__(self) -> None:
        object.__setattr__(self, "choices", tuple(self.choices))
        object.__setattr__(self, "correct_indices", frozenset(self.correct_indices))
        if not self.choices:
            raise ValueError("choices must be non-empty")
        if not self.correct_indices:
            raise ValueError("correct_indices must be non-empty")
        if any(i < 0 or i >= len(self.choices) for i in self.correct_indices):
            raise ValueError("correct_indices out of range")


def load_qa_items(path: Any) -> list[QAItem]:
    """JSON-lines QA file: {question, choices[], correct_indices[]} per line."""
    import json

    items = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            try:
                items.append(
                    QAItem(
                        question=obj["question"],
                        choices=tuple(obj["choices"]),
                        correct_indices=frozenset(obj["correct_indices"]),
                    )
                )
            except (KeyError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: bad QA item: {exc}") from exc
    return items


def qa_choice(item: QAItem, model_response: str) -> int:
    """Index of the choice most similar to the response; ties pick the lowest index."""
    best_index = 0
    best_score = -1.0
    for i, choice in enumerate(item.choices):
        score = bleu(model_response, [choice])
        if score > best_score:
            best_score = score
            best_index = i
    return best_index


def qa_score(item: QAItem, model_response: str) -> bool:
    return qa_choice(item, model_response) in item.correct_indices


def aggregate_clip(scores: Iterable[float | None]) -> tuple[float, int]:
    """Mean over present scores plus the count of missing ones."""
    present = [s for s in scores if s is not None]
    missing = sum(1 for s in scores if s is None)
    if not present:
        raise AllMissing("no scores present")
    return sum(present) / len(present), missing


# Table-shaped report columns, in fixed order.
REPORT_COLUMNS = ("modality_accuracy", "clip_mean", "fid", "qa_accuracy", "speech_bleu")


@dataclass(frozen=True)
class EvalReport:
    """Per-modality benchmark scores in the comparison-table column shape.

    Optional scores are None only when ``absence_reasons`` records why.
    """

    system_id: str
    policy: str
    modality_accuracy: float
    confusion: ModalityConfusion
    clip_mean: float | None = None
    clip_missing: int = 0
    fid: float | None = None
    qa_accuracy: float | None = None
    speech_bleu: float | None = None
    parse_fallbacks: int = 0
    backend_errors: int = 0
    absence_reasons: dict[str, str] = field(default_factory=dict)
    ledger: tuple[dict[str, Any], ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        object.__setattr__(self, "ledger", tuple(self.ledger))
        for name in ("clip_mean", "fid", "qa_accuracy", "speech_bleu"):
            if getattr(self, name) is None and name not in self.absence_reasons:
                raise ValueError(f"score {name} absent without a recorded reason")

    def to_dict(self) -> dict[str, Any]:
        return {
            "system_id": self.system_id,
            "policy": self.policy,
            "modality_accuracy": self.modality_accuracy,
            "confusion": self.confusion.to_dict(),
            "clip_mean": self.clip_mean,
            "clip_missing": self.clip_missing,
            "fid": self.fid,
            "qa_accuracy": self.qa_accuracy,
            "speech_bleu": self.speech_bleu,
            "parse_fallbacks": self.parse_fallbacks,
            "backend_errors": self.backend_errors,
            "absence_reasons": dict(self.absence_reasons),
            "ledger": list(self.ledger),
        }

    @classmethod
    def from_dict(cls, obj: dict[str, Any]) -> "EvalReport":
        confusion = ModalityConfusion(
            counts=obj["confusion"]["counts"],
            n_correct=obj["confusion"]["n_correct"],
            n_total=obj["confusion"]["n_total"],
        )
        return cls(
            system_id=obj["system_id"],
            policy=obj["policy"],
            modality_accuracy=obj["modality_accuracy"],
            confusion=confusion,
            clip_mean=obj.get("clip_mean"),
            clip_missing=obj.get("clip_missing", 0),
            fid=obj.get("fid"),
            qa_accuracy=obj.get("qa_accuracy"),
            speech_bleu=obj.get("speech_bleu"),
            parse_fallbacks=obj.get("parse_fallbacks", 0),
            backend_errors=obj.get("backend_errors", 0),
            absence_reasons=dict(obj.get("absence_reasons", {})),
            ledger=tuple(obj.get("ledger", ())),
        )
