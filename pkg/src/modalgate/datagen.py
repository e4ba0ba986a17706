"""Modality-aligned instruction generation: caption sampling, teacher
prompting, output parsing, filtering, ground-truth construction, corpus
mixing, splits, and diversity stats.

Ground-truth responses are copied verbatim from the caption pool, which is
what keeps the tuned LLM's outputs aligned with what the conversion models
were trained on. Everything here is deterministic given the rng seed and a
scripted teacher.
"""

from __future__ import annotations

import json
import random
import re
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence

from .backends import BackendError, ChatRequest
from .prompting import TEACHER_MAX_CAPTIONS, render_teacher_prompt
from .schema import InstructionRecord, Modality, Source, StructuredResponse

DEFAULT_DEDUP_THRESHOLD = 0.8
DEFAULT_TEACHER_PARALLELISM = 2

# Training-run metadata echoed into manifests for provenance; this framework
# emits the corpus and manifest only, it does not train.
DEFAULT_TRAINING_ECHO = {
    "optimizer": "AdamW",
    "learning_rate": "3e-4",
    "epochs": "3",
}

FILTER_REASONS = ("empty", "malformed", "nonspeech_audio", "non_english_speech", "duplicate")


class PoolExhausted(ValueError):
    """Raised when a sample asks for more captions than the pool has left."""


class InsufficientSource(ValueError):
    """Raised when a route's source corpus cannot cover its mix quota."""

    def __init__(self, route: str, needed: int, available: int):
        super().__init__(f"route {route}: need {needed} records, have {available}")
        self.route = route


class CaptionPool:
    """Captions from a modality dataset, sampled without replacement."""

    def __init__(self, modality: Modality, captions: Sequence[str], source_name: str = "inline"):
        if modality is Modality.TEXT:
            raise ValueError("caption pools feed the non-text routes")
        cleaned = [c.strip() for c in captions if c and c.strip()]
        if not cleaned:
            raise ValueError("caption pool must be non-empty")
        self.modality = modality
        self.captions = tuple(cleaned)
        self.source_name = source_name
        self._remaining = list(range(len(cleaned)))
        self._draws = 0

    @property
    def remaining(self) -> int:
        return len(self._remaining)

    def sample(self, n: int, rng_seed: int | str) -> list[str]:
        if n < 1:
            raise ValueError("sample size must be >= 1")
        if n > len(self._remaining):
            raise PoolExhausted(f"asked for {n} captions, {len(self._remaining)} remaining")
        rng = random.Random(f"{rng_seed}:{self._draws}")
        picked = rng.sample(self._remaining, n)
        picked_set = set(picked)
        self._remaining = [i for i in self._remaining if i not in picked_set]
        self._draws += 1
        return [self.captions[i] for i in picked]


def sample_captions(pool: CaptionPool, n: int, rng_seed: int | str) -> list[str]:
    """Draw n captions without replacement; deterministic given the seed and
    the pool's draw history."""
    return pool.sample(n, rng_seed)


def load_caption_pool(path: str | Path, modality: Modality, source_name: str | None = None) -> CaptionPool:
    """Load captions from plain text (one per line) or JSON-lines with a
    "caption" field; the format is sniffed per line."""
    captions: list[str] = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("{"):
                obj = json.loads(line)
                caption = obj.get("caption", "")
            else:
                caption = line
            if caption.strip():
                captions.append(caption.strip())
    return CaptionPool(modality, captions, source_name=source_name or str(path))


def load_seeds(path: str | Path) -> list[InstructionRecord]:
    """Seed instructions: the corpus JSONL format, source tagged as seed."""
    from .schema import read_records

    seeds = read_records(path, source=Source.SEED)
    for seed in seeds:
        if seed.output.modality is Modality.TEXT:
            raise ValueError(f"seed instructions target non-text routes: {seed.instruction[:60]!r}")
    return seeds


@dataclass(frozen=True)
class GenBatch:
    """One teacher call: the seeds and captions that went in, the raw reply,
    and the (caption, instruction) pairs recovered from it."""

    index: int
    seed_instructions: tuple[str, ...]
    captions: tuple[str, ...]
    teacher_raw: str = ""
    parsed: tuple[tuple[str, str], ...] = field(default_factory=tuple)
    error: str | None = None

    def __post_init__(self) -> None:
        if len(self.parsed) > len(self.captions):
            raise ValueError("cannot parse more pairs than captions")


_HEADER_RE = re.compile(r"^\s*(?:\d+[\.\):]\s*)?\[(?P<caption>.+)\]\s*$")
_INSTRUCTION_RE = re.compile(r"^\s*(?:\d+[\.\):]\s*)?Instructions?\s*:\s*(?P<instruction>.+?)\s*$")


def parse_teacher_output(teacher_raw: str, captions: Sequence[str]) -> list[tuple[str, str]]:
    """Pair bracketed caption headers with their following Instruction lines.

    Headers are matched by exact string equality against the caption set, so
    pairs follow the header text rather than input order; numbering and the
    "Instructions:" spelling are tolerated; unmatched captions are dropped.
    """
    known = {c.strip(): c.strip() for c in captions}
    pairs: list[tuple[str, str]] = []
    used: set[str] = set()
    pending: str | None = None
    for line in teacher_raw.splitlines():
        header = _HEADER_RE.match(line)
        if header:
            caption = header.group("caption").strip()
            pending = known.get(caption)
            continue
        instruction_match = _INSTRUCTION_RE.match(line)
        if instruction_match and pending is not None:
            if pending not in used:
                used.add(pending)
                pairs.append((pending, instruction_match.group("instruction")))
            pending = None
    return pairs


def run_generation(
    pool: CaptionPool,
    seeds: Sequence[InstructionRecord],
    teacher: Any,
    target_modality: Modality,
    rng_seed: int | str,
    batch_size: int = TEACHER_MAX_CAPTIONS,
    max_batches: int | None = None,
    parallelism: int = DEFAULT_TEACHER_PARALLELISM,
    min_call_interval: float = 0.0,
    temperature: float = 0.7,
) -> list[GenBatch]:
    """Drive the teacher over the caption pool in batches of up to 60.

    Per batch: 3 seed examples drawn uniformly, one prompt, one teacher call,
    one parse. Teacher failures are recorded on the batch and skipped, never
    fatal. Batch inputs are fixed up front so results are deterministic even
    with parallel teacher calls (given a prompt-keyed scripted teacher).
    """
    if not 1 <= batch_size <= TEACHER_MAX_CAPTIONS:
        raise ValueError(f"batch_size must be within 1..{TEACHER_MAX_CAPTIONS}")
    eligible_seeds = [s for s in seeds if s.output.modality is target_modality]
    if len(eligible_seeds) < 3:
        raise ValueError(
            f"need at least 3 seeds for modality {target_modality.value}, have {len(eligible_seeds)}"
        )

    jobs: list[tuple[int, list[InstructionRecord], list[str], str]] = []
    batch_index = 0
    while pool.remaining > 0:
        if max_batches is not None and batch_index >= max_batches:
            break
        n = min(batch_size, pool.remaining)
        captions = pool.sample(n, rng_seed)
        seed_rng = random.Random(f"{rng_seed}:seeds:{batch_index}")
        batch_seeds = seed_rng.sample(eligible_seeds, 3)
        prompt = render_teacher_prompt(batch_seeds, captions, target_modality)
        jobs.append((batch_index, batch_seeds, captions, prompt))
        batch_index += 1

    limiter = _RateLimiter(min_call_interval)

    def run_one(job: tuple[int, list[InstructionRecord], list[str], str]) -> GenBatch:
        index, batch_seeds, captions, prompt = job
        limiter.wait()
        try:
            reply = teacher.complete(ChatRequest(prompt=prompt, temperature=temperature))
        except BackendError as exc:
            return GenBatch(
                index=index,
                seed_instructions=tuple(s.instruction for s in batch_seeds),
                captions=tuple(captions),
                error=str(exc),
            )
        parsed = parse_teacher_output(reply.text, captions)
        return GenBatch(
            index=index,
            seed_instructions=tuple(s.instruction for s in batch_seeds),
            captions=tuple(captions),
            teacher_raw=reply.text,
            parsed=tuple(parsed),
        )

    if parallelism <= 1 or len(jobs) <= 1:
        batches = [run_one(job) for job in jobs]
    else:
        with ThreadPoolExecutor(max_workers=parallelism) as executor:
            batches = list(executor.map(run_one, jobs))
    return batches


class _RateLimiter:
    def __init__(self, min_interval: float):
        self._min_interval = min_interval
        self._lock = threading.Lock()
        self._last = 0.0

    def wait(self) -> None:
        if self._min_interval <= 0:
            return
        with self._lock:
            now = time.monotonic()
            delay = self._last + self._min_interval - now
            if delay > 0:
                time.sleep(delay)
                now = time.monotonic()
            self._last = now


@dataclass(frozen=True)
class FilterReport:
    """Removal counts per reason; retained + removed always equals the input."""

    input_count: int
    removed: dict[str, int]
    retained: int

    def __post_init__(self) -> None:
        total_removed = sum(self.removed.values())
        if self.retained + total_removed != self.input_count:
            raise ValueError("filter report counts do not sum to input size")

    def to_dict(self) -> dict[str, Any]:
        return {
            "input_count": self.input_count,
            "removed": dict(self.removed),
            "retained": self.retained,
        }


@lru_cache(maxsize=None)
def _bundled_json(name: str) -> Any:
    return json.loads((resources.files("modalgate") / "lexicons" / name).read_text("utf-8"))


def load_speech_filter_lexicon(path: str | Path | None = None) -> dict[str, list[str]]:
    if path is None:
        return _bundled_json("speech_filters.json")
    return json.loads(Path(path).read_text("utf-8"))


def _normalize(text: str) -> str:
    text = re.sub(r"[^\w\s]", "", text.lower())
    return " ".join(text.split())


def _trigrams(normalized: str) -> set[tuple[str, ...]]:
    tokens = normalized.split()
    if len(tokens) < 3:
        return {tuple(tokens)} if tokens else set()
    return {tuple(tokens[i : i + 3]) for i in range(len(tokens) - 2)}


def trigram_jaccard(a: str, b: str) -> float:
    """Word-trigram Jaccard over normalized text (the dedup similarity)."""
    na, nb = _normalize(a), _normalize(b)
    if na == nb:
        return 1.0
    ta, tb = _trigrams(na), _trigrams(nb)
    union = ta | tb
    if not union:
        return 0.0
    return len(ta & tb) / len(union)


def _matches_nonspeech(instruction: str, lexicon: dict[str, list[str]]) -> bool:
    lowered = instruction.lower()
    return any(phrase in lowered for phrase in lexicon.get("nonspeech_audio", []))


def _matches_non_english(instruction: str, lexicon: dict[str, list[str]]) -> bool:
    lowered = instruction.lower()
    if any(phrase in lowered for phrase in lexicon.get("non_english_phrases", [])):
        return True
    languages = lexicon.get("translate_languages", [])
    if languages:
        pattern = r"translate\b.*\binto\b.*\b(" + "|".join(map(re.escape, languages)) + r")\b"
        if re.search(pattern, lowered):
            return True
    return False


def filter_instructions(
    pairs: Sequence[tuple[str, str]],
    modality: Modality,
    lexicon: dict[str, list[str]] | None = None,
    dedup_threshold: float = DEFAULT_DEDUP_THRESHOLD,
) -> tuple[list[InstructionRecord], FilterReport]:
    """Apply the removal rules in order with first-match attribution, then
    build records for what survives.

    Order: empty instruction; malformed (no caption linkage); for speech,
    nonspeech-audio and non-English requests; near-duplicates by trigram
    Jaccard >= threshold against an already-retained instruction.
    """
    lexicon = lexicon or load_speech_filter_lexicon()
    removed = {reason: 0 for reason in FILTER_REASONS}
    retained_records: list[InstructionRecord] = []
    retained_instructions: list[str] = []

    for caption, instruction in pairs:
        if not instruction or not instruction.strip():
            removed["empty"] += 1
            continue
        if not caption or not caption.strip():
            removed["malformed"] += 1
            continue
        if modality is Modality.SPEECH:
            if _matches_nonspeech(instruction, lexicon):
                removed["nonspeech_audio"] += 1
                continue
            if _matches_non_english(instruction, lexicon):
                removed["non_english_speech"] += 1
                continue
        if any(
            trigram_jaccard(instruction, kept) >= dedup_threshold
            for kept in retained_instructions
        ):
            removed["duplicate"] += 1
            continue
        retained_instructions.append(instruction)
        retained_records.append(build_record(caption, instruction, modality))

    report = FilterReport(
        input_count=len(pairs),
        removed={k: v for k, v in removed.items() if v},
        retained=len(retained_records),
    )
    return retained_records, report


def build_record(caption: str, instruction: str, modality: Modality) -> InstructionRecord:
    """Ground-truth construction: the caption itself, verbatim, becomes the
    response so the tuned model's outputs match the conversion model's
    training distribution."""
    if not caption or not caption.strip():
        raise ValueError("caption must be non-empty")
    if not instruction or not instruction.strip():
        raise ValueError("instruction must be non-empty")
    return InstructionRecord(
        instruction=instruction,
        output=StructuredResponse(modality, caption),
        source=Source.TEACHER,
    )


@dataclass(frozen=True)
class DatasetManifest:
    """Provenance and arithmetic for a generated corpus: per-route totals,
    mix ratios, sources, filtering, splits, and the training echo."""

    totals: dict[str, int]
    target_total: int
    mix_ratios: dict[str, float]
    caption_sources: dict[str, str] = field(default_factory=dict)
    teacher_model: str = "unspecified"
    filter_reports: dict[str, dict[str, Any]] = field(default_factory=dict)
    split_sizes: dict[str, int] = field(default_factory=dict)
    training_echo: dict[str, str] = field(default_factory=lambda: dict(DEFAULT_TRAINING_ECHO))
    rng_seed: str = "0"

    def __post_init__(self) -> None:
        if sum(self.totals.values()) < 0:
            raise ValueError("totals must be non-negative")
        ratio_sum = sum(self.mix_ratios.values())
        if abs(ratio_sum - 1.0) > 1e-9:
            raise ValueError(f"mix ratios must sum to 1, got {ratio_sum}")

    def to_dict(self) -> dict[str, Any]:
        return {
            "totals": dict(self.totals),
            "dataset_size": sum(self.totals.values()),
            "target_total": self.target_total,
            "mix_ratios": dict(self.mix_ratios),
            "caption_sources": dict(self.caption_sources),
            "teacher_model": self.teacher_model,
            "filter_reports": dict(self.filter_reports),
            "split_sizes": dict(self.split_sizes),
            "training_echo": dict(self.training_echo),
            "rng_seed": self.rng_seed,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, ensure_ascii=False, sort_keys=True)


def apportion(target_total: int, ratios: Sequence[float], labels: Sequence[str]) -> dict[str, int]:
    """Largest-remainder apportionment; deterministic tie-break by label order."""
    if len(ratios) != len(labels):
        raise ValueError("ratios and labels must align")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError("ratios must sum to 1")
    quotas = [target_total * r for r in ratios]
    base = [int(q) for q in quotas]
    leftover = target_total - sum(base)
    remainders = sorted(
        range(len(labels)), key=lambda i: (-(quotas[i] - base[i]), i)
    )
    for i in remainders[:leftover]:
        base[i] += 1
    return dict(zip(labels, base))


def mix_dataset(
    text_corpus: Sequence[InstructionRecord],
    image_records: Sequence[InstructionRecord],
    speech_records: Sequence[InstructionRecord],
    target_total: int,
    ratios: tuple[float, float, float] = (1 / 3, 1 / 3, 1 / 3),
    rng_seed: int | str = 0,
    caption_sources: dict[str, str] | None = None,
    teacher_model: str = "unspecified",
    filter_reports: dict[str, dict[str, Any]] | None = None,
) -> tuple[list[InstructionRecord], DatasetManifest]:
    """Subsample each route to its quota, shuffle, and emit the manifest."""
    quotas = apportion(target_total, ratios, ["text", "image", "speech"])
    sources = {"text": list(text_corpus), "image": list(image_records), "speech": list(speech_records)}
    mixed: list[InstructionRecord] = []
    for route, quota in quotas.items():
        available = sources[route]
        if len(available) < quota:
            raise InsufficientSource(route, quota, len(available))
        rng = random.Random(f"{rng_seed}:{route}")
        mixed.extend(available if len(available) == quota else rng.sample(available, quota))
    random.Random(f"{rng_seed}:shuffle").shuffle(mixed)
    manifest = DatasetManifest(
        totals=quotas,
        target_total=target_total,
        mix_ratios=dict(zip(["text", "image", "speech"], ratios)),
        caption_sources=caption_sources or {},
        teacher_model=teacher_model,
        filter_reports=filter_reports or {},
        rng_seed=str(rng_seed),
    )
    return mixed, manifest


def split_dataset(
    records: Sequence[InstructionRecord],
    val_fraction: float,
    rng_seed: int | str = 0,
) -> tuple[list[InstructionRecord], list[InstructionRecord]]:
    """Disjoint train/val split, stratified by output modality."""
    if not 0 <= val_fraction < 1:
        raise ValueError("val_fraction must be within [0, 1)")
    val_indices: set[int] = set()
    by_modality: dict[Modality, list[int]] = {}
    for i, record in enumerate(records):
        by_modality.setdefault(record.output.modality, []).append(i)
    for modality, indices in sorted(by_modality.items(), key=lambda kv: kv[0].value):
        n_val = int(len(indices) * val_fraction + 1e-9)
        rng = random.Random(f"{rng_seed}:{modality.value}")
        val_indices.update(rng.sample(indices, n_val))
    train = [records[i] for i in range(len(records)) if i not in val_indices]
    val = [records[i] for i in sorted(val_indices)]
    return train, val


def _load_word_list(name: str) -> frozenset[str]:
    return frozenset(_bundled_json(name))


# suffix -> replacement, tried in order until the stripped form hits the lexicon
_SUFFIX_RULES = (
    ("ies", "y"),
    ("ing", ""),
    ("ing", "e"),
    ("ied", "y"),
    ("ed", ""),
    ("ed", "e"),
    ("es", ""),
    ("s", ""),
)


def _lemma_in(token: str, lexicon: frozenset[str]) -> str | None:
    if token in lexicon:
        return token
    for suffix, replacement in _SUFFIX_RULES:
        if token.endswith(suffix) and len(token) > len(suffix) + 1:
            candidate = token[: -len(suffix)] + replacement
            if candidate in lexicon:
                return candidate
    return None


def verb_noun_stats(
    records: Iterable[InstructionRecord],
    verb_lexicon: Iterable[str] | None = None,
    noun_lexicon: Iterable[str] | None = None,
) -> dict[str, Any]:
    """Root-verb / direct-noun distribution over instructions.

    Heuristic: scanning left to right, the first token whose lemma is in the
    verb lexicon is the root verb, and the first later token in the noun
    lexicon is its noun; unmatched instructions land in "(none)". Output rows
    are sorted by verb count descending.
    """
    verbs = frozenset(verb_lexicon) if verb_lexicon is not None else _load_word_list("verbs.json")
    nouns = frozenset(noun_lexicon) if noun_lexicon is not None else _load_word_list("nouns.json")
    counts: dict[str, dict[str, int]] = {}
    for record in records:
        tokens = re.findall(r"[a-z]+(?:'[a-z]+)?", record.instruction.lower())
        verb = None
        noun = "(none)"
        verb_pos = -1
        for pos, token in enumerate(tokens):
            lemma = _lemma_in(token, verbs)
            if lemma:
                verb, verb_pos = lemma, pos
                break
        if verb is None:
            verb = "(none)"
        else:
            for token in tokens[verb_pos + 1 :]:
                lemma = _lemma_in(token, nouns)
                if lemma:
                    noun = lemma
                    break
        counts.setdefault(verb, {}).setdefault(noun, 0)
        counts[verb][noun] += 1

    rows = []
    for verb, noun_counts in counts.items():
        total = sum(noun_counts.values())
        nouns_sorted = sorted(noun_counts.items(), key=lambda kv: (-kv[1], kv[0]))
        rows.append(
            {
                "verb": verb,
                "count": total,
                "nouns": [{"noun": n, "count": c} for n, c in nouns_sorted],
            }
        )
    rows.sort(key=lambda row: (-row["count"], row["verb"]))
    return {"total_instructions": sum(r["count"] for r in rows), "verbs": rows}
