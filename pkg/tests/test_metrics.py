from __future__ import annotations

import math
import random
import re

import pytest
from hypothesis import given
from hypothesis import strategies as st

from modalgate.metrics import (
    AllMissing,
    EmptyEligibleSet,
    EmptyInput,
    EvalReport,
    ModalityConfusion,
    QAItem,
    aggregate_clip,
    bleu,
    eligibility_gate,
    modality_accuracy,
    qa_choice,
    qa_score,
    tokenize,
)
from modalgate.schema import Modality

# --- independent brute-force BLEU oracle -------------------------------------
# Written against the pinned metric definition, structured differently from
# the implementation: plain dict counting, explicit per-order loops.


def oracle_tokenize(text):
    spaced = re.sub(r"([^\w\s])", lambda m: " " + m.group(1) + " ", text.lower())
    return [tok for tok in spaced.split() if tok]


def oracle_bleu(candidate, references):
    cand = oracle_tokenize(candidate)
    refs = [oracle_tokenize(r) for r in references]
    c = len(cand)

    log_precisions = []
    for n in (1, 2, 3, 4):
        if c < n:
            continue
        cand_grams = {}
        for i in range(c - n + 1):
            gram = tuple(cand[i : i + n])
            cand_grams[gram] = cand_grams.get(gram, 0) + 1
        clipped_total = 0
        for gram, count in cand_grams.items():
            best_ref_count = 0
            for ref in refs:
                ref_count = 0
                for i in range(len(ref) - n + 1):
                    if tuple(ref[i : i + n]) == gram:
                        ref_count += 1
                best_ref_count = max(best_ref_count, ref_count)
            clipped_total += min(count, best_ref_count)
        total = c - n + 1
        if clipped_total == 0:
            if n == 1:
                return 0.0
            log_precisions.append(math.log(1.0 / (total + 1.0)))
        else:
            log_precisions.append(math.log(clipped_total / total))

    geo = math.exp(sum(log_precisions) / len(log_precisions))
    best_r = None
    for ref in refs:
        rl = len(ref)
        if best_r is None or abs(rl - c) < abs(best_r - c) or (
            abs(rl - c) == abs(best_r - c) and rl < best_r
        ):
            best_r = rl
    brevity = 1.0 if c >= best_r else math.exp(1.0 - best_r / c)
    return brevity * geo


_VOCAB = (
    "the a cat dog sat man moon ran over quickly garden tree blue red "
    "painting voice reads stories night city".split()
)


def _random_sentence(rng, lo=1, hi=14):
    return " ".join(rng.choice(_VOCAB) for _ in range(rng.randint(lo, hi)))


def test_bleu_identity():
    assert bleu("the cat sat on the mat", ["the cat sat on the mat"]) == pytest.approx(1.0)


def test_bleu_zero_unigram_overlap_is_zero():
    assert bleu("alpha beta", ["gamma delta"]) == 0.0


def test_bleu_matches_brute_force_oracle_on_random_pairs():
    rng = random.Random(1234)
    for _ in range(50):
        candidate = _random_sentence(rng)
        references = [_random_sentence(rng) for _ in range(rng.randint(1, 3))]
        assert bleu(candidate, references) == pytest.approx(
            oracle_bleu(candidate, references), abs=1e-9
        )


def test_bleu_self_match_is_one_for_random_strings():
    rng = random.Random(99)
    checked = 0
    while checked < 100:
        text = "".join(chr(rng.randint(32, 126)) for _ in range(rng.randint(1, 60)))
        if not tokenize(text):
            continue
        assert bleu(text, [text]) == pytest.approx(1.0)
        checked += 1


def test_bleu_appending_noise_strictly_decreases_perfect_score():
    reference = "a quiet morning by the harbor"
    degraded = bleu(reference + " zzzunmatched", [reference])
    assert degraded < 1.0


def test_bleu_empty_inputs_rejected():
    with pytest.raises(EmptyInput):
        bleu("...", [])
    with pytest.raises(EmptyInput):
        bleu("", ["ok"])
    with pytest.raises(EmptyInput):
        bleu("ok", [" "])


@given(st.text(min_size=1).filter(lambda s: bool(tokenize(s))))
def test_bleu_bounds_and_identity_property(text):
    score = bleu(text, [text])
    assert score == pytest.approx(1.0)
    assert 0.0 <= score <= 1.0


def test_modality_accuracy_formula():
    pairs = [(Modality.IMAGE, Modality.IMAGE)] * 8 + [(Modality.IMAGE, Modality.TEXT)] * 2
    accuracy, confusion = modality_accuracy(pairs)
    assert accuracy == pytest.approx(0.8)
    assert confusion.n_correct == 8
    assert confusion.n_total == 10


def test_modality_accuracy_perfect():
    pairs = [(m, m) for m in Modality for _ in range(3)]
    accuracy, _ = modality_accuracy(pairs)
    assert accuracy == 1.0


def test_modality_accuracy_flag_toggle_matches_hand_count():
    pairs = [
        (Modality.TEXT, Modality.TEXT),     # correct, text ground
        (Modality.TEXT, Modality.IMAGE),    # wrong, text ground
        (Modality.IMAGE, Modality.IMAGE),   # correct
        (Modality.IMAGE, Modality.SPEECH),  # wrong
        (Modality.SPEECH, Modality.SPEECH), # correct
    ]
    # hand count, text-ground excluded: 2 correct of 3 eligible
    default_accuracy, _ = modality_accuracy(pairs)
    assert default_accuracy == pytest.approx(2 / 3)
    # hand count, everything eligible: 3 correct of 5
    wide_accuracy, confusion = modality_accuracy(pairs, include_text_ground=True)
    assert wide_accuracy == pytest.approx(3 / 5)
    assert confusion.counts["text"]["image"] == 1


def test_modality_accuracy_invariant_under_noneligible_relabeling():
    base = [(Modality.IMAGE, Modality.IMAGE), (Modality.TEXT, Modality.TEXT)]
    relabeled = [(Modality.IMAGE, Modality.IMAGE), (Modality.TEXT, Modality.SPEECH)]
    assert modality_accuracy(base)[0] == modality_accuracy(relabeled)[0]


def test_modality_accuracy_empty_eligible_set():
    with pytest.raises(EmptyEligibleSet):
        modality_accuracy([(Modality.TEXT, Modality.TEXT)])
    with pytest.raises(EmptyEligibleSet):
        modality_accuracy([])


def test_eligibility_gate():
    assert eligibility_gate(Modality.IMAGE, Modality.IMAGE)
    assert not eligibility_gate(Modality.IMAGE, Modality.SPEECH)


def test_gated_mean_equals_subset_mean_oracle():
    items = [
        (Modality.IMAGE, Modality.IMAGE, 10.0),
        (Modality.IMAGE, Modality.TEXT, 99.0),
        (Modality.IMAGE, Modality.IMAGE, 30.0),
        (Modality.SPEECH, Modality.SPEECH, 7.0),
        (Modality.IMAGE, Modality.SPEECH, 12.0),
        (Modality.IMAGE, Modality.IMAGE, 20.0),
        (Modality.SPEECH, Modality.TEXT, 5.0),
        (Modality.IMAGE, Modality.IMAGE, 40.0),
        (Modality.TEXT, Modality.TEXT, 1.0),
        (Modality.SPEECH, Modality.SPEECH, 9.0),
    ]
    gated_scores = [s for g, p, s in items if eligibility_gate(g, p)]
    # oracle: arithmetic mean over the ground==predicted subset
    oracle_subset = [s for g, p, s in items if g is p]
    assert sum(gated_scores) / len(gated_scores) == pytest.approx(
        sum(oracle_subset) / len(oracle_subset)
    )


def test_qa_verbatim_correct_choice():
    item = QAItem("Pick.", ("the right answer", "something else entirely"), frozenset({0}))
    assert qa_score(item, "the right answer")


def test_qa_tie_breaks_to_lowest_index():
    # equidistant choices: response shares nothing with either, both score 0;
    # the tie rule picks index 0, which is incorrect here
    item = QAItem("Pick.", ("alpha beta", "gamma delta"), frozenset({1}))
    assert qa_choice(item, "zzz qqq") == 0
    assert not qa_score(item, "zzz qqq")


def test_qa_accuracy_matches_exhaustive_bleu_table():
    rng = random.Random(42)
    items = []
    responses = []
    for _ in range(20):
        choices = tuple(_random_sentence(rng, 3, 8) for _ in range(4))
        correct = rng.randrange(4)
        items.append(QAItem("q", choices, frozenset({correct})))
        responses.append(_random_sentence(rng, 3, 8))
    # oracle: full BLEU table via the brute-force implementation
    expected = []
    for item, response in zip(items, responses):
        scores = [oracle_bleu(response, [choice]) for choice in item.choices]
        best = max(range(len(scores)), key=lambda i: (scores[i], -i))
        expected.append(best in item.correct_indices)
    got = [qa_score(item, response) for item, response in zip(items, responses)]
    assert got == expected
    assert sum(got) / len(got) == sum(expected) / len(expected)


def test_qa_item_validation():
    with pytest.raises(ValueError):
        QAItem("q", (), frozenset({0}))
    with pytest.raises(ValueError):
        QAItem("q", ("a",), frozenset())
    with pytest.raises(ValueError):
        QAItem("q", ("a",), frozenset({3}))


def test_load_qa_items_file(tmp_path):
    from modalgate.metrics import load_qa_items

    path = tmp_path / "qa.jsonl"
    path.write_text(
        '{"question": "Pick.", "choices": ["a", "b"], "correct_indices": [1]}\n', "utf-8"
    )
    items = load_qa_items(path)
    assert items[0].choices == ("a", "b")
    assert items[0].correct_indices == frozenset({1})
    path.write_text('{"question": "Pick.", "choices": []}\n', "utf-8")
    with pytest.raises(ValueError):
        load_qa_items(path)


def test_aggregate_clip():
    assert aggregate_clip([20.0, 24.0]) == (22.0, 0)
    assert aggregate_clip([17.5]) == (17.5, 0)
    mean, missing = aggregate_clip([10.0, None, 20.0, None])
    assert mean == pytest.approx(15.0)
    assert missing == 2
    with pytest.raises(AllMissing):
        aggregate_clip([None, None])


def test_eval_report_requires_absence_reasons():
    confusion = ModalityConfusion({"text": {"text": 1}}, 1, 1)
    with pytest.raises(ValueError):
        EvalReport(
            system_id="s",
            policy="tuned",
            modality_accuracy=1.0,
            confusion=confusion,
        )
    report = EvalReport(
        system_id="s",
        policy="tuned",
        modality_accuracy=1.0,
        confusion=confusion,
        absence_reasons={
            "clip_mean": "no scorer",
            "fid": "no scorer",
            "qa_accuracy": "no QA items",
            "speech_bleu": "no speech items",
        },
    )
    rebuilt = EvalReport.from_dict(report.to_dict())
    assert rebuilt.to_dict() == report.to_dict()
