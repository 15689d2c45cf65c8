import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from egocf.errors import ConfigError, ConsistencyError
from egocf.textcf import (DEFAULT_LEXICON, DEFAULT_SWAP_TABLE, MASK_TOKEN,
                          EventSpan, QuestionRecord, SwapTable, SynonymLexicon,
                          TemporalKind, detect_events, detect_temporal_markers,
                          make_question_triple, mask_events, swap_temporal,
                          synonym_substitute, verify_positive)

VERBS = ("open", "close", "take", "put", "pour")
OBJECTS = ("milk", "microwave", "cup", "bowl")


def q(text: str) -> QuestionRecord:
    return QuestionRecord.from_text(text, answer_label=3, category="after")


def lex(*groups: str) -> SynonymLexicon:
    return SynonymLexicon([[tuple(p.split()) for p in g.split("|")] for g in groups])


@pytest.fixture(scope="module")
def table() -> SwapTable:
    return SwapTable.from_tsv(DEFAULT_SWAP_TABLE)


# ---------------------------------------------------------------------------
# detect_events
# ---------------------------------------------------------------------------


def test_detect_events_verb_det_noun():
    spans = detect_events(q("what did the person do after open the microwave"), VERBS, OBJECTS)
    assert len(spans) == 1
    s = spans[0]
    assert (s.start, s.end) == (6, 9)
    assert s.verb_index == 6
    assert s.object_indices == [8]


def test_detect_events_requires_following_noun():
    # "open" with no object after it is not an event
    assert detect_events(q("is the milk open"), ("open",), OBJECTS) == []


def test_detect_events_ordinal_action():
    spans = detect_events(q("what was the first action"), VERBS, OBJECTS)
    assert len(spans) == 1
    assert (spans[0].start, spans[0].end) == (3, 5)


def _brute_force_spans(tokens, verbs, objects, dets=("the", "a", "an"),
                       ordinals=("first", "last"), anouns=("action", "operation")):
    """Oracle: enumerate every window, test the pattern predicate, then keep
    non-overlapping matches greedily left to right."""
    matches = []
    for start in range(len(tokens)):
        for end in range(start + 1, len(tokens) + 1):
            w = tokens[start:end]
            if len(w) == 2 and w[0] in verbs and w[1] in objects:
                matches.append((start, end))
            elif len(w) == 3 and w[0] in verbs and w[1] in dets and w[2] in objects:
                matches.append((start, end))
            elif len(w) == 2 and w[0] in ordinals and w[1] in anouns:
                matches.append((start, end))
    kept, cursor = [], 0
    for start, end in sorted(matches, key=lambda m: (m[0], -m[1])):
        if start >= cursor:
            kept.append((start, end))
            cursor = end
    return kept


def test_detect_events_two_events_match_brute_force():
    record = q("close the milk then open the microwave")
    spans = detect_events(record, VERBS, OBJECTS)
    got = [(s.start, s.end) for s in spans]
    assert got == _brute_force_spans(record.tokens, VERBS, OBJECTS)
    assert got == sorted(got)
    assert len(got) == 2


@given(st.lists(st.sampled_from(
    list(VERBS) + list(OBJECTS) + ["the", "what", "do", "after", "first", "action", "person"]),
    min_size=1, max_size=12))
def test_detect_events_agrees_with_brute_force(tokens):
    record = QuestionRecord(raw=" ".join(tokens), tokens=tokens, answer_label=0, category="x")
    spans = detect_events(record, VERBS, OBJECTS)
    assert [(s.start, s.end) for s in spans] == _brute_force_spans(tokens, VERBS, OBJECTS)
    for a, b in zip(spans, spans[1:]):
        assert a.end <= b.start


# ---------------------------------------------------------------------------
# temporal markers
# ---------------------------------------------------------------------------


def test_markers_single_after(table):
    record = q("what did the person do after open the microwave")
    markers = detect_temporal_markers(record, table)
    assert [(m.token_index, m.kind) for m in markers] == [(5, TemporalKind.AFTER)]


def test_markers_empty_without_keys(table):
    assert detect_temporal_markers(q("what was the person doing"), table) == []


def test_markers_ordered_index_scan(table):
    record = q("before lunch and after dinner")
    markers = detect_temporal_markers(record, table)
    # oracle: exhaustive token scan
    expected = [i for i, tok in enumerate(record.tokens) if tok in table]
    assert [m.token_index for m in markers] == expected == [0, 3]


# ---------------------------------------------------------------------------
# synonym substitution
# ---------------------------------------------------------------------------


def test_substitute_verb_multiword():
    record = q("what did the person do after open the microwave")
    events = detect_events(record, VERBS, OBJECTS)
    out, edits = synonym_substitute(record, events, lex("open|turn on"), np.random.default_rng(0))
    assert out.tokens == "what did the person do after turn on the microwave".split()
    assert len(edits) == 1 and edits[0].before == ("open",) and edits[0].after == ("turn", "on")


def test_substitute_action_noun():
    record = q("what was the first action")
    events = detect_events(record, VERBS, OBJECTS)
    out, _ = synonym_substitute(record, events, lex("action|operation"), np.random.default_rng(0))
    assert out.tokens == "what was the first operation".split()


def test_substitute_empty_lexicon_is_identity():
    record = q("what did the person do after open the microwave")
    events = detect_events(record, VERBS, OBJECTS)
    out, edits = synonym_substitute(record, events, SynonymLexicon([]), np.random.default_rng(0))
    assert out.tokens == record.tokens
    assert edits == []


def test_substitute_only_touches_event_spans():
    record = q("open the milk then open the microwave")
    events = detect_events(record, VERBS, OBJECTS)
    lexicon = lex("open|turn on", "milk|dairy", "microwave|oven")
    out, edits = synonym_substitute(record, events, lexicon, np.random.default_rng(1))
    assert verify_positive(record, out, edits, lexicon)
    # the connective "then" is outside both spans and must survive verbatim
    assert "then" in out.tokens


def test_substitute_deterministic_given_seed():
    record = q("close the milk then open the microwave")
    events = detect_events(record, VERBS, OBJECTS)
    lexicon = SynonymLexicon.from_tsv(DEFAULT_LEXICON)
    a, _ = synonym_substitute(record, events, lexicon, np.random.default_rng(42))
    b, _ = synonym_substitute(record, events, lexicon, np.random.default_rng(42))
    assert a.tokens == b.tokens


def test_verify_positive_rejects_tampering():
    record = q("what did the person do after open the microwave")
    events = detect_events(record, VERBS, OBJECTS)
    lexicon = lex("open|turn on")
    out, edits = synonym_substitute(record, events, lexicon, np.random.default_rng(0))
    assert verify_positive(record, out, edits, lexicon)
    tampered = out.with_tokens(["hello"] + out.tokens[1:])
    assert not verify_positive(record, tampered, edits, lexicon)


# ---------------------------------------------------------------------------
# masking
# ---------------------------------------------------------------------------


def test_mask_events_single():
    record = q("what happens after open the microwave")
    negative = mask_events(record, detect_events(record, VERBS, OBJECTS))
    assert negative.tokens == ["what", "happens", "after", MASK_TOKEN]


def test_mask_events_no_events_identity():
    record = q("what was the person doing")
    assert mask_events(record, []).tokens == record.tokens


def test_mask_events_token_count_formula():
    record = q("close the milk then open the microwave")
    events = detect_events(record, VERBS, OBJECTS)
    out = mask_events(record, events)
    span_total = sum(s.end - s.start for s in events)
    assert len(out.tokens) == len(record.tokens) - span_total + len(events)
    assert out.tokens.count(MASK_TOKEN) == 2


def test_mask_events_overlap_rejected():
    record = q("open the milk now")
    spans = [EventSpan(0, 3, 0, [2]), EventSpan(2, 4, 2, [3])]
    with pytest.raises(ConsistencyError):
        mask_events(record, spans)


# ---------------------------------------------------------------------------
# temporal swapping
# ---------------------------------------------------------------------------


def test_swap_before_to_after(table):
    record = q("what did the person do before open the microwave")
    out = swap_temporal(record, detect_temporal_markers(record, table), table)
    assert out.tokens[5] == "after"


def test_swap_first_to_last(table):
    record = q("what was the first action")
    out = swap_temporal(record, detect_temporal_markers(record, table), table)
    assert out.tokens == "what was the last action".split()


@given(st.lists(st.sampled_from(
    ["before", "after", "first", "last", "while", "then", "open", "the", "milk", "what"]),
    min_size=1, max_size=10))
def test_swap_is_involution(tokens):
    table = SwapTable.from_tsv(DEFAULT_SWAP_TABLE)
    record = QuestionRecord(raw=" ".join(tokens), tokens=tokens, answer_label=0, category="x")
    once = swap_temporal(record, detect_temporal_markers(record, table), table)
    twice = swap_temporal(once, detect_temporal_markers(once, table), table)
    assert twice.tokens == record.tokens
    assert len(once.tokens) == len(record.tokens)


# ---------------------------------------------------------------------------
# triples
# ---------------------------------------------------------------------------


def test_triple_fq3_paired_example(table):
    record = q("what did he do after open the microwave")
    triple = make_question_triple(record, "f_q3", lex("open|turn on"), table,
                                  VERBS, OBJECTS, np.random.default_rng(0))
    assert triple.positive.tokens == "what did he do after turn on the microwave".split()
    assert triple.negative.tokens == ["what", "did", "he", "do", "before", MASK_TOKEN]
    assert triple.contrastive_usable


def test_triple_fq2_marker_free_is_unusable(table):
    record = q("did the person open the microwave")
    triple = make_question_triple(record, "f_q2", lex("open|turn on"), table,
                                  VERBS, OBJECTS, np.random.default_rng(0))
    assert not triple.contrastive_usable
    assert triple.negative.tokens == record.tokens


def test_triple_fq1_two_events_keeps_markers(table):
    record = q("close the milk before open the microwave")
    triple = make_question_triple(record, "f_q1", lex("open|turn on"), table,
                                  VERBS, OBJECTS, np.random.default_rng(0))
    assert triple.negative.tokens.count(MASK_TOKEN) == 2
    assert "before" in triple.negative.tokens  # f_q1 leaves temporal terms alone


def test_triple_unknown_variant(table):
    with pytest.raises(ConfigError):
        make_question_triple(q("x y"), "f_q9", lex("open|turn on"), table,
                             VERBS, OBJECTS, np.random.default_rng(0))


def test_triple_preserves_label_and_category(table):
    record = q("what did the person do after open the microwave")
    triple = make_question_triple(record, "f_q3", SynonymLexicon.from_tsv(DEFAULT_LEXICON),
                                  table, VERBS, OBJECTS, np.random.default_rng(0))
    for member in (triple.original, triple.positive, triple.negative):
        assert member.answer_label == record.answer_label
        assert member.category == record.category


# ---------------------------------------------------------------------------
# data file loading
# ---------------------------------------------------------------------------


def test_lexicon_rejects_singleton_group():
    with pytest.raises(ConfigError):
        SynonymLexicon([[("alone",)]])


def test_lexicon_rejects_duplicate_phrase_across_groups():
    with pytest.raises(ConfigError):
        SynonymLexicon([[("a",), ("b",)], [("a",), ("c",)]])


def test_swap_table_rejects_non_involutive():
    with pytest.raises(ConfigError):
        SwapTable({"before": "after", "after": "first", "first": "before"})


def test_swap_table_rejects_self_map():
    with pytest.raises(ConfigError):
        SwapTable({"before": "before"})


def test_swap_table_rejects_unknown_term():
    with pytest.raises(ConfigError):
        SwapTable({"sometimes": "never", "never": "sometimes"})


def test_default_data_files_load():
    lexicon = SynonymLexicon.from_tsv(DEFAULT_LEXICON)
    table = SwapTable.from_tsv(DEFAULT_SWAP_TABLE)
    assert ("open",) in lexicon.index and ("turn", "on") in lexicon.index
    assert table.image("before") == "after" and table.image("first") == "last"
