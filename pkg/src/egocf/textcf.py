"""Event description paraphrasing over a closed vocabulary.

Questions are token lists. Events ("open the microwave", "first action")
are found by a rule matcher instead of a dependency parser: the corpus
vocabulary is closed, so pattern recall is exact by construction.
Positives come from synonym substitution against a lexicon file; negatives
from masking events and/or swapping temporal terms via an involutive table.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, ConsistencyError, InputError

MASK_TOKEN = "[MASK]"
DETERMINERS = ("the", "a", "an")
ORDINALS = ("first", "last")
ACTION_NOUNS = ("action", "operation")

DEFAULT_LEXICON = Path(__file__).parent / "data" / "lexicon.tsv"
DEFAULT_SWAP_TABLE = Path(__file__).parent / "data" / "swap_table.tsv"


class TemporalKind(enum.Enum):
    BEFORE = "before"
    AFTER = "after"
    FIRST = "first"
    LAST = "last"
    WHILE = "while"
    THEN = "then"


@dataclass
class QuestionRecord:
    """A tokenized question; ``raw`` is the canonical spaced join of ``tokens``."""

    raw: str
    tokens: list[str]
    answer_label: int
    category: str

    def __post_init__(self) -> None:
        if not self.tokens:
            raise InputError("QuestionRecord needs at least one token")

    @classmethod
    def from_text(cls, text: str, answer_label: int = -1, category: str = "") -> "QuestionRecord":
        tokens = text.lower().split()
        return cls(raw=" ".join(tokens), tokens=tokens, answer_label=answer_label, category=category)

    def with_tokens(self, tokens: list[str]) -> "QuestionRecord":
        return replace(self, raw=" ".join(tokens), tokens=list(tokens))


@dataclass
class EventSpan:
    """Half-open token span [start, end) with its head verb and object nouns.

    For ordinal spans ("first action") the ordinal token plays the head role.
    """

    start: int
    end: int
    verb_index: int
    object_indices: list[int]

    def __post_init__(self) -> None:
        if not (self.start <= self.verb_index < self.end):
            raise ConsistencyError(f"verb index {self.verb_index} outside span [{self.start}, {self.end})")
        for i in self.object_indices:
            if not (self.start <= i < self.end):
                raise ConsistencyError(f"object index {i} outside span [{self.start}, {self.end})")


@dataclass
class TemporalMarker:
    token_index: int
    kind: TemporalKind


@dataclass
class SynonymEdit:
    """One substitution: tokens ``before`` at ``position`` became ``after``."""

    position: int
    before: tuple[str, ...]
    after: tuple[str, ...]
    group: int


class SynonymLexicon:
    """Synonym groups of one-or-more-token phrases; each phrase in exactly one group."""

    def __init__(self, groups: list[list[tuple[str, ...]]]) -> None:
        self.groups = groups
        self.index: dict[tuple[str, ...], int] = {}
        for gid, group in enumerate(groups):
            if len(group) < 2:
                raise ConfigError(f"lexicon group {gid} has fewer than 2 members: {group}")
            for phrase in group:
                if not phrase:
                    raise ConfigError(f"empty phrase in lexicon group {gid}")
                if phrase in self.index:
                    raise ConfigError(f"phrase {' '.join(phrase)!r} appears in more than one group")
                self.index[phrase] = gid
        self.max_phrase_len = max((len(p) for p in self.index), default=1)

    @classmethod
    def from_tsv(cls, path: str | Path) -> "SynonymLexicon":
        groups = []
        for line in Path(path).read_text().splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            phrases = [tuple(cell.split()) for cell in line.split("\t") if cell.strip()]
            groups.append(phrases)
        return cls(groups)

    def members(self, gid: int) -> list[tuple[str, ...]]:
        return self.groups[gid]

    def tokens(self) -> set[str]:
        return {tok for phrase in self.index for tok in phrase}


class SwapTable:
    """Involutive token map for temporal terms (before<->after, ...)."""

    def __init__(self, mapping: dict[str, str]) -> None:
        kinds = {k.value for k in TemporalKind}
        for a, b in mapping.items():
            if a == b:
                raise ConfigError(f"swap table maps {a!r} to itself")
            if mapping.get(b) != a:
                raise ConfigError(f"swap table not involutive at {a!r} -> {b!r}")
            if a not in kinds:
                raise ConfigError(f"unknown temporal term {a!r} in swap table")
        self.mapping = dict(mapping)

    @classmethod
    def from_tsv(cls, path: str | Path) -> "SwapTable":
        mapping: dict[str, str] = {}
        for line in Path(path).read_text().splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            cells = [c for c in line.split("\t") if c.strip()]
            if len(cells) != 2:
                raise ConfigError(f"swap table line needs two columns: {line!r}")
            a, b = cells[0].strip(), cells[1].strip()
            mapping[a] = b
            mapping[b] = a
        return cls(mapping)

    def __contains__(self, token: str) -> bool:
        return token in self.mapping

    def image(self, token: str) -> str:
        return self.mapping[token]

    def kind(self, token: str) -> TemporalKind:
        return TemporalKind(token)

    def tokens(self) -> set[str]:
        return set(self.mapping)


@dataclass
class QuestionTriple:
    original: QuestionRecord
    positive: QuestionRecord
    negative: QuestionRecord
    contrastive_usable: bool
    edits: list[SynonymEdit] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.contrastive_usable and self.positive.tokens == self.negative.tokens:
            raise ConsistencyError("usable triple with identical positive and negative")


# ---------------------------------------------------------------------------
# Detection
# ---------------------------------------------------------------------------


def detect_events(
    q: QuestionRecord,
    verb_vocab,
    object_vocab,
    determiners=DETERMINERS,
    ordinals=ORDINALS,
    action_nouns=ACTION_NOUNS,
) -> list[EventSpan]:
    """Greedy left-to-right scan for ``verb (determiner)? noun`` and
    ``ordinal action-noun`` spans; spans never overlap."""
    verbs, objects = set(verb_vocab), set(object_vocab)
    if not verbs or not objects:
        raise InputError("detect_events needs nonempty verb and object vocabularies")
    dets, ords, anouns = set(determiners), set(ordinals), set(action_nouns)
    toks = q.tokens
    spans: list[EventSpan] = []
    i = 0
    while i < len(toks):
        if toks[i] in verbs:
            j = i + 1
            if j < len(toks) and toks[j] in dets:
                j += 1
            if j < len(toks) and toks[j] in objects:
                spans.append(EventSpan(start=i, end=j + 1, verb_index=i, object_indices=[j]))
                i = j + 1
                continue
        if toks[i] in ords and i + 1 < len(toks) and toks[i + 1] in anouns:
            spans.append(EventSpan(start=i, end=i + 2, verb_index=i, object_indices=[i + 1]))
            i += 2
            continue
        i += 1
    return spans


def detect_temporal_markers(q: QuestionRecord, swap_table: SwapTable) -> list[TemporalMarker]:
    return [
        TemporalMarker(token_index=i, kind=swap_table.kind(tok))
        for i, tok in enumerate(q.tokens)
        if tok in swap_table
    ]


# ---------------------------------------------------------------------------
# Transformations
# ---------------------------------------------------------------------------


def _match_phrase(tokens: list[str], pos: int, limit: int, lexicon: SynonymLexicon):
    """Longest lexicon phrase starting at ``pos`` and ending before ``limit``."""
    for length in range(min(lexicon.max_phrase_len, limit - pos), 0, -1):
        phrase = tuple(tokens[pos : pos + length])
        if phrase in lexicon.index:
            return phrase
    return None


def synonym_substitute(
    q: QuestionRecord,
    events: list[EventSpan],
    lexicon: SynonymLexicon,
    rng: np.random.Generator,
) -> tuple[QuestionRecord, list[SynonymEdit]]:
    """Replace lexicon phrases at event heads and object nouns with a
    uniformly sampled different member of their group.

    Tokens outside event spans are never touched. Returns the new record
    and the edit list; an empty edit list means the output is the input.
    """
    toks = q.tokens
    edits: list[SynonymEdit] = []
    taken_until = -1
    for span in sorted(events, key=lambda s: s.start):
        for pos in sorted({span.verb_index, *span.object_indices}):
            if pos <= taken_until:
                continue
            phrase = _match_phrase(toks, pos, span.end, lexicon)
            if phrase is None:
                continue
            gid = lexicon.index[phrase]
            alts = [m for m in lexicon.members(gid) if m != phrase]
            choice = alts[int(rng.integers(len(alts)))]
            edits.append(SynonymEdit(position=pos, before=phrase, after=choice, group=gid))
            taken_until = pos + len(phrase) - 1
    if not edits:
        return q, []
    out: list[str] = []
    cursor = 0
    for edit in edits:
        out.extend(toks[cursor : edit.position])
        out.extend(edit.after)
        cursor = edit.position + len(edit.before)
    out.extend(toks[cursor:])
    return q.with_tokens(out), edits


def verify_positive(original: QuestionRecord, positive: QuestionRecord,
                    edits: list[SynonymEdit], lexicon: SynonymLexicon) -> bool:
    """Reverse-lexicon check of a positive sample.

    Re-applies the recorded edits to the original and demands (a) the result
    reproduces the positive token-for-token and (b) every before/after pair
    resolves to the same lexicon group.
    """
    for edit in edits:
        if edit.before == edit.after:
            return False
        if lexicon.index.get(edit.before) != lexicon.index.get(edit.after):
            return False
        if lexicon.index.get(edit.before) != edit.group:
            return False
    out: list[str] = []
    cursor = 0
    for edit in sorted(edits, key=lambda e: e.position):
        if tuple(original.tokens[edit.position : edit.position + len(edit.before)]) != edit.before:
            return False
        out.extend(original.tokens[cursor : edit.position])
        out.extend(edit.after)
        cursor = edit.position + len(edit.before)
    out.extend(original.tokens[cursor:])
    return out == positive.tokens


def mask_events(q: QuestionRecord, events: list[EventSpan]) -> QuestionRecord:
    """Collapse each event span to a single mask token."""
    spans = sorted(events, key=lambda s: s.start)
    for prev, cur in zip(spans, spans[1:]):
        if cur.start < prev.end:
            raise ConsistencyError(
                f"overlapping event spans [{prev.start},{prev.end}) and [{cur.start},{cur.end})"
            )
    out: list[str] = []
    cursor = 0
    for span in spans:
        out.extend(q.tokens[cursor : span.start])
        out.append(MASK_TOKEN)
        cursor = span.end
    out.extend(q.tokens[cursor:])
    return q.with_tokens(out)


def swap_temporal(q: QuestionRecord, markers: list[TemporalMarker], swap_table: SwapTable) -> QuestionRecord:
    """Replace each marker token by its swap-table image; length preserved."""
    toks = list(q.tokens)
    for mk in markers:
        toks[mk.token_index] = swap_table.image(toks[mk.token_index])
    return q.with_tokens(toks)


TEXT_VARIANTS = ("f_q1", "f_q2", "f_q3")


def make_question_triple(
    q: QuestionRecord,
    variant: str,
    lexicon: SynonymLexicon,
    swap_table: SwapTable,
    verb_vocab,
    object_vocab,
    rng: np.random.Generator,
) -> QuestionTriple:
    """Positive by synonym substitution; negative per variant:
    f_q1 masks events, f_q2 swaps temporal terms, f_q3 swaps after masking."""
    if variant not in TEXT_VARIANTS:
        raise ConfigError(f"unknown text variant {variant!r}, expected one of {TEXT_VARIANTS}")
    events = detect_events(q, verb_vocab, object_vocab)
    positive, edits = synonym_substitute(q, events, lexicon, rng)
    if variant == "f_q1":
        negative = mask_events(q, events)
    elif variant == "f_q2":
        negative = swap_temporal(q, detect_temporal_markers(q, swap_table), swap_table)
    else:
        masked = mask_events(q, events)
        negative = swap_temporal(masked, detect_temporal_markers(masked, swap_table), swap_table)
    # Unusable when the negative transformation was a no-op; the second
    # clause only matters for adversarial lexicons that alias the swap table.
    usable = negative.tokens != q.tokens and negative.tokens != positive.tokens
    return QuestionTriple(original=q, positive=positive, negative=negative,
                          contrastive_usable=usable, edits=edits)
