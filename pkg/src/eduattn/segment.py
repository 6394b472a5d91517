"""Elementary discourse unit (EDU) segmentation.

Two sources are supported: spans produced by an external discourse
segmenter (read from JSONL), and a rule-based fallback that splits on
commas/semicolons and on the conjunctions ``but``, ``and``, ``although``
and ``or``. Both routes finish with the same conjunction post-split.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

from eduattn.errors import InputError, ParseError, ValidationError

CONJUNCTIONS = frozenset({"but", "and", "although", "or"})
CLAUSE_PUNCT = frozenset({",", ";"})
MIN_CONJ_WORDS = 3
MIN_PUNCT_WORDS = 2

_TOKEN_RE = re.compile(r"\w+|'\w+|[^\w\s]")


@dataclass(frozen=True)
class Token:
    text: str
    start: int
    end: int

    @property
    def is_word(self) -> bool:
        return self.text[0].isalnum() or (self.text[0] in "_'" and len(self.text) > 1)


@dataclass(frozen=True)
class Edu:
    tokens: tuple[str, ...]
    char_span: tuple[int, int]
    index: int
    _toks: tuple[Token, ...] = field(default=(), repr=False, compare=False)

    def text(self, sentence: str) -> str:
        return sentence[self.char_span[0]: self.char_span[1]]


@dataclass(frozen=True)
class SegmentedSentence:
    text: str
    edus: tuple[Edu, ...]
    source: str = "heuristic"

    @property
    def tokens(self) -> list[str]:
        return [t for e in self.edus for t in e.tokens]

    def edu_texts(self) -> list[str]:
        return [e.text(self.text) for e in self.edus]

    def to_record(self) -> dict:
        return {"text": self.text, "edus": [list(e.char_span) for e in self.edus]}


def tokenize(text: str, offset: int = 0) -> list[Token]:
    """Lowercased word and punctuation tokens with character offsets."""
    return [Token(m.group().lower(), m.start() + offset, m.end() + offset)
            for m in _TOKEN_RE.finditer(text)]


def _n_words(toks) -> int:
    return sum(1 for t in toks if t.is_word)


def _make_edus(groups: list[list[Token]], spans: list[tuple[int, int]] | None = None) -> list[Edu]:
    out = []
    for i, g in enumerate(groups):
        span = spans[i] if spans is not None else (g[0].start, g[-1].end)
        out.append(Edu(tuple(t.text for t in g), span, i, tuple(g)))
    return out


def _split_tokens_on_conjunctions(toks: list[Token]) -> list[list[Token]]:
    pieces = []
    start = 0
    for i in range(1, len(toks)):
        if toks[i].text not in CONJUNCTIONS:
            continue
        if _n_words(toks[start:i]) >= MIN_CONJ_WORDS and _n_words(toks[i:]) >= MIN_CONJ_WORDS:
            pieces.append(toks[start:i])
            start = i
    pieces.append(toks[start:])
    return pieces


def split_on_conjunctions(edu: Edu, sentence: str | None = None) -> list[Edu]:
    """Split an EDU before ``but``/``and``/``although``/``or``.

    A cut is made only when both sides keep at least three word tokens; the
    conjunction opens the right-hand piece. Scanning is left to right and
    the right side is re-checked after each cut, so the result is a fixed
    point of this function.
    """
    toks = list(edu._toks) if edu._toks else None
    if toks is None:
        if sentence is None:
            # no offsets available: synthesise them from the token strings
            toks, pos = [], 0
            for t in edu.tokens:
                toks.append(Token(t, pos, pos + len(t)))
                pos += len(t) + 1
        else:
            toks = tokenize(edu.text(sentence), edu.char_span[0])
    pieces = _split_tokens_on_conjunctions(toks)
    if len(pieces) == 1:
        return [edu]
    spans = []
    for i, p in enumerate(pieces):
        lo = edu.char_span[0] if i == 0 else p[0].start
        hi = edu.char_span[1] if i == len(pieces) - 1 else p[-1].end
        spans.append((lo, hi))
    return _make_edus(pieces, spans)


def _reindex(edus: list[Edu]) -> tuple[Edu, ...]:
    return tuple(Edu(e.tokens, e.char_span, i, e._toks) for i, e in enumerate(edus))


def heuristic_segment(text: str) -> SegmentedSentence:
    """Rule-based EDU segmentation of raw text.

    Commas and semicolons close an EDU when both sides have at least two
    word tokens (the punctuation stays on the left); each piece is then run
    through the conjunction split.
    """
    if not text or not text.strip():
        raise InputError("cannot segment empty text")
    toks = tokenize(text)
    if not toks:
        raise InputError(f"no tokens in {text!r}")
    pieces, start = [], 0
    for i, t in enumerate(toks):
        if t.text not in CLAUSE_PUNCT:
            continue
        if _n_words(toks[start:i]) >= MIN_PUNCT_WORDS and _n_words(toks[i + 1:]) >= MIN_PUNCT_WORDS:
            pieces.append(toks[start:i + 1])
            start = i + 1
    if start < len(toks):
        pieces.append(toks[start:])
    edus = []
    for p in pieces:
        for q in _split_tokens_on_conjunctions(p):
            edus.extend(_make_edus([q]))
    return SegmentedSentence(text, _reindex(edus), "heuristic")


def from_spans(text: str, spans, line: int | None = None) -> SegmentedSentence:
    """Build a sentence from externally supplied EDU spans, then post-split.

    Spans are end-exclusive character offsets. They must be ordered, must
    not overlap, and the text between and around them must be whitespace.
    """
    if not text or not text.strip():
        raise ValidationError(_where(line, "empty sentence text"))
    if not spans:
        raise ValidationError(_where(line, "no EDU spans"))
    edus, prev = [], 0
    for s in spans:
        if len(s) != 2:
            raise ValidationError(_where(line, f"span {s!r} is not a [start, end] pair"))
        lo, hi = int(s[0]), int(s[1])
        if not 0 <= lo < hi <= len(text):
            raise ValidationError(_where(line, f"span [{lo}, {hi}) outside text of length {len(text)}"))
        if lo < prev:
            raise ValidationError(_where(line, f"span [{lo}, {hi}) overlaps or is out of order"))
        if text[prev:lo].strip():
            raise ValidationError(_where(line, f"text {text[prev:lo]!r} not covered by any EDU"))
        toks = tokenize(text[lo:hi], lo)
        if not toks:
            raise ValidationError(_where(line, f"span [{lo}, {hi}) has no tokens"))
        edu = _make_edus([toks], [(lo, hi)])[0]
        edus.extend(split_on_conjunctions(edu))
        prev = hi
    if text[prev:].strip():
        raise ValidationError(_where(line, f"text {text[prev:]!r} not covered by any EDU"))
    return SegmentedSentence(text, _reindex(edus), "presegmented")


def _where(line, msg):
    return f"line {line}: {msg}" if line is not None else msg


def iter_jsonl(path) -> Iterator[tuple[int, dict]]:
    with open(path, encoding="utf-8") as fh:
        for n, raw in enumerate(fh, 1):
            if not raw.strip():
                continue
            try:
                rec = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON ({exc.msg})", n) from None
            if not isinstance(rec, dict) or "text" not in rec or "edus" not in rec:
                raise ParseError("expected an object with 'text' and 'edus'", n)
            yield n, rec


def load_presegmented(path) -> list[SegmentedSentence]:
    """Read the pre-segmented JSONL format, one sentence per line."""
    return [from_spans(rec["text"], rec["edus"], n) for n, rec in iter_jsonl(Path(path))]
