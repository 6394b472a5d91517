"""Dataset loading: SemEval/MAMS XML, internal JSONL, GloVe, splits, batches."""

from __future__ import annotations

import hashlib
import json
import logging
import math
import xml.etree.ElementTree as ET
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from eduattn.errors import ConfigError, DataError, ParseError, ValidationError
from eduattn.model import POLARITIES, Batch
from eduattn.segment import SegmentedSentence, from_spans, heuristic_segment, iter_jsonl

log = logging.getLogger(__name__)

PAD, UNK = "<pad>", "<unk>"

# aspect sets and embedding-init words; None means random init
PRESETS = {
    "rest14": {
        "aspects": ["food", "service", "price", "ambience", "anecdotes/miscellaneous"],
        "init_words": {"food": "food", "service": "service", "price": "price",
                       "ambience": "ambience", "anecdotes/miscellaneous": None},
    },
    "mams": {
        "aspects": ["food", "service", "staff", "price", "ambience", "menu", "place",
                    "miscellaneous"],
        "init_words": {"food": "food", "service": "service", "staff": "staff", "price": "price",
                       "ambience": "ambience", "menu": "menu", "place": "place",
                       "miscellaneous": None},
    },
}


@dataclass(frozen=True)
class LabeledSample:
    sentence: SegmentedSentence
    labels: tuple[tuple[int, str], ...]

    def __post_init__(self):
        if not self.labels:
            raise ValidationError(f"sample without labels: {self.sentence.text!r}")
        ids = [a for a, _ in self.labels]
        if len(set(ids)) != len(ids):
            raise ValidationError(f"duplicate aspect in {self.sentence.text!r}")
        for _, p in self.labels:
            if p not in POLARITIES:
                raise ValidationError(f"polarity {p!r} not in {POLARITIES}")

    @property
    def is_multi(self) -> bool:
        return len(self.labels) > 1


@dataclass
class Vocab:
    tokens: list[str]
    embeddings: np.ndarray | None = None
    coverage: float | None = None
    index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        if self.tokens[:2] != [PAD, UNK]:
            raise ValidationError("vocab must start with the padding and unknown tokens")
        self.index = {t: i for i, t in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            raise ValidationError("vocab tokens are not unique")
        if self.embeddings is not None and self.embeddings.shape[0] != len(self.tokens):
            raise ValidationError("embedding rows do not match vocab size")

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, tok: str) -> bool:
        return tok in self.index

    def id(self, tok: str) -> int:
        return self.index.get(tok, 1)

    def ids(self, toks: Iterable[str]) -> list[int]:
        return [self.index.get(t, 1) for t in toks]

    def hash(self) -> str:
        return hashlib.sha256("\n".join(self.tokens).encode("utf-8")).hexdigest()


def build_vocab(samples: Iterable[LabeledSample], extra: Iterable[str] = ()) -> Vocab:
    counts = Counter(t for s in samples for t in s.sentence.tokens)
    counts.update(extra)
    toks = sorted(counts, key=lambda t: (-counts[t], t))
    return Vocab([PAD, UNK] + [t for t in toks if t not in (PAD, UNK)])


# -- segmentation sidecar ----------------------------------------------------------------

def load_segment_map(path) -> dict[str, SegmentedSentence]:
    """Pre-segmented JSONL keyed by sentence text."""
    out = {}
    for n, rec in iter_jsonl(path):
        out[rec["text"]] = from_spans(rec["text"], rec["edus"], n)
    return out


def _segment(text: str, segments: dict | None) -> SegmentedSentence:
    if segments is not None and text in segments:
        return segments[text]
    return heuristic_segment(text)


# -- loaders -------------------------------------------------------------------------------

def load_semeval_xml(path, aspects: Sequence[str], segments: dict | None = None,
                     conflict_policy: str = "drop_pair", max_edus: int | None = 16) -> list[LabeledSample]:
    """Aspect-category samples from a SemEval-2014 / MAMS-ACSA XML file.

    ``conflict_policy='drop_pair'`` removes only conflict-labelled
    (sentence, aspect) pairs; ``'drop_sentence'`` removes any sentence that
    has one. Sentences left without labels are skipped either way.
    """
    if conflict_policy not in ("drop_pair", "drop_sentence"):
        raise ConfigError(f"unknown conflict policy {conflict_policy!r}")
    try:
        root = ET.parse(path).getroot()
    except ET.ParseError as exc:
        raise ParseError(f"{path}: malformed XML ({exc})") from None
    aspect_id = {a: i for i, a in enumerate(aspects)}
    unknown: set[str] = set()
    samples = []
    for sent in root.iter("sentence"):
        text_el = sent.find("text")
        if text_el is None or not (text_el.text or "").strip():
            continue
        cats = sent.find("aspectCategories")
        if cats is None:
            continue
        labels, conflict = [], False
        for c in cats.findall("aspectCategory"):
            cat, pol = c.get("category"), c.get("polarity")
            if pol == "conflict":
                conflict = True
                continue
            if cat not in aspect_id:
                unknown.add(cat)
                continue
            labels.append((aspect_id[cat], pol))
        if conflict and conflict_policy == "drop_sentence":
            continue
        if not labels:
            continue
        text = text_el.text
        seg = _segment(text, segments)
        if max_edus is not None and len(seg.edus) > max_edus:
            raise ValidationError(f"{len(seg.edus)} EDUs exceed the limit of {max_edus}: {text!r}")
        samples.append(LabeledSample(seg, tuple(labels)))
    if unknown:
        raise ValidationError(f"{path}: aspect categories not in the aspect set: {sorted(unknown)}")
    return samples


def load_jsonl_samples(path, aspects: Sequence[str], max_edus: int | None = 16) -> list[LabeledSample]:
    """Samples from the internal JSONL format (pre-segmented, with labels)."""
    aspect_id = {a: i for i, a in enumerate(aspects)}
    out = []
    for n, rec in iter_jsonl(path):
        seg = from_spans(rec["text"], rec["edus"], n)
        if rec.get("source") == "heuristic":
            seg = SegmentedSentence(seg.text, seg.edus, "heuristic")
        labels = []
        for lab in rec.get("labels", []):
            if lab.get("aspect") not in aspect_id:
                raise ValidationError(f"line {n}: unknown aspect {lab.get('aspect')!r}")
            if lab.get("polarity") == "conflict":
                continue
            labels.append((aspect_id[lab["aspect"]], lab["polarity"]))
        if not labels:
            continue
        if max_edus is not None and len(seg.edus) > max_edus:
            raise ValidationError(f"line {n}: {len(seg.edus)} EDUs exceed the limit of {max_edus}")
        out.append(LabeledSample(seg, tuple(labels)))
    return out


def sample_record(s: LabeledSample, aspects: Sequence[str]) -> dict:
    rec = s.sentence.to_record()
    rec["source"] = s.sentence.source
    rec["labels"] = [{"aspect": aspects[a], "polarity": p} for a, p in s.labels]
    return rec


def save_jsonl_samples(samples: Iterable[LabeledSample], path, aspects: Sequence[str]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in samples:
            fh.write(json.dumps(sample_record(s, aspects)) + "\n")


def load_samples(path, aspects, segments=None, conflict_policy="drop_pair", max_edus=16):
    """Dispatch on extension: ``.xml`` or JSONL."""
    if str(path).endswith(".xml"):
        return load_semeval_xml(path, aspects, segments, conflict_policy, max_edus)
    return load_jsonl_samples(path, aspects, max_edus)


def dataset_stats(samples: Sequence[LabeledSample]) -> dict:
    pol = Counter(p for s in samples for _, p in s.labels)
    return {
        "sentences": len(samples),
        "single": sum(1 for s in samples if not s.is_multi),
        "multiple": sum(1 for s in samples if s.is_multi),
        **{p: pol.get(p, 0) for p in POLARITIES},
    }


def load_glove(path, vocab_tokens, dim: int = 300, rng: np.random.Generator | None = None) -> Vocab:
    """Vocab whose embedding rows come from a GloVe text file.

    ``vocab_tokens`` is a list of tokens or a Counter of corpus counts (the
    latter also gives a token-level coverage figure). Tokens missing from
    the file and the unknown row get uniform(-0.1, 0.1); padding is zero.
    """
    rng = rng or np.random.default_rng(0)
    counts = vocab_tokens if isinstance(vocab_tokens, Counter) else None
    wanted = [t for t in (vocab_tokens if counts is None else counts) if t not in (PAD, UNK)]
    vocab = Vocab([PAD, UNK] + list(dict.fromkeys(wanted)))
    emb = rng.uniform(-0.1, 0.1, size=(len(vocab), dim))
    emb[0] = 0.0
    found = set()
    with open(path, encoding="utf-8", errors="replace") as fh:
        for n, line in enumerate(fh, 1):
            parts = line.rstrip("\n").rstrip(" ").split(" ")
            if len(parts) != dim + 1:
                raise ParseError(f"{path}: expected a token and {dim} values, got {len(parts) - 1}", n)
            tok = parts[0]
            i = vocab.index.get(tok)
            if i is None or i < 2 or tok in found:
                continue
            try:
                emb[i] = np.array(parts[1:], dtype=np.float64)
            except ValueError:
                raise ParseError(f"{path}: non-numeric vector entry", n) from None
            found.add(tok)
    vocab.embeddings = emb
    type_cov = len(found) / max(len(vocab) - 2, 1)
    if counts is not None:
        tot = sum(counts.values())
        tok_cov = sum(c for t, c in counts.items() if t in found) / max(tot, 1)
        log.info("GloVe coverage: %.2f%% of types, %.2f%% of tokens", 100 * type_cov, 100 * tok_cov)
    else:
        log.info("GloVe coverage: %.2f%% of types", 100 * type_cov)
    vocab.coverage = type_cov
    return vocab


# -- splitting and batching ------------------------------------------------------------------

def split_train_val(samples: Sequence[LabeledSample], fraction: float, rng: np.random.Generator):
    """Seeded random split; the validation size is ``fraction * n`` rounded half up."""
    if not 0.0 < fraction < 1.0:
        raise ConfigError(f"validation fraction must lie in (0, 1), got {fraction}")
    n = len(samples)
    n_val = int(math.floor(fraction * n + 0.5))
    perm = rng.permutation(n)
    val_idx = set(perm[:n_val].tolist())
    train = [s for i, s in enumerate(samples) if i not in val_idx]
    val = [samples[i] for i in sorted(val_idx)]
    return train, val


def make_batches(samples: Sequence[LabeledSample], batch_size: int,
                 rng: np.random.Generator | None) -> list[list[LabeledSample]]:
    """Shuffle (when ``rng`` is given) and chunk; the last chunk may be short."""
    if batch_size < 1:
        raise ConfigError("batch size must be at least 1")
    order = rng.permutation(len(samples)) if rng is not None else np.arange(len(samples))
    return [[samples[i] for i in order[s: s + batch_size]]
            for s in range(0, len(samples), batch_size)]


def encode_batch(samples: Sequence[LabeledSample], vocab: Vocab, n_aspects: int,
                 with_polarity: bool = True) -> Batch:
    edus = [(b, j, e) for b, s in enumerate(samples) for j, e in enumerate(s.sentence.edus)]
    N = len(edus)
    T = max(len(e.tokens) for _, _, e in edus)
    J = max(len(s.sentence.edus) for s in samples)
    word_ids = np.zeros((N, T), dtype=np.int64)
    word_mask = np.zeros((N, T), dtype=bool)
    edu_pos = np.zeros(N, dtype=np.int64)
    edu_index = np.zeros((len(samples), J), dtype=np.int64)
    edu_mask = np.zeros((len(samples), J), dtype=bool)
    for n, (b, j, e) in enumerate(edus):
        word_ids[n, : len(e.tokens)] = vocab.ids(e.tokens)
        word_mask[n, : len(e.tokens)] = True
        edu_pos[n] = j
        edu_index[b, j] = n
        edu_mask[b, j] = True
    pid = {p: i for i, p in enumerate(POLARITIES)}
    gold = [[(a, pid[p] if with_polarity else -1) for a, p in s.labels] for s in samples]
    return Batch(word_ids, word_mask, edu_pos, edu_index, edu_mask, gold, n_aspects)


def corpus_counts(*splits: Iterable[LabeledSample]) -> Counter:
    return Counter(t for split in splits for s in split for t in s.sentence.tokens)


def check_dataset_files(cfg: dict) -> None:
    for key in ("train", "val", "segments"):
        p = cfg.get(key)
        if p and not Path(p).exists():
            raise ConfigError(f"dataset.{key}: file not found: {p}")
    for name, p in (cfg.get("test") or {}).items():
        if not Path(p).exists():
            raise ConfigError(f"dataset.test.{name}: file not found: {p}")
