"""Small synthetic corpora with known EDU-to-aspect structure.

Each clause mentions one aspect word and one opinion word, so polarity is
fully determined by the clause that carries the aspect. Used for sanity
training runs and tests.
"""

from __future__ import annotations

import numpy as np

from eduattn.data import LabeledSample
from eduattn.segment import heuristic_segment

ASPECT_WORDS = {
    "food": ["pizza", "pasta", "dish", "soup"],
    "service": ["waiter", "staff", "waitress", "host"],
}
OPINIONS = {
    "positive": ["great", "excellent", "lovely", "superb"],
    "negative": ["awful", "terrible", "rude", "bland"],
    "neutral": ["okay", "average", "ordinary", "standard"],
}
ASPECTS = list(ASPECT_WORDS)


def _clause(rng, aspect, polarity):
    noun = ASPECT_WORDS[aspect][rng.integers(len(ASPECT_WORDS[aspect]))]
    adj = OPINIONS[polarity][rng.integers(len(OPINIONS[polarity]))]
    return f"the {noun} was {adj}"


def make_corpus(n: int, seed: int = 0, multi_fraction: float = 0.5,
                polarities=("negative", "neutral", "positive")) -> list[LabeledSample]:
    """``n`` sentences over the aspects ``food`` and ``service``.

    A multi-aspect sentence has two comma-separated clauses with independent
    polarities and random order; the others have a single clause.
    """
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        if rng.random() < multi_fraction:
            order = rng.permutation(2)
            pols = [polarities[rng.integers(len(polarities))] for _ in range(2)]
            parts = [_clause(rng, ASPECTS[k], pols[k]) for k in order]
            text = f"{parts[0]} , {parts[1]} ."
            labels = ((0, pols[0]), (1, pols[1]))
        else:
            k = int(rng.integers(2))
            pol = polarities[rng.integers(len(polarities))]
            text = _clause(rng, ASPECTS[k], pol) + " ."
            labels = ((k, pol),)
        out.append(LabeledSample(heuristic_segment(text), labels))
    return out
