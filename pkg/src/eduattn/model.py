"""Sentence model: EDU-level attention, heads, orthogonality penalty, loss."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from eduattn.attention import masked_sparsemax
from eduattn.encoder import (ModelConfig, ModelParams, bigru_encode, edu_representation,
                             fuse_word_aspect, word_attention)
from eduattn.errors import DataError, NumericError
from eduattn.tensor import (Tensor, as_tensor, dropout, frobenius, getitem, log_softmax, matmul,
                            mean, reshape, sigmoid, softmax, softplus, take_rows, transpose)

POLARITIES = ("negative", "neutral", "positive")
DEFAULT_LAMBDAS = (1.0, 1.0, 0.1)


@dataclass
class Batch:
    """Padded index arrays for a group of sentences.

    EDUs of all sentences are flattened to ``N`` rows; ``edu_index[b, j]``
    points at the row of EDU ``j`` of sentence ``b`` (0 where padded).
    """
    word_ids: np.ndarray        # [N, T] int
    word_mask: np.ndarray       # [N, T] bool
    edu_pos: np.ndarray         # [N] position of each EDU in its sentence
    edu_index: np.ndarray       # [B, J] int
    edu_mask: np.ndarray        # [B, J] bool
    gold: list[list[tuple[int, int]]]   # per sentence: (aspect id, polarity id)
    n_aspects: int

    @property
    def size(self) -> int:
        return self.edu_index.shape[0]

    def aspect_targets(self) -> np.ndarray:
        y = np.zeros((self.n_aspects, self.size))
        for b, labels in enumerate(self.gold):
            for k, _ in labels:
                y[k, b] = 1.0
        return y

    def gold_arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        ks, bs, ps = [], [], []
        for b, labels in enumerate(self.gold):
            if not labels:
                raise DataError(f"sentence {b} of the batch has no gold aspect")
            for k, p in labels:
                ks.append(k)
                bs.append(b)
                ps.append(p)
        return np.array(ks), np.array(bs), np.array(ps)


@dataclass
class ForwardResult:
    alpha: Tensor          # [K, N, T] word attention
    beta: Tensor           # [K, B, J] EDU attention
    sent_logits: Tensor    # [K, B, 3]
    aspect_logits: Tensor  # [K, B]
    r_orth: Tensor         # [B]


@dataclass
class LossBreakdown:
    J_sent: float
    U_aspect: float
    R_orth: float
    total: float
    lambdas: tuple[float, float, float]
    tensor: Tensor | None = field(default=None, repr=False)

    def as_dict(self) -> dict:
        return {"J_sent": self.J_sent, "U_aspect": self.U_aspect, "R_orth": self.R_orth,
                "total": self.total, "lambdas": list(self.lambdas)}


# -- per-aspect sentence operations ----------------------------------------------------

def edu_attention(edu_reps, params: ModelParams, mask=None) -> Tensor:
    """Sparsemax of ``e_j @ W_s`` over the EDUs (axis -2 of ``edu_reps``)."""
    edu_reps = as_tensor(edu_reps)
    w = params["W_s"]
    scores = reshape(matmul(reshape(edu_reps, (-1, edu_reps.shape[-1])), w), edu_reps.shape[:-1])
    return masked_sparsemax(scores, mask)


def sentence_representation(edu_reps, beta) -> Tensor:
    """s = sum_j beta_j * e_j."""
    edu_reps, beta = as_tensor(edu_reps), as_tensor(beta)
    s = matmul(reshape(beta, beta.shape[:-1] + (1, beta.shape[-1])), edu_reps)
    return reshape(s, edu_reps.shape[:-2] + (edu_reps.shape[-1],))


def orth_regularization(M, norm: str = "frobenius") -> Tensor:
    """||M^T M - I|| for an EDU-by-aspect matrix (batched over leading dims)."""
    M = as_tensor(M)
    K = M.shape[-1]
    gram = matmul(transpose(M, tuple(range(M.ndim - 2)) + (M.ndim - 1, M.ndim - 2)), M)
    return frobenius(gram - np.eye(K), squared=(norm == "frobenius_squared"))


def predict_sentiment(s_k, params: ModelParams) -> Tensor:
    return softmax(sentiment_logits(s_k, params))


def sentiment_logits(s_k, params: ModelParams) -> Tensor:
    s_k = as_tensor(s_k)
    lead = s_k.shape[:-1]
    out = matmul(reshape(s_k, (-1, s_k.shape[-1])), params["W_sent"]) + params["b_sent"]
    return reshape(out, lead + (3,))


def aspect_logit(s_k, params: ModelParams) -> Tensor:
    s_k = as_tensor(s_k)
    lead = s_k.shape[:-1]
    out = matmul(reshape(s_k, (-1, s_k.shape[-1])), params["W_asp"]) + params["b_asp"]
    return reshape(out, lead)


def predict_aspect_presence(s_k, params: ModelParams) -> Tensor:
    return sigmoid(aspect_logit(s_k, params))


def total_loss(sent_logits: Tensor, aspect_logits: Tensor, r_orth: Tensor, batch: Batch,
               lambdas=DEFAULT_LAMBDAS) -> LossBreakdown:
    """Weighted sum of sentiment CE, aspect BCE and the orthogonality penalty.

    Sentiment CE averages over (sentence, gold aspect) pairs only; aspect BCE
    averages over every aspect of every sentence; the penalty averages over
    sentences.
    """
    l1, l2, l3 = (float(x) for x in lambdas)
    if min(l1, l2, l3) < 0:
        raise DataError(f"loss weights must be non-negative, got {lambdas}")
    ks, bs, ps = batch.gold_arrays()
    logp = log_softmax(sent_logits, axis=-1)
    J = -mean(getitem(logp, (ks, bs, ps)))
    y = batch.aspect_targets()
    U = mean(softplus(aspect_logits) - aspect_logits * y)
    R = mean(r_orth)
    total = J * l1 + U * l2 + R * l3
    vals = (J.item(), U.item(), R.item(), total.item())
    if not all(np.isfinite(vals)):
        raise NumericError(f"non-finite loss components {vals}")
    return LossBreakdown(vals[0], vals[1], vals[2], l1 * vals[0] + l2 * vals[1] + l3 * vals[2],
                         (l1, l2, l3), total)


# -- the full model -----------------------------------------------------------------------

class EduAttentionModel:
    def __init__(self, params: ModelParams):
        self.params = params
        self.config: ModelConfig = params.config

    @classmethod
    def create(cls, config: ModelConfig, seed: int = 0, word_vectors=None, aspect_vectors=None):
        rng = np.random.default_rng(seed)
        return cls(ModelParams(config, rng, word_vectors, aspect_vectors))

    def forward(self, batch: Batch, training: bool = False,
                rng: np.random.Generator | None = None) -> ForwardResult:
        p, c = self.params, self.config
        K = c.n_aspects
        N, T = batch.word_ids.shape
        B, J = batch.edu_index.shape
        h2 = 2 * c.d_hidden
        rate = c.dropout if training else 0.0

        words = take_rows(p["word_embeddings"], batch.word_ids)                 # [N, T, dw]
        fused = fuse_word_aspect(reshape(words, (1, N, T, c.d_word)),
                                 reshape(p["aspect_embeddings"], (K, 1, 1, c.d_aspect)), p)
        fused = dropout(fused, rate, training, rng)                               # [K, N, T, df]
        wmask = np.broadcast_to(batch.word_mask, (K, N, T)).reshape(K * N, T)
        H = bigru_encode(reshape(fused, (K * N, T, c.d_fuse)), p, wmask)          # [KN, T, 2h]
        alpha = word_attention(H, p, wmask)                                       # [KN, T]
        e = edu_representation(reshape(H, (K, N, T, h2)), reshape(alpha, (K, N, T)),
                               batch.edu_pos, p)                                  # [K, N, 2h]
        e_pad = getitem(e, (slice(None), batch.edu_index))                        # [K, B, J, 2h]
        emask = np.broadcast_to(batch.edu_mask, (K, B, J))
        beta = edu_attention(e_pad, p, emask)                                     # [K, B, J]
        s = sentence_representation(e_pad, beta)                                  # [K, B, 2h]
        s = dropout(s, rate, training, rng)
        r = orth_regularization(transpose(beta, (1, 2, 0)), c.orth_norm)          # [B]
        return ForwardResult(reshape(alpha, (K, N, T)), beta, sentiment_logits(s, p),
                             aspect_logit(s, p), r)

    def loss(self, batch: Batch, lambdas=DEFAULT_LAMBDAS, training: bool = False,
             rng: np.random.Generator | None = None) -> tuple[LossBreakdown, ForwardResult]:
        out = self.forward(batch, training, rng)
        return total_loss(out.sent_logits, out.aspect_logits, out.r_orth, batch, lambdas), out

    def predict(self, batch: Batch) -> list[list[tuple[int, int, float]]]:
        """(aspect id, polarity id, confidence) for every gold aspect."""
        out = self.forward(batch, training=False)
        probs = softmax(out.sent_logits, axis=-1).data
        res = []
        for b, labels in enumerate(batch.gold):
            row = []
            for k, _ in labels:
                pid = int(np.argmax(probs[k, b]))
                row.append((k, pid, float(probs[k, b, pid])))
            res.append(row)
        return res


def attention_dump(model: EduAttentionModel, batch: Batch, sentences, aspect_names) -> list[dict]:
    """Per-sentence word- and EDU-level attention, in percent to 2 decimals."""
    out = model.forward(batch, training=False)
    alpha, beta = out.alpha.data, out.beta.data
    aspect_p = sigmoid(out.aspect_logits).data
    probs = softmax(out.sent_logits, axis=-1).data
    dumps = []
    for b, sent in enumerate(sentences):
        n_edu = int(batch.edu_mask[b].sum())
        rows = batch.edu_index[b, :n_edu]
        entry = {"text": sent.text, "edus": [], "beta": [], "aspects": list(aspect_names)}
        for j, n in enumerate(rows):
            T = int(batch.word_mask[n].sum())
            entry["edus"].append({
                "text": sent.edus[j].text(sent.text),
                "tokens": list(sent.edus[j].tokens),
                "alpha": {a: [round(100 * float(v), 2) for v in alpha[k, n, :T]]
                          for k, a in enumerate(aspect_names)},
            })
            entry["beta"].append([round(100 * float(beta[k, b, j]), 2) for k in range(len(aspect_names))])
        entry["aspect_presence"] = {a: round(100 * float(aspect_p[k, b]), 2)
                                    for k, a in enumerate(aspect_names)}
        entry["gold"] = [{"aspect": aspect_names[k], "polarity": POLARITIES[pol],
                          "predicted": POLARITIES[int(np.argmax(probs[k, b]))]}
                         for k, pol in batch.gold[b]]
        dumps.append(entry)
    return dumps
