"""Aspect-specific EDU encoder.

For every aspect, each word vector is fused with the aspect embedding, the
fused sequence of an EDU runs through a bidirectional GRU, and a sparsemax
over the hidden states picks the words that feed the EDU vector. A learned
position row for the EDU's index in the sentence is added on top.

All functions accept leading batch dimensions.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from eduattn import kernels
from eduattn.attention import masked_sparsemax
from eduattn.errors import ConfigError, DimensionError, InputError
from eduattn.tensor import (Tensor, _make, as_tensor, concat, flip, matmul, parameter, reshape,
                            take_rows, tanh, transpose)

MODEL = "model"
EMBEDDING = "embedding"


@dataclass
class ModelConfig:
    vocab_size: int
    n_aspects: int
    d_word: int = 300
    d_aspect: int = 300
    d_fuse: int = 300
    d_hidden: int = 150
    j_max: int = 16
    dropout: float = 0.5
    orth_norm: str = "frobenius"

    def __post_init__(self):
        for k in ("vocab_size", "n_aspects", "d_word", "d_aspect", "d_fuse", "d_hidden", "j_max"):
            if getattr(self, k) < 1:
                raise ConfigError(f"model.{k} must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"model.dropout must lie in [0, 1), got {self.dropout}")
        if self.orth_norm not in ("frobenius", "frobenius_squared"):
            raise ConfigError(f"model.orth_norm must be frobenius or frobenius_squared, got {self.orth_norm!r}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Parameter:
    name: str
    tensor: Tensor
    group: str

    def __post_init__(self):
        if self.group not in (MODEL, EMBEDDING):
            raise ConfigError(f"unknown learning-rate group {self.group!r}")


class ModelParams:
    """Every learnable array of the model, addressed by name."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator,
                 word_vectors: np.ndarray | None = None,
                 aspect_vectors: dict[int, np.ndarray] | None = None):
        self.config = c = config
        h2 = 2 * c.d_hidden

        def uni(*shape):
            return rng.uniform(-0.1, 0.1, size=shape)

        if word_vectors is not None:
            if word_vectors.shape != (c.vocab_size, c.d_word):
                raise DimensionError(f"word vectors {word_vectors.shape} != ({c.vocab_size}, {c.d_word})")
            emb = np.array(word_vectors, dtype=np.float64)
        else:
            emb = uni(c.vocab_size, c.d_word)
            emb[0] = 0.0
        asp = uni(c.n_aspects, c.d_aspect)
        for k, vec in (aspect_vectors or {}).items():
            asp[k] = vec
        self.params: dict[str, Parameter] = {}
        self._add("word_embeddings", emb, EMBEDDING)
        self._add("aspect_embeddings", asp)
        self._add("W_fuse", uni(c.d_word, c.d_fuse))
        self._add("W_k", uni(c.d_aspect, c.d_fuse))
        for d in ("fwd", "bwd"):
            self._add(f"gru_{d}_W", uni(c.d_fuse, 3 * c.d_hidden))
            self._add(f"gru_{d}_U", uni(c.d_hidden, 3 * c.d_hidden))
            self._add(f"gru_{d}_b", np.zeros(3 * c.d_hidden))
        self._add("W_attn_word", uni(h2, 1))
        self._add("position_table", np.zeros((c.j_max, h2)))
        self._add("W_s", uni(h2, 1))
        self._add("W_sent", uni(h2, 3))
        self._add("b_sent", np.zeros(3))
        self._add("W_asp", uni(h2, 1))
        self._add("b_asp", np.zeros(1))

    def _add(self, name, data, group=MODEL):
        if name in self.params:
            raise ConfigError(f"duplicate parameter {name!r}")
        self.params[name] = Parameter(name, parameter(data, name=name), group)

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name].tensor

    def __iter__(self):
        return iter(self.params.values())

    def __len__(self):
        return len(self.params)

    def names(self) -> list[str]:
        return list(self.params)

    def tensors(self) -> list[Tensor]:
        return [p.tensor for p in self.params.values()]

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.tensor.zero_grad()

    def state_dict(self) -> dict[str, np.ndarray]:
        return {n: p.tensor.data.copy() for n, p in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for n, p in self.params.items():
            arr = np.asarray(state[n], dtype=np.float64)
            if arr.shape != p.tensor.shape:
                raise DimensionError(f"{n}: expected shape {p.tensor.shape}, got {arr.shape}")
            p.tensor.data = arr.copy()

    def count(self) -> int:
        return sum(p.tensor.size for p in self.params.values())


def fuse_word_aspect(word_vec, aspect_vec, params: ModelParams) -> Tensor:
    """tanh(word @ W_fuse + aspect @ W_k), broadcasting over leading dims."""
    word_vec, aspect_vec = as_tensor(word_vec), as_tensor(aspect_vec)
    wf, wk = params["W_fuse"], params["W_k"]
    if word_vec.shape[-1] != wf.shape[0] or aspect_vec.shape[-1] != wk.shape[0]:
        raise DimensionError(
            f"fuse: word dim {word_vec.shape[-1]} / aspect dim {aspect_vec.shape[-1]} "
            f"do not match W_fuse {wf.shape} / W_k {wk.shape}")
    w = matmul(reshape(word_vec, (-1, wf.shape[0])), wf)
    a = matmul(reshape(aspect_vec, (-1, wk.shape[0])), wk)
    w = reshape(w, word_vec.shape[:-1] + (wf.shape[1],))
    a = reshape(a, aspect_vec.shape[:-1] + (wk.shape[1],))
    return tanh(w + a)


def gru_recurrence(xw: Tensor, u: Tensor, mask: np.ndarray) -> Tensor:
    """Differentiable GRU time loop over time-major pre-activations ``xw``."""
    mask = np.ascontiguousarray(mask, dtype=np.float64)
    hs, cache = kernels.gru_forward(xw.data, u.data, mask)
    out = _make(hs, (xw, u), "gru")
    if out.requires_grad:
        def _backward():
            dxw, du = kernels.gru_backward(out.grad, u.data, mask, cache)
            if xw.requires_grad:
                xw._accum(dxw)
            if u.requires_grad:
                u._accum(du)
        out._backward = _backward
    return out


def _gru_direction(x_tm: Tensor, mask_tm: np.ndarray, W: Tensor, U: Tensor, b: Tensor) -> Tensor:
    T, B, d = x_tm.shape
    xw = reshape(matmul(reshape(x_tm, (T * B, d)), W) + b, (T, B, W.shape[1]))
    return gru_recurrence(xw, U, mask_tm)


def bigru_encode(fused, params: ModelParams, mask=None) -> Tensor:
    """Bidirectional GRU with zero initial state.

    ``fused`` is ``[T, d_f]`` or ``[B, T, d_f]`` (a list of ``[d_f]`` vectors
    is stacked). Sequences are right-padded; ``mask`` marks real positions.
    Output is ``[..., T, 2*d_h]``: forward state then backward state.
    """
    if isinstance(fused, (list, tuple)):
        if not fused:
            raise DimensionError("bigru_encode: empty sequence")
        fused = reshape(concat([reshape(as_tensor(f), (1, -1)) for f in fused], axis=0),
                        (len(fused), -1))
    fused = as_tensor(fused)
    single = fused.ndim == 2
    if single:
        fused = reshape(fused, (1,) + fused.shape)
    B, T, _ = fused.shape
    if T == 0:
        raise DimensionError("bigru_encode: empty sequence")
    m = np.ones((B, T)) if mask is None else np.asarray(mask, dtype=np.float64).reshape(B, T)
    x_tm = transpose(fused, (1, 0, 2))
    m_tm = m.T
    hf = _gru_direction(x_tm, m_tm, params["gru_fwd_W"], params["gru_fwd_U"], params["gru_fwd_b"])
    # right padding: reversing the time axis puts pads first, where the state stays zero
    hb = flip(_gru_direction(flip(x_tm, 0), m_tm[::-1], params["gru_bwd_W"],
                             params["gru_bwd_U"], params["gru_bwd_b"]), 0)
    H = transpose(concat([hf, hb], axis=2), (1, 0, 2))
    return reshape(H, H.shape[1:]) if single else H


def word_attention(H, params: ModelParams, mask=None) -> Tensor:
    """Sparsemax over ``H @ W_attn_word`` restricted to unmasked words."""
    H = as_tensor(H)
    w = params["W_attn_word"]
    scores = reshape(matmul(reshape(H, (-1, H.shape[-1])), w), H.shape[:-1])
    if mask is not None and not np.asarray(mask).any(axis=-1).all():
        raise InputError("word_attention: an EDU has every word masked")
    return masked_sparsemax(scores, mask)


def edu_representation(H, alpha, edu_index, params: ModelParams) -> Tensor:
    """Position row of the EDU plus the alpha-weighted sum of hidden rows.

    Shapes: H ``[..., T, 2h]``, alpha ``[..., T]``; ``edu_index`` is an int or
    an int array matching the leading dims.
    """
    H, alpha = as_tensor(H), as_tensor(alpha)
    idx = np.asarray(edu_index, dtype=np.int64)
    j_max = params.config.j_max
    if (idx < 0).any() or (idx >= j_max).any():
        raise ConfigError(f"EDU index {int(idx.max())} exceeds the position table (j_max={j_max})")
    pooled = matmul(reshape(alpha, alpha.shape[:-1] + (1, alpha.shape[-1])), H)
    pooled = reshape(pooled, H.shape[:-2] + (H.shape[-1],))
    return pooled + take_rows(params["position_table"], idx)
