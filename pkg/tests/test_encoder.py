import numpy as np
import pytest

from eduattn.encoder import (ModelConfig, ModelParams, bigru_encode, edu_representation,
                             fuse_word_aspect, word_attention)
from eduattn.errors import ConfigError, DimensionError, InputError
from eduattn.tensor import Tensor, grad_check, matmul, parameter, reshape, sigmoid, tanh, tsum


def make_params(d=4, h=3, seed=0, **kw):
    cfg = ModelConfig(vocab_size=10, n_aspects=2, d_word=d, d_aspect=d, d_fuse=d, d_hidden=h,
                      j_max=4, **kw)
    return ModelParams(cfg, np.random.default_rng(seed))


def reference_gru(xs, W, U, b):
    """Plain composition of autodiff ops; gates ordered z, r, n."""
    h_dim = U.shape[0]
    h = Tensor(np.zeros(h_dim))
    out = []
    for x in xs:
        xw = reshape(matmul(reshape(x, (1, -1)), W), (3 * h_dim,)) + b
        hu = reshape(matmul(reshape(h, (1, -1)), U[:, : 2 * h_dim]), (2 * h_dim,))
        z = sigmoid(xw[:h_dim] + hu[:h_dim])
        r = sigmoid(xw[h_dim: 2 * h_dim] + hu[h_dim:])
        rh = reshape(matmul(reshape(r * h, (1, -1)), U[:, 2 * h_dim:]), (h_dim,))
        n = tanh(xw[2 * h_dim:] + rh)
        h = h + z * (n - h)
        out.append(h)
    return out


class TestFuse:
    def test_zero(self):
        p = make_params()
        out = fuse_word_aspect(np.zeros(4), np.zeros(4), p)
        np.testing.assert_array_equal(out.data, 0.0)

    def test_identity_weights(self):
        p = make_params()
        p["W_fuse"].data = np.eye(4)
        p["W_k"].data = np.eye(4)
        out = fuse_word_aspect(0.5 * np.ones(4), np.zeros(4), p)
        np.testing.assert_allclose(out.data, 0.462117, atol=1e-6)

    def test_dim_mismatch(self):
        with pytest.raises(DimensionError):
            fuse_word_aspect(np.zeros(5), np.zeros(4), make_params())

    def test_aspect_specific(self):
        p = make_params()
        w = np.random.default_rng(1).normal(size=4)
        a = fuse_word_aspect(w, p["aspect_embeddings"].data[0], p).data
        b = fuse_word_aspect(w, p["aspect_embeddings"].data[1], p).data
        assert not np.allclose(a, b)


class TestBiGRU:
    def test_zero_weights(self):
        p = make_params()
        for n in p.names():
            if n.startswith("gru_"):
                p[n].data[:] = 0.0
        H = bigru_encode(np.random.default_rng(0).normal(size=(5, 4)), p)
        assert H.shape == (5, 6)
        np.testing.assert_array_equal(H.data, 0.0)

    def test_empty(self):
        with pytest.raises(DimensionError):
            bigru_encode([], make_params())

    def test_matches_reference(self):
        p = make_params(seed=3)
        for n in p.names():
            if n.startswith("gru_"):
                p[n].data = np.random.default_rng(len(n)).uniform(-0.5, 0.5, p[n].shape)
        x = np.random.default_rng(4).normal(size=(6, 4))
        H = bigru_encode(x, p).data
        xs = [Tensor(r) for r in x]
        fwd = reference_gru(xs, p["gru_fwd_W"], p["gru_fwd_U"], p["gru_fwd_b"])
        bwd = reference_gru(xs[::-1], p["gru_bwd_W"], p["gru_bwd_U"], p["gru_bwd_b"])[::-1]
        np.testing.assert_allclose(H[:, :3], np.stack([h.data for h in fwd]), atol=1e-12)
        np.testing.assert_allclose(H[:, 3:], np.stack([h.data for h in bwd]), atol=1e-12)

    def test_reversal_symmetry(self):
        p = make_params(seed=5)
        for part in ("W", "U", "b"):
            p[f"gru_bwd_{part}"].data = p[f"gru_fwd_{part}"].data.copy()
        x = np.random.default_rng(6).normal(size=(5, 4))
        H = bigru_encode(x, p).data
        Hr = bigru_encode(x[::-1].copy(), p).data
        np.testing.assert_allclose(H[:, 3:], Hr[::-1, :3], atol=1e-12)

    def test_padding_invariance(self):
        p = make_params(seed=7)
        rng = np.random.default_rng(8)
        short, long_ = rng.normal(size=(3, 4)), rng.normal(size=(5, 4))
        padded = np.zeros((2, 5, 4))
        padded[0, :3] = short
        padded[1] = long_
        mask = np.array([[1, 1, 1, 0, 0], [1, 1, 1, 1, 1]], dtype=bool)
        H = bigru_encode(padded, p, mask).data
        np.testing.assert_allclose(H[0, :3], bigru_encode(short, p).data, atol=1e-13)
        np.testing.assert_allclose(H[1], bigru_encode(long_, p).data, atol=1e-13)

    def test_list_input(self):
        p = make_params()
        x = np.random.default_rng(0).normal(size=(3, 4))
        np.testing.assert_allclose(bigru_encode([Tensor(r) for r in x], p).data,
                                   bigru_encode(x, p).data)

    def test_grad(self):
        p = make_params(seed=9)
        x = parameter(np.random.default_rng(1).normal(size=(2, 4, 4)))
        mask = np.array([[1, 1, 1, 0], [1, 1, 1, 1]], dtype=bool)
        w = np.random.default_rng(2).normal(size=(2, 4, 6))
        params = [x] + [p[n] for n in p.names() if n.startswith("gru_")]
        # composed module: the 1e-4 bound applies (1e-6 is for single ops)
        assert grad_check(lambda: tsum(bigru_encode(x, p, mask) * w), params) <= 1e-4


class TestWordAttention:
    def test_identical_rows_uniform(self):
        p = make_params()
        H = np.tile(np.random.default_rng(0).normal(size=6), (4, 1))
        np.testing.assert_allclose(word_attention(H, p).data, 0.25)

    def test_scores_example(self):
        p = make_params()
        p["W_attn_word"].data = np.eye(6)[:, :1]
        H = np.zeros((3, 6))
        H[:, 0] = [1.0, 0.5, -1.0]
        np.testing.assert_allclose(word_attention(H, p).data, [0.75, 0.25, 0.0], atol=1e-12)

    def test_single_word(self):
        assert word_attention(np.ones((1, 6)), make_params()).data.tolist() == [1.0]

    def test_all_masked(self):
        with pytest.raises(InputError):
            word_attention(np.ones((2, 3, 6)), make_params(), np.array([[1, 0, 0], [0, 0, 0]], bool))


class TestEduRepresentation:
    def test_selection(self):
        p = make_params()
        H = np.random.default_rng(0).normal(size=(3, 6))
        e = edu_representation(H, np.array([1.0, 0.0, 0.0]), 0, p)
        np.testing.assert_allclose(e.data, H[0])

    def test_zero_h_gives_position_row(self):
        p = make_params()
        p["position_table"].data = np.random.default_rng(1).normal(size=(4, 6))
        e = edu_representation(np.zeros((3, 6)), np.array([0.2, 0.3, 0.5]), 2, p)
        np.testing.assert_allclose(e.data, p["position_table"].data[2])

    def test_convexity(self):
        p = make_params()
        p["position_table"].data = np.random.default_rng(2).normal(size=(4, 6))
        h = np.random.default_rng(3).normal(size=6)
        e = edu_representation(np.stack([h, h]), np.array([0.5, 0.5]), 1, p)
        np.testing.assert_allclose(e.data, p["position_table"].data[1] + h)

    def test_index_too_large(self):
        with pytest.raises(ConfigError):
            edu_representation(np.zeros((2, 6)), np.array([0.5, 0.5]), 4, make_params())


def test_pipeline_grad():
    """fuse -> Bi-GRU -> word attention -> EDU representation."""
    p = make_params(seed=11)
    rng = np.random.default_rng(12)
    for n in p.names():
        p[n].data = rng.uniform(-0.5, 0.5, p[n].shape)
    words = parameter(rng.normal(size=(2, 5, 4)))
    mask = np.array([[1, 1, 1, 1, 0], [1, 1, 1, 1, 1]], dtype=bool)
    w = rng.normal(size=(2, 6))

    def f():
        fused = fuse_word_aspect(words, reshape(p["aspect_embeddings"][0], (1, 1, 4)), p)
        H = bigru_encode(fused, p, mask)
        alpha = word_attention(H, p, mask)
        e = edu_representation(H, alpha, np.array([0, 1]), p)
        return tsum(e * w)
    params = [words] + [p[n] for n in p.names() if n != "word_embeddings"]
    assert grad_check(f, params) <= 1e-4

